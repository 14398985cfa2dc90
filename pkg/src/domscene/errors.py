"""Exception hierarchy shared across the toolkit."""


class DomsceneError(Exception):
    """Base class for every error raised by this package."""


class WavFormatError(DomsceneError):
    """Malformed RIFF/WAVE structure; the message names the offending chunk."""


class UnsupportedWavError(WavFormatError):
    """Well-formed WAV file using an encoding this toolkit does not read."""


class FeatureCacheError(DomsceneError):
    """A feature cache file has a bad magic, version, or length."""


class ManifestError(DomsceneError):
    """Bad manifest or fold definition: vocabulary, referential or session integrity."""


class ConfigError(DomsceneError):
    """Invalid feature, synthesis, or training configuration value."""


class ShapeError(DomsceneError):
    """Array arguments whose dimensions do not fit the operation."""


class StateError(DomsceneError):
    """Operation invoked before the state it depends on exists."""


class CheckpointError(DomsceneError):
    """Unreadable or incompatible checkpoint file."""


class OptimizerError(DomsceneError):
    """Non-finite gradients or mismatched state handed to the optimizer."""


class TrainingError(DomsceneError):
    """Split, sampling, or loss failure inside the training loop."""


class MetricError(DomsceneError):
    """Evaluation requested on inputs no metric is defined for."""
