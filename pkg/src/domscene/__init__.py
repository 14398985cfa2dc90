"""Multi-channel domestic acoustic scene classification toolkit.

Classifies 10-second, 4-channel microphone-array recordings into nine
domestic activity classes.  The pipeline: log mel-band energy features,
a small 1-D convolutional network trained from scratch with balanced
epoch sampling and Adam, per-array posterior fusion, and macro-F1
cross-validated evaluation.  A deterministic synthetic corpus generator
makes the whole pipeline testable without real recordings.
"""

from domscene.dataset import SceneLabel, AudioSegment, DatasetManifest, read_wav, write_wav, load_manifest
from domscene.features import FeatureConfig, FeatureStore, extract_log_mel
from domscene.model import SceneClassifier, save_checkpoint, load_checkpoint
from domscene.training import TrainConfig, TrainLog, train
from domscene.evaluation import EvalReport, compute_report, cross_validate, fuse_channels
from domscene.synthgen import SynthSpec, generate_corpus

__version__ = "0.1.0"

__all__ = [
    "SceneLabel",
    "AudioSegment",
    "DatasetManifest",
    "read_wav",
    "write_wav",
    "load_manifest",
    "FeatureConfig",
    "FeatureStore",
    "extract_log_mel",
    "SceneClassifier",
    "save_checkpoint",
    "load_checkpoint",
    "TrainConfig",
    "TrainLog",
    "train",
    "EvalReport",
    "compute_report",
    "cross_validate",
    "fuse_channels",
    "SynthSpec",
    "generate_corpus",
    "__version__",
]
