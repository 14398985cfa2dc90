"""Synthetic multi-channel corpus generator.

Stands in for the real recordings at desk scale: each of the nine
classes gets a disjoint mel-spaced noise band (plus a tone at the band
center), each segment is rendered once and then heard by four channels
as gain/delay-perturbed copies with independent low-level noise, and
sessions are split across four folds without ever straddling one.
Everything is a pure function of (seed, class, segment index), so two
runs with the same spec produce byte-identical corpora.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from domscene.dataset import (
    DatasetManifest,
    SceneLabel,
    load_manifest,
    write_wav,
)
from domscene.errors import ConfigError
from domscene.features import hz_to_mel, mel_to_hz

N_FOLDS = 4


@dataclass(frozen=True)
class ClassSignature:
    """Band-limited noise between band_low/high Hz, optional added tone."""

    band_low_hz: float
    band_high_hz: float
    tone_hz: float | None = None

    def __post_init__(self):
        if not 0 < self.band_low_hz < self.band_high_hz:
            raise ConfigError(
                f"need 0 < band_low_hz < band_high_hz, got {self.band_low_hz}, {self.band_high_hz}"
            )


def default_signatures(
    fmin_hz: float = 150.0, fmax_hz: float = 7500.0, classes: int = 9
) -> tuple[ClassSignature, ...]:
    """Nine disjoint bands equally spaced on the mel scale.

    Each class occupies the central 70% of its mel slot, leaving 15%
    guard bands so neighbouring signatures never overlap.
    """
    edges = np.linspace(hz_to_mel(fmin_hz), hz_to_mel(fmax_hz), classes + 1)
    sigs = []
    for k in range(classes):
        width = edges[k + 1] - edges[k]
        lo_mel = edges[k] + 0.15 * width
        hi_mel = edges[k + 1] - 0.15 * width
        center_mel = (lo_mel + hi_mel) / 2
        sigs.append(
            ClassSignature(
                band_low_hz=float(mel_to_hz(lo_mel)),
                band_high_hz=float(mel_to_hz(hi_mel)),
                tone_hz=float(mel_to_hz(center_mel)),
            )
        )
    return tuple(sigs)


@dataclass(frozen=True)
class SynthSpec:
    segments_per_class: int = 90
    sessions_per_class: int = 4
    signatures: tuple[ClassSignature, ...] = field(default_factory=default_signatures)
    channels: int = 4
    gain_range: tuple[float, float] = (0.5, 1.0)
    max_delay_samples: int = 32
    snr_db: float = 30.0
    duration_s: float = 10.0
    sample_rate_hz: int = 16000
    seed: int = 0

    def __post_init__(self):
        if len(self.signatures) != len(SceneLabel):
            raise ConfigError(
                f"need {len(SceneLabel)} signatures, got {len(self.signatures)}"
            )
        bands = sorted((s.band_low_hz, s.band_high_hz) for s in self.signatures)
        for (_, hi), (lo, _) in zip(bands, bands[1:]):
            if lo < hi:
                raise ConfigError("class signature bands overlap")
        if not 0 < self.gain_range[0] <= self.gain_range[1]:
            raise ConfigError(f"gains must be positive, got {self.gain_range}")
        if self.sessions_per_class < N_FOLDS:
            raise ConfigError(
                f"need >= {N_FOLDS} sessions per class for {N_FOLDS} session-consistent folds"
            )
        if self.segments_per_class < self.sessions_per_class:
            raise ConfigError("every session needs at least one segment")
        if self.channels < 1 or self.max_delay_samples < 0:
            raise ConfigError("bad channel model")


def render_segment(spec: SynthSpec, class_index: int, segment_index: int) -> np.ndarray:
    """All channels of one segment, deterministic in (seed, class, index)."""
    sig = spec.signatures[class_index]
    n = int(round(spec.duration_s * spec.sample_rate_hz))
    rng = np.random.default_rng([spec.seed, class_index, segment_index])

    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / spec.sample_rate_hz)
    spectrum[(freqs < sig.band_low_hz) | (freqs > sig.band_high_hz)] = 0
    source = np.fft.irfft(spectrum, n=n)
    source *= 0.1 / max(np.sqrt(np.mean(source**2)), 1e-12)
    if sig.tone_hz is not None:
        phase = rng.uniform(0, 2 * np.pi)
        t = np.arange(n) / spec.sample_rate_hz
        source = source + 0.05 * np.sin(2 * np.pi * sig.tone_hz * t + phase)

    channels = np.empty((spec.channels, n))
    for c in range(spec.channels):
        gain = rng.uniform(*spec.gain_range)
        delay = int(rng.integers(0, spec.max_delay_samples + 1))
        heard = gain * np.roll(source, delay)
        noise_rms = np.sqrt(np.mean(heard**2)) * 10 ** (-spec.snr_db / 20)
        channels[c] = heard + noise_rms * rng.standard_normal(n)
    return channels.astype(np.float32)


def generate_corpus(spec: SynthSpec, out_dir) -> DatasetManifest:
    """Write WAVs, meta.tsv, and fold files; return the validated manifest.

    Sessions are assigned round-robin over segments, and fold k tests
    on the sessions whose index is congruent to k-1 mod 4, so no fold
    ever splits a session.
    """
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    fold_dir = out_dir / "folds"
    fold_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    session_of: dict[str, int] = {}
    for label in SceneLabel:
        for i in range(spec.segments_per_class):
            session = i % spec.sessions_per_class
            audio_path = f"audio/{label.name}_{i:03d}.wav"
            write_wav(
                out_dir / audio_path,
                render_segment(spec, int(label), i),
                spec.sample_rate_hz,
            )
            session_id = f"s{int(label)}_{session:02d}"
            rows.append((audio_path, label.name, session_id, "Node1"))
            session_of[audio_path] = session

    meta_path = out_dir / "meta.tsv"
    lines = ["# audio_path\tlabel\tsession_id\tnode_id"]
    lines += ["\t".join(r) for r in rows]
    meta_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    for fold_id in range(1, N_FOLDS + 1):
        test = [p for p, _, _, _ in rows if session_of[p] % N_FOLDS == fold_id - 1]
        train = [p for p, _, _, _ in rows if session_of[p] % N_FOLDS != fold_id - 1]
        (fold_dir / f"fold{fold_id}_train.tsv").write_text(
            "\n".join(train) + "\n", encoding="utf-8"
        )
        (fold_dir / f"fold{fold_id}_test.tsv").write_text(
            "\n".join(test) + "\n", encoding="utf-8"
        )

    # reload through the dataset module so its integrity checks run
    return load_manifest(meta_path, fold_dir)
