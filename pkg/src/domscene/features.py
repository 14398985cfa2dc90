"""Log mel-band energy extraction.

One audio channel becomes a ``mel_bands x frame_count`` matrix: 40 ms
frames with 50% overlap, Hamming window, power spectrum via a real FFT
zero-padded to the next power of two, triangular mel filters between
50 and 8000 Hz, natural log with an additive floor.  Ten seconds at
16 kHz yields exactly 40x501 thanks to reflection padding of half a
frame at each end.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from domscene.dataset import AudioSegment, read_wav
from domscene.errors import ConfigError, FeatureCacheError, ShapeError

_WINDOWS = {
    "hamming": np.hamming,
    "hann": np.hanning,
    "rectangular": np.ones,
}


@dataclass(frozen=True)
class FeatureConfig:
    frame_length_s: float = 0.040
    hop_fraction: float = 0.5
    mel_bands: int = 40
    fmin_hz: float = 50.0
    fmax_hz: float = 8000.0
    window: str = "hamming"
    center_padding: bool = True
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.frame_length_s <= 0:
            raise ConfigError(f"frame_length_s must be positive, got {self.frame_length_s}")
        if not 0 < self.hop_fraction <= 1:
            raise ConfigError(f"hop_fraction must be in (0, 1], got {self.hop_fraction}")
        if self.mel_bands < 1:
            raise ConfigError(f"mel_bands must be >= 1, got {self.mel_bands}")
        if not 0 <= self.fmin_hz < self.fmax_hz:
            raise ConfigError(f"need 0 <= fmin_hz < fmax_hz, got {self.fmin_hz}, {self.fmax_hz}")
        if self.window not in _WINDOWS:
            raise ConfigError(f"unknown window {self.window!r} (choose from {sorted(_WINDOWS)})")
        if self.log_floor <= 0:
            raise ConfigError(f"log_floor must be positive, got {self.log_floor}")

    def frame_length(self, sample_rate: int) -> int:
        return int(round(self.frame_length_s * sample_rate))

    def hop_length(self, sample_rate: int) -> int:
        return max(1, int(round(self.frame_length(sample_rate) * self.hop_fraction)))

    def fft_size(self, sample_rate: int) -> int:
        n = 1
        while n < self.frame_length(sample_rate):
            n *= 2
        return n


@dataclass
class LogMelFeatures:
    values: np.ndarray  # mel_bands x frame_count
    frame_count: int


def hz_to_mel(f_hz):
    return 2595.0 * np.log10(1.0 + np.asarray(f_hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_edges_hz(mel_bands: int, fmin_hz: float, fmax_hz: float) -> np.ndarray:
    """mel_bands + 2 frequencies equally spaced on the mel scale, in Hz."""
    grid = np.linspace(hz_to_mel(fmin_hz), hz_to_mel(fmax_hz), mel_bands + 2)
    return mel_to_hz(grid)


def frame_signal(samples: np.ndarray, config: FeatureConfig, sample_rate: int) -> np.ndarray:
    """Slice one channel into windowed frames, rows = frames.

    With center padding the signal is first reflected by half a frame
    at each end, which makes frame_count = floor(N/hop) + 1 for every
    N >= 1.
    """
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ShapeError("cannot frame an empty signal")
    length = config.frame_length(sample_rate)
    hop = config.hop_length(sample_rate)
    if config.center_padding:
        x = np.pad(x, (length // 2, length - length // 2), mode="reflect")
    if x.size < length:
        raise ShapeError(f"signal of {x.size} samples is shorter than one {length}-sample frame")
    frames = np.lib.stride_tricks.sliding_window_view(x, length)[::hop]
    taper = _WINDOWS[config.window](length)
    return frames * taper


def build_mel_filterbank(
    mel_bands: int, fmin_hz: float, fmax_hz: float, fft_size: int, sample_rate: int
) -> np.ndarray:
    """Triangular filters, peak 1, centers equally spaced on the mel scale.

    Filter k rises from edge k to edge k+1 and falls to edge k+2, where
    the mel_bands + 2 edges span fmin..fmax.  Returns a
    mel_bands x (fft_size/2 + 1) matrix acting on power spectra.
    """
    nyquist = sample_rate / 2.0
    if fmax_hz > nyquist:
        raise ConfigError(f"fmax_hz {fmax_hz} exceeds Nyquist {nyquist}")
    if not 0 <= fmin_hz < fmax_hz:
        raise ConfigError(f"need 0 <= fmin_hz < fmax_hz, got {fmin_hz}, {fmax_hz}")
    edges = mel_edges_hz(mel_bands, fmin_hz, fmax_hz)
    bin_hz = np.arange(fft_size // 2 + 1, dtype=np.float64) * (sample_rate / fft_size)
    fb = np.zeros((mel_bands, bin_hz.size), dtype=np.float64)
    for k in range(mel_bands):
        left, center, right = edges[k], edges[k + 1], edges[k + 2]
        rise = (bin_hz - left) / (center - left)
        fall = (right - bin_hz) / (right - center)
        fb[k] = np.maximum(0.0, np.minimum(rise, fall))
    return fb


def extract_log_mel(
    samples: np.ndarray, config: FeatureConfig, sample_rate: int
) -> LogMelFeatures:
    """One channel in, ln(mel filterbank energies + floor) out."""
    frames = frame_signal(samples, config, sample_rate)
    fft_size = config.fft_size(sample_rate)
    spectrum = np.fft.rfft(frames, n=fft_size, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    fb = build_mel_filterbank(
        config.mel_bands, config.fmin_hz, config.fmax_hz, fft_size, sample_rate
    )
    values = np.log(power @ fb.T + config.log_floor).T
    return LogMelFeatures(values=values, frame_count=values.shape[1])


def segment_log_mel(segment: AudioSegment, config: FeatureConfig) -> np.ndarray:
    """All channels of one segment as a (channels, mel_bands, frames) float32 stack."""
    mats = [
        extract_log_mel(segment.samples[c], config, segment.sample_rate_hz).values
        for c in range(segment.channel_count)
    ]
    return np.stack(mats).astype(np.float32)


# --------------------------------------------------------------------------
# Disk cache: 16-byte header (magic, version, rows, cols) + row-major f32
# --------------------------------------------------------------------------

_CACHE_MAGIC = b"LMEL"
_CACHE_VERSION = 1


def save_features(path, values: np.ndarray) -> None:
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 2:
        raise ShapeError(f"feature matrix must be 2-D, got {values.ndim}-D")
    rows, cols = values.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _CACHE_MAGIC + struct.pack("<III", _CACHE_VERSION, rows, cols)
    path.write_bytes(header + values.tobytes())


def load_features(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != _CACHE_MAGIC:
        raise FeatureCacheError(f"{path}: not a feature cache file")
    version, rows, cols = struct.unpack_from("<III", raw, 4)
    if version != _CACHE_VERSION:
        raise FeatureCacheError(f"{path}: cache version {version}, expected {_CACHE_VERSION}")
    expected = 16 + rows * cols * 4
    if len(raw) != expected:
        raise FeatureCacheError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=16)
    return data.reshape(rows, cols).copy()


class FeatureStore:
    """Feature access for manifest segments, with an optional disk cache.

    ``get`` returns a (channels, mel_bands, frames) float32 array for
    one manifest audio path.  With a cache_dir, each channel is stored
    as ``<audio_path>.ch<c>.lmel`` and later calls read the cache
    instead of re-extracting.
    """

    def __init__(self, audio_root, config: FeatureConfig, cache_dir=None):
        self.audio_root = Path(audio_root)
        self.config = config
        self.cache_dir = None if cache_dir is None else Path(cache_dir)

    def _cache_path(self, audio_path: str, channel: int) -> Path:
        return self.cache_dir / f"{audio_path}.ch{channel}.lmel"

    def _extract(self, audio_path: str) -> np.ndarray:
        segment = read_wav(self.audio_root / audio_path)
        return segment_log_mel(segment, self.config)

    def get(self, audio_path: str) -> np.ndarray:
        if self.cache_dir is None:
            return self._extract(audio_path)
        first = self._cache_path(audio_path, 0)
        if first.exists():
            channels = []
            c = 0
            while self._cache_path(audio_path, c).exists():
                channels.append(load_features(self._cache_path(audio_path, c)))
                c += 1
            return np.stack(channels)
        feats = self._extract(audio_path)
        for c in range(feats.shape[0]):
            save_features(self._cache_path(audio_path, c), feats[c])
        return feats

    def warm(self, audio_paths, force: bool = False) -> int:
        """Extract and cache any missing segments; returns how many were extracted."""
        if self.cache_dir is None:
            raise ConfigError("warm() needs a cache_dir")
        extracted = 0
        for audio_path in audio_paths:
            if force or not self._cache_path(audio_path, 0).exists():
                feats = self._extract(audio_path)
                for c in range(feats.shape[0]):
                    save_features(self._cache_path(audio_path, c), feats[c])
                extracted += 1
        return extracted
