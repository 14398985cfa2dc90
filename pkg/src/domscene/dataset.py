"""WAV audio and dataset manifest handling.

File formats
------------
Audio: RIFF/WAVE, PCM 16-bit little-endian, interleaved channels.

Meta manifest: UTF-8 TSV, one segment per line::

    audio_path<TAB>label<TAB>session_id<TAB>node_id

Lines starting with ``#`` are ignored.  ``label`` is one of the nine
scene names (see :class:`SceneLabel`), or ``-`` for unlabeled audio
(prediction-only input).  ``audio_path`` doubles as the segment id and
must be unique.

Fold files live in one directory as ``fold{K}_train.tsv`` /
``fold{K}_test.tsv`` pairs, one audio_path per line.  Within a fold the
train and test sets must be disjoint and no session may straddle them.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from domscene.errors import ManifestError, UnsupportedWavError, WavFormatError


class SceneLabel(IntEnum):
    """The closed 9-class activity vocabulary; the member order fixes the index."""

    Absence = 0
    Cooking = 1
    Dishwashing = 2
    Eating = 3
    Other = 4
    SocialActivity = 5
    VacuumCleaning = 6
    WatchingTV = 7
    Working = 8


N_CLASSES = len(SceneLabel)


@dataclass
class AudioSegment:
    """One multi-channel clip: samples are channel-major, amplitudes in [-1, 1]."""

    segment_id: str
    samples: np.ndarray
    sample_rate_hz: int
    channel_count: int
    node_id: str = ""
    session_id: str = ""
    label: SceneLabel | None = None

    @property
    def duration_s(self) -> float:
        return self.samples.shape[1] / self.sample_rate_hz


@dataclass(frozen=True)
class ManifestEntry:
    audio_path: str
    label: SceneLabel | None
    session_id: str
    node_id: str


@dataclass(frozen=True)
class Fold:
    fold_id: int
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    folds: tuple[Fold, ...] = ()
    _by_path: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self._by_path.update({e.audio_path: e for e in self.entries})

    def entry(self, audio_path: str) -> ManifestEntry:
        try:
            return self._by_path[audio_path]
        except KeyError:
            raise ManifestError(f"unknown segment id {audio_path!r}") from None

    def __contains__(self, audio_path: str) -> bool:
        return audio_path in self._by_path

    def segment_ids(self) -> list[str]:
        return [e.audio_path for e in self.entries]


# --------------------------------------------------------------------------
# WAV I/O
# --------------------------------------------------------------------------

_PCM_SCALE = 32768.0


def read_wav(path) -> AudioSegment:
    """Read a 16-bit PCM RIFF/WAVE file into a channel-major float matrix.

    Integer samples are converted to amplitude via s/32768, so the
    round trip through :func:`write_wav` is bit-exact.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF":
        raise WavFormatError(f"{path}: missing 'RIFF' chunk")
    if raw[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: RIFF form type is not 'WAVE'")

    fmt_body = None
    data_body = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8 : pos + 8 + size]
        if len(body) < size:
            name = chunk_id.decode("ascii", "replace").strip()
            raise WavFormatError(f"{path}: truncated '{name}' chunk")
        if chunk_id == b"fmt ":
            fmt_body = body
        elif chunk_id == b"data":
            data_body = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt_body is None:
        raise WavFormatError(f"{path}: missing 'fmt ' chunk")
    if len(fmt_body) < 16:
        raise WavFormatError(f"{path}: short 'fmt ' chunk")
    audio_format, channels, rate, _byte_rate, block_align, bits = struct.unpack_from(
        "<HHIIHH", fmt_body, 0
    )
    if audio_format != 1:
        raise UnsupportedWavError(f"{path}: audio format {audio_format} is not PCM")
    if bits != 16:
        raise UnsupportedWavError(f"{path}: {bits}-bit samples (only 16-bit supported)")
    if not 1 <= channels <= 8:
        raise UnsupportedWavError(f"{path}: {channels} channels (1-8 supported)")
    if block_align != channels * 2:
        raise WavFormatError(f"{path}: 'fmt ' block align {block_align} != {channels * 2}")
    if data_body is None:
        raise WavFormatError(f"{path}: missing 'data' chunk")
    if len(data_body) % block_align != 0:
        raise WavFormatError(f"{path}: 'data' chunk is not a whole number of frames")

    ints = np.frombuffer(data_body, dtype="<i2").reshape(-1, channels)
    samples = np.ascontiguousarray(ints.T.astype(np.float32) / np.float32(_PCM_SCALE))
    return AudioSegment(
        segment_id=path.stem,
        samples=samples,
        sample_rate_hz=int(rate),
        channel_count=int(channels),
    )


def write_wav(path, samples: np.ndarray, sample_rate_hz: int) -> None:
    """Write a channel-major float matrix as interleaved 16-bit PCM."""
    samples = np.atleast_2d(np.asarray(samples))
    channels, _length = samples.shape
    ints = np.clip(np.rint(samples * _PCM_SCALE), -32768, 32767).astype("<i2")
    payload = ints.T.tobytes()
    block_align = channels * 2
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH", 16, 1, channels, sample_rate_hz, sample_rate_hz * block_align, block_align, 16
    )
    header += b"data" + struct.pack("<I", len(payload))
    Path(path).write_bytes(header + payload)


# --------------------------------------------------------------------------
# Manifests and folds
# --------------------------------------------------------------------------


def _parse_meta(meta_path: Path) -> list[ManifestEntry]:
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    for lineno, line in enumerate(meta_path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ManifestError(f"{meta_path}:{lineno}: expected 4 tab-separated columns, got {len(parts)}")
        audio_path, label_str, session_id, node_id = parts
        if label_str == "-":
            label = None
        else:
            try:
                label = SceneLabel[label_str]
            except KeyError:
                raise ManifestError(f"{meta_path}:{lineno}: unknown label {label_str!r}") from None
        if audio_path in seen:
            raise ManifestError(f"{meta_path}:{lineno}: duplicate audio path {audio_path!r}")
        seen.add(audio_path)
        entries.append(ManifestEntry(audio_path, label, session_id, node_id))
    return entries


def _read_id_list(path: Path) -> tuple[str, ...]:
    ids = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            ids.append(line)
    return tuple(ids)


def load_manifest(meta_path, fold_dir=None) -> DatasetManifest:
    """Load and validate a meta TSV plus (optionally) its fold definitions.

    Raises :class:`ManifestError` on unknown labels, fold references to
    paths absent from the meta file, overlapping train/test sets, or a
    session split across the train and test side of one fold.
    """
    meta_path = Path(meta_path)
    entries = _parse_meta(meta_path)
    by_path = {e.audio_path: e for e in entries}

    folds: list[Fold] = []
    if fold_dir is not None:
        fold_dir = Path(fold_dir)
        train_files = sorted(fold_dir.glob("fold*_train.tsv"))
        for train_file in train_files:
            m = re.fullmatch(r"fold(\d+)_train\.tsv", train_file.name)
            if not m:
                continue
            fold_id = int(m.group(1))
            test_file = fold_dir / f"fold{fold_id}_test.tsv"
            if not test_file.exists():
                raise ManifestError(f"{train_file}: no matching {test_file.name}")
            train_ids = _read_id_list(train_file)
            test_ids = _read_id_list(test_file)
            for sid in (*train_ids, *test_ids):
                if sid not in by_path:
                    raise ManifestError(f"fold {fold_id}: {sid!r} is not in {meta_path}")
            overlap = set(train_ids) & set(test_ids)
            if overlap:
                raise ManifestError(
                    f"fold {fold_id}: {len(overlap)} segment(s) in both train and test"
                )
            train_sessions = {by_path[s].session_id for s in train_ids}
            test_sessions = {by_path[s].session_id for s in test_ids}
            straddling = train_sessions & test_sessions
            if straddling:
                raise ManifestError(
                    f"fold {fold_id}: session(s) {sorted(straddling)} straddle train and test"
                )
            folds.append(Fold(fold_id, train_ids, test_ids))

    return DatasetManifest(entries=tuple(entries), folds=tuple(folds))


def class_counts(manifest: DatasetManifest, subset=None) -> dict[SceneLabel, int]:
    """Per-class segment counts over ``subset`` (all entries when None)."""
    counts = {label: 0 for label in SceneLabel}
    ids = manifest.segment_ids() if subset is None else subset
    for sid in ids:
        entry = manifest.entry(sid)
        if entry.label is None:
            raise ManifestError(f"cannot count unlabeled segment {sid!r}")
        counts[entry.label] += 1
    return counts


def resolve_audio_path(audio_root, audio_path: str) -> Path:
    """Manifest paths are relative to the directory holding the meta file."""
    return Path(audio_root) / audio_path
