"""The classifier network and its checkpoint format.

Architecture, for 40x501 inputs: conv (32 filters of 40x5, time axis
only) -> batch norm -> ReLU -> max pool 5 -> dropout -> conv (64
filters of 32x3) -> batch norm -> ReLU -> max pool 3 -> global max
over the remaining 32 time steps -> dropout -> dense 64 -> ReLU ->
dropout -> dense 9 -> softmax.  Filter counts, kernel widths, pool
widths, and the dropout rate are constructor knobs; everything else is
fixed.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from domscene import nn
from domscene.errors import CheckpointError, ShapeError, StateError

_MAGIC = b"DT5B"
_VERSION = 1


class SceneClassifier:
    """Small CNN over log-mel matrices; one instance per training run."""

    def __init__(
        self,
        mel_bands: int = 40,
        conv1_filters: int = 32,
        conv1_kernel: int = 5,
        pool1: int = 5,
        conv2_filters: int = 64,
        conv2_kernel: int = 3,
        pool2: int = 3,
        hidden: int = 64,
        classes: int = 9,
        dropout_rate: float = 0.2,
        seed: int = 0,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ):
        self.mel_bands = mel_bands
        self.conv1_filters = conv1_filters
        self.conv1_kernel = conv1_kernel
        self.pool1 = pool1
        self.conv2_filters = conv2_filters
        self.conv2_kernel = conv2_kernel
        self.pool2 = pool2
        self.hidden = hidden
        self.classes = classes
        self.dropout_rate = float(dropout_rate)
        self.dtype = np.dtype(dtype).type

        rng = rng if rng is not None else np.random.default_rng(seed)
        d = self.dtype
        self.conv1_w = nn.glorot_uniform(
            (conv1_filters, mel_bands, conv1_kernel),
            fan_in=mel_bands * conv1_kernel,
            fan_out=conv1_filters * conv1_kernel,
            rng=rng, dtype=d,
        )
        self.conv1_b = np.zeros(conv1_filters, dtype=d)
        self.bn1 = nn.BatchNormState.create(conv1_filters, dtype=d)
        self.conv2_w = nn.glorot_uniform(
            (conv2_filters, conv1_filters, conv2_kernel),
            fan_in=conv1_filters * conv2_kernel,
            fan_out=conv2_filters * conv2_kernel,
            rng=rng, dtype=d,
        )
        self.conv2_b = np.zeros(conv2_filters, dtype=d)
        self.bn2 = nn.BatchNormState.create(conv2_filters, dtype=d)
        self.fc_w = nn.glorot_uniform(
            (hidden, conv2_filters), fan_in=conv2_filters, fan_out=hidden, rng=rng, dtype=d
        )
        self.fc_b = np.zeros(hidden, dtype=d)
        self.out_w = nn.glorot_uniform(
            (classes, hidden), fan_in=hidden, fan_out=classes, rng=rng, dtype=d
        )
        self.out_b = np.zeros(classes, dtype=d)

        self._cache = None
        self.last_shape_trace: list[tuple[int, ...]] = []

    # -- parameter plumbing -------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable blocks, in checkpoint order; values are live references."""
        return {
            "conv1_w": self.conv1_w, "conv1_b": self.conv1_b,
            "bn1_gamma": self.bn1.gamma, "bn1_beta": self.bn1.beta,
            "conv2_w": self.conv2_w, "conv2_b": self.conv2_b,
            "bn2_gamma": self.bn2.gamma, "bn2_beta": self.bn2.beta,
            "fc_w": self.fc_w, "fc_b": self.fc_b,
            "out_w": self.out_w, "out_b": self.out_b,
        }

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def expected_shape_trace(self, frames: int) -> list[tuple[int, ...]]:
        """Per-example shapes through the network for a given frame count."""
        t1 = frames - self.conv1_kernel + 1
        p1 = t1 // self.pool1
        t2 = p1 - self.conv2_kernel + 1
        p2 = t2 // self.pool2
        return [
            (self.mel_bands, frames),
            (self.conv1_filters, t1),
            (self.conv1_filters, p1),
            (self.conv2_filters, t2),
            (self.conv2_filters, p2),
            (self.conv2_filters,),
            (self.hidden,),
            (self.classes,),
        ]

    def export_state(self) -> dict[str, np.ndarray]:
        """Parameters plus batch-norm running statistics and update counters."""
        state = dict(self.parameters())
        state["bn1_running_mean"] = self.bn1.running_mean
        state["bn1_running_var"] = self.bn1.running_var
        state["bn1_updates"] = np.array([float(self.bn1.updates)], dtype=self.dtype)
        state["bn2_running_mean"] = self.bn2.running_mean
        state["bn2_running_var"] = self.bn2.running_var
        state["bn2_updates"] = np.array([float(self.bn2.updates)], dtype=self.dtype)
        return state

    def import_state(self, state: dict[str, np.ndarray]) -> None:
        expected = self.export_state()
        missing = set(expected) - set(state)
        extra = set(state) - set(expected)
        if missing or extra:
            raise CheckpointError(f"state blocks do not match: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, value in state.items():
            target = expected[name]
            if np.asarray(value).shape != target.shape:
                raise CheckpointError(
                    f"block {name!r} has shape {np.asarray(value).shape}, expected {target.shape}"
                )
        for bn, prefix in ((self.bn1, "bn1"), (self.bn2, "bn2")):
            bn.gamma = np.array(state[f"{prefix}_gamma"], dtype=self.dtype)
            bn.beta = np.array(state[f"{prefix}_beta"], dtype=self.dtype)
            bn.running_mean = np.array(state[f"{prefix}_running_mean"], dtype=self.dtype)
            bn.running_var = np.array(state[f"{prefix}_running_var"], dtype=self.dtype)
            bn.updates = int(state[f"{prefix}_updates"].reshape(-1)[0])
        for name in ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc_w", "fc_b", "out_w", "out_b"):
            setattr(self, name, np.array(state[name], dtype=self.dtype))

    # -- forward / backward --------------------------------------------------

    def forward(
        self,
        features: np.ndarray,
        train: bool = False,
        rng: np.random.Generator | None = None,
        return_logits: bool = False,
    ):
        """(batch, mel_bands, frames) -> (batch, classes) posteriors.

        Train mode caches activations for backward and requires
        batch >= 2 (batch norm) plus an rng when dropout_rate > 0.
        With return_logits the pre-softmax activations come back too
        (for loss computation that must not underflow).
        """
        x = np.asarray(features)
        if x.ndim != 3 or x.shape[1] != self.mel_bands:
            raise ShapeError(
                f"forward: expected (batch, {self.mel_bands}, frames), got {x.shape}"
            )
        if train and x.shape[0] < 2:
            raise ShapeError(f"forward: train mode needs batch >= 2, got {x.shape[0]}")

        trace = [x.shape[1:]]
        c1, c1_cache = nn.conv1d_forward(x, self.conv1_w, self.conv1_b)
        trace.append(c1.shape[1:])
        b1, b1_cache = nn.batchnorm_forward(c1, self.bn1, train=train)
        r1, r1_mask = nn.relu_forward(b1)
        p1, p1_cache = nn.maxpool1d_forward(r1, self.pool1)
        trace.append(p1.shape[1:])
        d1, d1_cache = nn.dropout_forward(p1, self.dropout_rate, train, rng)

        c2, c2_cache = nn.conv1d_forward(d1, self.conv2_w, self.conv2_b)
        trace.append(c2.shape[1:])
        b2, b2_cache = nn.batchnorm_forward(c2, self.bn2, train=train)
        r2, r2_mask = nn.relu_forward(b2)
        p2, p2_cache = nn.maxpool1d_forward(r2, self.pool2)
        trace.append(p2.shape[1:])

        g, g_cache = nn.maxpool1d_forward(p2, p2.shape[-1])  # global max over time
        g = g[..., 0]
        trace.append(g.shape[1:])
        d2, d2_cache = nn.dropout_forward(g, self.dropout_rate, train, rng)

        f, f_cache = nn.dense_forward(d2, self.fc_w, self.fc_b)
        rf, rf_mask = nn.relu_forward(f)
        trace.append(rf.shape[1:])
        d3, d3_cache = nn.dropout_forward(rf, self.dropout_rate, train, rng)

        logits, out_cache = nn.dense_forward(d3, self.out_w, self.out_b)
        trace.append(logits.shape[1:])
        posteriors = nn.softmax(logits)

        self.last_shape_trace = trace
        if nn.debug_checks_enabled():
            want = self.expected_shape_trace(x.shape[2])
            if trace != want:
                raise ShapeError(f"shape trace {trace} != expected {want}")
        if train:
            self._cache = (
                c1_cache, b1_cache, r1_mask, p1_cache, d1_cache,
                c2_cache, b2_cache, r2_mask, p2_cache,
                g_cache, d2_cache, f_cache, rf_mask, d3_cache, out_cache,
            )
        else:
            self._cache = None
        return (posteriors, logits) if return_logits else posteriors

    def backward(self, grad_logits: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of the loss whose logit-gradient is given; keys mirror parameters()."""
        if self._cache is None:
            raise StateError("backward: no cached activations (run forward in train mode first)")
        (c1_cache, b1_cache, r1_mask, p1_cache, d1_cache,
         c2_cache, b2_cache, r2_mask, p2_cache,
         g_cache, d2_cache, f_cache, rf_mask, d3_cache, out_cache) = self._cache

        g_d3, out_gw, out_gb = nn.dense_backward(grad_logits, out_cache, self.out_w)
        g_rf = nn.dropout_backward(g_d3, d3_cache)
        g_f = nn.relu_backward(g_rf, rf_mask)
        g_d2, fc_gw, fc_gb = nn.dense_backward(g_f, f_cache, self.fc_w)
        g_g = nn.dropout_backward(g_d2, d2_cache)
        g_p2 = nn.maxpool1d_backward(g_g[..., None], g_cache)
        g_r2 = nn.maxpool1d_backward(g_p2, p2_cache)
        g_b2 = nn.relu_backward(g_r2, r2_mask)
        g_c2, bn2_gg, bn2_gb = nn.batchnorm_backward(g_b2, b2_cache)
        g_d1, conv2_gw, conv2_gb = nn.conv1d_backward(g_c2, c2_cache, self.conv2_w)
        g_p1 = nn.dropout_backward(g_d1, d1_cache)
        g_r1 = nn.maxpool1d_backward(g_p1, p1_cache)
        g_b1 = nn.relu_backward(g_r1, r1_mask)
        g_c1, bn1_gg, bn1_gb = nn.batchnorm_backward(g_b1, b1_cache)
        _, conv1_gw, conv1_gb = nn.conv1d_backward(
            g_c1, c1_cache, self.conv1_w, need_input_grad=False
        )

        return {
            "conv1_w": conv1_gw, "conv1_b": conv1_gb,
            "bn1_gamma": bn1_gg, "bn1_beta": bn1_gb,
            "conv2_w": conv2_gw, "conv2_b": conv2_gb,
            "bn2_gamma": bn2_gg, "bn2_beta": bn2_gb,
            "fc_w": fc_gw, "fc_b": fc_gb,
            "out_w": out_gw, "out_b": out_gb,
        }


# --------------------------------------------------------------------------
# Checkpoints: magic, version, architecture knobs, then named float blocks
# --------------------------------------------------------------------------


def save_checkpoint(model: SceneClassifier, path) -> None:
    parts = [
        _MAGIC,
        struct.pack(
            "<10I",
            _VERSION,
            model.mel_bands,
            model.conv1_filters,
            model.conv1_kernel,
            model.pool1,
            model.conv2_filters,
            model.conv2_kernel,
            model.pool2,
            model.hidden,
            model.classes,
        ),
        struct.pack("<f", model.dropout_rate),
    ]
    state = model.export_state()
    parts.append(struct.pack("<I", len(state)))
    for name, value in state.items():
        arr = np.ascontiguousarray(value, dtype="<f4")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        parts.append(arr.tobytes())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> SceneClassifier:
    path = Path(path)
    r = _Reader(path.read_bytes(), path)
    if r.take(4) != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (version, mel_bands, c1f, c1k, p1, c2f, c2k, p2, hidden, classes) = r.unpack("<10I")
    if version != _VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {_VERSION}")
    (dropout_rate,) = r.unpack("<f")
    (n_blocks,) = r.unpack("<I")
    state: dict[str, np.ndarray] = {}
    for _ in range(n_blocks):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(r.take(count * 4), dtype="<f4").reshape(shape)
        state[name] = data.copy()
    if r.pos != len(r.raw):
        raise CheckpointError(f"{path}: {len(r.raw) - r.pos} trailing bytes")

    model = SceneClassifier(
        mel_bands=mel_bands,
        conv1_filters=c1f,
        conv1_kernel=c1k,
        pool1=p1,
        conv2_filters=c2f,
        conv2_kernel=c2k,
        pool2=p2,
        hidden=hidden,
        classes=classes,
        dropout_rate=dropout_rate,
    )
    model.import_state(state)
    return model
