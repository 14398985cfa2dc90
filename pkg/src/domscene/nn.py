"""Numerical kernels: the layer set of the classifier plus Adam.

Five layer types (1-D convolution over time, batch norm, max pooling,
dense, softmax cross-entropy) with explicit backward passes, and the
two regularizers around them (ReLU, inverted dropout).  Everything is
a pure function of numpy arrays; layer state lives in small
dataclasses owned by the caller.

Arrays are float32 in production.  Every kernel is dtype-generic so
the test suite can run the same code at float64 for tight
finite-difference checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from domscene.errors import OptimizerError, ShapeError, StateError

_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    """When on, every kernel verifies its outputs are finite."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


def debug_checks_enabled() -> bool:
    return _DEBUG_CHECKS


def _assert_finite(name: str, *arrays: np.ndarray) -> None:
    if _DEBUG_CHECKS:
        for a in arrays:
            if not np.isfinite(a).all():
                raise FloatingPointError(f"{name} produced non-finite values")


# --------------------------------------------------------------------------
# Convolution over the time axis, valid, stride 1
# --------------------------------------------------------------------------


def _conv_cols(x: np.ndarray, kernel: int) -> np.ndarray:
    """(N, C, T) -> contiguous (N*(T-K+1), K*C) im2col matrix.

    Built time-major so the copy runs over C-length contiguous spans
    instead of K-length ones; weight matrices must use the matching
    (out, K, C) flattening.
    """
    n, c, t = x.shape
    xt = np.ascontiguousarray(x.transpose(0, 2, 1))  # (N, T, C)
    win = np.lib.stride_tricks.sliding_window_view(xt, kernel, axis=1)
    flat = np.ascontiguousarray(win.transpose(0, 1, 3, 2))  # (N, T', K, C)
    return flat.reshape(n * (t - kernel + 1), kernel * c)


def _conv_weight_matrix(weights: np.ndarray) -> np.ndarray:
    """(out, C, K) -> (out, K*C), the flattening _conv_cols pairs with."""
    c_out, c_in, kernel = weights.shape
    return np.ascontiguousarray(weights.transpose(0, 2, 1)).reshape(c_out, kernel * c_in)


def conv1d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray):
    """out[n,o,t] = bias[o] + sum_{c,k} weights[o,c,k] * x[n,c,t+k].

    Accepts (C, T) or batched (N, C, T); output drops the batch axis
    iff the input had none.  Returns (out, cache) for the backward pass.
    """
    single = x.ndim == 2
    xb = x[None] if single else x
    n, c_in, t = xb.shape
    c_out, w_cin, kernel = weights.shape
    if w_cin != c_in:
        raise ShapeError(f"conv1d: weights expect {w_cin} input channels, input has {c_in}")
    if t < kernel:
        raise ShapeError(f"conv1d: input length {t} shorter than kernel {kernel}")
    if bias.shape != (c_out,):
        raise ShapeError(f"conv1d: bias shape {bias.shape}, expected ({c_out},)")
    t_out = t - kernel + 1
    # the im2col matrix is kept in the cache so backward reuses it
    flat = _conv_cols(xb, kernel)
    out = flat @ _conv_weight_matrix(weights).T + bias
    out = np.ascontiguousarray(out.reshape(n, t_out, c_out).transpose(0, 2, 1))
    _assert_finite("conv1d_forward", out)
    cache = (flat, (n, c_in, t), single)
    return (out[0] if single else out), cache


def conv1d_backward(grad_out: np.ndarray, cache, weights: np.ndarray, need_input_grad: bool = True):
    """Chain rule for conv1d_forward; returns (grad_input, grad_weights, grad_bias).

    grad_input is None when need_input_grad is False (first layer of a net).
    """
    flat, (n, c_in, t), single = cache
    gb = grad_out[None] if single else grad_out
    c_out, _, kernel = weights.shape
    t_out = t - kernel + 1
    if gb.shape != (n, c_out, t_out):
        raise ShapeError(f"conv1d: grad_out shape {gb.shape}, expected {(n, c_out, t_out)}")

    grad_bias = gb.sum(axis=(0, 2))
    gbt = np.ascontiguousarray(gb.transpose(0, 2, 1))  # (N, T', C_out)
    grad_weights = (
        (gbt.reshape(n * t_out, c_out).T @ flat)
        .reshape(c_out, kernel, c_in)
        .transpose(0, 2, 1)
    )

    if need_input_grad:
        # grad_x is the full correlation of grad_out with tap-reversed weights:
        # grad_x[n,c,t] = sum_{o,k} gb[n,o,t-k] w[o,c,k]
        gpad = np.zeros((n, t + kernel - 1, c_out), dtype=gb.dtype)
        gpad[:, kernel - 1 : kernel - 1 + t_out, :] = gbt
        gwin = np.lib.stride_tricks.sliding_window_view(gpad, kernel, axis=1)
        gflat = np.ascontiguousarray(gwin.transpose(0, 1, 3, 2)).reshape(n * t, kernel * c_out)
        # rows ordered (k, o) to match gflat's columns
        wmat = np.ascontiguousarray(
            weights[:, :, ::-1].transpose(2, 0, 1)
        ).reshape(kernel * c_out, c_in)
        grad_x = np.ascontiguousarray(
            (gflat @ wmat).reshape(n, t, c_in).transpose(0, 2, 1)
        )
        _assert_finite("conv1d_backward", grad_x)
        grad_x = grad_x[0] if single else grad_x
    else:
        grad_x = None
    _assert_finite("conv1d_backward", grad_weights, grad_bias)
    return grad_x, grad_weights, grad_bias


# --------------------------------------------------------------------------
# Batch normalization per channel over (batch, time)
# --------------------------------------------------------------------------


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    updates: int = 0
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, dtype=np.float32) -> "BatchNormState":
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )


def batchnorm_forward(x: np.ndarray, state: BatchNormState, train: bool, momentum: float = 0.99):
    """Normalize each channel over (batch, time), then gain and shift.

    Train mode uses batch statistics and folds them into the running
    EMA; infer mode requires at least one prior update.
    x: (N, C, T).  Returns (out, cache).
    """
    if x.ndim != 3:
        raise ShapeError(f"batchnorm: input must be (batch, C, T), got {x.shape}")
    n, c, t = x.shape
    if state.gamma.shape != (c,):
        raise ShapeError(f"batchnorm: state has {state.gamma.shape[0]} channels, input {c}")
    gamma = state.gamma[None, :, None]
    beta = state.beta[None, :, None]
    if train:
        if n * t < 2:
            raise ShapeError(f"batchnorm: need batch*time >= 2 per channel, got {n * t}")
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
        state.running_mean = (momentum * state.running_mean + (1 - momentum) * mean).astype(
            state.running_mean.dtype
        )
        state.running_var = (momentum * state.running_var + (1 - momentum) * var).astype(
            state.running_var.dtype
        )
        state.updates += 1
        cache = (xhat, inv_std, state.gamma)
    else:
        if state.updates == 0:
            raise StateError("batchnorm: inference before any training update")
        inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x - state.running_mean[None, :, None]) * inv_std[None, :, None]
        cache = None
    out = gamma * xhat + beta
    _assert_finite("batchnorm_forward", out)
    return out, cache


def batchnorm_backward(grad_out: np.ndarray, cache):
    """Returns (grad_x, grad_gamma, grad_beta) for a train-mode forward."""
    if cache is None:
        raise StateError("batchnorm: backward requires a train-mode forward cache")
    xhat, inv_std, gamma = cache
    m = xhat.shape[0] * xhat.shape[2]
    grad_beta = grad_out.sum(axis=(0, 2))
    grad_gamma = (grad_out * xhat).sum(axis=(0, 2))
    g = grad_out * gamma[None, :, None]
    g_sum = g.sum(axis=(0, 2), keepdims=True)
    gx_sum = (g * xhat).sum(axis=(0, 2), keepdims=True)
    grad_x = (inv_std[None, :, None] / m) * (m * g - g_sum - xhat * gx_sum)
    _assert_finite("batchnorm_backward", grad_x, grad_gamma, grad_beta)
    return grad_x, grad_gamma, grad_beta


# --------------------------------------------------------------------------
# Non-overlapping max pooling over time
# --------------------------------------------------------------------------


def maxpool1d_forward(x: np.ndarray, width: int):
    """Pool the last axis in non-overlapping windows; remainder dropped.

    Ties resolve to the first maximum.  Returns (out, cache).
    """
    t = x.shape[-1]
    if width < 1:
        raise ShapeError(f"maxpool: width must be >= 1, got {width}")
    if t < width:
        raise ShapeError(f"maxpool: input length {t} shorter than pool width {width}")
    t_out = t // width
    windows = x[..., : t_out * width].reshape(*x.shape[:-1], t_out, width)
    arg = np.argmax(windows, axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    _assert_finite("maxpool1d_forward", out)
    return out, (arg, x.shape, width)


def maxpool1d_backward(grad_out: np.ndarray, cache) -> np.ndarray:
    arg, x_shape, width = cache
    t_out = grad_out.shape[-1]
    grad_win = np.zeros((*x_shape[:-1], t_out, width), dtype=grad_out.dtype)
    np.put_along_axis(grad_win, arg[..., None], grad_out[..., None], axis=-1)
    grad_x = np.zeros(x_shape, dtype=grad_out.dtype)
    grad_x[..., : t_out * width] = grad_win.reshape(*x_shape[:-1], t_out * width)
    return grad_x


# --------------------------------------------------------------------------
# Dense
# --------------------------------------------------------------------------


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray):
    """Affine map; x is a vector or a (batch, features) matrix."""
    m, n_in = weights.shape
    if x.shape[-1] != n_in:
        raise ShapeError(f"dense: input has {x.shape[-1]} features, weights expect {n_in}")
    if bias.shape != (m,):
        raise ShapeError(f"dense: bias shape {bias.shape}, expected ({m},)")
    out = x @ weights.T + bias
    _assert_finite("dense_forward", out)
    return out, x


def dense_backward(grad_out: np.ndarray, cache, weights: np.ndarray):
    x = cache
    if x.ndim == 1:
        grad_w = np.outer(grad_out, x)
        grad_b = grad_out.copy()
    else:
        grad_w = grad_out.T @ x
        grad_b = grad_out.sum(axis=0)
    grad_x = grad_out @ weights
    _assert_finite("dense_backward", grad_x, grad_w, grad_b)
    return grad_x, grad_w, grad_b


# --------------------------------------------------------------------------
# Softmax + cross-entropy
# --------------------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-shift; works on vectors and batches."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)
    _assert_finite("softmax", out)
    return out


def softmax_xent(logits: np.ndarray, target: int):
    """One example: returns (posterior, loss, grad_logits)."""
    posterior = softmax(logits)
    loss = -np.log(posterior[target])
    grad = posterior.copy()
    grad[target] -= 1
    return posterior, float(loss), grad


def softmax_xent_batch(logits: np.ndarray, targets: np.ndarray):
    """Batch: (posteriors, per-example losses, grad of the MEAN loss)."""
    posteriors = softmax(logits)
    n = logits.shape[0]
    rows = np.arange(n)
    losses = -np.log(posteriors[rows, targets])
    grad = posteriors.copy()
    grad[rows, targets] -= 1
    grad /= n
    return posteriors, losses, grad


# --------------------------------------------------------------------------
# ReLU and inverted dropout
# --------------------------------------------------------------------------


def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, mask


def relu_backward(grad_out: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return grad_out * mask


def dropout_forward(x: np.ndarray, rate: float, train: bool, rng: np.random.Generator | None = None):
    """Inverted dropout: survivors scaled by 1/(1-rate); identity at inference."""
    if not 0 <= rate < 1:
        raise ShapeError(f"dropout: rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x, None
    if rng is None:
        raise StateError("dropout: train mode with rate > 0 requires an rng")
    scaled_mask = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1 - rate)
    return x * scaled_mask, scaled_mask


def dropout_backward(grad_out: np.ndarray, cache) -> np.ndarray:
    return grad_out if cache is None else grad_out * cache


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """One bias-corrected Adam update, in place on every block in params."""
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise OptimizerError(f"adam: gradient for {name!r} has shape {g.shape}, parameter {p.shape}")
        if not np.isfinite(g).all():
            raise OptimizerError(f"adam: non-finite gradient in block {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p -= (state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(p.dtype)


# --------------------------------------------------------------------------
# Initialization
# --------------------------------------------------------------------------


def glorot_uniform(shape, fan_in: int, fan_out: int, rng: np.random.Generator, dtype=np.float32):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)
