"""Small MLPs with hand-written reverse mode, Adam, and a tanh-squashed Gaussian head.

Parameters live in one flat float64 vector. Layer ``l`` owns a weight block of
shape ``(fan_in, fan_out)`` stored row-major, followed by its bias.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._accel import njit, pick

ACTIVATIONS = {"relu": 0, "tanh": 1}
LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG2 = math.log(2.0)


class DimensionError(ValueError):
    """Raised when an array does not fit the layer it is fed to."""

    def __init__(self, msg, layer=None):
        super().__init__(msg if layer is None else f"layer {layer}: {msg}")
        self.layer = layer


@dataclass(frozen=True)
class MLPSpec:
    input_dim: int
    hidden_dims: tuple = ()
    output_dim: int = 1
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = self.dims
        if any(d < 1 for d in dims):
            raise ValueError(f"all layer widths must be >= 1, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def dims(self) -> tuple:
        return (int(self.input_dim), *self.hidden_dims, int(self.output_dim))

    @property
    def n_params(self) -> int:
        d = self.dims
        return sum((d[i] + 1) * d[i + 1] for i in range(len(d) - 1))

    def layout(self) -> list[tuple[str, int, tuple]]:
        """(name, offset, shape) for every weight and bias segment, in storage order."""
        out, off = [], 0
        d = self.dims
        for i in range(len(d) - 1):
            out.append((f"layer{i}.weight", off, (d[i], d[i + 1])))
            off += d[i] * d[i + 1]
            out.append((f"layer{i}.bias", off, (d[i + 1],)))
            off += d[i + 1]
        return out


def init_params(spec: MLPSpec, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    params = np.zeros(spec.n_params)
    for name, off, shape in spec.layout():
        if name.endswith("weight"):
            fan_in, fan_out = shape
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            params[off:off + fan_in * fan_out] = rng.uniform(-lim, lim, size=fan_in * fan_out)
    return params


# --------------------------------------------------------------------------
# kernels
#
# The same source is used for both paths: with numba enabled it is compiled,
# otherwise it runs as ordinary numpy. Activations of every layer are stored
# contiguously in one flat cache so the backward pass needs no Python lists.


def _forward_kernel(params, dims, act, x):
    batch = x.shape[0]
    total = 0
    for d in dims:
        total += d
    cache = np.empty(batch * total)
    cache[: batch * dims[0]] = x.ravel()
    c_off = 0
    p_off = 0
    n_layers = dims.shape[0] - 1
    for l in range(n_layers):
        fi = dims[l]
        fo = dims[l + 1]
        h = cache[c_off: c_off + batch * fi].reshape(batch, fi)
        w = params[p_off: p_off + fi * fo].reshape(fi, fo)
        b = params[p_off + fi * fo: p_off + fi * fo + fo]
        z = np.dot(h, w) + b
        if l < n_layers - 1:
            if act == 0:
                z = np.maximum(z, 0.0)
            else:
                z = np.tanh(z)
        c_off += batch * fi
        cache[c_off: c_off + batch * fo] = z.ravel()
        p_off += fi * fo + fo
    return cache


def _backward_kernel(params, dims, act, cache, upstream):
    batch = upstream.shape[0]
    n_layers = dims.shape[0] - 1
    grad = np.zeros(params.shape[0])
    # offsets of each layer inside params and cache
    p_offs = np.zeros(n_layers + 1, dtype=np.int64)
    c_offs = np.zeros(n_layers + 2, dtype=np.int64)
    for l in range(n_layers):
        p_offs[l + 1] = p_offs[l] + dims[l] * dims[l + 1] + dims[l + 1]
    for l in range(n_layers + 1):
        c_offs[l + 1] = c_offs[l] + batch * dims[l]
    delta = upstream.copy()
    for l in range(n_layers - 1, -1, -1):
        fi = dims[l]
        fo = dims[l + 1]
        h = cache[c_offs[l]: c_offs[l + 1]].reshape(batch, fi)
        w = params[p_offs[l]: p_offs[l] + fi * fo].reshape(fi, fo)
        gw = np.dot(h.T, delta)
        grad[p_offs[l]: p_offs[l] + fi * fo] = gw.ravel()
        grad[p_offs[l] + fi * fo: p_offs[l + 1]] = delta.sum(axis=0)
        delta = np.dot(delta, w.T)
        if l > 0:
            if act == 0:
                delta = delta * (h > 0.0)
            else:
                delta = delta * (1.0 - h * h)
    return grad, delta


_forward_nb = njit(_forward_kernel)
_backward_nb = njit(_backward_kernel)
_forward = pick(_forward_nb, _forward_kernel)
_backward = pick(_backward_nb, _backward_kernel)


def _as_batch(spec: MLPSpec, params: np.ndarray, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise DimensionError(f"input has width {x.shape[-1]}, expected {spec.input_dim}", layer=0)
    if params.shape != (spec.n_params,):
        raise DimensionError(f"parameter vector has length {params.shape}, expected {spec.n_params}")
    return np.ascontiguousarray(x), single


def _dims(spec: MLPSpec) -> np.ndarray:
    return np.asarray(spec.dims, dtype=np.int64)


def forward_with_cache(spec: MLPSpec, params: np.ndarray, x) -> tuple[np.ndarray, np.ndarray]:
    """Batched forward pass returning ``(outputs, cache)`` for a later :func:`backward`."""
    xb, _ = _as_batch(spec, params, x)
    cache = _forward(params, _dims(spec), ACTIVATIONS[spec.activation], xb)
    out = cache[-xb.shape[0] * spec.output_dim:].reshape(xb.shape[0], spec.output_dim)
    return out, cache


def backward(spec: MLPSpec, params: np.ndarray, cache: np.ndarray, upstream: np.ndarray):
    """Gradients of ``sum(upstream * output)`` w.r.t. the parameters and the inputs."""
    upstream = np.ascontiguousarray(np.asarray(upstream, dtype=np.float64).reshape(-1, spec.output_dim))
    return _backward(params, _dims(spec), ACTIVATIONS[spec.activation], cache, upstream)


def mlp_forward(spec: MLPSpec, params: np.ndarray, x) -> np.ndarray:
    """Evaluate the network on one input vector or a ``(batch, input_dim)`` array."""
    xb, single = _as_batch(spec, params, x)
    out, _ = forward_with_cache(spec, params, xb)
    return out[0] if single else out


def mlp_gradient(spec: MLPSpec, params: np.ndarray, x, upstream) -> np.ndarray:
    """d(upstream . output)/d(params), summed over the batch when ``x`` is 2-D."""
    xb, single = _as_batch(spec, params, x)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape[-1] != spec.output_dim:
        raise DimensionError(f"upstream has width {upstream.shape[-1]}, expected {spec.output_dim}",
                             layer=len(spec.dims) - 2)
    _, cache = forward_with_cache(spec, params, xb)
    grad, _ = backward(spec, params, cache, upstream.reshape(xb.shape[0], spec.output_dim))
    return grad


# --------------------------------------------------------------------------
# Adam


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, lr: float = 3e-4, **kw) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), lr=lr, **kw)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam update (descent direction). Inputs are not mutated."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape or state.m.shape != params.shape:
        raise DimensionError(f"adam: params {params.shape}, grad {grad.shape}, moments {state.m.shape}")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("adam: non-finite gradient")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, step=t), new_params


# --------------------------------------------------------------------------
# squashed Gaussian head


def log1m_tanh2(u):
    """log(1 - tanh(u)^2), stable for large |u|."""
    return 2.0 * (_LOG2 - u - np.logaddexp(0.0, -2.0 * u))


def gaussian_head_sample(mean, log_std, noise):
    """Reparameterised tanh-Gaussian draw.

    Works on a single vector or on a batch (last axis = action dims). Returns
    ``(action, log_prob)``; ``log_prob`` is summed over the last axis and
    includes the tanh change-of-variables term.
    """
    mean = np.asarray(mean, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if not (mean.shape == log_std.shape == noise.shape):
        raise DimensionError(f"head shapes differ: {mean.shape}, {log_std.shape}, {noise.shape}")
    ls = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    u = mean + np.exp(ls) * noise
    action = np.tanh(u)
    log_prob = np.sum(-0.5 * noise * noise - ls - _HALF_LOG_2PI - log1m_tanh2(u), axis=-1)
    return action, log_prob


@dataclass
class HeadSample:
    """Intermediate values of a batched head draw, kept for the backward pass."""

    action: np.ndarray
    log_prob: np.ndarray
    u: np.ndarray
    std: np.ndarray
    noise: np.ndarray
    ls_mask: np.ndarray = field(repr=False)


def head_forward(raw: np.ndarray, noise: np.ndarray) -> HeadSample:
    """Split actor output ``[mean | log_std]`` and draw through the squashed head."""
    d = raw.shape[1] // 2
    mean, log_std = raw[:, :d], raw[:, d:]
    ls = np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX)
    std = np.exp(ls)
    u = mean + std * noise
    action = np.tanh(u)
    log_prob = np.sum(-0.5 * noise * noise - ls - _HALF_LOG_2PI - log1m_tanh2(u), axis=1)
    mask = ((log_std > LOG_STD_MIN) & (log_std < LOG_STD_MAX)).astype(np.float64)
    return HeadSample(action, log_prob, u, std, noise, mask)


def head_backward(s: HeadSample, d_action: np.ndarray, d_logp: np.ndarray) -> np.ndarray:
    """Map gradients w.r.t. (action, log_prob) back onto the raw actor output.

    The noise is held fixed (reparameterisation), so ``log_prob`` depends on the
    raw output only through ``-log_std`` and the tanh correction.
    """
    # d log_prob / du = 2 tanh(u); d action / du = 1 - tanh(u)^2
    d_u = d_action * (1.0 - s.action ** 2) + d_logp[:, None] * 2.0 * s.action
    d_mean = d_u
    d_ls = (d_u * s.std * s.noise - d_logp[:, None]) * s.ls_mask
    return np.concatenate([d_mean, d_ls], axis=1)
