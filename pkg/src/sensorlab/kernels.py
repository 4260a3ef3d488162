"""Low-level numeric kernels with numba acceleration and a pure-numpy fallback.

Backend selection happens once at import time: the numba path is used when
numba is importable, unless the environment variable ``SENSORLAB_DISABLE_NUMBA``
is set to a non-empty value other than "0". Both implementations of every
kernel stay importable (``*_np`` / ``*_nb``) so tests and the benchmark script
can compare them directly.

All kernels operate on float64 C-contiguous arrays.
"""

from __future__ import annotations

import math
import os

import numpy as np
from scipy.special import erf as _erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


_flag = os.environ.get("SENSORLAB_DISABLE_NUMBA", "")
USE_NUMBA = HAVE_NUMBA and _flag in ("", "0")


# ---------------------------------------------------------------------------
# numpy implementations


def gelu_fwd_np(x):
    return 0.5 * x * (1.0 + _erf(x * _INV_SQRT2))


def gelu_bwd_np(x, gy):
    cdf = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return gy * (cdf + x * pdf)


def layernorm_fwd_np(x, eps):
    # x: (rows, d). Returns normalized y and per-row reciprocal std.
    mu = x.mean(axis=1, keepdims=True)
    var = x.var(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mu) * rstd
    return y, rstd[:, 0].copy()


def layernorm_bwd_np(y, rstd, gy):
    g_mean = gy.mean(axis=1, keepdims=True)
    gy_dot = (gy * y).mean(axis=1, keepdims=True)
    return rstd[:, None] * (gy - g_mean - y * gy_dot)


def softmax_fwd_np(x):
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd_np(y, gy):
    dot = (gy * y).sum(axis=1, keepdims=True)
    return y * (gy - dot)


def masked_sse_np(pred, target, mask):
    d = pred - target
    return float(np.sum(d * d * mask))


def adamw_update_np(p, g, m, v, t, lr, beta1, beta2, eps, wd):
    # In-place decoupled-weight-decay Adam step; t is the 1-based step count.
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    p -= lr * wd * p
    p -= lr * mhat / (np.sqrt(vhat) + eps)


def linear_interp_fill_np(x, observed):
    """Fill unobserved samples by linear interpolation, back/forward fill at
    the edges. Returns (filled, ok); ok is False when nothing is observed
    (filled is then all zeros)."""
    idx = np.flatnonzero(observed)
    if idx.size == 0:
        return np.zeros_like(x), False
    filled = np.interp(np.arange(x.shape[0], dtype=np.float64), idx, x[idx])
    return filled, True


def nearest_fill_np(x, observed):
    """Fill unobserved samples with the nearest observed value in index
    distance; ties resolve to the earlier sample."""
    idx = np.flatnonzero(observed)
    if idx.size == 0:
        return np.zeros_like(x), False
    q = np.arange(x.shape[0])
    pos = np.searchsorted(idx, q)
    left = idx[np.clip(pos - 1, 0, idx.size - 1)]
    right = idx[np.clip(pos, 0, idx.size - 1)]
    use_right = (q - left) > (right - q)
    pick = np.where(use_right, right, left)
    pick[pos == 0] = idx[0]
    pick[pos == idx.size] = idx[-1]
    return x[pick].astype(np.float64), True


# ---------------------------------------------------------------------------
# numba implementations


@njit(cache=True)
def gelu_fwd_nb(x):
    out = np.empty_like(x)
    flat_x = x.ravel()
    flat_o = out.ravel()
    for i in range(flat_x.shape[0]):
        xi = flat_x[i]
        flat_o[i] = 0.5 * xi * (1.0 + math.erf(xi * _INV_SQRT2))
    return out


@njit(cache=True)
def gelu_bwd_nb(x, gy):
    out = np.empty_like(x)
    flat_x = x.ravel()
    flat_g = gy.ravel()
    flat_o = out.ravel()
    for i in range(flat_x.shape[0]):
        xi = flat_x[i]
        cdf = 0.5 * (1.0 + math.erf(xi * _INV_SQRT2))
        pdf = math.exp(-0.5 * xi * xi) * _INV_SQRT2PI
        flat_o[i] = flat_g[i] * (cdf + xi * pdf)
    return out


@njit(cache=True)
def layernorm_fwd_nb(x, eps):
    rows, d = x.shape
    y = np.empty_like(x)
    rstd = np.empty(rows)
    for r in range(rows):
        mu = 0.0
        for j in range(d):
            mu += x[r, j]
        mu /= d
        var = 0.0
        for j in range(d):
            diff = x[r, j] - mu
            var += diff * diff
        var /= d
        rs = 1.0 / math.sqrt(var + eps)
        rstd[r] = rs
        for j in range(d):
            y[r, j] = (x[r, j] - mu) * rs
    return y, rstd


@njit(cache=True)
def layernorm_bwd_nb(y, rstd, gy):
    rows, d = y.shape
    gx = np.empty_like(y)
    for r in range(rows):
        gm = 0.0
        gd = 0.0
        for j in range(d):
            gm += gy[r, j]
            gd += gy[r, j] * y[r, j]
        gm /= d
        gd /= d
        rs = rstd[r]
        for j in range(d):
            gx[r, j] = rs * (gy[r, j] - gm - y[r, j] * gd)
    return gx


@njit(cache=True)
def softmax_fwd_nb(x):
    rows, d = x.shape
    y = np.empty_like(x)
    for r in range(rows):
        m = x[r, 0]
        for j in range(1, d):
            if x[r, j] > m:
                m = x[r, j]
        s = 0.0
        for j in range(d):
            e = math.exp(x[r, j] - m)
            y[r, j] = e
            s += e
        inv = 1.0 / s
        for j in range(d):
            y[r, j] *= inv
    return y


@njit(cache=True)
def softmax_bwd_nb(y, gy):
    rows, d = y.shape
    gx = np.empty_like(y)
    for r in range(rows):
        dot = 0.0
        for j in range(d):
            dot += gy[r, j] * y[r, j]
        for j in range(d):
            gx[r, j] = y[r, j] * (gy[r, j] - dot)
    return gx


@njit(cache=True)
def masked_sse_nb(pred, target, mask):
    fp = pred.ravel()
    ft = target.ravel()
    fm = mask.ravel()
    acc = 0.0
    for i in range(fp.shape[0]):
        d = fp[i] - ft[i]
        acc += d * d * fm[i]
    return acc


@njit(cache=True)
def adamw_update_nb(p, g, m, v, t, lr, beta1, beta2, eps, wd):
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for i in range(p.shape[0]):
        gi = g[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
        mhat = m[i] / bc1
        vhat = v[i] / bc2
        p[i] -= lr * wd * p[i]
        p[i] -= lr * mhat / (math.sqrt(vhat) + eps)


@njit(cache=True)
def _linear_interp_fill_nb(x, observed):
    n = x.shape[0]
    filled = np.zeros(n)
    first = -1
    for i in range(n):
        if observed[i]:
            first = i
            break
    if first < 0:
        return filled, False
    last = first
    for i in range(n - 1, first - 1, -1):
        if observed[i]:
            last = i
            break
    for i in range(first + 1):
        filled[i] = x[first]
    for i in range(last, n):
        filled[i] = x[last]
    prev = first
    for i in range(first + 1, last + 1):
        if observed[i]:
            filled[i] = x[i]
            if i - prev > 1:
                span = i - prev
                step = (x[i] - x[prev]) / span
                for j in range(prev + 1, i):
                    filled[j] = x[prev] + step * (j - prev)
            prev = i
    return filled, True


def linear_interp_fill_nb(x, observed):
    return _linear_interp_fill_nb(x, observed)


@njit(cache=True)
def _nearest_fill_nb(x, observed):
    n = x.shape[0]
    filled = np.zeros(n)
    any_obs = False
    for i in range(n):
        if observed[i]:
            any_obs = True
            break
    if not any_obs:
        return filled, False
    left = np.empty(n, dtype=np.int64)
    cur = -1
    for i in range(n):
        if observed[i]:
            cur = i
        left[i] = cur
    cur = -1
    for i in range(n - 1, -1, -1):
        if observed[i]:
            cur = i
        li = left[i]
        if li < 0:
            filled[i] = x[cur]
        elif cur < 0:
            filled[i] = x[li]
        else:
            # tie goes to the earlier neighbour
            if (i - li) <= (cur - i):
                filled[i] = x[li]
            else:
                filled[i] = x[cur]
    return filled, True


def nearest_fill_nb(x, observed):
    return _nearest_fill_nb(x, observed)


# ---------------------------------------------------------------------------
# dispatch

_BACKENDS = {
    "numpy": {
        "gelu_fwd": gelu_fwd_np,
        "gelu_bwd": gelu_bwd_np,
        "layernorm_fwd": layernorm_fwd_np,
        "layernorm_bwd": layernorm_bwd_np,
        "softmax_fwd": softmax_fwd_np,
        "softmax_bwd": softmax_bwd_np,
        "masked_sse": masked_sse_np,
        "adamw_update": adamw_update_np,
        "linear_interp_fill": linear_interp_fill_np,
        "nearest_fill": nearest_fill_np,
    },
}
if HAVE_NUMBA:
    _BACKENDS["numba"] = {
        "gelu_fwd": gelu_fwd_nb,
        "gelu_bwd": gelu_bwd_nb,
        "layernorm_fwd": layernorm_fwd_nb,
        "layernorm_bwd": layernorm_bwd_nb,
        "softmax_fwd": softmax_fwd_nb,
        "softmax_bwd": softmax_bwd_nb,
        "masked_sse": masked_sse_nb,
        "adamw_update": adamw_update_nb,
        "linear_interp_fill": linear_interp_fill_nb,
        "nearest_fill": nearest_fill_nb,
    }

BACKEND = "numba" if USE_NUMBA else "numpy"
_active = _BACKENDS[BACKEND]

gelu_fwd = _active["gelu_fwd"]
gelu_bwd = _active["gelu_bwd"]
layernorm_fwd = _active["layernorm_fwd"]
layernorm_bwd = _active["layernorm_bwd"]
softmax_fwd = _active["softmax_fwd"]
softmax_bwd = _active["softmax_bwd"]
masked_sse = _active["masked_sse"]
adamw_update = _active["adamw_update"]
linear_interp_fill = _active["linear_interp_fill"]
nearest_fill = _active["nearest_fill"]


def backend() -> str:
    """Name of the kernel backend selected at import time."""
    return BACKEND


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name: str):
    """Kernel table for an explicit backend, for benchmarks and tests."""
    return dict(_BACKENDS[name])
