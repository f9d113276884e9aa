"""Hot numeric kernels: valid-mode cross-correlation and 1-D max pooling.

Two interchangeable implementations are provided for every kernel:

* numba ``@njit`` loops (the default when numba imports cleanly), and
* a pure-numpy path built on ``sliding_window_view`` + ``tensordot``.

Set ``SINCFRONT_NO_NUMBA=1`` before import to force the numpy path. Both
paths are deterministic run-to-run on a given machine; they are not bitwise
identical to each other. ``benchmarks/bench_kernels.py`` compares the two.

Cross-correlation convention (valid mode): with input ``x[b, ci, t]`` and
filters ``w[co, ci, k]``,

    out[b, co, t] = sum_{ci, k} x[b, ci, t + k] * w[co, ci, k]

for t in 0 .. T - K. The two backward kernels are the exact adjoints of this
map with respect to the weights and the input.
"""

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidParameterError, InvalidSpecError, ShapeError

ENV_FLAG = "SINCFRONT_NO_NUMBA"


def _numba_available() -> bool:
    if os.environ.get(ENV_FLAG, "").strip().lower() in {"1", "true", "yes"}:
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


NUMBA_ENABLED = _numba_available()


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

# tensordot must materialize the sliding-window view, so batches are chunked
# to keep that copy bounded regardless of filter count and length
_WINDOW_BUDGET_BYTES = 256 * 1024 * 1024


def _batch_chunk(per_sample_bytes, batch):
    return min(batch, max(1, _WINDOW_BUDGET_BYTES // max(per_sample_bytes, 1)))


def _corr1d_forward_np(x, w):
    B, Ci, T = x.shape
    Co, _, K = w.shape
    To = T - K + 1
    out = np.empty((B, Co, To), dtype=np.float64)
    step = _batch_chunk(Ci * To * K * 8, B)
    for s in range(0, B, step):
        win = sliding_window_view(x[s:s + step], K, axis=2)     # (b, Ci, To, K)
        piece = np.tensordot(win, w, axes=[(1, 3), (1, 2)])     # (b, To, Co)
        out[s:s + step] = piece.transpose(0, 2, 1)
    return out


def _corr1d_grad_weights_np(x, upstream, kernel_size):
    B, Ci, _ = x.shape
    Co, To = upstream.shape[1], upstream.shape[2]
    gw = np.zeros((Co, Ci, kernel_size), dtype=np.float64)
    step = _batch_chunk(Ci * To * kernel_size * 8, B)
    for s in range(0, B, step):
        win = sliding_window_view(x[s:s + step], kernel_size, axis=2)
        # grad_w[o, i, k] = sum_{b, t} upstream[b, o, t] * win[b, i, t, k]
        gw += np.tensordot(upstream[s:s + step], win, axes=[(0, 2), (0, 2)])
    return gw


def _corr1d_grad_input_np(upstream, w):
    B, Co, To = upstream.shape
    Ci, K = w.shape[1], w.shape[2]
    grad = np.zeros((B, Ci, To + K - 1), dtype=np.float64)
    # grad_x[b, i, t + k] += upstream[b, o, t] * w[o, i, k]: one GEMM per tap
    # offset keeps peak memory at O(B * To * max(Ci, Co))
    flat = np.ascontiguousarray(upstream.transpose(0, 2, 1)).reshape(B * To, Co)
    for k in range(K):
        contrib = (flat @ w[:, :, k]).reshape(B, To, Ci)
        grad[:, :, k:k + To] += contrib.transpose(0, 2, 1)
    return grad


def _maxpool1d_forward_np(x, pool):
    B, C, T = x.shape
    To = T // pool
    trimmed = x[:, :, : To * pool].reshape(B, C, To, pool)
    local = np.argmax(trimmed, axis=3)                     # first max wins ties
    out = np.take_along_axis(trimmed, local[..., None], axis=3)[..., 0]
    idx = local + np.arange(To)[None, None, :] * pool
    return out, idx.astype(np.int64)


def _maxpool1d_backward_np(idx, upstream, t_in):
    B, C, To = upstream.shape
    grad = np.zeros((B, C, t_in), dtype=upstream.dtype)
    b = np.arange(B)[:, None, None]
    c = np.arange(C)[None, :, None]
    np.add.at(grad, (b, c, idx), upstream)
    return grad


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if NUMBA_ENABLED:
    from numba import njit

    @njit(cache=True, fastmath=True)
    def _corr1d_forward_jit(x, w, out):  # pragma: no cover - exercised via wrapper
        B, Ci, T = x.shape
        Co, _, K = w.shape
        To = T - K + 1
        if K >= 32:
            # dot-product inner loop: best when the kernel is long
            for b in range(B):
                for o in range(Co):
                    for t in range(To):
                        acc = 0.0
                        for ci in range(Ci):
                            for k in range(K):
                                acc += x[b, ci, t + k] * w[o, ci, k]
                        out[b, o, t] = acc
        else:
            # saxpy inner loop over t: best for short kernels / many channels
            for b in range(B):
                for o in range(Co):
                    for t in range(To):
                        out[b, o, t] = 0.0
                    for ci in range(Ci):
                        for k in range(K):
                            wv = w[o, ci, k]
                            for t in range(To):
                                out[b, o, t] += wv * x[b, ci, t + k]

    @njit(cache=True, fastmath=True)
    def _corr1d_grad_weights_jit(x, upstream, gw):  # pragma: no cover
        B, Ci, T = x.shape
        _, Co, To = upstream.shape
        K = T - To + 1
        for o in range(Co):
            for ci in range(Ci):
                for k in range(K):
                    acc = 0.0
                    for b in range(B):
                        for t in range(To):
                            acc += upstream[b, o, t] * x[b, ci, t + k]
                    gw[o, ci, k] = acc

    @njit(cache=True, fastmath=True)
    def _corr1d_grad_input_jit(upstream, w, gx):  # pragma: no cover
        B, Co, To = upstream.shape
        _, Ci, K = w.shape
        T = To + K - 1
        for b in range(B):
            for ci in range(Ci):
                for t in range(T):
                    gx[b, ci, t] = 0.0
        for b in range(B):
            for o in range(Co):
                for ci in range(Ci):
                    for k in range(K):
                        wv = w[o, ci, k]
                        for t in range(To):
                            gx[b, ci, t + k] += upstream[b, o, t] * wv

    @njit(cache=True)
    def _maxpool1d_forward_jit(x, pool, out, idx):  # pragma: no cover
        B, C, To = out.shape
        for b in range(B):
            for c in range(C):
                for j in range(To):
                    base = j * pool
                    best = x[b, c, base]
                    arg = base
                    for k in range(1, pool):
                        v = x[b, c, base + k]
                        if v > best:       # strict: ties keep the earliest index
                            best = v
                            arg = base + k
                    out[b, c, j] = best
                    idx[b, c, j] = arg

    @njit(cache=True)
    def _maxpool1d_backward_jit(idx, upstream, gx):  # pragma: no cover
        B, C, To = upstream.shape
        for b in range(B):
            for c in range(C):
                for j in range(To):
                    gx[b, c, idx[b, c, j]] += upstream[b, c, j]

    def _corr1d_forward_nb(x, w):
        B, _, T = x.shape
        Co, _, K = w.shape
        out = np.empty((B, Co, T - K + 1), dtype=np.float64)
        _corr1d_forward_jit(x, w, out)
        return out

    def _corr1d_grad_weights_nb(x, upstream, kernel_size):
        Ci = x.shape[1]
        Co = upstream.shape[1]
        gw = np.empty((Co, Ci, kernel_size), dtype=np.float64)
        _corr1d_grad_weights_jit(x, upstream, gw)
        return gw

    def _corr1d_grad_input_nb(upstream, w):
        B, _, To = upstream.shape
        _, Ci, K = w.shape
        gx = np.empty((B, Ci, To + K - 1), dtype=np.float64)
        _corr1d_grad_input_jit(upstream, w, gx)
        return gx

    def _maxpool1d_forward_nb(x, pool):
        B, C, T = x.shape
        To = T // pool
        out = np.empty((B, C, To), dtype=np.float64)
        idx = np.empty((B, C, To), dtype=np.int64)
        _maxpool1d_forward_jit(x, pool, out, idx)
        return out, idx

    def _maxpool1d_backward_nb(idx, upstream, t_in):
        B, C, _ = upstream.shape
        gx = np.zeros((B, C, t_in), dtype=upstream.dtype)
        _maxpool1d_backward_jit(idx, upstream, gx)
        return gx


_IMPLS = {
    "numpy": {
        "corr1d_forward": _corr1d_forward_np,
        "corr1d_grad_weights": _corr1d_grad_weights_np,
        "corr1d_grad_input": _corr1d_grad_input_np,
        "maxpool1d_forward": _maxpool1d_forward_np,
        "maxpool1d_backward": _maxpool1d_backward_np,
    }
}
if NUMBA_ENABLED:
    _IMPLS["numba"] = {
        "corr1d_forward": _corr1d_forward_nb,
        "corr1d_grad_weights": _corr1d_grad_weights_nb,
        "corr1d_grad_input": _corr1d_grad_input_nb,
        "maxpool1d_forward": _maxpool1d_forward_nb,
        "maxpool1d_backward": _maxpool1d_backward_nb,
    }

DEFAULT_IMPL = "numba" if NUMBA_ENABLED else "numpy"


def available_impls():
    return tuple(sorted(_IMPLS))


def _pick(name, impl):
    key = DEFAULT_IMPL if impl is None else impl
    if key not in _IMPLS:
        raise InvalidParameterError(
            f"unknown implementation {key!r}; available: {available_impls()}"
        )
    return _IMPLS[key][name]


def _as_c64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


# ---------------------------------------------------------------------------
# public dispatchers
# ---------------------------------------------------------------------------

def corr1d_forward(x, w, impl=None):
    """Valid-mode cross-correlation: (B, Ci, T) x (Co, Ci, K) -> (B, Co, T-K+1)."""
    x = _as_c64(x)
    w = _as_c64(w)
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"expected 3-d input and weights, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"channel mismatch: input {x.shape[1]} vs weights {w.shape[1]}")
    if x.shape[2] < w.shape[2]:
        raise ShapeError(f"time axis {x.shape[2]} shorter than kernel {w.shape[2]}")
    return _pick("corr1d_forward", impl)(x, w)


def corr1d_grad_weights(x, upstream, kernel_size, impl=None):
    """Adjoint of corr1d_forward w.r.t. the weights; returns (Co, Ci, K)."""
    x = _as_c64(x)
    upstream = _as_c64(upstream)
    if x.shape[0] != upstream.shape[0]:
        raise ShapeError("batch mismatch between input and upstream gradient")
    if upstream.shape[2] != x.shape[2] - kernel_size + 1:
        raise ShapeError(
            f"upstream time axis {upstream.shape[2]} inconsistent with "
            f"input {x.shape[2]} and kernel {kernel_size}"
        )
    return _pick("corr1d_grad_weights", impl)(x, upstream, kernel_size)


def corr1d_grad_input(upstream, w, impl=None):
    """Adjoint of corr1d_forward w.r.t. the input; returns (B, Ci, To+K-1)."""
    upstream = _as_c64(upstream)
    w = _as_c64(w)
    if upstream.shape[1] != w.shape[0]:
        raise ShapeError(f"channel mismatch: upstream {upstream.shape[1]} vs weights {w.shape[0]}")
    return _pick("corr1d_grad_input", impl)(upstream, w)


def maxpool1d_forward(x, pool, impl=None):
    """Non-overlapping max pooling; returns (pooled, argmax time indices)."""
    x = _as_c64(x)
    if x.ndim != 3:
        raise ShapeError(f"expected 3-d input, got {x.shape}")
    pool = int(pool)
    if pool < 1:
        raise InvalidSpecError(f"pool size must be >= 1, got {pool}")
    if x.shape[2] < pool:
        raise ShapeError(f"time axis {x.shape[2]} shorter than pool {pool}")
    return _pick("maxpool1d_forward", impl)(x, pool)


def maxpool1d_backward(idx, upstream, t_in, impl=None):
    """Route upstream gradient back to the argmax positions."""
    upstream = _as_c64(upstream)
    if idx.shape != upstream.shape:
        raise ShapeError(f"index shape {idx.shape} != upstream shape {upstream.shape}")
    return _pick("maxpool1d_backward", impl)(np.ascontiguousarray(idx), upstream, int(t_in))
