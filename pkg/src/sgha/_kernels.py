"""Row-wise hot kernels used by the transformer towers.

Every kernel exists twice: a numba ``@njit`` loop version and a pure-numpy
version. The numba path is used when numba imports and the environment
variable ``SGHA_DISABLE_NUMBA`` is unset (or ``0``). Both paths are kept
importable as ``NUMPY_KERNELS`` / ``NUMBA_KERNELS`` so tests and the benchmark
can compare them directly.

All kernels take 2-D arrays and return new arrays; inputs are never
modified. ``filter_valid`` is a separable 'valid'-mode correlation used by SSIM.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

LN_EPS = 1e-5
GELU_SCALE = 1.702

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False


def _env_disabled() -> bool:
    return os.environ.get("SGHA_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")


USE_NUMBA = HAVE_NUMBA and not _env_disabled()


# --- numpy reference path -------------------------------------------------


def _layernorm_fwd_np(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * rstd
    return xhat * gain + bias, xhat, rstd[:, 0]


def _layernorm_bwd_np(dy, xhat, rstd, gain):
    dxhat = dy * gain
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    return rstd[:, None] * (dxhat - m1 - xhat * m2)


def _quick_gelu_fwd_np(z):
    return z / (1.0 + np.exp(-GELU_SCALE * z))


def _quick_gelu_bwd_np(dy, z):
    s = 1.0 / (1.0 + np.exp(-GELU_SCALE * z))
    return dy * (s + GELU_SCALE * z * s * (1.0 - s))


def _softmax_fwd_np(s):
    m = s.max(axis=-1, keepdims=True)
    e = np.exp(s - m)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_bwd_np(dp, p):
    return p * (dp - (dp * p).sum(axis=-1, keepdims=True))


def _filter_valid_np(img, taps):
    k = taps.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ taps
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ taps


NUMPY_KERNELS = SimpleNamespace(
    name="numpy",
    filter_valid=_filter_valid_np,
    layernorm_fwd=_layernorm_fwd_np,
    layernorm_bwd=_layernorm_bwd_np,
    quick_gelu_fwd=_quick_gelu_fwd_np,
    quick_gelu_bwd=_quick_gelu_bwd_np,
    softmax_fwd=_softmax_fwd_np,
    softmax_bwd=_softmax_bwd_np,
)


# --- numba path -------------------------------------------------------------

if HAVE_NUMBA:
    _jit = numba.njit(cache=True, nogil=True)

    @_jit
    def _layernorm_fwd_nb(x, gain, bias):
        rows, cols = x.shape
        y = np.empty_like(x)
        xhat = np.empty_like(x)
        rstd = np.empty(rows, dtype=x.dtype)
        for i in range(rows):
            mu = 0.0
            for j in range(cols):
                mu += x[i, j]
            mu /= cols
            var = 0.0
            for j in range(cols):
                d = x[i, j] - mu
                var += d * d
            var /= cols
            r = 1.0 / np.sqrt(var + LN_EPS)
            rstd[i] = r
            for j in range(cols):
                h = (x[i, j] - mu) * r
                xhat[i, j] = h
                y[i, j] = h * gain[j] + bias[j]
        return y, xhat, rstd

    @_jit
    def _layernorm_bwd_nb(dy, xhat, rstd, gain):
        rows, cols = dy.shape
        dx = np.empty_like(dy)
        for i in range(rows):
            m1 = 0.0
            m2 = 0.0
            for j in range(cols):
                g = dy[i, j] * gain[j]
                m1 += g
                m2 += g * xhat[i, j]
            m1 /= cols
            m2 /= cols
            r = rstd[i]
            for j in range(cols):
                dx[i, j] = r * (dy[i, j] * gain[j] - m1 - xhat[i, j] * m2)
        return dx

    @_jit
    def _quick_gelu_fwd_nb(z):
        rows, cols = z.shape
        y = np.empty_like(z)
        for i in range(rows):
            for j in range(cols):
                v = z[i, j]
                y[i, j] = v / (1.0 + np.exp(-GELU_SCALE * v))
        return y

    @_jit
    def _quick_gelu_bwd_nb(dy, z):
        rows, cols = z.shape
        dz = np.empty_like(z)
        for i in range(rows):
            for j in range(cols):
                v = z[i, j]
                s = 1.0 / (1.0 + np.exp(-GELU_SCALE * v))
                dz[i, j] = dy[i, j] * (s + GELU_SCALE * v * s * (1.0 - s))
        return dz

    @_jit
    def _softmax_fwd_nb(s):
        rows, cols = s.shape
        p = np.empty_like(s)
        for i in range(rows):
            m = s[i, 0]
            for j in range(1, cols):
                if s[i, j] > m:
                    m = s[i, j]
            tot = 0.0
            for j in range(cols):
                e = np.exp(s[i, j] - m)
                p[i, j] = e
                tot += e
            for j in range(cols):
                p[i, j] /= tot
        return p

    @_jit
    def _softmax_bwd_nb(dp, p):
        rows, cols = p.shape
        ds = np.empty_like(p)
        for i in range(rows):
            acc = 0.0
            for j in range(cols):
                acc += dp[i, j] * p[i, j]
            for j in range(cols):
                ds[i, j] = p[i, j] * (dp[i, j] - acc)
        return ds

    @_jit
    def _filter_valid_nb(img, taps):
        k = taps.size
        h, w = img.shape
        tmp = np.empty((h - k + 1, w), dtype=img.dtype)
        for i in range(h - k + 1):
            for j in range(w):
                acc = 0.0
                for t in range(k):
                    acc += img[i + t, j] * taps[t]
                tmp[i, j] = acc
        out = np.empty((h - k + 1, w - k + 1), dtype=img.dtype)
        for i in range(h - k + 1):
            for j in range(w - k + 1):
                acc = 0.0
                for t in range(k):
                    acc += tmp[i, j + t] * taps[t]
                out[i, j] = acc
        return out

    NUMBA_KERNELS = SimpleNamespace(
        name="numba",
        filter_valid=_filter_valid_nb,
        layernorm_fwd=_layernorm_fwd_nb,
        layernorm_bwd=_layernorm_bwd_nb,
        quick_gelu_fwd=_quick_gelu_fwd_nb,
        quick_gelu_bwd=_quick_gelu_bwd_nb,
        softmax_fwd=_softmax_fwd_nb,
        softmax_bwd=_softmax_bwd_nb,
    )
else:  # pragma: no cover
    NUMBA_KERNELS = None


K = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS


def backend_name() -> str:
    return K.name
