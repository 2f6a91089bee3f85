"""Low-level 5x5 reflect-padded convolution kernels.

Two interchangeable backends: a numba-jitted loop kernel (default) and a
pure-numpy fallback. Selection happens once at import time via the
``FREQAD_NUMBA`` environment variable ("0" disables numba). Both backends
accumulate in float64 with an identical tap order, so their float32 results
are bit-identical; ``benchmarks/bench_pyramid.py`` compares their speed.
"""

import os

import numpy as np

__all__ = [
    "NUMBA_ENABLED",
    "convolve5_numpy",
    "convolve5",
    "reflect_indices",
]


def reflect_indices(n: int, pad: int = 2) -> np.ndarray:
    """Indices implementing reflect padding (edge pixel not duplicated).

    Maps positions -pad..n-1+pad into [0, n). Works for any n >= 1,
    including sizes too small for np.pad's reflect mode.
    """
    idx = np.arange(-pad, n + pad)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    r = np.abs(idx) % period
    return np.where(r >= n, period - r, r)


def convolve5_numpy(stack: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Depthwise 5x5 convolution with reflect padding, pure numpy.

    stack: (K, H, W) float32;  kernel: (5, 5) float64.
    Accumulates shifted windows in float64, tap order matching the numba
    kernel, then casts back to float32.
    """
    k, h, w = stack.shape
    ri = reflect_indices(h)
    rj = reflect_indices(w)
    padded = stack[:, ri[:, None], rj[None, :]].astype(np.float64)
    out = np.zeros((k, h, w), dtype=np.float64)
    for di in range(5):
        for dj in range(5):
            out += kernel[di, dj] * padded[:, di : di + h, dj : dj + w]
    return out.astype(np.float32)


def _build_numba_kernel():
    from numba import njit

    @njit(cache=True)
    def _fold(m, n):
        if n == 1:
            return 0
        while m < 0 or m >= n:
            if m < 0:
                m = -m
            if m >= n:
                m = 2 * n - 2 - m
        return m

    @njit(cache=True)
    def _convolve5_numba(stack, kernel, out):
        k, h, w = stack.shape
        for c in range(k):
            for i in range(h):
                for j in range(w):
                    acc = 0.0
                    for di in range(5):
                        ii = _fold(i + di - 2, h)
                        for dj in range(5):
                            jj = _fold(j + dj - 2, w)
                            acc += kernel[di, dj] * stack[c, ii, jj]
                    out[c, i, j] = acc
        return out

    def convolve5_numba(stack: np.ndarray, kernel: np.ndarray) -> np.ndarray:
        out = np.empty(stack.shape, dtype=np.float32)
        _convolve5_numba(stack, kernel, out)
        return out

    return convolve5_numba


def _select_backend():
    if os.environ.get("FREQAD_NUMBA", "1") == "0":
        return convolve5_numpy, False
    try:
        return _build_numba_kernel(), True
    except ImportError:
        return convolve5_numpy, False


convolve5, NUMBA_ENABLED = _select_backend()
