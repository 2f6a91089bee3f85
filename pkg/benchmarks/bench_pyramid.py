"""Benchmark the pyramid convolution backends (numba @njit vs pure numpy).

Run:  python3 benchmarks/bench_pyramid.py
The numba backend is whatever `freqad` selects by default; set
FREQAD_NUMBA=0 to confirm the package falls back cleanly.
"""

import timeit

import numpy as np

from freqad._kernels import _build_numba_kernel, convolve5_numpy
from freqad.pyramid import GAU1, decompose_arrays


def bench(fn, *args, repeat=5, number=3):
    best = min(timeit.repeat(lambda: fn(*args), repeat=repeat, number=number))
    return best / number


def main():
    convolve5_numba = _build_numba_kernel()
    kernel = GAU1.effective
    rng = np.random.default_rng(0)

    print(f"{'case':<28}{'numpy':>12}{'numba':>12}{'speedup':>10}")
    for shape in [(3, 64, 64), (3, 256, 256), (48, 64, 64), (16, 128, 128)]:
        stack = rng.uniform(-1, 1, size=shape).astype(np.float32)
        # verify agreement, then warm the JIT before timing
        np.testing.assert_array_equal(
            convolve5_numba(stack, kernel), convolve5_numpy(stack, kernel)
        )
        t_np = bench(convolve5_numpy, stack, kernel)
        t_nb = bench(convolve5_numba, stack, kernel)
        label = "conv5 " + "x".join(map(str, shape))
        print(f"{label:<28}{t_np * 1e3:>10.2f}ms{t_nb * 1e3:>10.2f}ms"
              f"{t_np / t_nb:>9.1f}x")

    batch = rng.uniform(-1, 1, size=(16, 3, 64, 64)).astype(np.float32)
    t = bench(decompose_arrays, batch, 2)
    print(f"\ndecompose 16x3x64x64 N=2 with selected backend: {t * 1e3:.2f} ms")


if __name__ == "__main__":
    main()
