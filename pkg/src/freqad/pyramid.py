"""Gaussian-pyramid frequency decoupling.

An image is split into N additive band images: repeated blur/downsample/
upsample produces progressively blurrier full-resolution copies, and
adjacent differences isolate the frequency content each blur removed.
Summing the bands restores the input exactly (up to float32 rounding).

All pyramid math runs in float32 on arrays whose last two axes are
spatial; leading axes (channels, batch) are carried through untouched.
"""

from dataclasses import dataclass, field
from functools import reduce
import operator

import numpy as np

from ._kernels import convolve5

__all__ = [
    "GaussianKernel",
    "GAU1",
    "GAU2",
    "FrequencyBands",
    "blur",
    "pyr_down",
    "pyr_up",
    "decompose",
    "decompose_arrays",
    "recompose",
]

_BASE_WEIGHTS = (
    np.array(
        [
            [1, 4, 6, 4, 1],
            [4, 16, 24, 16, 4],
            [6, 24, 36, 24, 6],
            [4, 16, 24, 16, 4],
            [1, 4, 6, 4, 1],
        ],
        dtype=np.float64,
    )
    / 256.0
)
_BASE_WEIGHTS.setflags(write=False)


@dataclass(frozen=True)
class GaussianKernel:
    """5x5 binomial smoothing kernel with a scalar multiplier."""

    weights: np.ndarray
    scale: float = 1.0

    @property
    def effective(self) -> np.ndarray:
        return self.weights * self.scale


GAU1 = GaussianKernel(_BASE_WEIGHTS, 1.0)
# The x4 variant compensates for the 3-in-4 zeros a zero-interleaved
# upsampling introduces.
GAU2 = GaussianKernel(_BASE_WEIGHTS, 4.0)


@dataclass
class FrequencyBands:
    """Ordered low-to-high frequency band images that sum to the source."""

    bands: list = field(default_factory=list)
    source_shape: tuple = ()

    @property
    def n(self) -> int:
        return len(self.bands)

    def __iter__(self):
        return iter(self.bands)


def _as_stack(image: np.ndarray):
    """View (..., H, W) input as a float32 (K, H, W) stack."""
    arr = np.ascontiguousarray(np.asarray(image, dtype=np.float32))
    if arr.ndim < 2:
        raise ValueError(f"image must have at least 2 dims, got shape {arr.shape}")
    lead = arr.shape[:-2]
    h, w = arr.shape[-2:]
    return arr.reshape(-1, h, w), lead, (h, w)


def blur(image: np.ndarray, kernel: GaussianKernel = GAU1) -> np.ndarray:
    """Depthwise 5x5 convolution with reflect padding of 2 on every border."""
    stack, lead, (h, w) = _as_stack(image)
    if h < 5 or w < 5:
        raise ValueError(f"image spatial dims ({h}, {w}) smaller than the 5x5 kernel")
    out = convolve5(stack, kernel.effective)
    return out.reshape(*lead, h, w)


def pyr_down(image: np.ndarray) -> np.ndarray:
    """Blur with GAU1, then keep rows/columns at even indices."""
    stack, lead, (h, w) = _as_stack(image)
    if h < 6 or w < 6:
        raise ValueError(f"pyr_down needs spatial dims >= 6, got ({h}, {w})")
    out = convolve5(stack, GAU1.effective)[:, ::2, ::2]
    return out.reshape(*lead, *out.shape[-2:])


def pyr_up(image: np.ndarray, target_shape: tuple) -> np.ndarray:
    """Zero-interleave up to target_shape, then blur with GAU2.

    Source pixels land at even indices, so ceil(target/2) must equal the
    source dims for the round trip with pyr_down to be shape-exact.
    """
    stack, lead, (h, w) = _as_stack(image)
    th, tw = target_shape
    if (th + 1) // 2 != h or (tw + 1) // 2 != w:
        raise ValueError(
            f"target shape {(th, tw)} does not halve to source dims ({h}, {w})"
        )
    interleaved = np.zeros((stack.shape[0], th, tw), dtype=np.float32)
    interleaved[:, ::2, ::2] = stack
    out = convolve5(interleaved, GAU2.effective)
    return out.reshape(*lead, th, tw)


def decompose_arrays(image: np.ndarray, n_branches: int) -> list:
    """Band images as a plain list; see decompose for the contract."""
    if n_branches < 2:
        raise ValueError(f"n_branches must be >= 2, got {n_branches}")
    arr = np.asarray(image, dtype=np.float32)
    blurred = [arr]  # blurred[k] holds the (N-k)-times-smoothed copy
    current = arr
    for _ in range(n_branches - 1):
        down = pyr_down(current)
        current = pyr_up(down, current.shape[-2:])
        blurred.append(current)
    blurred.reverse()  # now ordered most-blurred first
    bands = [blurred[0]]
    for k in range(1, n_branches):
        bands.append(blurred[k] - blurred[k - 1])
    return bands


def decompose(image: np.ndarray, n_branches: int) -> FrequencyBands:
    """Split an image into n additive bands, ordered low to high frequency.

    Band 1 is the most-blurred copy; band k (k >= 2) is the difference
    between adjacent blur levels, so the bands telescope back to the input.
    """
    bands = decompose_arrays(image, n_branches)
    return FrequencyBands(bands=bands, source_shape=tuple(np.shape(image)))


def recompose(bands) -> np.ndarray:
    """Element-wise sum of all bands (numpy arrays or torch tensors)."""
    seq = list(bands.bands) if isinstance(bands, FrequencyBands) else list(bands)
    if not seq:
        raise ValueError("recompose needs at least one band")
    shape = seq[0].shape
    for b in seq[1:]:
        if b.shape != shape:
            raise ValueError(f"band shape mismatch: {b.shape} vs {shape}")
    return reduce(operator.add, seq)
