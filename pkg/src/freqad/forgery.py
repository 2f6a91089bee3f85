"""Pseudo-anomaly augmentation: CutOut and CutPaste.

Forged images feed the discriminator as positives alongside
reconstructions; they never enter a generator. Patch geometry follows the
usual area-ratio [0.02, 0.15] and aspect [0.3, 3.3] conventions.
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["PatchSpec", "cutout", "cutpaste", "forge_batch"]

_MAX_RESAMPLE = 10


@dataclass
class PatchSpec:
    top: int
    left: int
    height: int
    width: int
    source: str  # "erase" or "self-paste"
    fill_value: float = 0.0


def _sample_patch(rng, img_h, img_w, area_range, aspect_range):
    """Sample a patch rectangle fully inside the image; retries degenerate draws."""
    for _ in range(_MAX_RESAMPLE):
        area = rng.uniform(*area_range) * img_h * img_w
        aspect = rng.uniform(*aspect_range)  # width / height
        h = int(round(np.sqrt(area / aspect)))
        w = int(round(np.sqrt(area * aspect)))
        if h < 1 or w < 1 or h > img_h or w > img_w:
            continue
        top = int(rng.integers(0, img_h - h + 1))
        left = int(rng.integers(0, img_w - w + 1))
        return top, left, h, w
    raise ValueError(
        f"could not sample a valid patch for a {img_h}x{img_w} image"
    )


def _validate(image):
    if image.ndim != 3:
        raise ValueError(f"expected (C, H, W) image, got shape {image.shape}")
    if image.shape[1] < 16 or image.shape[2] < 16:
        raise ValueError(f"image too small for forgery: {image.shape}")


def cutout(image: np.ndarray, rng: np.random.Generator,
           area_range=(0.02, 0.15), aspect_range=(0.3, 3.3),
           fill_value: float = 0.0):
    """Erase a random rectangle with a constant (mid-gray by default)."""
    _validate(image)
    _, h, w = image.shape
    top, left, ph, pw = _sample_patch(rng, h, w, area_range, aspect_range)
    out = image.copy()
    out[:, top : top + ph, left : left + pw] = fill_value
    return out, PatchSpec(top, left, ph, pw, "erase", fill_value)


def cutpaste(image: np.ndarray, rng: np.random.Generator,
             area_range=(0.02, 0.15), aspect_range=(0.3, 3.3)):
    """Copy a random rectangle of the image onto another random location."""
    _validate(image)
    _, h, w = image.shape
    top, left, ph, pw = _sample_patch(rng, h, w, area_range, aspect_range)
    src_top = int(rng.integers(0, h - ph + 1))
    src_left = int(rng.integers(0, w - pw + 1))
    patch = image[:, src_top : src_top + ph, src_left : src_left + pw].copy()
    out = image.copy()
    out[:, top : top + ph, left : left + pw] = patch
    return out, PatchSpec(top, left, ph, pw, "self-paste")


def forge_batch(batch, rng: np.random.Generator, use_cutout: bool = True,
                use_cutpaste: bool = True, both: bool = False,
                area_range=(0.02, 0.15), aspect_range=(0.3, 3.3)):
    """Forge every image in a batch with the enabled augmentations.

    Each image gets one augmentation chosen uniformly among the enabled
    ones, or both in sequence when ``both`` is set.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    if not (use_cutout or use_cutpaste):
        raise ValueError("at least one augmentation must be enabled")
    forged = []
    for img in batch:
        out = img
        if both and use_cutout and use_cutpaste:
            out, _ = cutout(out, rng, area_range, aspect_range)
            out, _ = cutpaste(out, rng, area_range, aspect_range)
        else:
            ops = []
            if use_cutout:
                ops.append("cutout")
            if use_cutpaste:
                ops.append("cutpaste")
            op = ops[int(rng.integers(0, len(ops)))]
            if op == "cutout":
                out, _ = cutout(out, rng, area_range, aspect_range)
            else:
                out, _ = cutpaste(out, rng, area_range, aspect_range)
        forged.append(out)
    return forged
