"""Dataset ingestion and a synthetic defect dataset generator.

Folder layout mirrors the usual industrial-defect distribution:
``root/category/train/good/*`` holds normal training images and
``root/category/test/<good-or-defect-name>/*`` holds labeled test images.
Images load as float32 (C, H, W) tensors normalized to [-1, 1].

The synthetic generator renders smooth procedural textures (low-pass noise
plus a periodic grating) and injects sharp defects (scratch polylines,
dark discs, off-texture noise patches) into the abnormal split, together
with a manifest recording each defect's geometry.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List

import numpy as np
from PIL import Image

from .pyramid import blur

__all__ = [
    "DatasetLayoutError",
    "Sample",
    "DatasetSpec",
    "load_folder_dataset",
    "load_image",
    "load_image_folder",
    "render_texture",
    "make_synthetic_dataset",
]

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp"}


class DatasetLayoutError(ValueError):
    pass


@dataclass
class Sample:
    image: np.ndarray  # (C, H, W) float32 in [-1, 1]
    label: str  # "normal" | "abnormal"
    category: str
    sample_id: str


@dataclass
class DatasetSpec:
    root: str
    category: str
    split: str  # "train" | "test"
    image_size: int = 256
    channels: int = 3

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise DatasetLayoutError(f"split must be train or test, got {self.split!r}")
        if self.channels not in (1, 3):
            raise DatasetLayoutError(f"channels must be 1 or 3, got {self.channels}")


def load_image(path, image_size: int, channels: int = 3) -> np.ndarray:
    """Load, resize (bilinear, aspect-ignoring) and normalize one image."""
    try:
        with Image.open(path) as img:
            img = img.convert("L" if channels == 1 else "RGB")
            if img.size != (image_size, image_size):
                img = img.resize((image_size, image_size), Image.BILINEAR)
            arr = np.asarray(img, dtype=np.float32) / 255.0
    except (OSError, SyntaxError) as exc:
        raise DatasetLayoutError(f"unreadable image {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return arr * 2.0 - 1.0


def _list_images(folder: Path) -> List[Path]:
    return sorted(
        p for p in folder.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
    )


def load_folder_dataset(spec: DatasetSpec) -> List[Sample]:
    """Load one split in deterministic lexicographic order.

    Train splits accept only a ``good`` folder; any other image-bearing
    folder there is treated as mislabeled data and rejected outright.
    """
    split_dir = Path(spec.root) / spec.category / spec.split
    if not split_dir.is_dir():
        raise DatasetLayoutError(f"missing dataset folder: {split_dir}")
    subdirs = sorted(p for p in split_dir.iterdir() if p.is_dir())
    if spec.split == "train":
        for sub in subdirs:
            if sub.name != "good" and _list_images(sub):
                raise DatasetLayoutError(
                    f"train split may contain only normal samples; found {sub}"
                )
        subdirs = [s for s in subdirs if s.name == "good"]
        if not subdirs:
            raise DatasetLayoutError(f"missing train/good folder under {split_dir}")
    samples = []
    for sub in subdirs:
        label = "normal" if sub.name == "good" else "abnormal"
        for path in _list_images(sub):
            samples.append(
                Sample(
                    image=load_image(path, spec.image_size, spec.channels),
                    label=label,
                    category=spec.category,
                    sample_id=str(path.relative_to(split_dir)),
                )
            )
    if not samples:
        raise DatasetLayoutError(f"empty split: no images under {split_dir}")
    return samples


def load_image_folder(folder, image_size: int, channels: int = 3) -> List[Sample]:
    """Load a flat folder of unlabeled images (label 'unknown')."""
    folder = Path(folder)
    if not folder.is_dir():
        raise DatasetLayoutError(f"missing folder: {folder}")
    paths = _list_images(folder)
    if not paths:
        raise DatasetLayoutError(f"no images found under {folder}")
    return [
        Sample(
            image=load_image(p, image_size, channels),
            label="unknown",
            category=folder.name,
            sample_id=p.name,
        )
        for p in paths
    ]


# ---------------------------------------------------------------------------
# synthetic dataset


def render_texture(seed: int, size: int, channels: int = 3) -> np.ndarray:
    """Procedural material texture in [0, 1], shape (C, size, size).

    Low-pass-filtered noise, contrast-enhanced into flat grain cells with
    crisp boundaries (leather- or tile-like), plus a gentle periodic
    pattern. Cell layout and boundary density vary per image; channels
    share structure with slight gain offsets.
    """
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((size, size)).astype(np.float32)
    for _ in range(4):
        noise = blur(noise)
    noise *= 0.5 / max(float(np.abs(noise).max()), 1e-6)
    cells = np.tanh(5.0 * noise).astype(np.float32)

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    period = rng.uniform(9.0, 15.0)
    angle = rng.uniform(0.0, np.pi)
    phase = rng.uniform(0.0, 2 * np.pi)
    wave = 0.04 * np.sin(
        2.0 * np.pi * (np.cos(angle) * xx + np.sin(angle) * yy) / period + phase
    ).astype(np.float32)

    base = rng.uniform(0.45, 0.55)
    mono = base + 0.13 * cells + wave
    gains = rng.uniform(0.9, 1.1, size=channels).astype(np.float32)
    img = np.stack([np.clip(mono * g, 0.05, 0.95) for g in gains])
    return img.astype(np.float32)


def _inject_defect(img: np.ndarray, rng: np.random.Generator, kind: str):
    """Draw one defect in-place on a [0, 1] (C, H, W) texture; returns its mask."""
    _, h, w = img.shape
    mask = np.zeros((h, w), dtype=bool)
    if kind == "scratch":
        n_pts = int(rng.integers(3, 6))
        y = rng.uniform(0.15 * h, 0.85 * h)
        x = rng.uniform(0.15 * w, 0.85 * w)
        angle = rng.uniform(0, 2 * np.pi)
        thickness = 2
        delta = rng.choice([-1.0, 1.0]) * rng.uniform(0.35, 0.55)
        for _ in range(n_pts):
            seg_len = rng.uniform(0.1, 0.25) * h
            angle += rng.uniform(-0.7, 0.7)
            steps = max(int(seg_len * 2), 2)
            for t in np.linspace(0.0, 1.0, steps):
                cy = int(round(y + t * seg_len * np.sin(angle)))
                cx = int(round(x + t * seg_len * np.cos(angle)))
                if 0 <= cy < h and 0 <= cx < w:
                    mask[
                        max(cy - thickness + 1, 0) : cy + thickness,
                        max(cx - thickness + 1, 0) : cx + thickness,
                    ] = True
            y += seg_len * np.sin(angle)
            x += seg_len * np.cos(angle)
        img[:, mask] = np.clip(img[:, mask] + delta, 0.0, 1.0)
    elif kind == "hole":
        radius = rng.uniform(4.0, 7.5)
        cy = rng.uniform(radius + 1, h - radius - 1)
        cx = rng.uniform(radius + 1, w - radius - 1)
        yy, xx = np.mgrid[0:h, 0:w]
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
        img[:, mask] = np.clip(img[:, mask] - rng.uniform(0.4, 0.6), 0.0, 1.0)
    elif kind == "patch":
        side_h = int(rng.integers(10, 19))
        side_w = int(rng.integers(10, 19))
        top = int(rng.integers(0, h - side_h + 1))
        left = int(rng.integers(0, w - side_w + 1))
        mask[top : top + side_h, left : left + side_w] = True
        region = img[:, mask]
        noise = rng.uniform(-0.45, 0.45, size=region.shape).astype(np.float32)
        img[:, mask] = np.clip(region.mean() + noise, 0.0, 1.0)
    else:
        raise ValueError(f"unknown defect kind: {kind}")
    if not mask.any():
        raise RuntimeError("defect rasterized to zero pixels")
    return mask


def _mask_bbox(mask: np.ndarray):
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    top, bottom = int(rows[0]), int(rows[-1])
    left, right = int(cols[0]), int(cols[-1])
    return [top, left, bottom - top + 1, right - left + 1]


def _save_png(path: Path, img01: np.ndarray):
    arr = np.clip(np.round(img01 * 255.0), 0, 255).astype(np.uint8)
    if arr.shape[0] == 1:
        Image.fromarray(arr[0], mode="L").save(path)
    else:
        Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path)


DEFECT_KINDS = ("scratch", "hole", "patch")


def make_synthetic_dataset(root, seed: int, n_train: int, n_test_normal: int,
                           n_test_abnormal: int, image_size: int = 64,
                           channels: int = 3, category: str = "synthetic") -> Path:
    """Write a synthetic dataset in the standard folder layout.

    Returns the category directory. Deterministic: the same arguments
    produce byte-identical files. A ``manifest.jsonl`` records per image
    its label, texture seed, and (for defects) kind plus bounding box.
    """
    if min(n_train, n_test_normal, n_test_abnormal) < 1:
        raise ValueError("all sample counts must be >= 1")
    category_dir = Path(root) / category
    train_dir = category_dir / "train" / "good"
    test_good_dir = category_dir / "test" / "good"
    test_defect_dir = category_dir / "test" / "defect"
    for d in (train_dir, test_good_dir, test_defect_dir):
        d.mkdir(parents=True, exist_ok=True)

    master = np.random.default_rng(seed)
    total = n_train + n_test_normal + n_test_abnormal
    texture_seeds = master.integers(0, 2**63 - 1, size=total)
    manifest = []

    def emit(path: Path, rel_id: str, label: str, tex_seed: int, defect=None):
        manifest.append(
            {
                "id": rel_id,
                "label": label,
                "defect_type": defect[0] if defect else None,
                "bbox": defect[1] if defect else None,
                "texture_seed": int(tex_seed),
            }
        )

    k = 0
    for i in range(n_train):
        tex_seed = texture_seeds[k]; k += 1
        img = render_texture(int(tex_seed), image_size, channels)
        name = f"{i:05d}.png"
        _save_png(train_dir / name, img)
        emit(train_dir, f"train/good/{name}", "normal", tex_seed)
    for i in range(n_test_normal):
        tex_seed = texture_seeds[k]; k += 1
        img = render_texture(int(tex_seed), image_size, channels)
        name = f"{i:05d}.png"
        _save_png(test_good_dir / name, img)
        emit(test_good_dir, f"test/good/{name}", "normal", tex_seed)
    for i in range(n_test_abnormal):
        tex_seed = texture_seeds[k]; k += 1
        img = render_texture(int(tex_seed), image_size, channels)
        defect_rng = np.random.default_rng([seed, 7, i])
        kind = DEFECT_KINDS[i % len(DEFECT_KINDS)]
        mask = _inject_defect(img, defect_rng, kind)
        name = f"{i:05d}.png"
        _save_png(test_defect_dir / name, img)
        emit(test_defect_dir, f"test/defect/{name}", "abnormal", tex_seed,
             defect=(kind, _mask_bbox(mask)))

    with open(category_dir / "manifest.jsonl", "w") as f:
        for entry in manifest:
            f.write(json.dumps(entry) + "\n")
    return category_dir
