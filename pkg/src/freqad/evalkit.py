"""Evaluation and analysis: AUC, score exports, and spectrum profiles.

Scores are rank statistics: AUC is the Mann-Whitney estimate with average
ranks for ties, verified against a pairwise-counting oracle in the tests.
The frequency profile radially bins the centered FFT amplitude spectrum,
normalized per image by its DC amplitude, to compare the frequency-energy
distribution of a normal set against an abnormal one.
"""

import csv
import json
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
import torch

from .config import RunConfig
from .data import Sample
from .objectives import ScoreRecord, anomaly_score, normalize_scores
from .trainer import prepare_model_inputs

__all__ = [
    "compute_auc",
    "auc_from_scores",
    "roc_points",
    "EvalReport",
    "score_dataset",
    "FrequencyProfile",
    "frequency_energy_profile",
    "export_histogram",
    "export_latents",
    "write_profile_csv",
    "write_histogram_csv",
    "write_latents_csv",
]

_LABEL_TO_INT = {"normal": 0, "abnormal": 1}


def _records_to_arrays(records: Sequence[ScoreRecord]):
    known = [r for r in records if r.label in _LABEL_TO_INT]
    if len(known) != len(records):
        raise ValueError("records with unknown labels cannot be scored for AUC")
    scores = np.array([r.raw_score for r in known], dtype=np.float64)
    labels = np.array([_LABEL_TO_INT[r.label] for r in known], dtype=np.int64)
    return scores, labels


def auc_from_scores(scores, labels) -> float:
    """Rank-based AUC; ties receive average ranks (count 0.5 per pair)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one record of each class")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    rank_sum_pos = float(ranks[labels == 1].sum())
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def compute_auc(records: Sequence[ScoreRecord]) -> float:
    scores, labels = _records_to_arrays(records)
    return auc_from_scores(scores, labels)


def roc_points(scores, labels) -> List[Tuple[float, float]]:
    """(FPR, TPR) points at every distinct threshold, from (0,0) to (1,1)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    order = np.argsort(-scores, kind="mergesort")
    scores = scores[order]
    labels = labels[order]
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and scores[j + 1] == scores[i]:
            j += 1
        tp += int((labels[i : j + 1] == 1).sum())
        fp += int((labels[i : j + 1] == 0).sum())
        points.append((fp / n_neg, tp / n_pos))
        i = j + 1
    return points


@dataclass
class EvalReport:
    auc: float
    n_normal: int
    n_abnormal: int
    score_records: List[ScoreRecord] = field(default_factory=list)
    roc: List[Tuple[float, float]] = field(default_factory=list)

    @classmethod
    def from_records(cls, records: Sequence[ScoreRecord]) -> "EvalReport":
        scores, labels = _records_to_arrays(records)
        return cls(
            auc=auc_from_scores(scores, labels),
            n_normal=int((labels == 0).sum()),
            n_abnormal=int((labels == 1).sum()),
            score_records=list(records),
            roc=roc_points(scores, labels),
        )

    def trapezoid_auc(self) -> float:
        pts = self.roc
        area = 0.0
        for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
            area += (x1 - x0) * (y0 + y1) / 2.0
        return area

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump(
                {
                    "auc": self.auc,
                    "n_normal": self.n_normal,
                    "n_abnormal": self.n_abnormal,
                    "roc": self.roc,
                },
                f,
                indent=2,
            )


def score_dataset(gen, disc, samples: Sequence[Sample], config: RunConfig,
                  batch_size: int = 16) -> List[ScoreRecord]:
    """Per-sample content/latent errors and set-normalized anomaly scores."""
    if not samples:
        raise ValueError("empty sample set")
    gen.eval()
    disc.eval()
    records = []
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start : start + batch_size]
            images = np.stack([s.image for s in chunk])
            inputs, target = prepare_model_inputs(images, config)
            bands = [torch.from_numpy(b) for b in inputs]
            target_t = torch.from_numpy(target)
            _, recon = gen(bands)
            _, lat_real = disc(target_t)
            _, lat_recon = disc(recon)
            content = (target_t - recon).abs().mean(dim=(1, 2, 3))
            latent = (lat_real - lat_recon).pow(2).mean(dim=(1, 2, 3))
            for s, c_err, l_err in zip(chunk, content, latent):
                raw = anomaly_score(
                    float(c_err), float(l_err), config.score_lambda
                )
                records.append(
                    ScoreRecord(
                        sample_id=s.sample_id,
                        content_error=float(c_err),
                        latent_error=float(l_err),
                        raw_score=raw,
                        label=s.label,
                    )
                )
    normalized = normalize_scores([r.raw_score for r in records])
    for r, n in zip(records, normalized):
        r.normalized_score = float(n)
    return records


# ---------------------------------------------------------------------------
# frequency-energy profile


@dataclass
class FrequencyProfile:
    radial_bins: List[Tuple[float, float]]  # (bin-center radius, mean amplitude)
    set_label: str
    counts: List[int] = field(default_factory=list)
    n_images: int = 0
    total_amplitude: float = 0.0


def frequency_energy_profile(images: Sequence[np.ndarray], n_bins: int,
                             set_label: str = "normal") -> FrequencyProfile:
    """Radially binned mean FFT amplitude over an image set.

    Each [-1, 1] image is converted to grayscale, remapped to [0, 1], Fourier
    transformed, and its centered amplitude spectrum is normalized by the DC
    amplitude so differently bright sets compare fairly. Every spectrum pixel
    lands in exactly one bin, so the binned mass equals the spectrum mass.
    """
    if not len(images):
        raise ValueError("empty image set")
    shape = images[0].shape[-2:]
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = h // 2, w // 2
    radius = np.sqrt((yy - cy) ** 2.0 + (xx - cx) ** 2.0)
    r_max = float(radius.max())
    bin_index = np.minimum(
        (radius / (r_max + 1e-9) * n_bins).astype(np.int64), n_bins - 1
    )
    flat_bins = bin_index.ravel()
    counts = np.bincount(flat_bins, minlength=n_bins)

    sums = np.zeros(n_bins, dtype=np.float64)
    total = 0.0
    for img in images:
        if img.shape[-2:] != shape:
            raise ValueError(
                f"image size mismatch: {img.shape[-2:]} vs {shape}"
            )
        gray = np.asarray(img, dtype=np.float64)
        if gray.ndim == 3:
            gray = gray.mean(axis=0)
        gray = (gray + 1.0) / 2.0
        amp = np.abs(np.fft.fftshift(np.fft.fft2(gray)))
        dc = amp[cy, cx]
        amp = amp / max(dc, 1e-12)
        sums += np.bincount(flat_bins, weights=amp.ravel(), minlength=n_bins)
        total += float(amp.sum())

    n = len(images)
    bin_width = r_max / n_bins
    centers = [(i + 0.5) * bin_width for i in range(n_bins)]
    means = [
        float(sums[i] / (counts[i] * n)) if counts[i] else 0.0
        for i in range(n_bins)
    ]
    return FrequencyProfile(
        radial_bins=list(zip(centers, means)),
        set_label=set_label,
        counts=[int(c) for c in counts],
        n_images=n,
        total_amplitude=total / n,
    )


def write_profile_csv(path, profile: FrequencyProfile):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["radius", "mean_amplitude", "count"])
        for (r, a), c in zip(profile.radial_bins, profile.counts):
            writer.writerow([f"{r:.6g}", f"{a:.8g}", c])


# ---------------------------------------------------------------------------
# exports


def export_histogram(records: Sequence[ScoreRecord], n_buckets: int):
    """Bucket normalized scores; returns rows (bucket_low, normal, abnormal)."""
    if not records:
        raise ValueError("no records to bucket")
    rows = []
    width = 1.0 / n_buckets
    for b in range(n_buckets):
        lo = b * width
        hi = (b + 1) * width
        in_bucket = [
            r for r in records
            if lo <= r.normalized_score < hi
            or (b == n_buckets - 1 and r.normalized_score == 1.0)
        ]
        rows.append(
            (
                lo,
                sum(r.label == "normal" for r in in_bucket),
                sum(r.label != "normal" for r in in_bucket),
            )
        )
    return rows


def write_histogram_csv(path, rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["bucket", "normal_count", "abnormal_count"])
        for lo, n_norm, n_abn in rows:
            writer.writerow([f"{lo:.6g}", n_norm, n_abn])


def export_latents(disc, samples: Sequence[Sample], batch_size: int = 16):
    """Spatially mean-pooled discriminator latents per sample."""
    if not samples:
        raise ValueError("empty sample set")
    disc.eval()
    rows = []
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start : start + batch_size]
            batch = torch.from_numpy(np.stack([s.image for s in chunk]))
            _, latent = disc(batch)
            pooled = latent.mean(dim=(2, 3)).numpy()
            for s, vec in zip(chunk, pooled):
                rows.append((s.sample_id, s.label, vec.astype(np.float32)))
    return rows


def write_latents_csv(path, rows):
    dim = len(rows[0][2]) if rows else 0
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", "label"] + [f"z{i}" for i in range(dim)])
        for sample_id, label, vec in rows:
            writer.writerow([sample_id, label] + [f"{v:.6g}" for v in vec])
