"""Training losses and anomaly scoring.

The generator is trained with a weighted sum of an L1 content term, a
critic-style adversarial term, and an L2 latent term computed on the
discriminator's penultimate features. At inference each sample's anomaly
score is a convex combination of its content and latent errors, min-max
normalized over the whole test set.
"""

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

__all__ = [
    "LossWeights",
    "ScoreRecord",
    "DegenerateScoresError",
    "content_loss",
    "latent_loss",
    "discriminator_loss",
    "generator_adv_loss",
    "total_generator_loss",
    "anomaly_score",
    "normalize_scores",
    "write_score_csv",
    "read_score_csv",
]

SCORE_CSV_COLUMNS = [
    "sample_id",
    "content_error",
    "latent_error",
    "raw_score",
    "normalized_score",
    "label",
]


class DegenerateScoresError(ValueError):
    """All scores identical; min-max normalization is undefined."""


@dataclass
class LossWeights:
    lambda_con: float = 50.0
    lambda_adv: float = 1.0
    lambda_lat: float = 1.0

    def __post_init__(self):
        if self.lambda_con < 0 or self.lambda_adv < 0 or self.lambda_lat < 0:
            raise ValueError("loss weights must be >= 0")
        if self.lambda_con == self.lambda_adv == self.lambda_lat == 0:
            raise ValueError("at least one loss weight must be positive")


@dataclass
class ScoreRecord:
    sample_id: str
    content_error: float
    latent_error: float
    raw_score: float
    normalized_score: float = float("nan")
    label: str = "unknown"


def _check_shapes(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def content_loss(image: torch.Tensor, recon: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference between input and reconstruction."""
    _check_shapes(image, recon, "content_loss")
    return (image - recon).abs().mean()


def latent_loss(lat_a: torch.Tensor, lat_b: torch.Tensor) -> torch.Tensor:
    """Mean squared difference between two latent feature maps."""
    _check_shapes(lat_a, lat_b, "latent_loss")
    return (lat_a - lat_b).pow(2).mean()


def _finite_mean(x: torch.Tensor, what: str) -> torch.Tensor:
    m = x.mean()
    if not torch.isfinite(m):
        raise ValueError(f"non-finite {what} score")
    return m


def discriminator_loss(
    d_real: torch.Tensor,
    d_recon: torch.Tensor,
    d_forged: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Critic loss for the discriminator (negated adversarial objective).

    The discriminator pushes scores up for reconstructions and forged
    anomalies and down for real normal images; forged scores are optional
    for configurations with augmentation disabled.
    """
    loss = _finite_mean(d_real, "real") - _finite_mean(d_recon, "recon")
    if d_forged is not None:
        loss = loss - _finite_mean(d_forged, "forged")
    return loss


def generator_adv_loss(d_recon: torch.Tensor) -> torch.Tensor:
    """The adversarial term the generator can influence: E[D(recon)]."""
    return _finite_mean(d_recon, "recon")


def total_generator_loss(l_con, l_adv, l_lat, weights: LossWeights):
    """Weighted sum of the three generator loss components."""
    return (
        weights.lambda_con * l_con
        + weights.lambda_adv * l_adv
        + weights.lambda_lat * l_lat
    )


def anomaly_score(content_error: float, latent_error: float, lam: float = 0.9) -> float:
    """Convex combination lam * content + (1 - lam) * latent."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    return lam * content_error + (1.0 - lam) * latent_error


def normalize_scores(scores) -> np.ndarray:
    """Min-max rescale a score set to [0, 1]."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.size < 2:
        raise ValueError("need >= 2 scores to normalize")
    lo, hi = arr.min(), arr.max()
    if hi <= lo:
        raise DegenerateScoresError("all anomaly scores are identical")
    return (arr - lo) / (hi - lo)


def write_score_csv(path, records):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(SCORE_CSV_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.sample_id,
                    f"{r.content_error:.8g}",
                    f"{r.latent_error:.8g}",
                    f"{r.raw_score:.8g}",
                    f"{r.normalized_score:.8g}",
                    r.label,
                ]
            )


def read_score_csv(path):
    records = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            records.append(
                ScoreRecord(
                    sample_id=row["sample_id"],
                    content_error=float(row["content_error"]),
                    latent_error=float(row["latent_error"]),
                    raw_score=float(row["raw_score"]),
                    normalized_score=float(row["normalized_score"]),
                    label=row["label"],
                )
            )
    return records
