"""Ray-hit significance scoring and scheduled percentile pruning.

A Gaussian's score is hit_count * opacity * normalized_volume, where hits are
counted with the rasterizer's own contribution rule over every pixel of every
training view, and volumes are normalized by the 90th-percentile volume.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .cameras import Camera
from .cloud import GaussianCloud
from .errors import ContractViolationError, EmptySceneError
from .masking import apply_gaussian_mask, hard_mask
from .rasterizer import RenderSettings, render_forward


@dataclass
class SignificanceReport:
    hit_counts: np.ndarray  # (N,) int
    volumes: np.ndarray     # (N,)
    v_norm: np.ndarray      # (N,)
    scores: np.ndarray      # (N,)
    iteration: int = 0


def count_hits(
    cloud: GaussianCloud, cameras: list[Camera], settings: RenderSettings
) -> np.ndarray:
    """Per-Gaussian pixel-ray hit counts accumulated over all views."""
    if not cameras:
        raise ContractViolationError("count_hits needs at least one camera")
    totals = np.zeros(len(cloud), dtype=np.int64)
    hit_settings = replace(settings, record_hits=True, record_full=False)
    for cam in cameras:
        out = render_forward(cloud, cam, hit_settings)
        totals += out.hit_counts
    return totals


def significance_scores(
    hit_counts: np.ndarray,
    cloud: GaussianCloud,
    mask_threshold: float = 0.05,
    volume_power: float = 0.5,
    iteration: int = 0,
) -> SignificanceReport:
    """Hit-weighted opacity x normalized-volume scores.

    Volume is (4/3) pi s1 s2 s3 of the masked scales; the normalizer is the
    nearest-rank 90th percentile, and volumes above it saturate at 1 before
    the sub-linear power is applied.
    """
    n = len(cloud)
    if n == 0:
        raise EmptySceneError("cannot score an empty cloud")
    masks = hard_mask(cloud.mask_logits, mask_threshold)
    alphas, scales = apply_gaussian_mask(cloud.opacities, cloud.scales, masks)
    volumes = (4.0 / 3.0) * np.pi * scales.prod(axis=1)

    rank = max(int(np.ceil(0.9 * n)) - 1, 0)
    v90 = np.sort(volumes)[rank]
    if v90 > 0:
        v_norm = np.minimum(volumes / v90, 1.0) ** volume_power
    else:
        v_norm = (volumes > 0).astype(np.float64)
    scores = hit_counts.astype(np.float64) * alphas * v_norm
    return SignificanceReport(
        hit_counts=np.asarray(hit_counts, dtype=np.int64),
        volumes=volumes,
        v_norm=v_norm,
        scores=scores,
        iteration=iteration,
    )


def prune_by_significance(
    cloud: GaussianCloud, scores: np.ndarray, rate: float
) -> tuple[GaussianCloud, np.ndarray]:
    """Drop the floor(rate * N) lowest-scoring Gaussians.

    Ties break toward keeping higher indices (lower index pruned first).
    Returns (pruned cloud, kept indices sorted ascending).
    """
    if not 0.0 < rate < 1.0:
        raise ContractViolationError("prune rate must lie in (0, 1)")
    n = len(cloud)
    k = int(np.floor(rate * n))
    if k >= n:
        raise EmptySceneError("significance pruning would remove every Gaussian")
    if k == 0:
        return cloud, np.arange(n)
    order = np.lexsort((np.arange(n), scores))
    keep = np.sort(order[k:])
    return cloud.take(keep), keep


def prune_schedule(event_index: int, first_rate: float, decay: float) -> float:
    """Pruning rate for the k-th event: first_rate * decay^k."""
    if event_index < 0:
        raise ContractViolationError("event index must be >= 0")
    return first_rate * decay**event_index


def report_to_csv(report: SignificanceReport, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "hit_count", "volume", "v_norm", "score"])
        for i in range(report.scores.shape[0]):
            writer.writerow(
                [
                    i,
                    int(report.hit_counts[i]),
                    repr(float(report.volumes[i])),
                    repr(float(report.v_norm[i])),
                    repr(float(report.scores[i])),
                ]
            )
