"""Learned binary masks over Gaussians and SH bands, straight-through style.

The hard mask is 1(sigmoid(m) > eps) in the forward direction while its
backward rule is the sigmoid derivative (the indicator minus sigmoid term is
wrapped in a stop-gradient).
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .cloud import GaussianCloud
from .errors import ContractViolationError, EmptySceneError

# masking-loss band weights: proportional to coefficient counts (2l+1)*3,
# normalized to sum to 1 over bands 1..3
SH_BAND_WEIGHTS = np.array([9.0, 15.0, 21.0]) / 45.0


def hard_mask(logits: np.ndarray, eps: float) -> np.ndarray:
    """Binary keep mask: 1 where sigmoid(logit) > eps, else 0."""
    if not 0.0 < eps < 1.0:
        raise ContractViolationError("mask threshold must lie in (0, 1)")
    return (expit(np.asarray(logits, dtype=np.float64)) > eps).astype(np.float64)


def hard_mask_grad(logits: np.ndarray) -> np.ndarray:
    """d(hard mask)/d(logit) under the straight-through rule: sigmoid'."""
    s = expit(np.asarray(logits, dtype=np.float64))
    return s * (1.0 - s)


def apply_gaussian_mask(
    opacities: np.ndarray, scales: np.ndarray, masks: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Masked opacity M*alpha and masked scale M*s feeding the rasterizer."""
    masks = np.asarray(masks, dtype=np.float64)
    if masks.shape[0] != opacities.shape[0]:
        raise ContractViolationError(
            f"mask count {masks.shape[0]} != Gaussian count {opacities.shape[0]}"
        )
    return opacities * masks, scales * masks[:, None]


def mask_losses(
    mask_logits: np.ndarray, sh_mask_logits: np.ndarray
) -> tuple[float, float]:
    """(L_m, L_sh): mean keep-probability penalties.

    L_sh weights each band by its share of the 45 higher-band coefficients.
    """
    m = expit(np.asarray(mask_logits, dtype=np.float64))
    msh = expit(np.asarray(sh_mask_logits, dtype=np.float64))
    l_m = float(m.mean()) if m.size else 0.0
    l_sh = float((msh * SH_BAND_WEIGHTS).sum(axis=1).mean()) if msh.size else 0.0
    return l_m, l_sh


def mask_loss_grads(
    mask_logits: np.ndarray, sh_mask_logits: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of (L_m, L_sh) w.r.t. the logits."""
    n = max(len(mask_logits), 1)
    d_m = hard_mask_grad(mask_logits) / n
    d_sh = hard_mask_grad(sh_mask_logits) * SH_BAND_WEIGHTS / n
    return d_m, d_sh


def prune_by_mask(cloud: GaussianCloud, eps: float) -> tuple[GaussianCloud, np.ndarray]:
    """Remove Gaussians whose hard mask is 0.

    Returns (pruned cloud, kept indices) so callers can compact any parallel
    state (optimizer rows, accumulators) consistently.
    """
    keep = np.flatnonzero(hard_mask(cloud.mask_logits, eps) > 0.0)
    if keep.size == 0:
        raise EmptySceneError("mask pruning would remove every Gaussian")
    if keep.size == len(cloud):
        return cloud, keep
    return cloud.take(keep), keep


def sh_band_masks(cloud: GaussianCloud, eps_sh: float) -> np.ndarray:
    """(N, 3) hard masks for SH bands 1..3."""
    return hard_mask(cloud.sh_mask_logits, eps_sh)


def max_retained_band(cloud: GaussianCloud, eps_sh: float) -> np.ndarray:
    """Highest band index (0..3) each Gaussian still uses after masking."""
    masks = sh_band_masks(cloud, eps_sh)
    bands = np.zeros(len(cloud), dtype=np.int64)
    for l in (1, 2, 3):
        bands[masks[:, l - 1] > 0.0] = l
    return bands


def strip_sh_bands(cloud: GaussianCloud, eps_sh: float) -> tuple[GaussianCloud, np.ndarray]:
    """Zero out masked SH bands and report each Gaussian's max retained band.

    Rendering is unchanged: masked bands already contributed nothing. The
    returned band array drives the bucketed compact serialization.
    """
    from .sh import BAND_SLICES

    masks = sh_band_masks(cloud, eps_sh)
    out = cloud.copy()
    for l in (1, 2, 3):
        off = masks[:, l - 1] == 0.0
        out.sh_rest[off, BAND_SLICES[l]] = 0.0
    return out, max_retained_band(cloud, eps_sh)
