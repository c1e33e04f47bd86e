"""Learnable Gaussian scene container and its gradient buffer."""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
from scipy.special import expit

from .errors import ContractViolationError

# Number of SH coefficients per color channel in bands 1..3.
SH_REST_COEFFS = 15
# Learned logit that keeps a freshly created Gaussian / SH band enabled
# (sigmoid(2) ~ 0.88, comfortably above the usual thresholds).
DEFAULT_MASK_LOGIT = 2.0

PARAM_FIELDS = (
    "positions",
    "log_scales",
    "rotations",
    "opacity_logits",
    "sh_dc",
    "sh_rest",
    "mask_logits",
    "sh_mask_logits",
)


@dataclass
class GaussianCloud:
    """All per-Gaussian learnable state, stored as parallel float64 arrays.

    positions      (N, 3)  world-space means
    log_scales     (N, 3)  log of per-axis standard deviations
    rotations      (N, 4)  quaternions (w, x, y, z); normalized on use
    opacity_logits (N,)    opacity = sigmoid(opacity_logit)
    sh_dc          (N, 3)  band-0 SH coefficients (diffuse color)
    sh_rest        (N, 15, 3)  bands 1..3 coefficients, band-major
    mask_logits    (N,)    Gaussian keep/kill mask logits
    sh_mask_logits (N, 3)  per-band (1..3) SH mask logits
    """

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    sh_dc: np.ndarray
    sh_rest: np.ndarray
    mask_logits: np.ndarray
    sh_mask_logits: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            setattr(self, f.name, np.ascontiguousarray(getattr(self, f.name), dtype=np.float64))
        n = self.positions.shape[0]
        shapes = {
            "positions": (n, 3),
            "log_scales": (n, 3),
            "rotations": (n, 4),
            "opacity_logits": (n,),
            "sh_dc": (n, 3),
            "sh_rest": (n, SH_REST_COEFFS, 3),
            "mask_logits": (n,),
            "sh_mask_logits": (n, 3),
        }
        for name, want in shapes.items():
            got = getattr(self, name).shape
            if got != want:
                raise ContractViolationError(f"cloud field {name} has shape {got}, expected {want}")

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def opacities(self) -> np.ndarray:
        return expit(self.opacity_logits)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(**{f: getattr(self, f).copy() for f in PARAM_FIELDS})

    def take(self, indices) -> "GaussianCloud":
        """Row-compacted copy keeping `indices` (in the given order)."""
        indices = np.asarray(indices)
        return GaussianCloud(**{f: getattr(self, f)[indices].copy() for f in PARAM_FIELDS})

    def concat(self, other: "GaussianCloud") -> "GaussianCloud":
        return GaussianCloud(
            **{f: np.concatenate([getattr(self, f), getattr(other, f)], axis=0) for f in PARAM_FIELDS}
        )

    @classmethod
    def zeros(cls, n: int) -> "GaussianCloud":
        return cls(
            positions=np.zeros((n, 3)),
            log_scales=np.zeros((n, 3)),
            rotations=np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1)),
            opacity_logits=np.zeros(n),
            sh_dc=np.zeros((n, 3)),
            sh_rest=np.zeros((n, SH_REST_COEFFS, 3)),
            mask_logits=np.full(n, DEFAULT_MASK_LOGIT),
            sh_mask_logits=np.full((n, 3), DEFAULT_MASK_LOGIT),
        )


@dataclass
class CloudGrads:
    """Per-Gaussian partial derivatives, one array per cloud field.

    `mean2d_screen` additionally carries the raw screen-space gradients of the
    projected means; the densification heuristic consumes it.
    """

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    sh_dc: np.ndarray
    sh_rest: np.ndarray
    mask_logits: np.ndarray
    sh_mask_logits: np.ndarray
    mean2d_screen: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "CloudGrads":
        return cls(
            positions=np.zeros((n, 3)),
            log_scales=np.zeros((n, 3)),
            rotations=np.zeros((n, 4)),
            opacity_logits=np.zeros(n),
            sh_dc=np.zeros((n, 3)),
            sh_rest=np.zeros((n, SH_REST_COEFFS, 3)),
            mask_logits=np.zeros(n),
            sh_mask_logits=np.zeros((n, 3)),
            mean2d_screen=np.zeros((n, 2)),
        )

    def finite(self) -> bool:
        return all(np.isfinite(getattr(self, f.name)).all() for f in fields(self))
