"""Progressive-training schedules: blur decay, resolution ramp, low-pass
scale rule, SfM seeding, and the densify/prune phase timeline.

Every function here is a pure query; the training loop composes them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import logit

from .cloud import DEFAULT_MASK_LOGIT, GaussianCloud
from .errors import ConfigError, ContractViolationError
from .sh import rgb_to_dc


@dataclass(frozen=True)
class BlurSpec:
    """Gaussian blur kernel: odd size in pixels; size 1 means disabled."""

    size: int
    sigma: float

    def __post_init__(self):
        if self.size < 1 or self.size % 2 == 0:
            raise ContractViolationError("blur kernel size must be odd and >= 1")
        if self.sigma < 0:
            raise ContractViolationError("blur sigma must be >= 0")

    @property
    def enabled(self) -> bool:
        return self.size > 1 and self.sigma > 0


@dataclass
class Timeline:
    """Iteration positions of every scheduled event (paper-scale defaults)."""

    total_iters: int = 30000
    progressive_end: int = 19500          # blur + resolution ramp end
    densify_warmup: int = 500
    densify_interval: int = 100
    densify_end: int = 15000
    late_densify_start: int = 20000
    late_densify_end: int = 20500
    late_densify_interval: int = 100
    mask_prune_interval: int = 500
    blur_interval: int = 100
    sh_cadence: int = 16
    sh_degree_interval: int = 1000        # active SH degree ramp (0 -> max)
    progressive_scale_end: int = 10000
    significance_iters: tuple = (15500, 16800, 18100, 19400, 20700, 22000)

    def __post_init__(self):
        bounds = (
            self.progressive_end,
            self.densify_end,
            self.late_densify_end,
            self.progressive_scale_end,
            *self.significance_iters,
        )
        if any(b > self.total_iters for b in bounds):
            raise ConfigError("timeline boundary exceeds total_iters")
        intervals = (
            self.densify_interval,
            self.late_densify_interval,
            self.mask_prune_interval,
            self.blur_interval,
            self.sh_cadence,
            self.sh_degree_interval,
        )
        if any(i < 1 for i in intervals):
            raise ConfigError("timeline intervals must be >= 1")

    def scaled(self, total_iters: int) -> "Timeline":
        """Proportionally rescaled timeline for short desk-scale runs."""
        r = total_iters / self.total_iters

        def pos(x):
            return int(round(x * r))

        def step(x):
            return max(1, int(round(x * r)))

        return Timeline(
            total_iters=total_iters,
            progressive_end=pos(self.progressive_end),
            densify_warmup=pos(self.densify_warmup),
            densify_interval=step(self.densify_interval),
            densify_end=pos(self.densify_end),
            late_densify_start=pos(self.late_densify_start),
            late_densify_end=pos(self.late_densify_end),
            late_densify_interval=step(self.late_densify_interval),
            mask_prune_interval=step(self.mask_prune_interval),
            blur_interval=step(self.blur_interval),
            sh_cadence=self.sh_cadence,
            sh_degree_interval=step(self.sh_degree_interval),
            progressive_scale_end=pos(self.progressive_scale_end),
            significance_iters=tuple(pos(x) for x in self.significance_iters),
        )


def resolution_at(i: int, res_s: int, res_e: int, tau_res: int, mode: str = "linear") -> int:
    """Training resolution of one image dimension at iteration i.

    linear:      min(round(res_s + (res_e - res_s) * i / tau), res_e)
    logarithmic: min(round(res_s * (res_e / res_s)^(i / tau)), res_e)
    """
    if not 0 < res_s <= res_e:
        raise ConfigError("need 0 < res_s <= res_e")
    if tau_res <= 0:
        raise ConfigError("tau_res must be > 0")
    if i >= tau_res:
        return res_e
    if mode == "linear":
        value = res_s + (res_e - res_s) * i / tau_res
    elif mode == "logarithmic":
        value = res_s * (res_e / res_s) ** (i / tau_res)
    else:
        raise ConfigError(f"unknown resolution mode {mode!r}")
    return min(int(math.floor(value + 0.5)), res_e)


def default_blur_decay(sigma0: float, blur_interval: int, progressive_end: int, sigma_end: float = 0.3) -> float:
    """Decay factor that brings sigma0 down to sigma_end exactly at the end."""
    if sigma0 <= sigma_end:
        return 1.0
    return (sigma_end / sigma0) ** (blur_interval / progressive_end)


def blur_at(
    i: int,
    spec0: BlurSpec,
    blur_interval: int,
    decay: float,
    progressive_end: int,
    down_factor: float = 1.0,
) -> BlurSpec:
    """Blur spec at iteration i: geometric sigma decay every `blur_interval`.

    Kernel size follows sigma as 2*ceil(2*sigma)+1 capped at the start size;
    when training images are downsampled by `down_factor` both sigma and size
    shrink by that factor. Sigma below 0.3 disables blurring.
    """
    if not 0.0 < decay <= 1.0:
        raise ConfigError("blur decay must lie in (0, 1]")
    if down_factor < 1.0:
        raise ContractViolationError("down_factor must be >= 1")
    if i >= progressive_end or not spec0.enabled:
        return BlurSpec(1, 0.0)
    sigma = spec0.sigma * decay ** (i // blur_interval)
    size = min(2 * math.ceil(2.0 * sigma) + 1, spec0.size)
    sigma /= down_factor
    size = max(1, int(round(size / down_factor)))
    if size % 2 == 0:
        size += 1
    if sigma < 0.3:
        return BlurSpec(1, 0.0)
    return BlurSpec(size, sigma)


def lowpass_s_at(n_gaussians: int, height: int, width: int, floor: float = 0.3) -> float:
    """Progressive low-pass value: max(floor, H*W / (9 pi N))."""
    if n_gaussians < 1:
        raise ContractViolationError("need at least one Gaussian")
    return max(floor, height * width / (9.0 * math.pi * n_gaussians))


@dataclass(frozen=True)
class SfmPoints:
    xyz: np.ndarray     # (P, 3)
    rgb: np.ndarray     # (P, 3) in [0, 1]
    errors: np.ndarray  # (P,) reprojection errors

    def __len__(self):
        return self.xyz.shape[0]


def seed_from_sfm(points: SfmPoints, keep_fraction: float = 1.0) -> GaussianCloud:
    """Initial cloud from SfM points, keeping the lowest-error fraction.

    Keeps ceil(keep_fraction * P) points (ties by index), isotropic scales
    from the mean distance to the 3 nearest kept neighbors, identity
    rotations, opacity 0.1, and diffuse color from the point RGB.
    """
    p = len(points)
    if p == 0:
        raise ContractViolationError("cannot seed from an empty point set")
    if not 0.0 < keep_fraction <= 1.0:
        raise ConfigError("keep_fraction must lie in (0, 1]")
    k = int(math.ceil(keep_fraction * p))
    order = np.lexsort((np.arange(p), points.errors))
    keep = np.sort(order[:k])

    xyz = points.xyz[keep].astype(np.float64)
    n = xyz.shape[0]
    if n >= 2:
        tree = cKDTree(xyz)
        dists, _ = tree.query(xyz, k=min(4, n))
        mean_dist = np.maximum(dists[:, 1:].mean(axis=1), 1e-7)
    else:
        mean_dist = np.full(n, 0.1)

    cloud = GaussianCloud.zeros(n)
    cloud.positions = xyz
    cloud.log_scales = np.log(mean_dist)[:, None].repeat(3, axis=1)
    cloud.opacity_logits = np.full(n, float(logit(0.1)))
    cloud.sh_dc = rgb_to_dc(points.rgb[keep])
    cloud.mask_logits = np.full(n, DEFAULT_MASK_LOGIT)
    cloud.sh_mask_logits = np.full((n, 3), DEFAULT_MASK_LOGIT)
    return cloud


def phase_at(i: int, timeline: Timeline) -> frozenset:
    """Deterministic action set at iteration i.

    Members: standard_densify, late_densify, mask_prune, significance_prune,
    sh_full_update, progressive_scale_active.
    """
    if i >= timeline.total_iters:
        raise ContractViolationError("iteration beyond the end of the timeline")
    actions = set()
    in_late = timeline.late_densify_start <= i <= timeline.late_densify_end
    if (
        timeline.densify_warmup < i <= timeline.densify_end
        and i % timeline.densify_interval == 0
    ):
        actions.add("standard_densify")
    if in_late and i % timeline.late_densify_interval == 0:
        actions.add("late_densify")
    if (
        i > timeline.densify_end
        and i % timeline.mask_prune_interval == 0
        and not in_late
    ):
        actions.add("mask_prune")
    if i in timeline.significance_iters:
        actions.add("significance_prune")
    if i % timeline.sh_cadence == 0:
        actions.add("sh_full_update")
    if i < timeline.progressive_scale_end:
        actions.add("progressive_scale_active")
    return frozenset(actions)
