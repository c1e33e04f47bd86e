"""The optimization loop: loss assembly, adaptive density control, trick
orchestration over the timeline, and end-to-end fitting.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .cameras import Camera
from .cloud import DEFAULT_MASK_LOGIT, GaussianCloud
from .config import TrainConfig
from .errors import ContractViolationError, DivergenceError, EmptySceneError
from .images import area_resize, gaussian_blur
from .masking import hard_mask, mask_loss_grads, mask_losses, prune_by_mask, strip_sh_bands
from .metrics import psnr as psnr_metric
from .metrics import ssim_fast
from .optim import Adam, exponential_lr
from .rasterizer import RenderSettings, render_backward, render_forward, sh_rest_update_step
from .schedule import (
    BlurSpec,
    blur_at,
    default_blur_decay,
    lowpass_s_at,
    phase_at,
    resolution_at,
    seed_from_sfm,
)
from .significance import count_hits, prune_by_significance, prune_schedule, significance_scores
from .synthetic import TrainView

CSV_COLUMNS = (
    "iteration",
    "total",
    "l1",
    "d_ssim",
    "l_m",
    "l_sh",
    "psnr",
    "n_gaussians",
    "height",
    "width",
    "blur_sigma",
    "lowpass_s",
)


@dataclass
class LossTerms:
    total: float
    l1: float
    d_ssim: float
    l_m: float
    l_sh: float


def total_loss(
    render_img: np.ndarray,
    target_img: np.ndarray,
    cloud: GaussianCloud,
    cfg: TrainConfig,
) -> tuple[LossTerms, np.ndarray, np.ndarray, np.ndarray]:
    """Assemble the training loss and its gradients.

    Returns (terms, dL/drender, dL/dmask_logits, dL/dsh_mask_logits).
    Disabled masking tricks contribute exactly 0 to both loss and gradients.
    """
    if render_img.shape != target_img.shape:
        raise ContractViolationError(
            f"render {render_img.shape} and target {target_img.shape} resolutions differ"
        )
    diff = render_img - target_img
    count = diff.size
    l1 = float(np.abs(diff).mean())
    d_l1 = np.sign(diff) / count

    lam = cfg.lambda_ssim
    if lam > 0.0:
        ssim_val, ssim_grad = ssim_fast(render_img, target_img)
        d_ssim = (1.0 - ssim_val) / 2.0
    else:
        ssim_grad = np.zeros_like(render_img)
        d_ssim = 0.0

    dimage = (1.0 - lam) * d_l1 - lam * 0.5 * ssim_grad

    l_m_raw, l_sh_raw = mask_losses(cloud.mask_logits, cloud.sh_mask_logits)
    d_m_raw, d_sh_raw = mask_loss_grads(cloud.mask_logits, cloud.sh_mask_logits)
    l_m = l_m_raw if cfg.tricks.gaussian_mask else 0.0
    l_sh = l_sh_raw if cfg.tricks.sh_mask else 0.0
    d_mask = cfg.mask.lambda_m * d_m_raw if cfg.tricks.gaussian_mask else np.zeros(len(cloud))
    d_sh_mask = (
        cfg.mask.lambda_sh * d_sh_raw if cfg.tricks.sh_mask else np.zeros((len(cloud), 3))
    )

    total = (
        (1.0 - lam) * l1
        + lam * d_ssim
        + cfg.mask.lambda_m * l_m
        + cfg.mask.lambda_sh * l_sh
    )
    return LossTerms(total, l1, d_ssim, l_m, l_sh), dimage, d_mask, d_sh_mask


@dataclass
class TrainState:
    cloud: GaussianCloud
    opt: Adam
    cfg: TrainConfig
    extent: float
    iteration: int = 0
    grad_accum: np.ndarray = field(default_factory=lambda: np.zeros(0))
    grad_count: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    area_max: np.ndarray = field(default_factory=lambda: np.zeros(0))
    peak_count: int = 0
    sig_events_done: int = 0
    rng_views: np.random.Generator = None
    rng_densify: np.random.Generator = None
    log_rows: list = field(default_factory=list)
    train_views: list = field(default_factory=list)

    def reset_stats(self) -> None:
        n = len(self.cloud)
        self.grad_accum = np.zeros(n)
        self.grad_count = np.zeros(n, dtype=np.int64)
        self.area_max = np.zeros(n)

    def compact_stats(self, keep: np.ndarray) -> None:
        self.grad_accum = self.grad_accum[keep].copy()
        self.grad_count = self.grad_count[keep].copy()
        self.area_max = self.area_max[keep].copy()

    def check_rows(self) -> None:
        if self.opt.rows() != len(self.cloud):
            raise ContractViolationError(
                f"optimizer rows {self.opt.rows()} out of sync with cloud {len(self.cloud)}"
            )


def make_state(cloud: GaussianCloud, cfg: TrainConfig, extent: float) -> TrainState:
    opt = Adam(beta1=cfg.optim.beta1, beta2=cfg.optim.beta2, eps=cfg.optim.eps)
    n = len(cloud)
    o = cfg.optim
    opt.add_group("positions", (n, 3), o.position_lr_init * extent)
    opt.add_group("log_scales", (n, 3), o.scaling_lr)
    opt.add_group("rotations", (n, 4), o.rotation_lr)
    opt.add_group("opacity_logits", (n,), o.opacity_lr)
    opt.add_group("sh_dc", (n, 3), o.feature_lr)
    opt.add_group("sh_rest", (n, 15, 3), o.feature_lr / o.feature_rest_div)
    opt.add_group("mask_logits", (n,), o.mask_lr)
    opt.add_group("sh_mask_logits", (n, 3), o.sh_mask_lr)
    state = TrainState(
        cloud=cloud,
        opt=opt,
        cfg=cfg,
        extent=extent,
        rng_views=np.random.default_rng(cfg.seed),
        rng_densify=np.random.default_rng(cfg.seed + 1),
        peak_count=n,
    )
    state.reset_stats()
    return state


def scene_extent(points_xyz: np.ndarray) -> float:
    """Bounding-sphere radius of the seed points around their centroid."""
    center = points_xyz.mean(axis=0)
    return float(max(np.linalg.norm(points_xyz - center, axis=1).max(), 1e-3))


def _split_children(
    cloud: GaussianCloud, rows: np.ndarray, counts: np.ndarray, div: float, rng
) -> GaussianCloud:
    """Sample children inside each split parent; scales shrink by `div`."""
    from .geometry import normalize_quaternions, quat_to_rotmat

    total = int(counts.sum())
    parents = np.repeat(rows, counts)
    sub = cloud.take(parents)
    scales = np.exp(sub.log_scales)
    q_unit, _ = normalize_quaternions(sub.rotations)
    R = quat_to_rotmat(q_unit)
    local = rng.normal(size=(total, 3)) * scales
    sub.positions = sub.positions + np.einsum("nij,nj->ni", R, local)
    sub.log_scales = np.log(scales / div)
    sub.mask_logits = np.full(total, DEFAULT_MASK_LOGIT)
    return sub


def densify(state: TrainState, lowpass_s: float, progressive_scale_active: bool) -> None:
    """Clone/split high-gradient Gaussians and prune dead ones (in place)."""
    cfg = state.cfg
    cloud = state.cloud
    n = len(cloud)
    mean_grad = np.where(state.grad_count > 0, state.grad_accum / np.maximum(state.grad_count, 1), 0.0)
    high = mean_grad > cfg.densify.grad_threshold
    max_scale = cloud.scales.max(axis=1)
    dense_limit = cfg.densify.percent_dense * state.extent
    clone_mask = high & (max_scale <= dense_limit)
    split_mask = high & (max_scale > dense_limit)

    prune_mask = cloud.opacities < cfg.densify.min_opacity
    if cfg.tricks.gaussian_mask:
        prune_mask |= hard_mask(cloud.mask_logits, cfg.mask.eps_m) == 0.0
    clone_mask &= ~prune_mask
    split_mask &= ~prune_mask

    split_rows = np.flatnonzero(split_mask)
    # progressive-scale phase: oversized screen footprints split twice as hard
    counts = np.full(split_rows.shape[0], 2, dtype=np.int64)
    if progressive_scale_active and split_rows.size:
        big = state.area_max[split_rows] > cfg.scale.split_area_factor * 9.0 * np.pi * lowpass_s
        counts[big] = 4

    keep_rows = np.flatnonzero(~(split_mask | prune_mask))
    clone_rows = np.flatnonzero(clone_mask)
    if keep_rows.size == 0 and clone_rows.size == 0 and split_rows.size == 0:
        raise EmptySceneError("densification would leave the scene empty")

    children = (
        _split_children(cloud, split_rows, counts, cfg.densify.split_scale_div, state.rng_densify)
        if split_rows.size
        else None
    )
    new_cloud = cloud.take(keep_rows)
    if clone_rows.size:
        new_cloud = new_cloud.concat(cloud.take(clone_rows))
    if children is not None:
        new_cloud = new_cloud.concat(children)

    state.opt.compact(keep_rows)
    state.opt.extend(len(new_cloud) - keep_rows.size)
    state.cloud = new_cloud
    state.reset_stats()
    state.check_rows()


def _apply_keep(state: TrainState, keep: np.ndarray) -> None:
    state.opt.compact(keep)
    state.compact_stats(keep)
    state.check_rows()


def train_step(state: TrainState, view: TrainView, cfg: TrainConfig) -> dict:
    """One optimization step against a single training view."""
    i = state.iteration
    tl = cfg.timeline
    phases = phase_at(i, tl)
    cam_full = view.camera

    # --- schedule queries -------------------------------------------------
    if cfg.tricks.downsample:
        res_s_h = max(1, int(math.floor(cfg.resolution.start_factor * cam_full.height + 0.5)))
        res_s_w = max(1, int(math.floor(cfg.resolution.start_factor * cam_full.width + 0.5)))
        h = resolution_at(i, res_s_h, cam_full.height, tl.progressive_end, cfg.resolution.mode)
        w = resolution_at(i, res_s_w, cam_full.width, tl.progressive_end, cfg.resolution.mode)
    else:
        h, w = cam_full.height, cam_full.width
    cam = cam_full.resized(w, h) if (h, w) != (cam_full.height, cam_full.width) else cam_full
    target = area_resize(view.image, h, w)

    blur = BlurSpec(1, 0.0)
    if cfg.tricks.blur:
        spec0 = BlurSpec(cfg.blur.kernel_size, cfg.blur.sigma)
        decay = cfg.blur.decay or default_blur_decay(
            cfg.blur.sigma, tl.blur_interval, tl.progressive_end, cfg.blur.min_sigma
        )
        blur = blur_at(i, spec0, tl.blur_interval, decay, tl.progressive_end, cam_full.height / h)
        if blur.enabled:
            target = gaussian_blur(target, blur.size, blur.sigma)

    if cfg.tricks.progressive_scale and "progressive_scale_active" in phases:
        lowpass = lowpass_s_at(len(state.cloud), h, w, cfg.scale.lowpass_floor)
    else:
        lowpass = cfg.scale.lowpass_floor

    cadence = tl.sh_cadence if cfg.tricks.accelerated else 1
    compute_rest = sh_rest_update_step(i, cadence)
    active_degree = min(cfg.sh_degree, i // tl.sh_degree_interval)

    settings = RenderSettings(
        lowpass_s=lowpass,
        active_sh_degree=active_degree,
        background=cfg.background,
        tile_size=cfg.tile_size,
        mask_threshold=cfg.mask.eps_m,
        sh_mask_threshold=cfg.mask.eps_sh,
        compute_sh_rest_grads=compute_rest,
    )

    # --- forward / loss / backward ----------------------------------------
    out = render_forward(state.cloud, cam, settings)
    terms, dimage, d_mask, d_sh_mask = total_loss(out.image, target, state.cloud, cfg)
    if not np.isfinite(terms.total):
        raise DivergenceError(
            f"non-finite loss at iteration {i}",
            snapshot={
                "iteration": i,
                "n_gaussians": len(state.cloud),
                "l1": terms.l1,
                "d_ssim": terms.d_ssim,
                "resolution": (h, w),
            },
        )
    grads = render_backward(state.cloud, cam, settings, dimage, out)
    grads.mask_logits += d_mask
    grads.sh_mask_logits += d_sh_mask

    # --- optimizer ---------------------------------------------------------
    state.opt.set_lr(
        "positions",
        exponential_lr(
            i, cfg.optim.position_lr_init, cfg.optim.position_lr_final, tl.total_iters
        )
        * state.extent,
    )
    state.opt.update("positions", state.cloud.positions, grads.positions)
    state.opt.update("log_scales", state.cloud.log_scales, grads.log_scales)
    state.opt.update("rotations", state.cloud.rotations, grads.rotations)
    state.opt.update("opacity_logits", state.cloud.opacity_logits, grads.opacity_logits)
    state.opt.update("sh_dc", state.cloud.sh_dc, grads.sh_dc)
    if compute_rest and active_degree > 0:
        state.opt.update("sh_rest", state.cloud.sh_rest, grads.sh_rest)
    if cfg.tricks.gaussian_mask:
        state.opt.update("mask_logits", state.cloud.mask_logits, grads.mask_logits)
    if cfg.tricks.sh_mask:
        state.opt.update("sh_mask_logits", state.cloud.sh_mask_logits, grads.sh_mask_logits)

    # --- densification statistics (screen-space grads in NDC units) --------
    norms = np.linalg.norm(grads.mean2d_screen * np.array([w / 2.0, h / 2.0]), axis=1)
    vis = out.visible
    state.grad_accum[vis] += norms[vis]
    state.grad_count[vis] += 1
    np.maximum(state.area_max, out.screen_areas, out=state.area_max)

    # --- phase actions ------------------------------------------------------
    if "standard_densify" in phases or ("late_densify" in phases and cfg.tricks.late_densify):
        densify(state, lowpass, "progressive_scale_active" in phases and cfg.tricks.progressive_scale)
    if "mask_prune" in phases and cfg.tricks.gaussian_mask:
        pruned, keep = prune_by_mask(state.cloud, cfg.mask.eps_m)
        state.cloud = pruned
        _apply_keep(state, keep)
    if "significance_prune" in phases and cfg.tricks.significance:
        _significance_event(state, cam_full, h, w)

    state.peak_count = max(state.peak_count, len(state.cloud))
    row = {
        "iteration": i,
        "total": terms.total,
        "l1": terms.l1,
        "d_ssim": terms.d_ssim,
        "l_m": terms.l_m,
        "l_sh": terms.l_sh,
        "psnr": psnr_metric(out.image, target),
        "n_gaussians": len(state.cloud),
        "height": h,
        "width": w,
        "blur_sigma": blur.sigma,
        "lowpass_s": lowpass,
    }
    state.iteration += 1
    return row


def _significance_event(state: TrainState, cam_full: Camera, h: int, w: int) -> None:
    cfg = state.cfg
    if cfg.significance.count_resolution == "current" and (h, w) != (
        cam_full.height,
        cam_full.width,
    ):
        cams = [v.camera.resized(w, h) for v in state.train_views]
    else:
        cams = [v.camera for v in state.train_views]
    settings = RenderSettings(
        lowpass_s=cfg.scale.lowpass_floor,
        active_sh_degree=cfg.sh_degree,
        background=cfg.background,
        tile_size=cfg.tile_size,
        mask_threshold=cfg.mask.eps_m,
        sh_mask_threshold=cfg.mask.eps_sh,
    )
    hits = count_hits(state.cloud, cams, settings)
    report = significance_scores(
        hits,
        state.cloud,
        mask_threshold=cfg.mask.eps_m,
        volume_power=cfg.significance.volume_power,
        iteration=state.iteration,
    )
    rate = prune_schedule(
        state.sig_events_done, cfg.significance.first_rate, cfg.significance.decay
    )
    state.sig_events_done += 1
    if int(np.floor(rate * len(state.cloud))) == 0:
        return
    pruned, keep = prune_by_significance(state.cloud, report.scores, rate)
    state.cloud = pruned
    _apply_keep(state, keep)


@dataclass
class FitReport:
    iters: int
    final_count: int
    peak_count: int
    wall_time_s: float
    train_psnr: float
    train_ssim: float
    holdout_psnr: float | None = None
    holdout_ssim: float | None = None
    csv_rows: list = field(default_factory=list)


def evaluate(cloud: GaussianCloud, views: list, cfg: TrainConfig) -> tuple[float, float]:
    """Mean PSNR/SSIM of full-resolution renders against the view targets."""
    settings = RenderSettings(
        lowpass_s=cfg.scale.lowpass_floor,
        active_sh_degree=cfg.sh_degree,
        background=cfg.background,
        tile_size=cfg.tile_size,
        mask_threshold=cfg.mask.eps_m,
        sh_mask_threshold=cfg.mask.eps_sh,
    )
    psnrs, ssims = [], []
    for v in views:
        img = render_forward(cloud, v.camera, settings).image
        psnrs.append(psnr_metric(img, v.image))
        ssims.append(ssim_fast(img, v.image, compute_grad=False)[0])
    return float(np.mean(psnrs)), float(np.mean(ssims))


def fit(
    views: list,
    points,
    cfg: TrainConfig,
    out_dir=None,
    progress_every: int = 0,
) -> tuple[GaussianCloud, FitReport]:
    """Train a scene from views + SfM seed points per the configured tricks.

    Writes scene.tgs, scene.ply and metrics.csv into `out_dir` when given.
    """
    import os

    if not views:
        raise ContractViolationError("fit needs at least one training view")
    if cfg.holdout_every > 1:
        holdout = [v for k, v in enumerate(views) if k % cfg.holdout_every == 0]
        train_views = [v for k, v in enumerate(views) if k % cfg.holdout_every != 0]
    else:
        holdout = []
        train_views = list(views)
    if len(train_views) < 2:
        raise ContractViolationError("fit needs at least two training views")

    keep_fraction = cfg.scale.seed_keep_fraction if cfg.tricks.progressive_scale else 1.0
    cloud = seed_from_sfm(points, keep_fraction)
    extent = scene_extent(points.xyz)
    state = make_state(cloud, cfg, extent)
    state.train_views = train_views

    t0 = time.perf_counter()
    order = np.zeros(0, dtype=np.int64)
    cursor = 0
    for i in range(cfg.timeline.total_iters):
        if cursor >= order.shape[0]:
            order = state.rng_views.permutation(len(train_views))
            cursor = 0
        row = train_step(state, train_views[order[cursor]], cfg)
        cursor += 1
        state.log_rows.append(row)
        if progress_every and (i + 1) % progress_every == 0:
            print(
                f"iter {i + 1}/{cfg.timeline.total_iters} "
                f"loss {row['total']:.5f} n {row['n_gaussians']}"
            )
    wall = time.perf_counter() - t0

    # final cleanup: drop masked Gaussians and freeze out masked SH bands
    if cfg.tricks.gaussian_mask:
        pruned, keep = prune_by_mask(state.cloud, cfg.mask.eps_m)
        state.cloud = pruned
        _apply_keep(state, keep)
    if cfg.tricks.sh_mask:
        state.cloud, _ = strip_sh_bands(state.cloud, cfg.mask.eps_sh)

    train_psnr, train_ssim = evaluate(state.cloud, train_views, cfg)
    report = FitReport(
        iters=cfg.timeline.total_iters,
        final_count=len(state.cloud),
        peak_count=state.peak_count,
        wall_time_s=wall,
        train_psnr=train_psnr,
        train_ssim=train_ssim,
        csv_rows=state.log_rows,
    )
    if holdout:
        report.holdout_psnr, report.holdout_ssim = evaluate(state.cloud, holdout, cfg)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        from .compact import save_compact
        from .ply import save_ply

        save_ply(state.cloud, os.path.join(out_dir, "scene.ply"))
        save_compact(state.cloud, os.path.join(out_dir, "scene.tgs"), eps_sh=cfg.mask.eps_sh)
        write_metrics_csv(state.log_rows, os.path.join(out_dir, "metrics.csv"))
    return state.cloud, report


def write_metrics_csv(rows: list, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row["iteration"],
                    *(repr(float(row[k])) for k in ("total", "l1", "d_ssim", "l_m", "l_sh", "psnr")),
                    row["n_gaussians"],
                    row["height"],
                    row["width"],
                    repr(float(row["blur_sigma"])),
                    repr(float(row["lowpass_s"])),
                ]
            )
