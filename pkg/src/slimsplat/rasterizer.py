"""Tile-based differentiable rasterizer.

Blending math per pixel, front to back over depth-sorted Gaussians:

    C = sum_i c_i a_i prod_{j<i} (1 - a_j) + background * T_final

with a_i = alpha_i * G_i(pixel) clamped to [0, 0.99]. A Gaussian contributes
to a pixel only when a_i >= 1/255 and the pixel lies inside its 3-sigma
ellipse; blending stops once transmittance drops below 1e-4. The backward
pass re-walks each pixel back to front, recovering transmittance from the
stored final value, and matches central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import _kernels
from .cameras import Camera
from .cloud import CloudGrads, GaussianCloud
from .errors import ContractViolationError
from .geometry import (
    NEAR_PLANE,
    Projection,
    covariance_backward,
    covariance_from_scale_rot,
    normalize_quaternions,
    project_backward,
    project_gaussians,
    quat_to_rotmat,
)
from .masking import apply_gaussian_mask, hard_mask, hard_mask_grad, sh_band_masks
from .sh import sh_color_backward, sh_to_color

ALPHA_SKIP = 1.0 / 255.0
ALPHA_MAX = 0.99
E_MIN = -4.5  # 3-sigma ellipse: exponent cutoff at -(3^2)/2
T_TERMINATE = 1e-4


@dataclass
class RenderSettings:
    lowpass_s: float = 0.3
    active_sh_degree: int = 3
    background: tuple = (0.0, 0.0, 0.0)
    tile_size: int = 16
    near: float = NEAR_PLANE
    record_hits: bool = False
    record_full: bool = False
    mask_threshold: float = 0.05
    sh_mask_threshold: float = 0.1
    compute_sh_rest_grads: bool = True


@dataclass
class RenderOutput:
    """Rendered image plus the auxiliaries the backward pass needs.

    transmittance/last_pos come straight from the forward kernel; hit fields
    are populated only when requested in the settings.
    """

    image: np.ndarray            # (H, W, 3) in [0, 1]
    transmittance: np.ndarray    # (H, W) final T per pixel
    weight_sum: np.ndarray       # (H, W) sum of blend weights per pixel
    n_contrib: np.ndarray        # (H, W) number of blended Gaussians
    last_pos: np.ndarray         # (H, W) tile-list position after last blend
    visible: np.ndarray          # (N,) cloud rows that took part in blending
    screen_areas: np.ndarray     # (N,) 9*pi*sqrt(det cov2d), 0 when culled
    hit_counts: np.ndarray | None = None    # (N,) pixel-ray hits
    hit_records: list | None = None         # per-pixel [(gauss, weight), ...]
    _tiles: "TileBins | None" = field(default=None, repr=False)


@dataclass
class TileBins:
    """Per-tile depth-sorted Gaussian lists in CSR layout."""

    offsets: np.ndarray   # (tiles_y*tiles_x + 1,)
    indices: np.ndarray   # positions into the projected arrays
    tiles_x: int
    tiles_y: int


def sh_rest_update_step(iteration: int, cadence: int) -> bool:
    """Whether higher-band SH gradients are computed at this iteration."""
    if cadence < 1:
        raise ContractViolationError("SH update cadence must be >= 1")
    return iteration % cadence == 0


def bin_tiles(
    means2d: np.ndarray,
    radii: np.ndarray,
    depths: np.ndarray,
    width: int,
    height: int,
    tile_size: int,
) -> TileBins:
    """Assign Gaussians to every tile their 3-sigma box intersects.

    Lists are sorted by ascending depth, ties broken by ascending position in
    the input arrays, which makes rendering deterministic.
    """
    if tile_size < 1:
        raise ContractViolationError("tile_size must be >= 1")
    tiles_x = (width + tile_size - 1) // tile_size
    tiles_y = (height + tile_size - 1) // tile_size
    n = means2d.shape[0]
    if n == 0:
        return TileBins(np.zeros(tiles_x * tiles_y + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), tiles_x, tiles_y)

    x0 = np.clip(np.floor((means2d[:, 0] - radii) / tile_size).astype(np.int64), 0, tiles_x - 1)
    x1 = np.clip(np.floor((means2d[:, 0] + radii) / tile_size).astype(np.int64), 0, tiles_x - 1)
    y0 = np.clip(np.floor((means2d[:, 1] - radii) / tile_size).astype(np.int64), 0, tiles_y - 1)
    y1 = np.clip(np.floor((means2d[:, 1] + radii) / tile_size).astype(np.int64), 0, tiles_y - 1)
    # drop Gaussians whose box misses the pixel grid entirely
    on = (
        (means2d[:, 0] + radii >= 0)
        & (means2d[:, 0] - radii <= width - 1)
        & (means2d[:, 1] + radii >= 0)
        & (means2d[:, 1] - radii <= height - 1)
        & (radii > 0)
    )
    nx = np.where(on, x1 - x0 + 1, 0)
    ny = np.where(on, y1 - y0 + 1, 0)
    counts = nx * ny
    total = int(counts.sum())
    if total == 0:
        return TileBins(np.zeros(tiles_x * tiles_y + 1, dtype=np.int64), np.zeros(0, dtype=np.int64), tiles_x, tiles_y)

    gauss_ids = np.repeat(np.arange(n, dtype=np.int64), counts)
    # enumerate each Gaussian's covered tiles row-major
    local = np.arange(total, dtype=np.int64) - np.repeat(np.cumsum(counts) - counts, counts)
    nx_r = np.repeat(nx, counts)
    tile_ids = (np.repeat(y0, counts) + local // np.maximum(nx_r, 1)) * tiles_x + (
        np.repeat(x0, counts) + local % np.maximum(nx_r, 1)
    )

    order = np.lexsort((gauss_ids, depths[gauss_ids], tile_ids))
    tile_ids = tile_ids[order]
    indices = gauss_ids[order]
    offsets = np.zeros(tiles_x * tiles_y + 1, dtype=np.int64)
    np.cumsum(np.bincount(tile_ids, minlength=tiles_x * tiles_y), out=offsets[1:])
    return TileBins(offsets, indices, tiles_x, tiles_y)


@dataclass
class _Prepared:
    """Everything the kernels need, shared by forward and backward."""

    proj: Projection
    tiles: TileBins
    alphas: np.ndarray       # (V,) effective per-Gaussian opacity
    colors: np.ndarray       # (V, 3) SH-evaluated colors
    cov3d: np.ndarray        # (N, 3, 3)
    masks: np.ndarray        # (N,) hard Gaussian masks
    band_masks: np.ndarray   # (N, 3) hard SH band masks
    scales_eff: np.ndarray   # (N, 3) masked scales
    view_dirs: np.ndarray    # (N, 3) unit directions camera center -> mean
    dir_norms: np.ndarray    # (N,)


def _prepare(cloud: GaussianCloud, cam: Camera, settings: RenderSettings) -> _Prepared:
    n = len(cloud)
    masks = hard_mask(cloud.mask_logits, settings.mask_threshold)
    band_masks = sh_band_masks(cloud, settings.sh_mask_threshold)
    alphas_eff, scales_eff = apply_gaussian_mask(cloud.opacities, cloud.scales, masks)

    q_unit, _ = normalize_quaternions(cloud.rotations)
    cov3d = covariance_from_scale_rot(scales_eff, quat_to_rotmat(q_unit))
    proj = project_gaussians(cloud.positions, cov3d, cam, settings.lowpass_s, settings.near)

    # a Gaussian with effective opacity below the skip threshold never blends
    keep = alphas_eff[proj.valid] >= ALPHA_SKIP
    proj = Projection(
        valid=proj.valid[keep],
        t_cam=proj.t_cam[keep],
        depths=proj.depths[keep],
        means2d=proj.means2d[keep],
        cov2d=proj.cov2d[keep],
        conics=proj.conics[keep],
        radii=proj.radii[keep],
        areas=proj.areas[keep],
    )

    diff = cloud.positions - cam.center
    norms = np.linalg.norm(diff, axis=1)
    safe = np.maximum(norms, 1e-12)
    view_dirs = diff / safe[:, None]

    colors_all = sh_to_color(
        cloud.sh_dc, cloud.sh_rest, view_dirs, settings.active_sh_degree, band_masks
    )
    tiles = bin_tiles(
        proj.means2d, proj.radii, proj.depths, cam.width, cam.height, settings.tile_size
    )
    return _Prepared(
        proj=proj,
        tiles=tiles,
        alphas=alphas_eff[proj.valid],
        colors=np.ascontiguousarray(colors_all[proj.valid]),
        cov3d=cov3d,
        masks=masks,
        band_masks=band_masks,
        scales_eff=scales_eff,
        view_dirs=view_dirs,
        dir_norms=safe,
    )


def render_forward(cloud: GaussianCloud, cam: Camera, settings: RenderSettings) -> RenderOutput:
    """Render a cloud into an H x W x 3 image with blending auxiliaries."""
    h, w = cam.height, cam.width
    n = len(cloud)
    image = np.zeros((h, w, 3))
    transmit = np.ones((h, w))
    weight_sum = np.zeros((h, w))
    n_contrib = np.zeros((h, w), dtype=np.int32)
    last_pos = np.zeros((h, w), dtype=np.int32)
    background = np.asarray(settings.background, dtype=np.float64)

    prep = _prepare(cloud, cam, settings)
    v = prep.proj.valid.shape[0]
    hits_local = np.zeros(v, dtype=np.int64)
    if v:
        _kernels.forward_kernel(
            h,
            w,
            settings.tile_size,
            prep.tiles.tiles_x,
            prep.tiles.offsets,
            prep.tiles.indices,
            prep.proj.means2d,
            prep.proj.conics,
            prep.alphas,
            prep.colors,
            background,
            ALPHA_SKIP,
            ALPHA_MAX,
            E_MIN,
            T_TERMINATE,
            settings.record_hits,
            image,
            transmit,
            n_contrib,
            last_pos,
            weight_sum,
            hits_local,
        )
    else:
        image[:] = background

    visible = np.zeros(n, dtype=bool)
    screen_areas = np.zeros(n)
    if v:
        visible[prep.proj.valid] = True
        screen_areas[prep.proj.valid] = prep.proj.areas

    hit_counts = None
    if settings.record_hits:
        hit_counts = np.zeros(n, dtype=np.int64)
        if v:
            np.add.at(hit_counts, prep.proj.valid, hits_local)

    hit_records = None
    if settings.record_full:
        hit_records = _full_records(prep, n_contrib, cam, settings)

    return RenderOutput(
        image=image,
        transmittance=transmit,
        weight_sum=weight_sum,
        n_contrib=n_contrib,
        last_pos=last_pos,
        visible=visible,
        screen_areas=screen_areas,
        hit_counts=hit_counts,
        hit_records=hit_records,
        _tiles=prep.tiles,
    )


def _full_records(prep: _Prepared, n_contrib: np.ndarray, cam: Camera, settings: RenderSettings):
    """Per-pixel ordered (cloud row, blend weight) lists; test/debug payload."""
    h, w = cam.height, cam.width
    total = int(n_contrib.sum())
    offsets = np.zeros(h * w, dtype=np.int64)
    np.cumsum(n_contrib.ravel()[:-1], out=offsets[1:])
    rec_gauss = np.zeros(total, dtype=np.int64)
    rec_weight = np.zeros(total)
    if total and prep.proj.valid.size:
        _kernels.records_kernel(
            h,
            w,
            settings.tile_size,
            prep.tiles.tiles_x,
            prep.tiles.offsets,
            prep.tiles.indices,
            prep.proj.means2d,
            prep.proj.conics,
            prep.alphas,
            ALPHA_SKIP,
            ALPHA_MAX,
            E_MIN,
            T_TERMINATE,
            offsets,
            rec_gauss,
            rec_weight,
        )
    records = []
    flat = n_contrib.ravel()
    for p in range(h * w):
        lo = offsets[p]
        entries = [
            (int(prep.proj.valid[rec_gauss[lo + i]]), float(rec_weight[lo + i]))
            for i in range(flat[p])
        ]
        records.append(entries)
    return records


def render_backward(
    cloud: GaussianCloud,
    cam: Camera,
    settings: RenderSettings,
    dimage: np.ndarray,
    output: RenderOutput,
) -> CloudGrads:
    """Analytic gradients of `sum(dimage * image)` w.r.t. all cloud fields."""
    if output is None or output.transmittance is None or output.last_pos is None:
        raise ContractViolationError("render_backward needs the forward pass auxiliaries")
    h, w = cam.height, cam.width
    if dimage.shape != (h, w, 3):
        raise ContractViolationError("upstream gradient shape does not match the camera")

    n = len(cloud)
    grads = CloudGrads.zeros(n)
    prep = _prepare(cloud, cam, settings)
    v = prep.proj.valid.shape[0]
    if v == 0:
        return grads

    dmeans2d = np.zeros((v, 2))
    dcov2d = np.zeros((v, 3))
    dalphas = np.zeros(v)
    dcolors = np.zeros((v, 3))
    _kernels.backward_kernel(
        h,
        w,
        settings.tile_size,
        prep.tiles.tiles_x,
        prep.tiles.offsets,
        prep.tiles.indices,
        prep.proj.means2d,
        prep.proj.conics,
        prep.alphas,
        prep.colors,
        np.asarray(settings.background, dtype=np.float64),
        ALPHA_SKIP,
        ALPHA_MAX,
        E_MIN,
        output.transmittance,
        output.last_pos,
        np.ascontiguousarray(dimage, dtype=np.float64),
        dmeans2d,
        dcov2d,
        dalphas,
        dcolors,
    )

    idx = prep.proj.valid

    # color path: SH coefficients, band masks, view direction
    dcolors_all = np.zeros((n, 3))
    dcolors_all[idx] = dcolors
    d_dc, d_rest, d_band, d_dirs = sh_color_backward(
        cloud.sh_dc,
        cloud.sh_rest,
        prep.view_dirs,
        settings.active_sh_degree,
        prep.band_masks,
        dcolors_all,
        compute_rest=settings.compute_sh_rest_grads,
    )
    grads.sh_dc += d_dc
    grads.sh_rest += d_rest
    grads.sh_mask_logits += d_band * hard_mask_grad(cloud.sh_mask_logits)
    # view direction -> world position (normalize Jacobian)
    inner = np.sum(d_dirs * prep.view_dirs, axis=1, keepdims=True)
    grads.positions += (d_dirs - prep.view_dirs * inner) / prep.dir_norms[:, None]

    # opacity path: effective alpha = sigmoid(logit) * mask
    s_op = expit(cloud.opacity_logits[idx])
    grads.opacity_logits[idx] += dalphas * prep.masks[idx] * s_op * (1.0 - s_op)
    dmask = np.zeros(n)
    dmask[idx] += dalphas * s_op

    # geometry path: projected mean and covariance back to 3D parameters
    dpos, dcov3d_vis = project_backward(prep.proj, prep.cov3d, cam, dmeans2d, dcov2d)
    grads.positions[idx] += dpos
    dcov3d = np.zeros((n, 3, 3))
    dcov3d[idx] = dcov3d_vis

    q_unit, _ = normalize_quaternions(cloud.rotations)
    dscales_eff, dq = covariance_backward(
        prep.scales_eff, quat_to_rotmat(q_unit), cloud.rotations, dcov3d
    )
    grads.rotations += dq
    raw_scales = cloud.scales
    grads.log_scales += dscales_eff * raw_scales * prep.masks[:, None]
    dmask += np.sum(dscales_eff * raw_scales, axis=1)

    grads.mask_logits += dmask * hard_mask_grad(cloud.mask_logits)
    grads.mean2d_screen[idx] = dmeans2d
    return grads
