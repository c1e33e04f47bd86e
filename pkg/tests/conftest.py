"""Shared fixtures and independent oracles.

The reference renderer here is a deliberate reimplementation of the blending
contract as a plain per-pixel double loop: no tiles, no early lists, its own
2x2 inverse. Tests feed it the same projected quantities the production
rasterizer consumes so integer-exact comparisons are meaningful; projection
itself is validated separately in test_geometry.
"""

import numpy as np
import pytest
from scipy.special import expit, logit

from slimsplat.cameras import Camera, look_at
from slimsplat.cloud import GaussianCloud
from slimsplat.geometry import normalize_quaternions, covariance_from_scale_rot, quat_to_rotmat, project_gaussians
from slimsplat.masking import apply_gaussian_mask, hard_mask, sh_band_masks
from slimsplat.sh import sh_to_color

ALPHA_SKIP = 1.0 / 255.0
ALPHA_MAX = 0.99
E_MIN = -4.5
T_TERMINATE = 1e-4


def random_cloud(rng, n, alpha_range=(0.1, 0.32), spread=0.8, scale_range=(0.08, 0.3)):
    """Random test cloud; opacities stay below the clamp/footprint kinks so
    central differences remain valid."""
    c = GaussianCloud.zeros(n)
    c.positions = rng.uniform(-spread, spread, (n, 3))
    c.log_scales = np.log(rng.uniform(scale_range[0], scale_range[1], (n, 3)))
    q = rng.normal(size=(n, 4))
    c.rotations = q / np.linalg.norm(q, axis=1, keepdims=True)
    c.opacity_logits = logit(rng.uniform(alpha_range[0], alpha_range[1], n))
    c.sh_dc = (rng.uniform(0.3, 0.8, (n, 3)) - 0.5) / 0.28209479177387814
    c.sh_rest = rng.normal(0.0, 0.05, (n, 15, 3))
    c.mask_logits = rng.uniform(1.0, 3.0, n)
    c.sh_mask_logits = rng.uniform(1.0, 3.0, (n, 3))
    return c


def make_camera(size=32, dist=3.5, fx=40.0, fy=42.0):
    R, t = look_at(np.array([0.0, -dist, 1.0]), np.zeros(3))
    return Camera(
        fx=fx, fy=fy, cx=(size - 1) / 2.0, cy=(size - 1) / 2.0,
        R=R, t=t, width=size, height=size,
    )


def ring_cameras(n_views, size=32, radius=3.5):
    cams = []
    for k in range(n_views):
        theta = 2.0 * np.pi * k / n_views
        pos = radius * np.array([np.cos(theta), np.sin(theta), 0.4])
        R, t = look_at(pos, np.zeros(3))
        cams.append(
            Camera(fx=40.0, fy=40.0, cx=(size - 1) / 2.0, cy=(size - 1) / 2.0,
                   R=R, t=t, width=size, height=size)
        )
    return cams


def project_for_oracle(cloud, cam, settings):
    """Projected per-Gaussian quantities via the public unit operations."""
    masks = hard_mask(cloud.mask_logits, settings.mask_threshold)
    alphas_eff, scales_eff = apply_gaussian_mask(cloud.opacities, cloud.scales, masks)
    q_unit, _ = normalize_quaternions(cloud.rotations)
    cov3d = covariance_from_scale_rot(scales_eff, quat_to_rotmat(q_unit))
    proj = project_gaussians(cloud.positions, cov3d, cam, settings.lowpass_s, settings.near)
    keep = alphas_eff[proj.valid] >= ALPHA_SKIP
    idx = proj.valid[keep]
    dirs = cloud.positions - cam.center
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    colors = sh_to_color(
        cloud.sh_dc, cloud.sh_rest, dirs, settings.active_sh_degree,
        sh_band_masks(cloud, settings.sh_mask_threshold),
    )
    return {
        "indices": idx,
        "means2d": proj.means2d[keep],
        "conics": proj.conics[keep],
        "depths": proj.depths[keep],
        "alphas": alphas_eff[idx],
        "colors": colors[idx],
    }


def reference_render(means2d, conics, depths, alphas, colors, height, width,
                     background=(0.0, 0.0, 0.0), n_total=None, indices=None):
    """Untiled per-pixel blending loop, written independently of the kernels.

    Returns image, transmittance, weight sums, per-Gaussian hit counts and
    per-pixel ordered (gaussian, weight) records.
    """
    v = means2d.shape[0]
    order = sorted(range(v), key=lambda g: (depths[g], g))
    if indices is None:
        indices = np.arange(v)
    n = n_total if n_total is not None else (int(indices.max()) + 1 if v else 0)
    image = np.zeros((height, width, 3))
    transmit = np.ones((height, width))
    wsum = np.zeros((height, width))
    hits = np.zeros(n, dtype=np.int64)
    records = [[] for _ in range(height * width)]
    bg = np.asarray(background, dtype=np.float64)
    for py in range(height):
        for px in range(width):
            t_cur = 1.0
            for g in order:
                if t_cur < T_TERMINATE:
                    break
                dx = px - means2d[g, 0]
                dy = py - means2d[g, 1]
                e = -0.5 * (conics[g, 0] * dx * dx + conics[g, 2] * dy * dy) - conics[g, 1] * dx * dy
                if e < E_MIN or e > 0.0:
                    continue
                a = alphas[g] * np.exp(e)
                if a < ALPHA_SKIP:
                    continue
                if a > ALPHA_MAX:
                    a = ALPHA_MAX
                w = a * t_cur
                image[py, px] += colors[g] * w
                wsum[py, px] += w
                hits[indices[g]] += 1
                records[py * width + px].append((int(indices[g]), w))
                t_cur *= 1.0 - a
            image[py, px] += bg * t_cur
            transmit[py, px] = t_cur
    return image, transmit, wsum, hits, records


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
