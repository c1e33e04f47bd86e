"""Procedural desk-scale scenes: ground-truth Gaussians rendered from cameras
on a sphere, plus a noisy SfM-like point set for seeding.

These are the reproducible stand-in for full photographic captures; the
`small` and `medium` presets back the CLI and the acceptance harness.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.special import logit

from .cameras import Camera, look_at
from .cloud import GaussianCloud
from .colmap import SfmBundle, SfmCamera, SfmImage, rotmat_to_qvec, save_colmap
from .errors import ConfigError
from .images import read_image, write_image
from .rasterizer import RenderSettings, render_forward
from .schedule import SfmPoints
from .sh import dc_to_rgb, rgb_to_dc

PRESETS = {
    "small": dict(n_gaussians=3, n_views=8, resolution=64, iters=2000, sfm_points=60),
    "medium": dict(
        n_gaussians=200,
        n_views=16,
        resolution=128,
        iters=5000,
        sfm_points=1000,
        # sensor-like noise floor; without it the targets are perfectly
        # fittable and pruned/unpruned runs cannot be compared meaningfully
        noise_sigma=0.025,
        scale_range=(0.12, 0.3),
    ),
}


@dataclass
class TrainView:
    camera: Camera
    image: np.ndarray  # (H, W, 3) float in [0, 1]


@dataclass
class SyntheticScene:
    name: str
    gt_cloud: GaussianCloud
    views: list          # TrainView
    points: SfmPoints
    background: tuple = (0.0, 0.0, 0.0)


def _ring_cameras(n_views: int, resolution: int, radius: float, rng) -> list:
    cams = []
    fov = math.radians(50.0)
    f = 0.5 * resolution / math.tan(fov / 2.0)
    for k in range(n_views):
        theta = 2.0 * math.pi * k / n_views
        # alternate elevation bands so views are not coplanar
        phi = math.radians(20.0 + 25.0 * ((k % 3) - 1))
        pos = radius * np.array(
            [math.cos(theta) * math.cos(phi), math.sin(theta) * math.cos(phi), math.sin(phi)]
        )
        R, t = look_at(pos, np.zeros(3))
        cams.append(
            Camera(
                fx=f,
                fy=f,
                cx=(resolution - 1) / 2.0,
                cy=(resolution - 1) / 2.0,
                R=R,
                t=t,
                width=resolution,
                height=resolution,
                name=f"view_{k:03d}.png",
            )
        )
    return cams


def make_scene(
    n_gaussians: int,
    n_views: int,
    resolution: int,
    seed: int = 0,
    sfm_points: int | None = None,
    name: str = "synthetic",
    noise_sigma: float = 0.0,
    scale_range: tuple = (0.06, 0.22),
) -> SyntheticScene:
    """Random ground-truth cloud, ring cameras, rendered targets, SfM points."""
    rng = np.random.default_rng(seed)
    n = n_gaussians

    cloud = GaussianCloud.zeros(n)
    cloud.positions = rng.uniform(-1.0, 1.0, (n, 3))
    cloud.log_scales = np.log(rng.uniform(scale_range[0], scale_range[1], (n, 3)))
    quats = rng.normal(size=(n, 4))
    cloud.rotations = quats / np.linalg.norm(quats, axis=1, keepdims=True)
    cloud.opacity_logits = logit(rng.uniform(0.55, 0.95, n))
    cloud.sh_dc = rgb_to_dc(rng.uniform(0.2, 0.9, (n, 3)))
    # mild view dependence, fading with band order
    cloud.sh_rest[:, 0:3, :] = rng.normal(0.0, 0.08, (n, 3, 3))
    cloud.sh_rest[:, 3:8, :] = rng.normal(0.0, 0.04, (n, 5, 3))
    cloud.sh_rest[:, 8:15, :] = rng.normal(0.0, 0.02, (n, 7, 3))

    cameras = _ring_cameras(n_views, resolution, radius=4.0, rng=rng)
    settings = RenderSettings()
    views = []
    for cam in cameras:
        img = render_forward(cloud, cam, settings).image
        if noise_sigma > 0.0:
            img = np.clip(img + rng.normal(0.0, noise_sigma, img.shape), 0.0, 1.0)
        views.append(TrainView(cam, img))

    # SfM-like seeds: noisy samples around ground-truth centers with synthetic
    # reprojection errors correlated to the noise magnitude
    p = sfm_points if sfm_points is not None else max(20 * n, 60)
    owner = rng.integers(0, n, p)
    noise = rng.normal(0.0, 1.0, (p, 3)) * np.exp(cloud.log_scales[owner]) * rng.uniform(
        0.2, 2.0, (p, 1)
    )
    xyz = cloud.positions[owner] + noise
    errors = np.linalg.norm(noise, axis=1) * rng.uniform(0.8, 1.2, p)
    rgb = np.clip(dc_to_rgb(cloud.sh_dc[owner]) + rng.normal(0.0, 0.02, (p, 3)), 0.0, 1.0)
    points = SfmPoints(xyz=xyz, rgb=rgb, errors=errors)
    return SyntheticScene(name=name, gt_cloud=cloud, views=views, points=points)


def preset_scene(preset: str, seed: int = 0) -> SyntheticScene:
    if preset not in PRESETS:
        raise ConfigError(f"unknown synthetic preset {preset!r} (have {sorted(PRESETS)})")
    p = PRESETS[preset]
    return make_scene(
        p["n_gaussians"], p["n_views"], p["resolution"], seed=seed,
        sfm_points=p["sfm_points"], name=preset,
        noise_sigma=p.get("noise_sigma", 0.0),
        scale_range=p.get("scale_range", (0.06, 0.22)),
    )


def preset_iters(preset: str) -> int:
    return PRESETS[preset]["iters"]


def preset_config(preset: str):
    """Desk-scale training defaults for a preset.

    Paper-scale learning rates and loss weights assume millions of Gaussians
    and megapixel images; the per-Gaussian masking pressure and densification
    thresholds are rescaled here so the same dynamics play out at desk size.
    """
    from .config import config_from_dict

    if preset not in PRESETS:
        raise ConfigError(f"unknown synthetic preset {preset!r} (have {sorted(PRESETS)})")
    cfg = config_from_dict(
        {
            "densify": {"grad_threshold": 2e-3},
            "optim": {"mask_lr": 0.02, "sh_mask_lr": 0.02},
            "mask": {"lambda_m": 2e-3, "lambda_sh": 2e-3},
        }
    )
    return cfg.scaled_to(PRESETS[preset]["iters"])


def save_scene(scene: SyntheticScene, directory, binary: bool = True) -> None:
    """Write the scene as a COLMAP-style capture: sparse/0 + images/."""
    os.makedirs(os.path.join(directory, "images"), exist_ok=True)
    res = scene.views[0].camera
    cameras = {
        1: SfmCamera(
            camera_id=1,
            model="PINHOLE",
            width=res.width,
            height=res.height,
            params=np.array([res.fx, res.fy, res.cx, res.cy]),
        )
    }
    images = []
    for k, view in enumerate(scene.views):
        cam = view.camera
        images.append(
            SfmImage(
                image_id=k + 1,
                qvec=rotmat_to_qvec(cam.R),
                tvec=cam.t.copy(),
                camera_id=1,
                name=cam.name or f"view_{k:03d}.png",
                xys=np.zeros((0, 2)),
                point3d_ids=np.zeros(0, dtype=np.int64),
            )
        )
        write_image(os.path.join(directory, "images", images[-1].name), view.image)
    bundle = SfmBundle(
        cameras=cameras,
        images=images,
        point_ids=np.arange(1, len(scene.points) + 1, dtype=np.int64),
        xyz=scene.points.xyz,
        rgb=(scene.points.rgb * 255.0 + 0.5).astype(np.uint8),
        errors=scene.points.errors,
        tracks=[np.zeros((0, 2), dtype=np.int64) for _ in range(len(scene.points))],
    )
    save_colmap(bundle, os.path.join(directory, "sparse", "0"), binary=binary)


def load_scene(directory) -> tuple[list, SfmPoints]:
    """Load a COLMAP-style capture into training views + seed points."""
    from .colmap import load_colmap

    bundle = load_colmap(directory)
    views = []
    for im in bundle.images:
        cam = bundle.camera_for_image(im)
        img_path = os.path.join(str(directory), "images", im.name)
        views.append(TrainView(cam, read_image(img_path)))
    return views, bundle.points()
