"""Command-line entry point: train, render, prune, info, bench, synth.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error. Every
subcommand ends with a machine-readable block of `key=value` lines.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from .errors import ConfigError, SlimsplatError


def _summary(pairs) -> None:
    print("--- summary ---")
    for key, value in pairs:
        if isinstance(value, float):
            print(f"{key}={value:.6g}")
        else:
            print(f"{key}={value}")


def _load_config(args):
    from .config import TrainConfig, apply_overrides, config_from_dict, load_config

    cfg = load_config(args.config) if getattr(args, "config", None) else config_from_dict({})
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "threads", None) is not None:
        overrides.append(f"threads={args.threads}")
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    return cfg


def _scene_inputs(args, cfg):
    from .synthetic import load_scene, preset_iters, preset_scene

    if args.synth:
        scene = preset_scene(args.synth, seed=cfg.seed)
        views, points = scene.views, scene.points
        default_iters = preset_iters(args.synth)
    else:
        if not os.path.isdir(args.scene):
            raise ConfigError(f"scene directory {args.scene!r} does not exist")
        views, points = load_scene(args.scene)
        default_iters = cfg.timeline.total_iters
    iters = args.iters if args.iters else default_iters
    if iters != cfg.timeline.total_iters:
        cfg = cfg.scaled_to(iters)
    return views, points, cfg


def cmd_train(args) -> int:
    from .config import describe_toggles
    from .training import fit

    cfg = _load_config(args)
    views, points, cfg = _scene_inputs(args, cfg)
    print(f"tricks: {describe_toggles(cfg)}")
    print(f"views: {len(views)}  seed points: {len(points)}  iters: {cfg.timeline.total_iters}")
    out_dir = args.out
    cloud, report = fit(views, points, cfg, out_dir=out_dir, progress_every=args.progress_every)
    pairs = [
        ("iters", report.iters),
        ("final_psnr", report.train_psnr),
        ("final_ssim", report.train_ssim),
        ("peak_gaussians", report.peak_count),
        ("final_gaussians", report.final_count),
        ("wall_time_s", report.wall_time_s),
    ]
    if report.holdout_psnr is not None:
        pairs += [("holdout_psnr", report.holdout_psnr), ("holdout_ssim", report.holdout_ssim)]
    if out_dir:
        pairs += [
            ("scene_tgs", os.path.join(out_dir, "scene.tgs")),
            ("scene_ply", os.path.join(out_dir, "scene.ply")),
            ("metrics_csv", os.path.join(out_dir, "metrics.csv")),
        ]
    _summary(pairs)
    return 0


def _load_any_scene(path):
    from .compact import load_compact
    from .ply import load_ply

    if str(path).endswith(".tgs"):
        cloud, _ = load_compact(path)
        return cloud
    return load_ply(path)


def _camera_from_spec(spec: str):
    """Parse 'W,H,fov_deg,dist,azim_deg,elev_deg' into a look-at camera."""
    import math

    from .cameras import Camera, look_at

    try:
        w, h, fov, dist, azim, elev = (float(v) for v in spec.split(","))
    except ValueError:
        raise ConfigError(
            "camera spec must be W,H,fov_deg,dist,azim_deg,elev_deg"
        ) from None
    if w < 1 or h < 1 or not 0 < fov < 180 or dist <= 0:
        raise ConfigError("invalid camera spec values")
    pos = dist * np.array(
        [
            math.cos(math.radians(azim)) * math.cos(math.radians(elev)),
            math.sin(math.radians(azim)) * math.cos(math.radians(elev)),
            math.sin(math.radians(elev)),
        ]
    )
    R, t = look_at(pos, np.zeros(3))
    f = 0.5 * w / math.tan(math.radians(fov) / 2.0)
    return Camera(
        fx=f, fy=f, cx=(w - 1) / 2.0, cy=(h - 1) / 2.0, R=R, t=t, width=int(w), height=int(h)
    )


def cmd_render(args) -> int:
    from .images import write_image
    from .rasterizer import RenderSettings, render_forward

    cloud = _load_any_scene(args.scene)
    cam = _camera_from_spec(args.camera)
    settings = RenderSettings(background=tuple(float(v) for v in args.background.split(",")))
    out = render_forward(cloud, cam, settings)
    write_image(args.out, out.image)
    pairs = [("out", args.out), ("n_gaussians", len(cloud)), ("width", cam.width), ("height", cam.height)]
    if args.fps:
        times = []
        for _ in range(50):
            t0 = time.perf_counter()
            render_forward(cloud, cam, settings)
            times.append(time.perf_counter() - t0)
        mean = float(np.mean(times))
        pairs += [("fps", 1.0 / mean), ("fps_runs", 50)]
    _summary(pairs)
    return 0


def cmd_prune(args) -> int:
    from .compact import save_compact
    from .ply import save_ply
    from .rasterizer import RenderSettings, render_forward
    from .significance import count_hits, prune_by_significance, significance_scores
    from .synthetic import load_scene
    from .metrics import psnr

    if not args.cameras:
        raise ConfigError("prune needs --cameras pointing at a scene directory")
    cloud = _load_any_scene(args.scene)
    views, _ = load_scene(args.cameras)
    settings = RenderSettings()
    before = len(cloud)
    renders_before = [render_forward(cloud, v.camera, settings).image for v in views]

    if 0.0 < args.rate < 1.0:
        hits = count_hits(cloud, [v.camera for v in views], settings)
        report = significance_scores(hits, cloud)
        pruned, _ = prune_by_significance(cloud, report.scores, args.rate)
    elif args.rate == 0.0:
        pruned = cloud
    else:
        raise ConfigError("prune rate must lie in [0, 1)")

    deltas = []
    for v, ref in zip(views, renders_before):
        img = render_forward(pruned, v.camera, settings).image
        deltas.append(psnr(img, v.image) - psnr(ref, v.image))
    if str(args.out).endswith(".tgs"):
        save_compact(pruned, args.out)
    else:
        save_ply(pruned, args.out)
    _summary(
        [
            ("before", before),
            ("after", len(pruned)),
            ("rate", args.rate),
            ("psnr_delta_db", float(np.mean(deltas))),
            ("out", args.out),
        ]
    )
    return 0


def cmd_info(args) -> int:
    from .compact import load_compact

    path = str(args.scene)
    if path.endswith(".tgs"):
        cloud, stats = load_compact(path)
        full_bytes = stats.count * 59 * 4
        _summary(
            [
                ("n_gaussians", stats.count),
                ("bucket_band0", stats.bucket_counts[0]),
                ("bucket_band1", stats.bucket_counts[1]),
                ("bucket_band2", stats.bucket_counts[2]),
                ("bucket_band3", stats.bucket_counts[3]),
                ("payload_bytes", stats.payload_bytes),
                ("file_bytes", stats.file_bytes),
                ("full_precision_bytes", full_bytes),
            ]
        )
    else:
        from .ply import load_ply

        cloud = load_ply(path)
        _summary(
            [
                ("n_gaussians", len(cloud)),
                ("file_bytes", os.path.getsize(path)),
                ("full_precision_bytes", len(cloud) * 59 * 4),
            ]
        )
    return 0


def cmd_bench(args) -> int:
    from .metrics import ssim_fast, ssim_reference
    from .rasterizer import RenderSettings, render_backward, render_forward
    from .synthetic import preset_scene

    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    scene = preset_scene("small", seed=0)
    cloud, cam = scene.gt_cloud, scene.views[0].camera
    settings = RenderSettings()

    out = render_forward(cloud, cam, settings)  # warm the JIT
    t0 = time.perf_counter()
    for _ in range(args.repeats):
        out = render_forward(cloud, cam, settings)
    fwd = (time.perf_counter() - t0) / args.repeats

    dimage = rng.standard_normal(out.image.shape)
    render_backward(cloud, cam, settings, dimage, out)
    t0 = time.perf_counter()
    for _ in range(args.repeats):
        render_backward(cloud, cam, settings, dimage, out)
    bwd = (time.perf_counter() - t0) / args.repeats

    size = args.ssim_size
    a = rng.random((size, size, 3))
    b = rng.random((size, size, 3))
    t0 = time.perf_counter()
    ssim_reference(a, b)
    t_ref = time.perf_counter() - t0
    t0 = time.perf_counter()
    ssim_fast(a, b, compute_grad=False)
    t_fast = time.perf_counter() - t0

    blended = int(out.n_contrib.sum())
    _summary(
        [
            ("forward_s", fwd),
            ("backward_s", bwd),
            ("blended_contributions", blended),
            ("ssim_size", size),
            ("ssim_reference_s", t_ref),
            ("ssim_fast_s", t_fast),
            ("ssim_speedup", t_ref / t_fast),
        ]
    )
    return 0


def cmd_synth(args) -> int:
    from .synthetic import preset_scene, save_scene

    scene = preset_scene(args.preset, seed=args.seed if args.seed is not None else 0)
    save_scene(scene, args.out, binary=not args.text)
    _summary(
        [
            ("preset", args.preset),
            ("out", args.out),
            ("views", len(scene.views)),
            ("gt_gaussians", len(scene.gt_cloud)),
            ("sfm_points", len(scene.points)),
        ]
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slimsplat",
        description="Train, compress, render and inspect Gaussian-splat scenes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a scene and write compact artifacts")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scene", help="COLMAP-style scene directory")
    src.add_argument("--synth", choices=("small", "medium"), help="built-in synthetic preset")
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override")
    p.add_argument("--iters", type=int, default=0, help="rescale the timeline to this length")
    p.add_argument("--out", help="output directory for scene.tgs / scene.ply / metrics.csv")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--progress-every", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render a stored scene to an image")
    p.add_argument("scene", help=".tgs or .ply scene file")
    p.add_argument("--camera", required=True, metavar="W,H,FOV,DIST,AZIM,ELEV")
    p.add_argument("--out", required=True, help="output .png or .ppm")
    p.add_argument("--background", default="0,0,0")
    p.add_argument("--fps", action="store_true", help="report mean FPS over 50 runs")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("prune", help="significance-prune a stored scene without retraining")
    p.add_argument("scene", help=".tgs or .ply scene file")
    p.add_argument("--rate", type=float, required=True, help="fraction of Gaussians to drop")
    p.add_argument("--cameras", required=True, help="scene directory providing views")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("info", help="print scene statistics")
    p.add_argument("scene")
    p.set_defaults(func=cmd_info)

    p = sub.add_parser("bench", help="micro-benchmarks for rendering and SSIM")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--ssim-size", type=int, default=512)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write a synthetic COLMAP-style scene")
    p.add_argument("preset", choices=("small", "medium"))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--text", action="store_true", help="write text COLMAP files")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except SlimsplatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
