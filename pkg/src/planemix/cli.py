"""Command-line entry points for dataset generation, training, rendering and serving."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .errors import PlanemixError
from .geometry import PlaneInitConfig, init_planes
from .metrics import psnr, ssim
from .radiance import make_expert
from .renderer import RenderConfig, bake_alpha, render_image
from .scene_io import (Checkpoint, SyntheticSpec, export_baked_bundle,
                       load_checkpoint, load_dataset, make_synthetic_scene,
                       new_checkpoint_config, read_checkpoint_header,
                       save_checkpoint, save_depth, save_png)
from .training import (GeometricLossConfig, TrainLog, TrainSchedule, distill,
                       finetune, finetune_rgb_after_bake, fit_planes,
                       point_rmse, train_teacher)


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit 1 instead of argparse's 2.

    Runtime failures (missing files, corrupt checkpoints) exit 2; see main().
    """

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _schedule_from_args(args) -> TrainSchedule:
    return TrainSchedule(
        teacher_epochs=args.teacher_epochs,
        distill_epochs=args.distill_epochs,
        finetune_epochs=args.finetune_epochs,
        batch_rays=args.batch_rays,
        learning_rate=args.learning_rate,
        seed=args.seed,
    )


def _add_schedule_args(p):
    p.add_argument("--teacher-epochs", type=int, default=30)
    p.add_argument("--distill-epochs", type=int, default=1000)
    p.add_argument("--finetune-epochs", type=int, default=150)
    p.add_argument("--batch-rays", type=int, default=8192)
    p.add_argument("--learning-rate", type=float, default=2e-3)


def _load_config_defaults(args):
    """Optional JSON config file; command-line flags win over its values."""
    if not getattr(args, "config", None):
        return
    with open(args.config) as f:
        cfg = json.load(f)
    for key, value in cfg.items():
        attr = key.replace("-", "_")
        if hasattr(args, attr) and f"--{key}" not in sys.argv and attr not in sys.argv:
            setattr(args, attr, value)


def _render_config(ckpt, args) -> RenderConfig:
    return RenderConfig(background=ckpt.background,
                        use_baked=not getattr(args, "no_baked", False))


def cmd_make_synthetic(args):
    spec = SyntheticSpec(num_planes=args.planes, texture_kind=args.textures,
                         seed=args.seed, image_size=args.image_size,
                         n_train=args.train_views, n_test=args.test_views)
    manifest, _ = make_synthetic_scene(spec, args.out)
    print(manifest)


def cmd_fit_planes(args):
    ds = load_dataset(args.dataset)
    planes = init_planes(ds.cloud, args.planes, PlaneInitConfig(seed=args.seed))
    gcfg = GeometricLossConfig(lambda_area=args.lambda_area,
                               iterations=args.iterations,
                               learning_rate=args.plane_lr)
    log = TrainLog(args.log) if args.log else None
    planes = fit_planes(ds.cloud, planes, gcfg, log=log, seed=args.seed)
    config = new_checkpoint_config(hidden=args.hidden)
    ckpt = Checkpoint(stage="fit", config=config,
                      rectangles=planes,
                      experts=[make_expert(L_pos=config["L_pos"], L_dir=config["L_dir"],
                                           hidden=args.hidden, seed=args.seed + i)
                               for i in range(args.planes)],
                      background=ds.background, near=ds.near, far=ds.far,
                      seed=args.seed)
    save_checkpoint(ckpt, args.out)
    print(f"rmse {point_rmse(ds.cloud, planes):.6f} -> {args.out}")


def cmd_train(args):
    ds = load_dataset(args.dataset)
    ckpt = load_checkpoint(args.checkpoint)
    sched = _schedule_from_args(args)
    gcfg = GeometricLossConfig(lambda_area=args.lambda_area,
                               learning_rate=args.plane_lr)
    log = TrainLog(args.log) if args.log else None
    teacher, planes = train_teacher(ds, ckpt.rectangles, sched, gcfg,
                                    teacher=ckpt.teacher, log=log)
    experts = distill(teacher, planes, ckpt.experts, sched, log=log)
    experts = finetune(experts, ds, planes, sched, log=log)
    out = Checkpoint(stage="finetune", config=ckpt.config, rectangles=planes,
                     experts=experts, teacher=teacher, background=ckpt.background,
                     near=ckpt.near, far=ckpt.far, seed=args.seed)
    save_checkpoint(out, args.out)
    print(args.out)


def cmd_bake(args):
    ckpt = load_checkpoint(args.checkpoint)
    textures = [bake_alpha(expert, rect, args.resolution, k)
                for k, (rect, expert) in enumerate(zip(ckpt.rectangles, ckpt.experts))]
    ckpt.alpha_textures = textures
    ckpt.stage = "baked"
    save_checkpoint(ckpt, args.out)
    print(args.out)


def cmd_finetune_rgb(args):
    ds = load_dataset(args.dataset)
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.alpha_textures is None:
        raise PlanemixError("checkpoint has no baked alpha textures; run bake first")
    sched = _schedule_from_args(args)
    log = TrainLog(args.log) if args.log else None
    experts = finetune_rgb_after_bake(ckpt.experts, ckpt.alpha_textures, ds,
                                      ckpt.rectangles, sched,
                                      epochs=args.finetune_epochs, log=log)
    ckpt.experts = experts
    ckpt.stage = "finetune_rgb"
    save_checkpoint(ckpt, args.out)
    print(args.out)


def cmd_render(args):
    ckpt = load_checkpoint(args.checkpoint)
    scene = ckpt.to_scene(use_baked=not args.no_baked)
    ds = load_dataset(args.dataset)
    frames = ds.split(args.split) if args.split else ds.frames
    if args.frame is not None:
        frames = [frames[args.frame]]
    os.makedirs(args.out, exist_ok=True)
    cfg = _render_config(ckpt, args)
    for i, frame in enumerate(frames):
        image, depth, stats = render_image(frame.camera, scene, cfg)
        save_png(os.path.join(args.out, f"render_{i:03d}.png"), image)
        if args.depth:
            save_depth(os.path.join(args.out, f"depth_{i:03d}.png"),
                       depth, scene.t_far)
    print(args.out)


def cmd_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    scene = ckpt.to_scene(use_baked=not args.no_baked)
    ds = load_dataset(args.dataset)
    frames = ds.split(args.split)
    cfg = _render_config(ckpt, args)
    rows = []
    for i, frame in enumerate(frames):
        image, _, _ = render_image(frame.camera, scene, cfg)
        rows.append((i, psnr(image, frame.image), ssim(image, frame.image)))
    if args.out:
        with open(args.out, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["frame", "psnr", "ssim"])
            writer.writerows(rows)
    mean_psnr = float(np.mean([r[1] for r in rows])) if rows else 0.0
    mean_ssim = float(np.mean([r[2] for r in rows])) if rows else 0.0
    print(f"psnr {mean_psnr:.3f} ssim {mean_ssim:.4f} over {len(rows)} frames")


def cmd_export_bundle(args):
    ckpt = load_checkpoint(args.checkpoint)
    scene = ckpt.to_scene(use_baked=True)
    path = export_baked_bundle(scene, args.out, resolution=args.resolution,
                               raw_textures=args.raw)
    print(path)


def cmd_inspect(args):
    header = read_checkpoint_header(args.checkpoint)
    print(json.dumps({k: header[k] for k in
                      ("version", "stage", "seed", "config", "blocks")}, indent=1))


def cmd_serve(args):
    import uvicorn

    from .server import create_app
    app = create_app(args.checkpoint, bundle_dir=args.bundle,
                     static_dir=args.static)
    port = args.port or int(os.environ.get("PLANEMIX_PORT", "8595"))
    uvicorn.run(app, host=args.host, port=port, log_level="warning")


def build_parser() -> _Parser:
    parser = _Parser(prog="planemix",
                     description="Planar-expert view synthesis toolkit")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap numpy thread pools (best effort)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synthetic", help="generate a synthetic posed dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--planes", type=int, default=10)
    p.add_argument("--textures", default="mixed",
                   choices=["constant", "gradient", "checker", "mixed"])
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--train-views", type=int, default=20)
    p.add_argument("--test-views", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_synthetic)

    p = sub.add_parser("fit-planes", help="initialize and fit plane geometry")
    p.add_argument("--dataset", required=True, help="manifest.json path")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--planes", type=int, default=10)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--iterations", type=int, default=800)
    p.add_argument("--plane-lr", type=float, default=5e-3)
    p.add_argument("--lambda-area", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_fit_planes)

    p = sub.add_parser("train", help="teacher training, distillation and finetune")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True, help="input checkpoint (fit stage)")
    p.add_argument("--out", required=True)
    _add_schedule_args(p)
    p.add_argument("--plane-lr", type=float, default=5e-3)
    p.add_argument("--lambda-area", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bake", help="bake per-plane alpha textures")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=200)
    p.set_defaults(func=cmd_bake)

    p = sub.add_parser("finetune-rgb", help="color finetune with baked alpha frozen")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True, help="baked checkpoint")
    p.add_argument("--out", required=True)
    _add_schedule_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_finetune_rgb)

    p = sub.add_parser("render", help="render dataset cameras from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default=None, choices=[None, "train", "test"])
    p.add_argument("--frame", type=int, default=None)
    p.add_argument("--depth", action="store_true",
                   help="also write 16-bit depth PNGs with raw float32 sidecars")
    p.add_argument("--no-baked", action="store_true")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="PSNR/SSIM against a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", default=None, help="per-frame CSV path")
    p.add_argument("--no-baked", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-bundle", help="write textured-quad bundle for viewers")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=200)
    p.add_argument("--raw", action="store_true",
                   help="also write raw RGBA uint8 .bin next to each PNG")
    p.set_defaults(func=cmd_export_bundle)

    p = sub.add_parser("inspect", help="print a checkpoint header")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("serve", help="HTTP/WebSocket rendering service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--bundle", default=None, help="exported bundle dir for /bundle")
    p.add_argument("--static", default=None,
                   help="viewer asset dir served under /app")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=None,
                   help="default from PLANEMIX_PORT or 8595")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        _load_config_defaults(args)
        args.func(args)
    except PlanemixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
