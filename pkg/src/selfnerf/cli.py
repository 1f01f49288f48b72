"""Command-line entry point: ``selfnerf <command> [options]``.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .config import ConfigError, RunConfig, dump_config, load_config
from .data import DatasetError, SceneDataset, write_nerf_synthetic
from .field import UsageError, load_checkpoint
from .geometry import DomainError
from .metrics import MetricReport
from .render import render_image, write_depth, write_image

log = logging.getLogger("selfnerf")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _common(p):
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field, e.g. train.steps_per_iteration=800 (repeatable)")
    p.add_argument("--seed", type=int, help="master seed (same as --set seed=N)")
    p.add_argument("--threads", type=int, default=0, help="torch CPU threads, 0 = all cores")
    p.add_argument("--out", default="run", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="selfnerf", description="Few-shot NeRF self-training experiments")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train the first model on seen views only")
    _common(p)
    p = sub.add_parser("iterate", help="full self-training pipeline")
    _common(p)
    p.add_argument("--no-resume", action="store_true", help="ignore completed iterations on disk")

    for name, text in (("render", "render novel views from a checkpoint"),
                       ("eval", "per-image PSNR/SSIM of a checkpoint on held-out views")):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--run", help="run directory written by train/iterate (uses its config.yaml)")
        p.add_argument("--checkpoint", help="checkpoint file (default: best or iter_1 checkpoint of --run)")
        p.add_argument("--views", choices=("test", "val", "unseen"), default="test")

    p = sub.add_parser("toy", help="1-D basic-step experiment over several seeds")
    _common(p)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--curves", action="store_true", help="also write sampled curves")

    p = sub.add_parser("make-scene", help="write an analytic scene in NeRF-synthetic layout")
    _common(p)
    return parser


def _config(args, base: Path | None = None) -> RunConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    path = args.config or (base if base is not None and base.exists() else None)
    return load_config(path, overrides)


def _resolve_checkpoint(args):
    run = Path(args.run) if args.run else None
    cfg = _config(args, run / "config.yaml" if run else None)
    if args.checkpoint:
        ckpt = Path(args.checkpoint)
    elif run is not None:
        ckpt = next((c for c in (run / "best_checkpoint.pt", run / "iter_1" / "checkpoint.pt") if c.exists()),
                    run / "best_checkpoint.pt")
    else:
        raise ConfigError("--checkpoint or --run is required")
    if not ckpt.exists():
        raise FileNotFoundError(f"{ckpt}: checkpoint not found")
    model, _, _ = load_checkpoint(ckpt)
    return cfg, model, run


def _views(cfg, which):
    from .selftrain import build_views
    views = build_views(cfg)
    if which == "unseen":
        return [(c, None) for c in views.unseen]
    return views.test if which == "test" else views.val


def cmd_train(args):
    from .selftrain import train_first_model
    cfg = _config(args)
    run_dir = Path(args.out) / cfg.name
    run_dir.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, run_dir / "config.yaml")
    state = train_first_model(cfg, run_dir=run_dir)
    print(f"iteration 1: val PSNR {state.history[-1]['psnr']:.3f} dB -> {state.checkpoint}")


def cmd_iterate(args):
    from .selftrain import run_pipeline
    cfg = _config(args)
    best, history = run_pipeline(cfg, root=args.out, resume=not args.no_resume)
    for h in history:
        print(f"iteration {h['iteration']}: val PSNR {h['psnr']:.3f} dB, SSIM {h['ssim']:.4f}")
    print(f"best: iteration {best.iteration} -> {Path(args.out) / cfg.name / 'best_checkpoint.pt'}")


def cmd_render(args):
    cfg, model, run = _resolve_checkpoint(args)
    out = Path(args.out) if args.run is None or args.out != "run" else run / "renders"
    out.mkdir(parents=True, exist_ok=True)
    for k, (cam, _) in enumerate(_views(cfg, args.views)):
        rgb, depth = render_image(model, cam, cfg.train.num_samples)
        write_image(out / f"{args.views}_{k:03d}.png", rgb)
        write_depth(out / f"{args.views}_{k:03d}_depth.bin", np.where(depth.valid, depth.depth, 0.0),
                    cam.near, cam.far)
    print(f"rendered to {out}")


def cmd_eval(args):
    cfg, model, run = _resolve_checkpoint(args)
    if args.views == "unseen":
        raise ConfigError("--views: unseen poses have no ground truth")
    report = MetricReport()
    for cam, gt in _views(cfg, args.views):
        rgb, _ = render_image(model, cam, cfg.train.num_samples)
        report.add(np.clip(rgb, 0, 1), gt)
    out = (Path(args.out) if args.run is None or args.out != "run" else run)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"eval_{args.views}.csv"
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["view", "psnr", "ssim"])
        for k, (p, s) in enumerate(zip(report.psnr, report.ssim)):
            w.writerow([k, f"{p:.9g}", f"{s:.9g}"])
    print(f"mean PSNR {report.mean_psnr:.3f} dB, SSIM {report.mean_ssim:.4f} -> {path}")


def cmd_toy(args):
    from .toy import ToyConfig, run_seeds
    if args.seeds < 1:
        raise ConfigError("--seeds: must be >= 1")
    if args.config or args.overrides:
        raise ConfigError("toy: takes no --config/--set; the experiment configuration is fixed")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    first = args.seed or 0
    reports = run_seeds(ToyConfig(), range(first, first + args.seeds), out / "toy.csv",
                        out / "toy_curves.csv" if args.curves else None)
    m1 = float(np.median([r["mae_f1"] for r in reports]))
    m2 = float(np.median([r["mae_f2"] for r in reports]))
    print(f"median MAE f1 {m1:.4f}, f2 {m2:.4f} -> {out / 'toy.csv'}")


def cmd_make_scene(args):
    from .selftrain import build_views
    cfg = _config(args)
    if cfg.scene.kind == "nerf_synthetic":
        raise ConfigError("scene.kind: make-scene needs an analytic scene")
    views = build_views(cfg)
    out = Path(args.out)
    for split, pairs in (("train", views.seen), ("val", views.val), ("test", views.test)):
        ds = SceneDataset([c for c, _ in pairs], [i for _, i in pairs], [split] * len(pairs),
                          cfg.scene.near, cfg.scene.far, cfg.scene.kind)
        write_nerf_synthetic(out, ds, split)
    print(f"wrote {len(views.seen)}/{len(views.val)}/{len(views.test)} train/val/test views to {out}")


COMMANDS = {"train": cmd_train, "iterate": cmd_iterate, "render": cmd_render, "eval": cmd_eval,
            "toy": cmd_toy, "make-scene": cmd_make_scene}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(args.threads if args.threads > 0 else (os.cpu_count() or 1))
    try:
        COMMANDS[args.command](args)
    except ConfigError as e:
        parser.print_usage(sys.stderr)
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (DatasetError, DomainError, UsageError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
