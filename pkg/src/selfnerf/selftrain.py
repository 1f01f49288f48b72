"""Iterative teacher/student training with pseudo-views.

Run directory layout::

    <root>/<name>/
        config.yaml
        report.csv                  iteration, psnr, ssim, wall_time
        best_checkpoint.pt
        iter_<i>/checkpoint.pt
        iter_<i>/pseudo/            (i >= 2) pseudo-view images, masks, manifest.json
        iter_<i>/val_renders/       validation renders (PNG)
        iter_<i>/metrics.csv        per validation view: iteration, view, psnr, ssim
        iter_<i>/losses.csv         step, L_r, L_p, L_c, lambda1, total
"""

from __future__ import annotations

import csv
import logging
import math
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import data as scenes
from .config import ConfigError, RunConfig, dump_config
from .field import FieldConfig, Provenance, UncertaintyField, adam_step, init_params, load_checkpoint, make_optimizer, save_checkpoint
from .geometry import Camera, camera_rays
from .losses import total_loss
from .metrics import MetricReport
from .pseudo import PseudoView, make_predicted_pseudo_views, make_warped_pseudo_views, sample_unseen_poses, save_pseudo_views
from .render import render_image, render_rays, write_image

log = logging.getLogger(__name__)


@dataclass
class Views:
    seen: list  # [(Camera, image)]
    val: list
    test: list
    unseen: list[Camera]


@dataclass
class IterationState:
    iteration: int
    model: UncertaintyField
    checkpoint: Path | None
    pseudo: list[PseudoView] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)  # one row per completed iteration
    global_step: int = 0


# ---------------------------------------------------------------- scene setup

def analytic_scene(kind: str):
    if kind == "boxes":
        return scenes.default_box_scene()
    if kind == "plane":
        return scenes.TexturedPlane()
    if kind == "homogeneous":
        return scenes.Homogeneous(0.5, (0.8, 0.6, 0.4))
    raise ConfigError(f"scene.kind: {kind!r} is not an analytic scene")


def build_views(cfg: RunConfig) -> Views:
    sc = cfg.scene
    rng = np.random.default_rng([cfg.seed, 7])
    if sc.kind == "nerf_synthetic":
        train = scenes.load_nerf_synthetic(sc.path, "train", sc.near, sc.far)
        few, _ = scenes.select_few_shot(train, sc.num_views, cfg.seed)
        val = scenes.load_nerf_synthetic(sc.path, "val", sc.near, sc.far)
        test = scenes.load_nerf_synthetic(sc.path, "test", sc.near, sc.far)
        seen = list(zip(few.cameras, few.images))
        val_pairs = list(zip(val.cameras, val.images))[: sc.num_val]
        test_pairs = list(zip(test.cameras, test.images))[: sc.num_test]
    else:
        scene = analytic_scene(sc.kind)

        def cam(az, el):
            return scenes.orbit_camera(az, el, sc.radius, sc.resolution, sc.resolution, near=sc.near, far=sc.far)

        offset = rng.uniform(0.0, 360.0 / sc.num_views)
        seen_cams = [cam(offset + 360.0 * k / sc.num_views, sc.elevation) for k in range(sc.num_views)]
        held = [cam(rng.uniform(0, 360), rng.uniform(15, 60)) for _ in range(sc.num_val + sc.num_test)]

        def pairs(cams):
            return [(c, scenes.render_analytic_image(scene, c)[0]) for c in cams]

        seen = pairs(seen_cams)
        val_pairs = pairs(held[: sc.num_val])
        test_pairs = pairs(held[sc.num_val:])
    unseen = sample_unseen_poses([c for c, _ in seen], cfg.pseudo.unseen_per_seen * len(seen),
                                 cfg.pseudo.policy, cfg.seed, cfg.pseudo.keep_radius)
    return Views(seen, val_pairs, test_pairs, unseen)


def field_config(cfg: RunConfig, num_images: int) -> FieldConfig:
    m = cfg.model
    return FieldConfig(m.depth, m.width, m.dim_omega, m.dim_phi, num_images, m.pos_frequencies,
                       m.dir_frequencies, m.beta_min, m.activation)


# ---------------------------------------------------------------- ray pools

@dataclass
class RayPool:
    origins: torch.Tensor
    dirs: torch.Tensor
    radii: torch.Tensor
    rgb: torch.Tensor | None
    omega: torch.Tensor
    phi: torch.Tensor

    def __len__(self):
        return len(self.origins)


def _pool(items, with_target=True) -> RayPool | None:
    """items: (camera, image or None, mask or None, omega, phi)."""
    o, d, r, c, w, p = [], [], [], [], [], []
    for cam, img, mask, omega, phi in items:
        origins, dirs, radius = camera_rays(cam)
        keep = np.ones(len(origins), dtype=bool) if mask is None else np.asarray(mask).reshape(-1)
        o.append(origins[keep])
        d.append(dirs[keep])
        r.append(np.full(keep.sum(), radius))
        if with_target:
            c.append(np.asarray(img).reshape(-1, 3)[keep])
        w.append(np.full(keep.sum(), int(omega)))
        p.append(np.full(keep.sum(), int(phi)))
    if not o or sum(len(x) for x in o) == 0:
        return None
    f32 = torch.float32
    return RayPool(torch.as_tensor(np.concatenate(o), dtype=f32), torch.as_tensor(np.concatenate(d), dtype=f32),
                   torch.as_tensor(np.concatenate(r), dtype=f32),
                   torch.as_tensor(np.concatenate(c), dtype=f32) if with_target else None,
                   torch.as_tensor(np.concatenate(w)), torch.as_tensor(np.concatenate(p)))


def seen_pool(seen) -> RayPool:
    return _pool([(cam, img, None, Provenance.SEEN_OR_WARPED, k) for k, (cam, img) in enumerate(seen)])


def pseudo_pool(views: list[PseudoView]) -> RayPool | None:
    return _pool([(v.camera, v.image, v.mask, v.omega_id, v.phi_id) for v in views])


def unseen_pool(cams: list[Camera]) -> RayPool | None:
    return _pool([(c, None, None, Provenance.SEEN_OR_WARPED, 0) for c in cams], with_target=False)


# ---------------------------------------------------------------- training

def train_field(cfg: RunConfig, seen, pseudo: list[PseudoView], unseen: list[Camera], steps: int,
                init_seed: int, batch_seed, log_path=None, init_from: UncertaintyField | None = None,
                step_offset: int = 0):
    """Train a fresh field on seen rays (+ pseudo rays) with the combined objective.

    Returns ``(model, optimizer, loss_rows)``.
    """
    tr = cfg.train
    num_images = len(seen) + len(pseudo)
    model = init_params(field_config(cfg, num_images), init_seed)
    if init_from is not None:
        state = {k: v for k, v in init_from.state_dict().items() if k != "phi"}
        model.load_state_dict(state, strict=False)
    opt = make_optimizer(model, tr.lr)
    gen = torch.Generator().manual_seed(int(np.random.SeedSequence(batch_seed).generate_state(1)[0]))

    pools = {"seen": seen_pool(seen), "pseudo": pseudo_pool(pseudo), "extra": unseen_pool(unseen)}
    n_seen = tr.batch_rays
    n_pseudo = tr.pseudo_rays if pools["pseudo"] is not None else 0
    frac = tr.entropy_ray_fraction
    n_extra = int(round(frac / (1.0 - frac) * (n_seen + n_pseudo))) if pools["extra"] is not None else 0
    counts = {"seen": n_seen, "pseudo": n_pseudo, "extra": n_extra}

    rows = []
    near, far = cfg.scene.near, cfg.scene.far
    for step in range(steps):
        lr = tr.lr * (tr.lr_final / tr.lr) ** (step / max(steps, 1)) if tr.lr > 0 else 0.0
        parts = []
        for name in ("seen", "pseudo", "extra"):
            if counts[name]:
                pool = pools[name]
                parts.append((name, pool, torch.randint(len(pool), (counts[name],), generator=gen)))
        cat = lambda attr: torch.cat([getattr(p, attr)[i] for _, p, i in parts])  # noqa: E731
        rendered = render_rays(model, cat("origins"), cat("dirs"), cat("radii"), near, far,
                               cat("omega"), cat("phi"), tr.num_samples, gen)
        groups, start = {}, 0
        for name, pool, idx in parts:
            groups[name] = (rendered.take(slice(start, start + len(idx))),
                            pool.rgb[idx] if pool.rgb is not None else None)
            start += len(idx)
        seen_r, seen_t = groups["seen"]
        pseudo_r, pseudo_t = groups.get("pseudo", (None, None))
        extra_r = groups.get("extra", (None, None))[0]
        loss = total_loss(seen_r, seen_t, cfg.loss, step, pseudo_r, pseudo_t, extra_r, cfg.model.beta_min)
        opt.zero_grad(set_to_none=True)
        loss.total.backward()
        adam_step(opt, lr)
        if step % tr.log_every == 0 or step == steps - 1:
            rows.append([step_offset + step, loss.rgb.item(), loss.pseudo.item(), loss.entropy.item(),
                         loss.lambda1, loss.total.item()])
    if log_path is not None:
        _write_csv(log_path, ["step", "L_r", "L_p", "L_c", "lambda1", "total"], rows)
    return model, opt, rows


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.9g}" if isinstance(v, float) else v for v in row])


def evaluate_views(model, views, num_samples, out_dir=None, prefix="val") -> MetricReport:
    report = MetricReport()
    for k, (cam, gt) in enumerate(views):
        rgb, _ = render_image(model, cam, num_samples)
        report.add(np.clip(rgb, 0, 1), gt)
        if out_dir is not None:
            write_image(Path(out_dir) / f"{prefix}_{k:03d}.png", rgb)
    return report


def _finish_iteration(cfg, views, model, opt, iteration, it_dir, pseudo, global_step, history, t0):
    report = evaluate_views(model, views.val, cfg.train.num_samples,
                            None if it_dir is None else it_dir / "val_renders")
    row = {"iteration": iteration, "psnr": report.mean_psnr, "ssim": report.mean_ssim,
           "wall_time": time.perf_counter() - t0}
    ckpt = None
    if it_dir is not None:
        ckpt = it_dir / "checkpoint.pt"
        save_checkpoint(ckpt, model, opt, {"iteration": iteration, "global_step": global_step})
        _write_csv(it_dir / "metrics.csv", ["iteration", "view", "psnr", "ssim"],
                   [[iteration, k, p, s] for k, (p, s) in enumerate(zip(report.psnr, report.ssim))])
    log.info("iteration %d: val PSNR %.3f dB, SSIM %.4f", iteration, row["psnr"], row["ssim"])
    return IterationState(iteration, model, ckpt, pseudo, history + [row], global_step)


def _iter_dir(run_dir, i):
    if run_dir is None:
        return None
    d = Path(run_dir) / f"iter_{i}"
    (d / "val_renders").mkdir(parents=True, exist_ok=True)
    return d


def train_first_model(cfg: RunConfig, views: Views | None = None, run_dir=None) -> IterationState:
    """Teacher f^1: seen views only, loss L_r + lambda2 * L_c."""
    views = views or build_views(cfg)
    if len(views.seen) < 2:
        raise ConfigError("scene.num_views: need at least 2 seen views")
    t0 = time.perf_counter()
    it_dir = _iter_dir(run_dir, 1)
    steps = cfg.train.steps_per_iteration
    model, opt, _ = train_field(cfg, views.seen, [], views.unseen, steps, cfg.seed, [cfg.seed, 1],
                                None if it_dir is None else it_dir / "losses.csv")
    return _finish_iteration(cfg, views, model, opt, 1, it_dir, [], steps, [], t0)


def make_pseudo_views(cfg: RunConfig, teacher, views: Views, iteration: int) -> list[PseudoView]:
    n_seen, n_unseen = len(views.seen), len(views.unseen)
    ns = cfg.train.num_samples
    predicted = make_predicted_pseudo_views(teacher, views.unseen, ns, n_seen, iteration)
    warped = make_warped_pseudo_views(teacher, views.seen, views.unseen, ns, n_seen + n_unseen, iteration,
                                      cfg.pseudo.min_opacity)
    return warped + predicted


def run_iteration(state: IterationState, cfg: RunConfig, views: Views | None = None, run_dir=None) -> IterationState:
    """Student f^i trained from scratch on seen views plus pseudo-views from teacher f^(i-1)."""
    views = views or build_views(cfg)
    t0 = time.perf_counter()
    i = state.iteration + 1
    it_dir = _iter_dir(run_dir, i)
    teacher = state.model
    pseudo = make_pseudo_views(cfg, teacher, views, i)
    if it_dir is not None:
        save_pseudo_views(it_dir / "pseudo", pseudo)
    steps = cfg.train.steps_per_iteration
    # lambda1 schedule restarts with every student
    model, opt, _ = train_field(cfg, views.seen, pseudo, views.unseen, steps, cfg.seed, [cfg.seed, i],
                                None if it_dir is None else it_dir / "losses.csv",
                                init_from=teacher if cfg.train.warm_start else None,
                                step_offset=0)
    return _finish_iteration(cfg, views, model, opt, i, it_dir, pseudo, state.global_step + steps,
                             state.history, t0)


def _load_iteration(run_dir, i, history):
    it_dir = Path(run_dir) / f"iter_{i}"
    ckpt, metrics = it_dir / "checkpoint.pt", it_dir / "metrics.csv"
    if not (ckpt.exists() and metrics.exists()):
        return None
    model, _, extra = load_checkpoint(ckpt)
    with open(metrics) as f:
        rows = list(csv.DictReader(f))
    row = {"iteration": i, "psnr": float(np.mean([float(r["psnr"]) for r in rows])),
           "ssim": float(np.mean([float(r["ssim"]) for r in rows])), "wall_time": 0.0}
    return IterationState(i, model, ckpt, [], history + [row], int(extra.get("global_step", 0)))


def run_pipeline(cfg: RunConfig, root="run", resume: bool = True):
    """Iterate until validation PSNR stops improving by more than eps_conv or max_iterations.

    Returns ``(best_state, history)``; the best checkpoint is copied to
    ``<root>/<name>/best_checkpoint.pt``.
    """
    run_dir = Path(root) / cfg.name
    run_dir.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, run_dir / "config.yaml")
    views = build_views(cfg)

    state = _load_iteration(run_dir, 1, []) if resume else None
    if state is None:
        state = train_first_model(cfg, views, run_dir)
    best = state
    while state.iteration < cfg.max_iterations:
        nxt = _load_iteration(run_dir, state.iteration + 1, state.history) if resume else None
        if nxt is None:
            nxt = run_iteration(state, cfg, views, run_dir)
        improved = nxt.history[-1]["psnr"] > best.history[-1]["psnr"] + cfg.eps_conv
        if nxt.history[-1]["psnr"] > best.history[-1]["psnr"]:
            best = nxt
        state = nxt
        if not improved:
            break
    history = state.history
    best_so_far = -math.inf
    rows = []
    for h in history:
        best_so_far = max(best_so_far, h["psnr"])
        rows.append([h["iteration"], h["psnr"], h["ssim"], best_so_far, h["wall_time"]])
    _write_csv(run_dir / "report.csv", ["iteration", "psnr", "ssim", "best_psnr", "wall_time"], rows)
    if best.checkpoint is not None:
        shutil.copyfile(best.checkpoint, run_dir / "best_checkpoint.pt")
    return best, history


def train_baseline(cfg: RunConfig, views: Views, steps: int, seed_tag=0) -> UncertaintyField:
    """Seen-views-only model (teacher recipe) for a given step budget."""
    model, _, _ = train_field(cfg, views.seen, [], views.unseen, steps, cfg.seed, [cfg.seed, 1000 + seed_tag])
    return model
