"""1-D self-training experiment: does a student trained on pseudo-labels beat its teacher?

The target ``F(x) = sin(x - 0.1) + sin(x) + sin(x + 0.1)`` is fitted from a
handful of labeled points.  The teacher ``f1`` labels unlabeled positions;
"warped" labels are simulated as the average of teacher and truth, the rest
are the teacher's raw predictions.  The student ``f2`` is then trained from
the same initialization on everything.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn


@dataclass
class ToyConfig:
    labeled: int = 4
    warped: int = 8
    predicted: int = 12
    width: int = 100
    layers: int = 3
    x_min: float = -math.pi
    x_max: float = math.pi
    steps: int = 2000
    lr: float = 1e-2
    grid: int = 1000
    activation: str = "relu"

    def __post_init__(self):
        if min(self.labeled, self.warped, self.predicted) < 0 or self.width < 1 or self.layers < 2:
            raise ValueError("invalid toy configuration")


def target_function(x):
    return np.sin(x - 0.1) + np.sin(x) + np.sin(x + 0.1)


def make_net(cfg: ToyConfig, seed: int) -> nn.Sequential:
    act = {"relu": nn.ReLU, "tanh": nn.Tanh}[cfg.activation]
    # default layer init draws from the global generator; keep the caller's stream untouched
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        mods: list[nn.Module] = [nn.Linear(1, cfg.width), act()]
        for _ in range(cfg.layers - 2):
            mods += [nn.Linear(cfg.width, cfg.width), act()]
        mods.append(nn.Linear(cfg.width, 1))
    return nn.Sequential(*mods).double()


def fit(cfg: ToyConfig, x, y, seed: int) -> nn.Sequential:
    net = make_net(cfg, seed)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    xt = torch.as_tensor(np.asarray(x, dtype=np.float64)).reshape(-1, 1)
    yt = torch.as_tensor(np.asarray(y, dtype=np.float64)).reshape(-1, 1)
    for _ in range(cfg.steps):
        opt.zero_grad()
        loss = torch.mean((net(xt) - yt) ** 2)
        loss.backward()
        opt.step()
    return net


@torch.no_grad()
def predict(net, x) -> np.ndarray:
    return net(torch.as_tensor(np.asarray(x, dtype=np.float64)).reshape(-1, 1)).numpy().ravel()


def pseudo_labels(teacher_pred, truth, warped_mask):
    """Predicted labels copy the teacher; warped labels average teacher and truth."""
    return np.where(warped_mask, 0.5 * (teacher_pred + truth), teacher_pred)


def run_basic_step(cfg: ToyConfig, seed: int, oracle_teacher: bool = False, return_curves: bool = False):
    rng = np.random.default_rng(seed)
    x_l = np.sort(rng.uniform(cfg.x_min, cfg.x_max, cfg.labeled))
    y_l = target_function(x_l)
    n_u = cfg.warped + cfg.predicted
    x_u = np.linspace(cfg.x_min, cfg.x_max, n_u + 2)[1:-1] if n_u else np.zeros(0)
    warped_mask = np.zeros(n_u, dtype=bool)
    warped_mask[rng.permutation(n_u)[: cfg.warped]] = True

    f1 = fit(cfg, x_l, y_l, seed)
    teacher = target_function(x_u) if oracle_teacher else predict(f1, x_u)
    y_u = pseudo_labels(teacher, target_function(x_u), warped_mask)
    f2 = fit(cfg, np.concatenate([x_l, x_u]), np.concatenate([y_l, y_u]), seed)

    grid = np.linspace(cfg.x_min, cfg.x_max, cfg.grid)
    truth = target_function(grid)
    p1, p2 = predict(f1, grid), predict(f2, grid)
    report = {"seed": seed,
              "mae_f1": float(np.mean(np.abs(p1 - truth))),
              "mae_f2": float(np.mean(np.abs(p2 - truth)))}
    if return_curves:
        report["curves"] = {"x": grid, "truth": truth, "f1": p1, "f2": p2}
    return report


def run_seeds(cfg: ToyConfig, seeds, out_csv=None, curves_csv=None) -> list[dict]:
    reports = [run_basic_step(cfg, s, return_curves=curves_csv is not None) for s in seeds]
    if out_csv is not None:
        with open(out_csv, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["seed", "mae_f1", "mae_f2"])
            for r in reports:
                w.writerow([r["seed"], f"{r['mae_f1']:.10g}", f"{r['mae_f2']:.10g}"])
    if curves_csv is not None and reports:
        with open(curves_csv, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["seed", "x", "truth", "f1", "f2"])
            for r in reports:
                c = r["curves"]
                for row in zip(c["x"], c["truth"], c["f1"], c["f2"]):
                    w.writerow([r["seed"], *(f"{v:.10g}" for v in row)])
    return reports
