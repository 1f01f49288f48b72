"""Uncertainty-aware radiance field.

A shared trunk MLP over encoded positions feeds two heads:

* the radiance head (density ``sigma`` and view-dependent color ``rgb``),
  which reads only the position/direction features, and
* the uncertainty head (``sigma_u``, ``rgb_u``, ``mu_u``), which additionally
  reads a provenance embedding ``omega`` (2 rows: seen-or-warped / predicted)
  and a per-image embedding ``phi``.

Gradients are tracked by torch autograd; ``.grad`` on each parameter is the
gradient tape.
"""

from __future__ import annotations

import io
import math
from dataclasses import asdict, dataclass
from enum import IntEnum
from typing import NamedTuple

import torch
import torch.nn.functional as F
from torch import nn

from .encoding import EncodingConfig
from .geometry import DomainError

CHECKPOINT_FORMAT = "selfnerf-checkpoint"
CHECKPOINT_VERSION = 1


class Provenance(IntEnum):
    """Row index into the warping-embedding table."""

    SEEN_OR_WARPED = 0
    PREDICTED = 1


class UsageError(RuntimeError):
    pass


@dataclass
class FieldConfig:
    depth: int = 4
    width: int = 128
    dim_omega: int = 16
    dim_phi: int = 16
    num_images: int = 1
    pos_frequencies: int = 10
    dir_frequencies: int = 4
    beta_min: float = 0.01
    activation: str = "relu"
    # pre-activation offsets so a fresh field starts nearly empty of uncertainty
    sigma_u_offset: float = -2.0
    mu_u_offset: float = -2.0

    def __post_init__(self):
        if self.depth < 2:
            raise DomainError("trunk depth must be >= 2")
        if min(self.width, self.dim_omega, self.dim_phi, self.num_images) < 1:
            raise DomainError("widths, embedding dims and image count must be >= 1")
        if self.beta_min <= 0:
            raise DomainError("beta_min must be positive")
        if self.activation not in _ACTIVATIONS:
            raise DomainError(f"unknown activation {self.activation!r}")

    @property
    def encoding(self) -> EncodingConfig:
        return EncodingConfig(self.pos_frequencies, self.dir_frequencies)


_ACTIVATIONS = {"relu": F.relu, "softplus": F.softplus, "tanh": torch.tanh}


class FieldOutput(NamedTuple):
    sigma: torch.Tensor  # (...,)
    rgb: torch.Tensor  # (..., 3) in [0, 1]
    sigma_u: torch.Tensor  # (...,)
    rgb_u: torch.Tensor  # (..., 3) non-negative
    mu_u: torch.Tensor  # (...,) >= beta_min


class UncertaintyField(nn.Module):
    def __init__(self, cfg: FieldConfig):
        super().__init__()
        self.cfg = cfg
        enc = cfg.encoding
        W, half = cfg.width, max(cfg.width // 2, 1)
        self.trunk = nn.ModuleList(
            [nn.Linear(enc.pos_dim, W)] + [nn.Linear(W, W) for _ in range(cfg.depth - 1)])
        self.sigma_out = nn.Linear(W, 1)
        self.bottleneck = nn.Linear(W, W)
        self.color_hidden = nn.Linear(W + enc.dir_dim, half)
        self.color_out = nn.Linear(half, 3)
        self.omega = nn.Parameter(torch.zeros(2, cfg.dim_omega))
        self.phi = nn.Parameter(torch.zeros(cfg.num_images, cfg.dim_phi))
        self.unc_hidden = nn.Linear(W + cfg.dim_omega + cfg.dim_phi, half)
        self.unc_out = nn.Linear(half, 5)

    def linears(self) -> list[nn.Linear]:
        return [*self.trunk, self.sigma_out, self.bottleneck, self.color_hidden,
                self.color_out, self.unc_hidden, self.unc_out]

    def forward(self, pos_feat, dir_feat, omega_id, phi_id) -> FieldOutput:
        act = _ACTIVATIONS[self.cfg.activation]
        omega_id = torch.as_tensor(omega_id, dtype=torch.long)
        phi_id = torch.as_tensor(phi_id, dtype=torch.long)
        if phi_id.numel() and (phi_id.min() < 0 or phi_id.max() >= self.phi.shape[0]):
            raise DomainError(f"phi id out of range [0, {self.phi.shape[0]})")
        if omega_id.numel() and (omega_id.min() < 0 or omega_id.max() > 1):
            raise DomainError("omega id must be SEEN_OR_WARPED (0) or PREDICTED (1)")

        h = pos_feat
        for layer in self.trunk:
            h = act(layer(h))
        sigma = F.softplus(self.sigma_out(h)[..., 0])
        feat = self.bottleneck(h)
        dirs = dir_feat.expand(*h.shape[:-1], dir_feat.shape[-1])
        rgb = torch.sigmoid(self.color_out(act(self.color_hidden(torch.cat([feat, dirs], -1)))))

        lead = h.shape[:-1]
        # ids are per ray (or scalar); broadcast over the sample axis
        w = self.omega[omega_id]
        p = self.phi[phi_id]
        while w.dim() < h.dim():
            w = w.unsqueeze(-2)
        while p.dim() < h.dim():
            p = p.unsqueeze(-2)
        w = w.expand(*lead, w.shape[-1])
        p = p.expand(*lead, p.shape[-1])
        u = self.unc_out(act(self.unc_hidden(torch.cat([h, w, p], -1))))
        sigma_u = F.softplus(u[..., 0] + self.cfg.sigma_u_offset)
        rgb_u = F.softplus(u[..., 1:4])
        mu_u = F.softplus(u[..., 4] + self.cfg.mu_u_offset) + self.cfg.beta_min
        return FieldOutput(sigma, rgb, sigma_u, rgb_u, mu_u)


def init_params(cfg: FieldConfig, seed: int, dtype=torch.float32) -> UncertaintyField:
    """Fresh field with fan-in scaled uniform weights (variance 1/fan_in), zero biases."""
    model = UncertaintyField(cfg)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for lin in model.linears():
            bound = math.sqrt(3.0 / lin.in_features)
            lin.weight.copy_(torch.rand(lin.weight.shape, generator=gen) * 2 * bound - bound)
            lin.bias.zero_()
        model.omega.copy_(torch.randn(model.omega.shape, generator=gen) * 0.01)
        model.phi.copy_(torch.randn(model.phi.shape, generator=gen) * 0.01)
    return model.to(dtype)


def evaluate(model: UncertaintyField, pos_feat, dir_feat, omega_id, phi_id) -> FieldOutput:
    return model(pos_feat, dir_feat, omega_id, phi_id)


def zero_tape(model: nn.Module) -> None:
    for p in model.parameters():
        p.grad = None


def backward(outputs, upstream) -> None:
    """Accumulate reverse-mode gradients of ``outputs`` weighted by ``upstream`` into ``.grad``."""
    outputs = list(outputs) if isinstance(outputs, (list, tuple)) else [outputs]
    upstream = list(upstream) if isinstance(upstream, (list, tuple)) else [upstream]
    pairs = [(o, g) for o, g in zip(outputs, upstream) if g is not None]
    if any(o.grad_fn is None and not o.requires_grad for o, _ in pairs):
        raise UsageError("no cached forward graph: call evaluate with autograd enabled first")
    torch.autograd.backward([o for o, _ in pairs], [torch.as_tensor(g, dtype=o.dtype) for o, g in pairs])


def make_optimizer(model: nn.Module, lr: float = 5e-4) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=lr, betas=(0.9, 0.999), eps=1e-8)


def adam_step(optimizer: torch.optim.Optimizer, lr: float | None = None) -> None:
    """One bias-corrected Adam update from the accumulated ``.grad`` values."""
    if lr is not None:
        for group in optimizer.param_groups:
            group["lr"] = lr
    optimizer.step()


def save_checkpoint(path, model: UncertaintyField, optimizer=None, extra=None) -> None:
    blob = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.cfg),
        "dtype": str(next(model.parameters()).dtype),
        "params": model.state_dict(),
        "optimizer": None if optimizer is None else optimizer.state_dict(),
        "extra": extra or {},
    }
    buf = io.BytesIO()
    torch.save(blob, buf)
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path, with_optimizer: bool = False):
    """Returns ``(model, optimizer_or_None, extra)``."""
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise UsageError(f"{path}: not a checkpoint file")
    if blob["version"] != CHECKPOINT_VERSION:
        raise UsageError(f"{path}: unsupported checkpoint version {blob['version']}")
    cfg = FieldConfig(**blob["config"])
    dtype = getattr(torch, blob["dtype"].split(".")[-1])
    model = UncertaintyField(cfg).to(dtype)
    model.load_state_dict(blob["params"])
    opt = None
    if with_optimizer and blob["optimizer"] is not None:
        opt = make_optimizer(model)
        opt.load_state_dict(blob["optimizer"])
    return model, opt, blob["extra"]
