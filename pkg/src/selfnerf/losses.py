"""Training objectives: uncertainty-weighted NLL, pseudo-view loss, cone entropy."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .render import RenderedRays


@dataclass
class LossWeights:
    lambda1_initial: float = 1.0  # pseudo-view weight at step 0
    lambda2: float = 0.01  # cone entropy
    lambda_u: float = 0.01  # uncertainty density penalty
    decay_interval: int = 10000
    decay_factor: float = 2.0
    # uncertainty density penalty on seen rays; without it the per-image uncertain
    # color can memorize the few seen views in place of the radiance field
    lambda_u_seen: float = 1.0

    def __post_init__(self):
        if min(self.lambda1_initial, self.lambda2, self.lambda_u, self.lambda_u_seen) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.decay_interval <= 0:
            raise ValueError("decay_interval must be positive")

    def lambda1(self, step: int) -> float:
        return self.lambda1_initial * self.decay_factor ** (-(int(step) // self.decay_interval))


@dataclass
class RayBatchLoss:
    rgb: torch.Tensor  # L_r
    pseudo: torch.Tensor  # L_p
    entropy: torch.Tensor  # L_c
    total: torch.Tensor
    lambda1: float


def nll_per_ray(target, rgb_pred, var_u, beta_min=0.01):
    """0.5*log v^2 + r^2 / (2 v^2), r^2 the channel-mean squared residual, v^2 = max(V^u, beta_min^2)."""
    v2 = torch.clamp(var_u, min=beta_min**2)
    r2 = torch.mean((target - rgb_pred) ** 2, dim=-1)
    return 0.5 * torch.log(v2) + r2 / (2.0 * v2)


def nll_rgb_loss(target, rendered: RenderedRays, beta_min=0.01):
    return torch.mean(nll_per_ray(target, rendered.rgb_pred, rendered.var_u, beta_min))


def pseudo_loss(target, rendered: RenderedRays, lambda_u, beta_min=0.01):
    nll = nll_per_ray(target, rendered.rgb_pred, rendered.var_u, beta_min)
    reg = lambda_u * torch.mean(rendered.sigma_u, dim=-1)
    return torch.mean(nll + reg)


def entropy_per_ray(alphas, eps=1e-8):
    """Shannon entropy of alphas normalized along each ray; 0 for empty rays."""
    total = torch.sum(alphas, dim=-1, keepdim=True)
    empty = total[..., 0] < eps
    q = alphas / torch.clamp(total, min=eps)
    # q log q -> 0 as q -> 0
    plogp = torch.where(q > 0, q * torch.log(torch.clamp(q, min=1e-30)), torch.zeros_like(q))
    ent = -torch.sum(plogp, dim=-1)
    return torch.where(empty, torch.zeros_like(ent), ent)


def cone_entropy_loss(alphas, eps=1e-8):
    return torch.mean(entropy_per_ray(alphas, eps))


def total_loss(seen: RenderedRays, seen_target, weights: LossWeights, step: int,
               pseudo: RenderedRays | None = None, pseudo_target=None,
               extra: RenderedRays | None = None, beta_min=0.01) -> RayBatchLoss:
    """L = L_r + lambda1(step) * L_p + lambda2 * L_c.

    The seen term carries its own uncertainty density penalty,
    ``lambda_u_seen * mean(sigma_u)``.

    The entropy term averages over every ray in the step: seen, pseudo and
    the target-free ``extra`` rays cast from unseen poses.
    """
    l_r = nll_rgb_loss(seen_target, seen, beta_min)
    if weights.lambda_u_seen:
        l_r = l_r + weights.lambda_u_seen * torch.mean(seen.sigma_u)
    zero = torch.zeros((), dtype=l_r.dtype)
    l_p = pseudo_loss(pseudo_target, pseudo, weights.lambda_u, beta_min) if pseudo is not None else zero
    alphas = [seen.alphas] + [r.alphas for r in (pseudo, extra) if r is not None]
    l_c = cone_entropy_loss(torch.cat(alphas, dim=0))
    lam1 = weights.lambda1(step)
    total = l_r + lam1 * l_p + weights.lambda2 * l_c
    return RayBatchLoss(l_r, l_p, l_c, total, lam1)
