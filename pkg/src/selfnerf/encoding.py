"""Frequency encodings for points, directions and conical frustums."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .geometry import DomainError


@dataclass(frozen=True)
class EncodingConfig:
    num_frequencies: int = 10  # position bands
    dir_frequencies: int = 4
    include_input: bool = False

    def __post_init__(self):
        if self.num_frequencies < 1 or self.dir_frequencies < 1:
            raise DomainError("encodings need at least one frequency band")

    @property
    def pos_dim(self) -> int:
        return 6 * self.num_frequencies

    @property
    def dir_dim(self) -> int:
        return 6 * self.dir_frequencies + (3 if self.include_input else 0)


@dataclass
class FrustumGaussian:
    mean: torch.Tensor  # (..., 3)
    var: torch.Tensor  # (..., 3) diagonal covariance


def _bands(x: torch.Tensor, num_bands: int) -> torch.Tensor:
    scales = 2.0 ** torch.arange(num_bands, dtype=x.dtype, device=x.device)
    return x[..., None, :] * scales[:, None]  # (..., L, 3)


def positional_encode(x: torch.Tensor, num_bands: int, include_input: bool = False) -> torch.Tensor:
    """Per band k: [sin(2^k x), cos(2^k x)] (6 values), bands concatenated in order."""
    y = _bands(x, num_bands)
    feat = torch.cat([torch.sin(y), torch.cos(y)], dim=-1).flatten(-2)
    if include_input:
        feat = torch.cat([x, feat], dim=-1)
    return feat


def frustum_gaussian(origins, directions, radius, t0, t1) -> FrustumGaussian:
    """Gaussian moments of the conical frustum between distances t0 and t1.

    ``origins``/``directions`` are (..., 3), ``t0``/``t1`` are (..., S); the
    result has shape (..., S, 3).  ``radius`` is the cone radius at unit
    distance.  Uses the numerically stable mid/half-width parameterization of
    mip-NeRF.
    """
    t0 = torch.as_tensor(t0)
    t1 = torch.as_tensor(t1)
    if torch.any(t1 <= t0):
        raise DomainError("frustum needs t1 > t0")
    radius = torch.as_tensor(radius, dtype=t0.dtype)
    if radius.dim() > 0:
        radius = radius[..., None]
    mu = (t0 + t1) / 2
    hw = (t1 - t0) / 2
    denom = 3 * mu**2 + hw**2
    t_mean = mu + 2 * mu * hw**2 / denom
    t_var = hw**2 / 3 - (4.0 / 15.0) * (hw**4 * (12 * mu**2 - hw**2)) / denom**2
    r_var = radius**2 * (mu**2 / 4 + (5.0 / 12.0) * hw**2 - (4.0 / 15.0) * hw**4 / denom)

    d = directions[..., None, :]
    mean = origins[..., None, :] + t_mean[..., None] * d
    d_sq = d**2
    null = 1 - d_sq / torch.sum(d_sq, dim=-1, keepdim=True)
    var = t_var[..., None] * d_sq + r_var[..., None] * null
    return FrustumGaussian(mean, var)


def integrated_positional_encode(g: FrustumGaussian, num_bands: int) -> torch.Tensor:
    """Expected [sin, cos] features under a diagonal Gaussian, same layout as positional_encode."""
    y = _bands(g.mean, num_bands)
    scales = 4.0 ** torch.arange(num_bands, dtype=g.var.dtype, device=g.var.device)
    damp = torch.exp(-0.5 * g.var[..., None, :] * scales[:, None])
    return torch.cat([torch.sin(y) * damp, torch.cos(y) * damp], dim=-1).flatten(-2)
