"""Stratified cone sampling and quadrature compositing.

Every composite uses standard emission-absorption weights
``w_i = T_i * (1 - exp(-sigma_i * delta_i))`` with
``T_i = exp(-sum_{j<i} sigma_j * delta_j)``.  The last interval runs to the
far bound.  Training renders use ``rgb_pred = rgb + rgb_u``; evaluation
renders use the radiance part only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .encoding import frustum_gaussian, integrated_positional_encode, positional_encode
from .field import FieldOutput, Provenance, UncertaintyField
from .geometry import Camera, DepthMap, DomainError, camera_rays, generate_ray

DEPTH_MAGIC = b"SNDEPTH1"


@dataclass
class RenderedRays:
    rgb: torch.Tensor  # radiance color C^r, (R, 3)
    rgb_u: torch.Tensor  # uncertain color C^u
    rgb_pred: torch.Tensor  # C^p = C^r + C^u
    var_u: torch.Tensor  # V^u, (R,)
    depth: torch.Tensor  # (R,)
    opacity: torch.Tensor  # sum of radiance weights, (R,)
    no_surface: torch.Tensor  # bool, (R,)
    alphas: torch.Tensor  # (R, N)
    trans: torch.Tensor  # (R, N)
    weights: torch.Tensor  # (R, N)
    sigma_u: torch.Tensor  # (R, N)
    t: torch.Tensor  # (R, N)
    deltas: torch.Tensor  # (R, N)

    def take(self, index) -> "RenderedRays":
        """Rays selected by ``index`` along the batch axis."""
        return RenderedRays(*(getattr(self, f.name)[index] for f in fields(self)))


def sample_stratified(num_rays, num_samples, near, far, generator=None, dtype=torch.float32):
    """One distance per equal-width bin of [near, far].

    Without a generator the samples sit at bin centers.  Returns ``(t, deltas)``,
    each (R, N); ``deltas[:, -1]`` reaches the far bound.
    """
    if num_samples < 2:
        raise DomainError("need at least 2 samples per ray")
    near = torch.as_tensor(near, dtype=dtype).reshape(-1, 1).expand(num_rays, 1)
    far = torch.as_tensor(far, dtype=dtype).reshape(-1, 1).expand(num_rays, 1)
    if generator is None:
        u = torch.full((num_rays, num_samples), 0.5, dtype=dtype)
    else:
        u = torch.rand((num_rays, num_samples), generator=generator, dtype=dtype)
    bins = torch.arange(num_samples, dtype=dtype)
    t = near + (far - near) * (bins + u) / num_samples
    ends = torch.cat([t[:, 1:], far], dim=1)
    # a draw at the top of the last bin can round onto the far bound in float32
    return t, torch.clamp(ends - t, min=1e-6)


def compositing_weights(sigma, deltas):
    """Returns ``(alphas, transmittances, weights)`` for densities of shape (R, N)."""
    tau = sigma * deltas
    alphas = 1.0 - torch.exp(-tau)
    # shift rather than subtract so transmittance stays monotone in floating point
    excl = torch.cumsum(torch.cat([torch.zeros_like(tau[..., :1]), tau[..., :-1]], dim=-1), dim=-1)
    trans = torch.exp(-excl)
    return alphas, trans, trans * alphas


def composite_radiance(sigma, rgb, deltas):
    alphas, trans, w = compositing_weights(sigma, deltas)
    return torch.sum(w[..., None] * rgb, dim=-2), alphas, trans


def composite_uncertain(sigma_u, rgb_u, deltas):
    return composite_radiance(sigma_u, rgb_u, deltas)[0]


def composite_variance(sigma_u, mu_u, deltas):
    _, _, w = compositing_weights(sigma_u, deltas)
    return torch.sum(w * mu_u, dim=-1)


def composite_depth(sigma, t, deltas, min_opacity=1e-6):
    """Expected surface distance among hit samples; ``(depth, no_surface)``.

    Normalized by the accumulated opacity so any hit ray reports a depth
    inside [near, far].  Rays with opacity below ``min_opacity`` get depth 0
    and the no-surface flag.
    """
    _, _, w = compositing_weights(sigma, deltas)
    acc = torch.sum(w, dim=-1)
    no_surface = acc < min_opacity
    depth = torch.sum(w * t, dim=-1) / torch.clamp(acc, min=min_opacity)
    return torch.where(no_surface, torch.zeros_like(depth), depth), no_surface


def encode_samples(origins, dirs, radius, t, deltas, cfg):
    g = frustum_gaussian(origins, dirs, radius, t, t + deltas)
    pos = integrated_positional_encode(g, cfg.pos_frequencies)
    dir_feat = positional_encode(dirs, cfg.dir_frequencies)[..., None, :]
    return pos, dir_feat


def composite_all(out: FieldOutput, t, deltas) -> RenderedRays:
    rgb, alphas, trans = composite_radiance(out.sigma, out.rgb, deltas)
    rgb_u = composite_uncertain(out.sigma_u, out.rgb_u, deltas)
    var_u = composite_variance(out.sigma_u, out.mu_u, deltas)
    depth, no_surface = composite_depth(out.sigma, t, deltas)
    weights = trans * alphas
    return RenderedRays(rgb, rgb_u, rgb + rgb_u, var_u, depth, weights.sum(-1), no_surface,
                        alphas, trans, weights, out.sigma_u, t, deltas)


def render_rays(model: UncertaintyField, origins, dirs, radius, near, far,
                omega_id=Provenance.SEEN_OR_WARPED, phi_id=0, num_samples=64,
                generator=None) -> RenderedRays:
    dtype = next(model.parameters()).dtype
    origins = torch.as_tensor(origins, dtype=dtype)
    dirs = torch.as_tensor(dirs, dtype=dtype)
    t, deltas = sample_stratified(len(origins), num_samples, near, far, generator, dtype)
    pos, dir_feat = encode_samples(origins, dirs, radius, t, deltas, model.cfg)
    out = model(pos, dir_feat, omega_id, phi_id)
    return composite_all(out, t, deltas)


def render_pixel(model, camera: Camera, pixel, omega_id=Provenance.SEEN_OR_WARPED, phi_id=0,
                 num_samples=64, seed=None) -> RenderedRays:
    ray = generate_ray(camera, pixel)
    gen = None if seed is None else torch.Generator().manual_seed(int(seed))
    return render_rays(model, ray.origin[None], ray.direction[None], ray.pixel_radius,
                       camera.near, camera.far, omega_id, phi_id, num_samples, gen)


@torch.no_grad()
def render_image(model, camera: Camera, num_samples=64, chunk=4096, min_opacity=0.5):
    """Evaluation-mode render: radiance color (H, W, 3) and a DepthMap.

    Pixels whose accumulated opacity is below ``min_opacity`` are marked
    invalid in the depth map.
    """
    origins, dirs, radius = camera_rays(camera)
    colors, depths, opac = [], [], []
    for s in range(0, len(origins), chunk):
        r = render_rays(model, origins[s:s + chunk], dirs[s:s + chunk], radius,
                        camera.near, camera.far, num_samples=num_samples)
        colors.append(r.rgb)
        depths.append(r.depth)
        opac.append(r.opacity)
    shape = (camera.height, camera.width)
    rgb = torch.cat(colors).reshape(*shape, 3).double().numpy()
    depth = torch.cat(depths).reshape(shape).double().numpy()
    valid = torch.cat(opac).reshape(shape).numpy() >= min_opacity
    return rgb, DepthMap(np.where(valid, depth, 0.0), valid)


def to_uint8(img) -> np.ndarray:
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(path, img) -> None:
    """8-bit PNG or binary PPM (by suffix), values clamped to [0, 1]."""
    path = Path(path)
    data = to_uint8(img)
    if path.suffix.lower() == ".ppm":
        h, w = data.shape[:2]
        with open(path, "wb") as f:
            f.write(f"P6\n{w} {h}\n255\n".encode())
            f.write(np.ascontiguousarray(data[..., :3]).tobytes())
    else:
        Image.fromarray(data).save(path)


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_depth(path, depth, near, far) -> None:
    """Raw little-endian float32 depth: magic, uint32 width, uint32 height, f32 near, f32 far, data."""
    depth = np.asarray(depth, dtype="<f4")
    h, w = depth.shape
    with open(path, "wb") as f:
        f.write(DEPTH_MAGIC + struct.pack("<IIff", w, h, near, far))
        f.write(depth.tobytes())


def read_depth(path):
    """Returns ``(depth, near, far)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != DEPTH_MAGIC:
        raise DomainError(f"{path}: not a depth file")
    w, h, near, far = struct.unpack("<IIff", raw[8:24])
    depth = np.frombuffer(raw[24:], dtype="<f4").reshape(h, w).copy()
    return depth, float(near), float(far)
