"""Pseudo-views at unseen poses: teacher renders and depth-warped seen views."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .field import Provenance
from .geometry import Camera, DepthMap, DomainError, forward_warp, look_at, merge_warped
from .render import render_image, write_image


class Kind(str, Enum):
    WARPED = "warped"
    PREDICTED = "predicted"


OMEGA_FOR_KIND = {Kind.WARPED: Provenance.SEEN_OR_WARPED, Kind.PREDICTED: Provenance.PREDICTED}


@dataclass
class PseudoView:
    camera: Camera
    image: np.ndarray  # (H, W, 3) float
    mask: np.ndarray  # (H, W) bool
    kind: Kind
    iteration: int
    phi_id: int

    @property
    def omega_id(self) -> Provenance:
        return OMEGA_FOR_KIND[self.kind]


def _same_pose(a: Camera, b: Camera, tol=1e-6) -> bool:
    return np.abs(a.R - b.R).max() < tol and np.abs(a.t - b.t).max() < tol


def interpolate_pose(a: Camera, b: Camera, s: float, keep_radius: bool = True) -> Camera:
    """Rotation slerp and translation lerp between two cameras.

    With ``keep_radius`` the interpolated center is rescaled to the lerp of
    the endpoint distances from the origin, so a path between two orbiting
    cameras stays on the orbit instead of cutting through the scene.
    """
    rots = Rotation.from_matrix(np.stack([a.R, b.R]))
    R = Slerp([0.0, 1.0], rots)([s]).as_matrix()[0]
    t = (1 - s) * a.t + s * b.t
    if keep_radius:
        r = (1 - s) * np.linalg.norm(a.t) + s * np.linalg.norm(b.t)
        n = np.linalg.norm(t)
        if n > 1e-9:
            t = t * (r / n)
    return a.with_pose(R, t)


def sample_unseen_poses(seen: list[Camera], count: int, policy: str = "interpolate", seed: int = 0,
                        keep_radius: bool = True) -> list[Camera]:
    """Cameras at novel viewpoints, never duplicating a seen pose."""
    if count < 1:
        raise DomainError("need at least one unseen pose")
    if not seen:
        raise DomainError("no seen cameras")
    rng = np.random.default_rng(seed)
    out: list[Camera] = []
    if policy == "interpolate":
        if len(seen) < 2:
            raise DomainError("interpolation needs at least 2 seen cameras")
        centers = np.stack([c.t for c in seen])
        # pair each camera with its nearest neighbours first
        dist = np.linalg.norm(centers[:, None] - centers[None], axis=-1)
        pairs = sorted({(min(i, j), max(i, j)) for i in range(len(seen))
                        for j in np.argsort(dist[i])[1:3] if j != i})
        attempts = 0
        while len(out) < count:
            i, j = pairs[len(out) % len(pairs)] if attempts < 10 * count else rng.choice(len(seen), 2, replace=False)
            cam = interpolate_pose(seen[i], seen[j], float(rng.uniform(0.2, 0.8)), keep_radius)
            attempts += 1
            if not any(_same_pose(cam, c) for c in seen + out):
                out.append(cam)
        return out
    if policy == "hemisphere":
        centers = np.stack([c.t for c in seen])
        centroid = np.zeros(3)
        radius = float(np.mean(np.linalg.norm(centers - centroid, axis=1)))
        while len(out) < count:
            az = rng.uniform(0, 2 * np.pi)
            el = np.arcsin(rng.uniform(0.05, 0.95))
            eye = centroid + radius * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
            R, t = look_at(eye, centroid)
            cam = seen[0].with_pose(R, t)
            if not any(_same_pose(cam, c) for c in seen + out):
                out.append(cam)
        return out
    raise DomainError(f"unknown unseen-pose policy {policy!r}")


def make_predicted_pseudo_views(model, poses, num_samples=64, first_phi=0, iteration=0):
    views = []
    for k, cam in enumerate(poses):
        rgb, _ = render_image(model, cam, num_samples)
        views.append(PseudoView(cam, rgb, np.ones(rgb.shape[:2], dtype=bool), Kind.PREDICTED,
                                iteration, first_phi + k))
    return views


def warp_seen_views(seen, depths: list[DepthMap], poses, first_phi=0, iteration=0):
    """Warp every seen (camera, image) into every pose; merge sources by nearest depth."""
    views = []
    for k, target in enumerate(poses):
        warps = [forward_warp(img, depth, cam, target, source_id=s)
                 for s, ((cam, img), depth) in enumerate(zip(seen, depths))]
        merged = merge_warped(warps)
        views.append(PseudoView(target, merged.image, merged.mask, Kind.WARPED, iteration, first_phi + k))
    return views


def make_warped_pseudo_views(model, seen, poses, num_samples=64, first_phi=0, iteration=0,
                             min_opacity=0.5):
    depths = [render_image(model, cam, num_samples, min_opacity=min_opacity)[1] for cam, _ in seen]
    return warp_seen_views(seen, depths, poses, first_phi, iteration)


def save_pseudo_views(directory, views: list[PseudoView]) -> Path:
    """Images (.npy exact + .png preview), masks and a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for v in views:
        stem = f"{v.kind.value}_{v.phi_id:04d}"
        np.save(directory / f"{stem}.npy", v.image.astype(np.float32))
        np.save(directory / f"{stem}_mask.npy", v.mask)
        write_image(directory / f"{stem}.png", v.image)
        write_image(directory / f"{stem}_mask.png", v.mask[..., None].repeat(3, -1).astype(float))
        entries.append({
            "file": stem,
            "kind": v.kind.value,
            "phi_id": v.phi_id,
            "omega_id": int(v.omega_id),
            "iteration": v.iteration,
            "K": v.camera.K.tolist(),
            "c2w": v.camera.c2w().tolist(),
            "width": v.camera.width,
            "height": v.camera.height,
            "near": v.camera.near,
            "far": v.camera.far,
        })
    path = directory / "manifest.json"
    path.write_text(json.dumps({"views": entries}, indent=1))
    return path


def load_pseudo_views(directory) -> list[PseudoView]:
    directory = Path(directory)
    meta = json.loads((directory / "manifest.json").read_text())
    views = []
    for e in meta["views"]:
        c2w = np.asarray(e["c2w"])
        cam = Camera(np.asarray(e["K"]), c2w[:3, :3], c2w[:3, 3], e["width"], e["height"], e["near"], e["far"])
        img = np.load(directory / f"{e['file']}.npy").astype(np.float64)
        mask = np.load(directory / f"{e['file']}_mask.npy")
        views.append(PseudoView(cam, img, mask, Kind(e["kind"]), e["iteration"], e["phi_id"]))
    return views
