"""Scene datasets: NeRF-synthetic loading/writing and closed-form analytic scenes.

Analytic scenes provide exact per-ray color and depth, used as ground truth
for the renderer and the warping code.  Depth is the hit-probability
weighted mean distance, matching the renderer's convention.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import Camera, camera_rays, generate_ray, look_at


class DatasetError(ValueError):
    pass


@dataclass
class SceneDataset:
    cameras: list[Camera]
    images: list[np.ndarray]
    splits: list[str]
    near: float = 2.0
    far: float = 6.0
    name: str = "scene"

    def __post_init__(self):
        if len(self.cameras) != len(self.images) or len(self.cameras) != len(self.splits):
            raise DatasetError("camera, image and split counts differ")

    def __len__(self):
        return len(self.cameras)

    def subset(self, indices, split=None) -> "SceneDataset":
        return SceneDataset([self.cameras[i] for i in indices], [self.images[i] for i in indices],
                            [split or self.splits[i] for i in indices], self.near, self.far, self.name)


# ---------------------------------------------------------------- NeRF synthetic

def _parse_error(path, msg, line=None):
    where = f"{path}:{line}" if line is not None else str(path)
    return DatasetError(f"{where}: {msg}")


def load_nerf_synthetic(root, split="train", near=2.0, far=6.0) -> SceneDataset:
    """Read ``transforms_<split>.json`` and its PNG frames (alpha composited onto white)."""
    root = Path(root)
    path = root / f"transforms_{split}.json"
    if not path.exists():
        raise DatasetError(f"{path}: file not found")
    try:
        meta = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise _parse_error(path, e.msg, e.lineno) from None
    if "camera_angle_x" not in meta:
        raise _parse_error(path, "missing key 'camera_angle_x'")
    angle = float(meta["camera_angle_x"])
    cams, imgs = [], []
    for k, frame in enumerate(meta.get("frames", [])):
        name = frame.get("file_path", f"frame {k}")
        mat = np.asarray(frame.get("transform_matrix"), dtype=np.float64)
        if mat.shape != (4, 4):
            raise _parse_error(path, f"frame {k} ({name}): transform_matrix must be 4x4, got shape {mat.shape}")
        img_path = root / name
        if img_path.suffix == "":
            img_path = img_path.with_suffix(".png")
        if not img_path.exists():
            raise DatasetError(f"{path}: frame {k} ({name}): image {img_path} not found")
        with Image.open(img_path) as im:
            rgba = np.asarray(im.convert("RGBA"), dtype=np.float64) / 255.0
        rgb = rgba[..., :3] * rgba[..., 3:] + (1.0 - rgba[..., 3:])
        h, w = rgb.shape[:2]
        focal = 0.5 * w / math.tan(0.5 * angle)
        cams.append(Camera.from_focal(focal, w, h, mat, near, far))
        imgs.append(rgb)
    return SceneDataset(cams, imgs, [split] * len(cams), near, far, root.name)


def write_nerf_synthetic(root, dataset: SceneDataset, split="train") -> Path:
    """Write a dataset in NeRF-synthetic layout (opaque RGBA PNGs); used for fixtures."""
    root = Path(root)
    (root / split).mkdir(parents=True, exist_ok=True)
    if not dataset.cameras:
        angle = 0.6911112
    else:
        c = dataset.cameras[0]
        angle = 2.0 * math.atan(0.5 * c.width / c.focal)
    frames = []
    for i, (cam, img) in enumerate(zip(dataset.cameras, dataset.images)):
        rel = f"./{split}/r_{i}"
        rgb = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)
        alpha = np.full(rgb.shape[:2] + (1,), 255, dtype=np.uint8)
        Image.fromarray(np.concatenate([rgb, alpha], axis=-1)).save(root / f"{rel}.png")
        frames.append({"file_path": rel, "transform_matrix": cam.c2w().tolist()})
    out = root / f"transforms_{split}.json"
    out.write_text(json.dumps({"camera_angle_x": angle, "frames": frames}, indent=2))
    return out


def select_few_shot(ds: SceneDataset, k: int, seed: int) -> tuple[SceneDataset, SceneDataset]:
    """Deterministic k-view subset and the remaining views (both in original order)."""
    if not 0 <= k <= len(ds):
        raise DatasetError(f"cannot select {k} of {len(ds)} views")
    chosen = np.sort(np.random.default_rng(seed).choice(len(ds), size=k, replace=False))
    rest = np.setdiff1d(np.arange(len(ds)), chosen)
    return ds.subset(chosen.tolist()), ds.subset(rest.tolist(), "test")


# ---------------------------------------------------------------- analytic scenes

@dataclass
class Homogeneous:
    """Constant density and color filling every ray between near and far."""

    sigma: float = 1.0
    color: tuple = (1.0, 1.0, 1.0)


@dataclass
class Box:
    lo: tuple
    hi: tuple
    color: tuple
    sigma: float = 50.0


@dataclass
class BoxScene:
    """Non-overlapping axis-aligned emissive boxes on a black background."""

    boxes: list[Box] = field(default_factory=list)


@dataclass
class TexturedPlane:
    """Opaque plane ``z = height`` with a smooth sinusoidal texture."""

    height: float = 0.0
    frequency: float = 1.5
    background: tuple = (0.0, 0.0, 0.0)

    def texture(self, xy):
        x, y = xy[..., 0], xy[..., 1]
        f = self.frequency
        return np.stack([0.5 + 0.4 * np.sin(f * x),
                         0.5 + 0.4 * np.cos(f * y),
                         0.5 + 0.3 * np.sin(f * (x + y) * 0.7)], axis=-1)


def _segment(sigma, a, b, trans):
    """Color weight, depth numerator and exit transmittance of a constant-density segment [a, b]."""
    L = b - a
    e = np.exp(-sigma * L)
    hit = trans * (1.0 - e)
    if np.isscalar(sigma) and sigma == 0:
        return hit, np.zeros_like(hit), trans
    # integral of T(t) sigma t over [a, b]
    dnum = trans * (a * (1.0 - e) - L * e + (1.0 - e) / sigma)
    return hit, dnum, trans * e


def render_analytic_rays(scene, origins, dirs, near, far):
    """Exact ``(rgb (n,3), depth (n,), hit (n,) bool)`` for unit-direction rays."""
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = len(origins)
    if isinstance(scene, Homogeneous):
        a = np.full(n, float(near))
        b = np.full(n, float(far))
        w, dnum, _ = _segment(float(scene.sigma), a, b, np.ones(n))
        rgb = w[:, None] * np.asarray(scene.color, dtype=np.float64)
        hit = w > 0
        depth = np.where(hit, dnum / np.where(hit, w, 1.0), 0.0)
        return rgb, depth, hit
    if isinstance(scene, BoxScene):
        segs = []
        for box in scene.boxes:
            lo, hi = np.asarray(box.lo, float), np.asarray(box.hi, float)
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = 1.0 / dirs
                t1 = (lo - origins) * inv
                t2 = (hi - origins) * inv
            tmin = np.nanmax(np.minimum(t1, t2), axis=1)
            tmax = np.nanmin(np.maximum(t1, t2), axis=1)
            tmin = np.maximum(tmin, near)
            tmax = np.minimum(tmax, far)
            segs.append((tmin, tmax, box))
        rgb = np.zeros((n, 3))
        dnum = np.zeros(n)
        wsum = np.zeros(n)
        trans = np.ones(n)
        entry = np.stack([s[0] for s in segs], axis=1) if segs else np.zeros((n, 0))
        order = np.argsort(entry, axis=1, kind="stable")
        for rank in range(len(segs)):
            for bi, (tmin, tmax, box) in enumerate(segs):
                sel = (order[:, rank] == bi) & (tmax > tmin)
                if not np.any(sel):
                    continue
                w, dn, tr = _segment(box.sigma, tmin[sel], tmax[sel], trans[sel])
                rgb[sel] += w[:, None] * np.asarray(box.color, float)
                dnum[sel] += dn
                wsum[sel] += w
                trans[sel] = tr
        hit = wsum > 0
        depth = np.where(hit, dnum / np.where(hit, wsum, 1.0), 0.0)
        return rgb, depth, hit
    if isinstance(scene, TexturedPlane):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (scene.height - origins[:, 2]) / dirs[:, 2]
        hit = np.isfinite(t) & (t >= near) & (t <= far)
        pts = origins + np.where(hit, t, 0.0)[:, None] * dirs
        rgb = np.where(hit[:, None], scene.texture(pts[:, :2]), np.asarray(scene.background, float))
        return rgb, np.where(hit, t, 0.0), hit
    raise DatasetError(f"unknown analytic scene {type(scene).__name__}")


def render_analytic(scene, camera: Camera, pixel):
    ray = generate_ray(camera, pixel)
    rgb, depth, hit = render_analytic_rays(scene, ray.origin, ray.direction, camera.near, camera.far)
    return rgb[0], float(depth[0]), bool(hit[0])


def render_analytic_image(scene, camera: Camera):
    """Returns ``(rgb (H, W, 3), depth (H, W), hit (H, W))``."""
    o, d, _ = camera_rays(camera)
    rgb, depth, hit = render_analytic_rays(scene, o, d, camera.near, camera.far)
    shape = (camera.height, camera.width)
    return rgb.reshape(*shape, 3), depth.reshape(shape), hit.reshape(shape)


def default_box_scene() -> BoxScene:
    return BoxScene([
        Box((-0.9, -0.9, -0.9), (0.1, 0.1, 0.1), (0.9, 0.2, 0.2)),
        Box((0.2, -0.7, -0.9), (0.8, 0.7, -0.2), (0.2, 0.8, 0.3)),
        Box((-0.6, 0.3, -0.9), (0.0, 0.9, 0.6), (0.25, 0.35, 0.95)),
        Box((0.3, 0.2, 0.0), (0.7, 0.6, 0.5), (0.95, 0.85, 0.2)),
    ])


def orbit_camera(azimuth_deg, elevation_deg, radius=4.0, width=64, height=64, focal=None,
                 near=2.0, far=6.0, target=(0.0, 0.0, 0.0)) -> Camera:
    az, el = math.radians(azimuth_deg), math.radians(elevation_deg)
    eye = np.asarray(target) + radius * np.array([math.cos(el) * math.cos(az),
                                                  math.cos(el) * math.sin(az), math.sin(el)])
    R, t = look_at(eye, target)
    if focal is None:
        focal = 0.5 * width / math.tan(math.radians(20.0))
    K = np.array([[focal, 0.0, width / 2.0], [0.0, focal, height / 2.0], [0.0, 0.0, 1.0]])
    return Camera(K, R, t, width, height, near, far)


def analytic_dataset(scene, cameras: list[Camera], split="train", name="analytic") -> SceneDataset:
    imgs = [render_analytic_image(scene, c)[0] for c in cameras]
    return SceneDataset(list(cameras), imgs, [split] * len(cameras),
                        cameras[0].near if cameras else 2.0, cameras[0].far if cameras else 6.0, name)
