"""Pinhole cameras, pixel rays and depth-based forward warping.

Camera frames follow the NeRF/OpenGL convention: right-handed, the camera
looks down -z and y points up.  Pixel (col, row) has its center at
``(col + 0.5, row + 0.5)`` in continuous pixel coordinates.  Intrinsics ``K``
act on "vision" camera coordinates (x right, y down, z forward), which are
related to the OpenGL frame by ``diag(1, -1, -1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# OpenGL camera frame <-> vision camera frame
GL_TO_CV = np.diag([1.0, -1.0, -1.0])


class DomainError(ValueError):
    """Raised when an input lies outside the domain of an operation."""


@dataclass
class Camera:
    K: np.ndarray
    R: np.ndarray  # world-from-camera rotation
    t: np.ndarray  # camera center in world coordinates
    width: int
    height: int
    near: float = 2.0
    far: float = 6.0

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if self.width < 1 or self.height < 1:
            raise DomainError(f"image size must be >= 1, got {self.width}x{self.height}")
        if not self.near < self.far:
            raise DomainError(f"near ({self.near}) must be < far ({self.far})")
        if abs(self.K[1, 0]) + abs(self.K[2, 0]) + abs(self.K[2, 1]) > 0 or abs(self.K[2, 2] - 1.0) > 1e-12:
            raise DomainError("K must be upper-triangular with K[2,2] = 1")
        if self.K[0, 0] <= 0 or self.K[1, 1] <= 0:
            raise DomainError("K must have positive focal entries")
        if np.abs(self.R.T @ self.R - np.eye(3)).max() > 1e-6:
            raise DomainError("pose rotation is not orthonormal")

    @classmethod
    def from_focal(cls, focal, width, height, c2w, near=2.0, far=6.0):
        K = np.array([[focal, 0.0, width / 2.0], [0.0, focal, height / 2.0], [0.0, 0.0, 1.0]])
        c2w = np.asarray(c2w, dtype=np.float64)
        return cls(K, c2w[:3, :3], c2w[:3, 3], width, height, near, far)

    @property
    def focal(self) -> float:
        return float(self.K[0, 0])

    @property
    def center(self) -> np.ndarray:
        return self.t

    def c2w(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.R
        m[:3, 3] = self.t
        return m

    def w2c_cv(self) -> np.ndarray:
        """4x4 transform from world to vision camera coordinates."""
        m = np.eye(4)
        m[:3, :3] = GL_TO_CV @ self.R.T
        m[:3, 3] = -m[:3, :3] @ self.t
        return m

    def with_pose(self, R, t) -> "Camera":
        return Camera(self.K.copy(), R, t, self.width, self.height, self.near, self.far)

    def pixel_radius(self) -> float:
        # mip-NeRF: a pixel of width w has variance w^2/12; the matching disc radius is 2w/sqrt(12)
        return 2.0 / (math.sqrt(12.0) * self.K[0, 0])


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    pixel_radius: float


@dataclass
class DepthMap:
    """Per-pixel ray distance; ``valid`` is False where no surface was found."""

    depth: np.ndarray
    valid: np.ndarray


@dataclass
class WarpedView:
    image: np.ndarray
    mask: np.ndarray
    source_id: int
    target: Camera
    zbuffer: np.ndarray = field(repr=False, default=None)


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> tuple[np.ndarray, np.ndarray]:
    """World-from-camera rotation and center for a camera at ``eye`` facing ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    back = eye - np.asarray(target, dtype=np.float64)
    back /= np.linalg.norm(back)
    right = np.cross(np.asarray(up, dtype=np.float64), back)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(np.array([0.0, 1.0, 0.0]), back)
    right /= np.linalg.norm(right)
    up_ = np.cross(back, right)
    return np.stack([right, up_, back], axis=1), eye


def pixel_directions(camera: Camera, pixels: np.ndarray) -> np.ndarray:
    """Unit world-space directions for continuous pixel coords of shape (..., 2)."""
    pixels = np.asarray(pixels, dtype=np.float64)
    homog = np.concatenate([pixels, np.ones(pixels.shape[:-1] + (1,))], axis=-1)
    d_cv = homog @ np.linalg.inv(camera.K).T
    d_world = d_cv @ (camera.R @ GL_TO_CV).T
    return d_world / np.linalg.norm(d_world, axis=-1, keepdims=True)


def generate_ray(camera: Camera, pixel) -> Ray:
    u, v = float(pixel[0]), float(pixel[1])
    if not (0.0 <= u < camera.width and 0.0 <= v < camera.height):
        raise DomainError(f"pixel ({u}, {v}) outside {camera.width}x{camera.height} image")
    d = pixel_directions(camera, np.array([u, v]))
    return Ray(camera.center.copy(), d, camera.pixel_radius())


def pixel_centers(camera: Camera) -> np.ndarray:
    """(H, W, 2) array of pixel-center coordinates (u, v)."""
    u, v = np.meshgrid(np.arange(camera.width) + 0.5, np.arange(camera.height) + 0.5)
    return np.stack([u, v], axis=-1)


def camera_rays(camera: Camera) -> tuple[np.ndarray, np.ndarray, float]:
    """Origins (H*W, 3), unit directions (H*W, 3) and cone radius for every pixel center."""
    dirs = pixel_directions(camera, pixel_centers(camera).reshape(-1, 2))
    origins = np.broadcast_to(camera.center, dirs.shape).copy()
    return origins, dirs, camera.pixel_radius()


def relative_transform(source: Camera, target: Camera) -> np.ndarray:
    """4x4 map from source vision-camera coordinates to target vision-camera coordinates."""
    return target.w2c_cv() @ np.linalg.inv(source.w2c_cv())


def warp_points(pixels, depth_z, K_i, K_j, T_ij) -> tuple[np.ndarray, np.ndarray]:
    """Reproject homogeneous pixels with z-depths: p_j = K_j T_ij (K_i^-1 d_i p_i).

    Returns continuous target pixel coordinates (n, 2) and target z-depths (n,).
    """
    K_i = np.asarray(K_i, dtype=np.float64)
    if abs(np.linalg.det(K_i)) < 1e-12:
        raise DomainError("source intrinsics are not invertible")
    pixels = np.atleast_2d(np.asarray(pixels, dtype=np.float64))
    homog = np.concatenate([pixels, np.ones((len(pixels), 1))], axis=1)
    pts = (homog @ np.linalg.inv(K_i).T) * np.asarray(depth_z, dtype=np.float64).reshape(-1, 1)
    T_ij = np.asarray(T_ij, dtype=np.float64)
    pts = pts @ T_ij[:3, :3].T + T_ij[:3, 3]
    proj = pts @ np.asarray(K_j, dtype=np.float64).T
    z = proj[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = proj[:, :2] / z[:, None]
    return uv, pts[:, 2]


def forward_warp(source_image, source_depth: DepthMap, source_cam: Camera, target_cam: Camera,
                 source_id: int = 0) -> WarpedView:
    """Splat every valid source pixel into the target view with a z-buffer.

    Each source pixel center lands on the target pixel containing its
    reprojection; the nearest target depth wins a collision.  Target pixels
    that receive nothing are masked invalid.
    """
    image = np.asarray(source_image)
    H, W = source_depth.depth.shape
    if image.shape[:2] != (H, W) or (H, W) != (source_cam.height, source_cam.width):
        raise DomainError("source image, depth map and camera resolutions differ")
    if abs(np.linalg.det(source_cam.K)) < 1e-12 or abs(np.linalg.det(target_cam.K)) < 1e-12:
        raise DomainError("degenerate intrinsics")

    rows, cols = np.nonzero(source_depth.valid)
    pix = np.stack([cols + 0.5, rows + 0.5], axis=1)
    # ray distance -> z-depth along the optical axis
    ray_cv = np.concatenate([pix, np.ones((len(pix), 1))], axis=1) @ np.linalg.inv(source_cam.K).T
    z_src = source_depth.depth[rows, cols] / np.linalg.norm(ray_cv, axis=1)
    uv, z_tgt = warp_points(pix, z_src, source_cam.K, target_cam.K, relative_transform(source_cam, target_cam))

    out_img = np.zeros((target_cam.height, target_cam.width) + image.shape[2:], dtype=image.dtype)
    zbuf = np.full((target_cam.height, target_cam.width), np.inf)
    mask = np.zeros((target_cam.height, target_cam.width), dtype=bool)

    ok = (z_tgt > 1e-9) & np.all(np.isfinite(uv), axis=1)
    tc = np.floor(uv[:, 0]).astype(np.int64, copy=False)
    tr = np.floor(uv[:, 1]).astype(np.int64, copy=False)
    ok &= (tc >= 0) & (tc < target_cam.width) & (tr >= 0) & (tr < target_cam.height)
    idx = np.nonzero(ok)[0]
    if len(idx):
        flat = tr[idx] * target_cam.width + tc[idx]
        order = np.lexsort((idx, z_tgt[idx], flat))
        flat_sorted = flat[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = flat_sorted[1:] != flat_sorted[:-1]
        win = idx[order[first]]
        r, c = tr[win], tc[win]
        out_img[r, c] = image[rows[win], cols[win]]
        zbuf[r, c] = z_tgt[win]
        mask[r, c] = True
    return WarpedView(out_img, mask, source_id, target_cam, zbuf)


def merge_warped(views: list[WarpedView]) -> WarpedView:
    """Per-pixel nearest-depth merge of several warps into the same target camera."""
    if not views:
        raise DomainError("nothing to merge")
    image = views[0].image.copy()
    zbuf = views[0].zbuffer.copy()
    mask = views[0].mask.copy()
    for v in views[1:]:
        closer = v.mask & (v.zbuffer < zbuf)
        image[closer] = v.image[closer]
        zbuf[closer] = v.zbuffer[closer]
        mask |= v.mask
    return WarpedView(image, mask, -1, views[0].target, zbuf)
