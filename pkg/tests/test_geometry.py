import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfnerf.geometry import (Camera, DepthMap, DomainError, forward_warp, generate_ray, look_at,
                               pixel_directions, warp_points)


def _K(f, cx, cy):
    return np.array([[f, 0.0, cx], [0.0, f, cy], [0.0, 0.0, 1.0]])


def _random_camera(rng, width=16, height=12):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    R = np.array([[1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
                  [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
                  [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)]])
    return Camera(_K(rng.uniform(10, 30), width / 2, height / 2), R, rng.normal(size=3), width, height)


def test_principal_ray_is_optical_axis():
    cam = Camera(_K(50.0, 32.0, 24.0), np.eye(3), np.zeros(3), 64, 48)
    ray = generate_ray(cam, (32.0, 24.0))
    np.testing.assert_allclose(ray.direction, [0.0, 0.0, -1.0], atol=1e-15)
    np.testing.assert_array_equal(ray.origin, np.zeros(3))
    assert abs(np.linalg.norm(ray.direction) - 1) < 1e-9
    assert ray.pixel_radius == pytest.approx(2 / (math.sqrt(12) * 50.0))


def test_one_focal_length_off_axis_is_45_degrees():
    cam = Camera(_K(50.0, 10.0, 10.0), np.eye(3), np.zeros(3), 100, 20)
    d = generate_ray(cam, (60.0, 10.0)).direction
    assert math.degrees(math.acos(-d[2])) == pytest.approx(45.0, abs=1e-12)
    assert d[0] > 0


def test_generate_ray_matches_projection_matrix_inverse():
    rng = np.random.default_rng(3)
    for _ in range(20):
        cam = _random_camera(rng)
        u, v = rng.uniform(0, cam.width), rng.uniform(0, cam.height)
        # independent oracle: invert the full 4x4 world->pixel map, lift (u, v) at unit z-depth
        flip = np.diag([1.0, -1.0, -1.0, 1.0])
        c2w = np.eye(4)
        c2w[:3, :3], c2w[:3, 3] = cam.R, cam.t
        P = np.eye(4)
        P[:3, :3] = cam.K
        M = P @ flip @ np.linalg.inv(c2w)
        X = np.linalg.inv(M) @ np.array([u, v, 1.0, 1.0])
        expected = X[:3] / X[3] - cam.t
        expected /= np.linalg.norm(expected)
        np.testing.assert_allclose(generate_ray(cam, (u, v)).direction, expected, atol=1e-12)


@pytest.mark.parametrize("pixel", [(-0.1, 2.0), (64.0, 2.0), (3.0, 48.0), (3.0, -1e-9)])
def test_generate_ray_rejects_out_of_bounds(pixel):
    cam = Camera(_K(50.0, 32.0, 24.0), np.eye(3), np.zeros(3), 64, 48)
    with pytest.raises(DomainError):
        generate_ray(cam, pixel)


def test_camera_invariants():
    with pytest.raises(DomainError):
        Camera(_K(-1.0, 1, 1), np.eye(3), np.zeros(3), 4, 4)
    with pytest.raises(DomainError):
        Camera(_K(1.0, 1, 1), 2 * np.eye(3), np.zeros(3), 4, 4)
    with pytest.raises(DomainError):
        Camera(_K(1.0, 1, 1), np.eye(3), np.zeros(3), 4, 4, near=3.0, far=2.0)
    with pytest.raises(DomainError):
        Camera(_K(1.0, 1, 1), np.eye(3), np.zeros(3), 0, 4)


@given(st.floats(0.0, 0.999), st.floats(0.0, 0.999), st.integers(2, 5))
def test_direction_invariant_to_image_plane_rescaling(fu, fv, scale):
    base = Camera(_K(20.0, 8.0, 6.0), *look_at((1.0, 2.0, 3.0)), 16, 12)
    big = Camera(_K(20.0 * scale, 8.0 * scale, 6.0 * scale), base.R, base.t, 16 * scale, 12 * scale)
    u, v = fu * 16, fv * 12
    np.testing.assert_allclose(pixel_directions(base, np.array([u, v])),
                               pixel_directions(big, np.array([u * scale, v * scale])), atol=1e-12)


def test_warp_points_hand_example():
    T = np.eye(4)
    T[0, 3] = 1.0
    uv, z = warp_points([[0.0, 0.0]], [2.0], np.eye(3), np.eye(3), T)
    np.testing.assert_allclose(uv, [[0.5, 0.0]])
    np.testing.assert_allclose(z, [2.0])


def test_warp_points_rejects_singular_intrinsics():
    with pytest.raises(DomainError):
        warp_points([[0.0, 0.0]], [1.0], np.zeros((3, 3)), np.eye(3), np.eye(4))


def _depth_from_z(cam, z):
    """Ray-distance depth map for per-pixel z-depths."""
    u, v = np.meshgrid(np.arange(cam.width) + 0.5, np.arange(cam.height) + 0.5)
    ray = np.stack([u, v, np.ones_like(u)], -1) @ np.linalg.inv(cam.K).T
    return z * np.linalg.norm(ray, axis=-1)


def test_identity_warp_is_bit_exact_on_valid_mask():
    rng = np.random.default_rng(0)
    cam = Camera(_K(20.0, 10.0, 8.0), *look_at((0.3, -4.0, 1.0)), 20, 16)
    img = rng.uniform(size=(16, 20, 3))
    valid = rng.uniform(size=(16, 20)) > 0.3
    depth = DepthMap(rng.uniform(2, 5, size=(16, 20)) * valid, valid)
    out = forward_warp(img, depth, cam, cam)
    np.testing.assert_array_equal(out.mask, valid)
    np.testing.assert_array_equal(out.image[valid], img[valid])
    assert np.all(out.image[~valid] == 0)


def test_zbuffer_nearest_depth_wins():
    src = Camera(_K(10.0, 2.5, 0.5), np.eye(3), np.zeros(3), 5, 1)
    tgt = src.with_pose(np.eye(3), np.array([-0.3, 0.0, 0.0]))
    z = np.array([[1.0, 9.0, 3.0, 9.0, 9.0]])
    valid = np.array([[True, False, True, False, False]])
    img = np.zeros((1, 5, 3))
    img[0, 0] = (1, 0, 0)
    img[0, 2] = (0, 0, 1)
    out = forward_warp(img, DepthMap(_depth_from_z(src, z), valid), src, tgt)
    # column 0.5 at z=1 shifts by 3 px, column 2.5 at z=3 shifts by 1 px: both land in column 3
    assert out.mask[0].tolist() == [False, False, False, True, False]
    np.testing.assert_array_equal(out.image[0, 3], [1, 0, 0])
    assert out.zbuffer[0, 3] == pytest.approx(1.0)


def test_warp_never_invents_colors():
    rng = np.random.default_rng(1)
    for _ in range(5):
        src = Camera(_K(18.0, 12.0, 9.0), *look_at(rng.normal(size=3) + (0, -4, 1)), 24, 18)
        tgt = Camera(_K(15.0, 10.0, 8.0), *look_at(src.t + rng.normal(scale=0.5, size=3)), 20, 16)
        ids = np.arange(24 * 18, dtype=np.float64).reshape(18, 24)
        img = np.stack([ids, -ids, ids * 2], -1)
        valid = rng.uniform(size=(18, 24)) > 0.2
        depth = DepthMap(rng.uniform(2, 6, size=(18, 24)), valid)
        out = forward_warp(img, depth, src, tgt)
        source_colors = {tuple(c) for c in img[valid]}
        assert all(tuple(c) in source_colors for c in out.image[out.mask])


def test_forward_warp_rejects_mismatched_resolution():
    cam = Camera(_K(10.0, 2.0, 2.0), np.eye(3), np.zeros(3), 4, 4)
    with pytest.raises(DomainError):
        forward_warp(np.zeros((3, 4, 3)), DepthMap(np.ones((4, 4)), np.ones((4, 4), bool)), cam, cam)
