import json
import math

import numpy as np
import pytest
from PIL import Image

from selfnerf.data import (Box, BoxScene, DatasetError, Homogeneous, TexturedPlane, analytic_dataset,
                           default_box_scene, load_nerf_synthetic, orbit_camera, render_analytic,
                           render_analytic_image, render_analytic_rays, select_few_shot, write_nerf_synthetic)
from selfnerf.geometry import Camera, look_at


def _fixture(root, frames, angle=0.6911112, width=800, height=2):
    (root / "train").mkdir(parents=True, exist_ok=True)
    for k, _ in enumerate(frames):
        rgba = np.zeros((height, width, 4), dtype=np.uint8)
        rgba[..., 0] = 255
        rgba[:, : width // 2, 3] = 255  # right half transparent
        Image.fromarray(rgba).save(root / "train" / f"r_{k}.png")
    doc = {"camera_angle_x": angle,
           "frames": [{"file_path": f"./train/r_{k}", "transform_matrix": m} for k, m in enumerate(frames)]}
    (root / "transforms_train.json").write_text(json.dumps(doc, indent=1))


def test_blender_focal_from_camera_angle(tmp_path):
    _fixture(tmp_path, [np.eye(4).tolist()])
    ds = load_nerf_synthetic(tmp_path)
    assert len(ds) == 1
    assert ds.cameras[0].focal == pytest.approx(1111.11, abs=0.01)
    img = ds.images[0]
    # transparent pixels composite onto white
    np.testing.assert_array_equal(img[0, 0], [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(img[0, -1], [1.0, 1.0, 1.0])


def test_empty_frame_list(tmp_path):
    _fixture(tmp_path, [])
    assert len(load_nerf_synthetic(tmp_path)) == 0


def test_malformed_matrix_names_the_frame(tmp_path):
    _fixture(tmp_path, [np.eye(4).tolist(), np.eye(4)[:3].tolist()])
    with pytest.raises(DatasetError, match="frame 1"):
        load_nerf_synthetic(tmp_path)


def test_ill_formed_json_reports_line(tmp_path):
    (tmp_path / "transforms_train.json").write_text('{\n  "camera_angle_x": 0.5,\n  "frames": [,]\n}')
    with pytest.raises(DatasetError, match=r"transforms_train.json:3"):
        load_nerf_synthetic(tmp_path)


def test_missing_image_names_the_frame(tmp_path):
    _fixture(tmp_path, [np.eye(4).tolist()])
    (tmp_path / "train" / "r_0.png").unlink()
    with pytest.raises(DatasetError, match="r_0"):
        load_nerf_synthetic(tmp_path)


def test_missing_split_file(tmp_path):
    with pytest.raises(DatasetError):
        load_nerf_synthetic(tmp_path, "val")


def test_write_then_load_round_trip(tmp_path):
    cams = [orbit_camera(az, 25, width=12, height=10) for az in (0, 70, 200)]
    rng = np.random.default_rng(0)
    imgs = [np.round(rng.uniform(size=(10, 12, 3)) * 255) / 255 for _ in cams]
    from selfnerf.data import SceneDataset
    write_nerf_synthetic(tmp_path, SceneDataset(cams, imgs, ["train"] * 3))
    back = load_nerf_synthetic(tmp_path)
    for a, b, ia, ib in zip(cams, back.cameras, imgs, back.images):
        np.testing.assert_allclose(b.c2w(), a.c2w(), atol=1e-12, rtol=0)
        np.testing.assert_allclose(b.K, a.K, atol=1e-9, rtol=0)
        np.testing.assert_array_equal(ib, ia)


def _dataset(n):
    cams = [orbit_camera(360 * k / n, 30, width=4, height=4) for k in range(n)]
    return analytic_dataset(Homogeneous(1.0, (0.5, 0.5, 0.5)), cams)


def test_few_shot_selection():
    ds = _dataset(10)
    full, rest = select_few_shot(ds, 10, 3)
    assert [c.t.tolist() for c in full.cameras] == [c.t.tolist() for c in ds.cameras] and len(rest) == 0
    a, ra = select_few_shot(ds, 4, 7)
    b, _ = select_few_shot(ds, 4, 7)
    assert [c.t.tolist() for c in a.cameras] == [c.t.tolist() for c in b.cameras]
    assert len(ra) == 6 and set(ra.splits) == {"test"}
    with pytest.raises(DatasetError):
        select_few_shot(ds, 11, 0)


def test_few_shot_seeds_differ():
    ds = _dataset(100)
    picks = {tuple(np.round(np.concatenate([c.t for c in select_few_shot(ds, 4, s)[0].cameras]), 9))
             for s in range(10)}
    assert len(picks) >= 2


def test_empty_medium_is_black():
    cam = orbit_camera(0, 30, width=4, height=4)
    rgb, _, hit = render_analytic(Homogeneous(0.0, (1, 1, 1)), cam, (2.0, 2.0))
    assert np.all(rgb == 0) and not hit


def test_homogeneous_half_transmittance():
    cam = orbit_camera(0, 30, width=4, height=4, near=2.0, far=2.0 + math.log(2))
    rgb, depth, hit = render_analytic(Homogeneous(1.0, (1, 1, 1)), cam, (1.0, 3.0))
    np.testing.assert_allclose(rgb, [0.5, 0.5, 0.5], rtol=1e-12)
    # expected hit distance under density e^{-(t-2)} on [2, 2+ln2], normalized
    L = math.log(2)
    mean = 2 + (1 - math.exp(-L) * (1 + L)) / (1 - math.exp(-L))
    assert depth == pytest.approx(mean, rel=1e-12) and hit


def test_textured_plane_matches_intersection_oracle():
    scene = TexturedPlane(height=0.0)
    R, t = look_at((1.0, -3.0, 2.5))
    K = np.array([[20.0, 0, 8.0], [0, 20.0, 8.0], [0, 0, 1]])
    cam = Camera(K, R, t, 16, 16, near=0.5, far=10.0)
    rng = np.random.default_rng(0)
    for _ in range(20):
        u, v = rng.uniform(0, 16, size=2)
        rgb, depth, hit = render_analytic(scene, cam, (u, v))
        # oracle: parametrize the pixel ray by camera-space z, then intersect z_world = 0
        d_cam = np.linalg.inv(K) @ np.array([u, v, 1.0]) * np.array([1, -1, -1])
        d = R @ d_cam
        s = -t[2] / d[2]
        p = t + s * d
        assert hit
        np.testing.assert_allclose(rgb, scene.texture(p[None, :2])[0], atol=1e-12)
        assert depth == pytest.approx(s * np.linalg.norm(d), rel=1e-12)


def test_opaque_box_shows_its_color_and_front_face():
    scene = BoxScene([Box((-1, -1, -1), (1, 1, 1), (0.2, 0.4, 0.6), sigma=1e4)])
    o = np.array([[0.0, 0.0, 5.0]])
    d = np.array([[0.0, 0.0, -1.0]])
    rgb, depth, hit = render_analytic_rays(scene, o, d, 2.0, 8.0)
    np.testing.assert_allclose(rgb[0], [0.2, 0.4, 0.6], atol=1e-12)
    assert depth[0] == pytest.approx(4.0, abs=1e-3) and hit[0]
    rgb, _, hit = render_analytic_rays(scene, o + [[3.0, 0.0, 0.0]], d, 2.0, 8.0)
    assert np.all(rgb == 0) and not hit[0]


def test_nearer_box_occludes_farther_one():
    far_box = Box((-1, -1, -3), (1, 1, -2), (0, 0, 1), sigma=1e4)
    near_box = Box((-1, -1, 0), (1, 1, 1), (1, 0, 0), sigma=1e4)
    for boxes in ([far_box, near_box], [near_box, far_box]):
        rgb, _, _ = render_analytic_rays(BoxScene(boxes), [[0, 0, 5.0]], [[0, 0, -1.0]], 2.0, 10.0)
        np.testing.assert_allclose(rgb[0], [1, 0, 0], atol=1e-12)


def test_default_scene_is_visible_from_the_orbit():
    rgb, depth, hit = render_analytic_image(default_box_scene(), orbit_camera(30, 30, width=32, height=32))
    assert 0.1 < hit.mean() < 0.9
    assert np.all((depth[hit] >= 2.0) & (depth[hit] <= 6.0))
    assert np.all((rgb >= 0) & (rgb <= 1))
