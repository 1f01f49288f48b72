import csv
import hashlib

import numpy as np
import pytest
import torch

from selfnerf.config import ConfigError, load_config
from selfnerf.selftrain import (Views, build_views, run_iteration, run_pipeline, train_field, train_first_model)

TINY = ["scene.resolution=8", "scene.num_val=1", "scene.num_test=1", "model.width=8", "model.depth=2",
        "model.pos_frequencies=3", "model.dim_phi=2", "model.dim_omega=2", "train.num_samples=8",
        "train.batch_rays=16", "train.pseudo_rays=16", "train.steps_per_iteration=4", "train.log_every=1",
        "pseudo.unseen_per_seen=1"]


@pytest.fixture(autouse=True)
def _one_thread():
    torch.set_num_threads(1)


def _cfg(*extra):
    return load_config(overrides=TINY + list(extra))


def _digest(model):
    h = hashlib.sha256()
    for t in model.state_dict().values():
        h.update(t.detach().numpy().tobytes())
    return h.hexdigest()


def _rows(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def test_too_few_views_is_an_error():
    cfg = _cfg()
    with pytest.raises(ConfigError):
        train_first_model(cfg, Views([], [], [], []))
    with pytest.raises(ConfigError):
        _cfg("scene.num_views=1")


def test_views_are_deterministic_and_disjoint():
    cfg = _cfg()
    a, b = build_views(cfg), build_views(cfg)
    for (ca, ia), (cb, ib) in zip(a.seen + a.val, b.seen + b.val):
        assert np.array_equal(ca.c2w(), cb.c2w()) and np.array_equal(ia, ib)
    seen = [c.t for c, _ in a.seen]
    for cam, _ in a.val + a.test:
        assert all(np.abs(cam.t - s).max() > 1e-6 for s in seen)
    assert len(a.unseen) == len(a.seen)


def test_first_model_is_deterministic(tmp_path):
    cfg = _cfg()
    views = build_views(cfg)
    a = train_first_model(cfg, views, tmp_path / "a")
    b = train_first_model(cfg, views, tmp_path / "b")
    assert a.checkpoint.read_bytes() == b.checkpoint.read_bytes()
    assert (tmp_path / "a" / "iter_1" / "losses.csv").read_bytes() == (tmp_path / "b" / "iter_1" / "losses.csv").read_bytes()


def test_seen_loss_decreases_early_in_training():
    cfg = load_config(overrides=["scene.resolution=16", "model.width=32", "model.depth=3", "train.num_samples=16",
                                 "train.batch_rays=64", "train.lr=5e-3", "train.log_every=1"])
    views = build_views(cfg)
    _, _, rows = train_field(cfg, views.seen, [], views.unseen, 500, cfg.seed, [cfg.seed, 1])
    l_r = np.array([r[1] for r in rows])
    smoothed = l_r.reshape(5, 100).mean(axis=1)
    assert np.all(np.diff(smoothed) < 0)


def test_iteration_writes_manifests_and_restarts_schedule(tmp_path):
    cfg = _cfg("loss.decay_interval=2", "loss.lambda1_initial=0.8")
    views = build_views(cfg)
    first = train_first_model(cfg, views, tmp_path)
    teacher = _digest(first.model)
    second = run_iteration(first, cfg, views, tmp_path)
    assert _digest(first.model) == teacher
    manifest = tmp_path / "iter_2" / "pseudo" / "manifest.json"
    assert manifest.exists()
    assert {v.kind.value for v in second.pseudo} == {"warped", "predicted"}
    rows = _rows(tmp_path / "iter_2" / "losses.csv")
    assert [int(r["step"]) for r in rows] == [0, 1, 2, 3]
    assert [float(r["lambda1"]) for r in rows] == [0.8, 0.8, 0.4, 0.4]
    assert second.global_step == 8 and len(second.history) == 2


def test_pseudo_embedding_ids_follow_provenance(tmp_path):
    cfg = _cfg()
    views = build_views(cfg)
    second = run_iteration(train_first_model(cfg, views), cfg, views)
    n_seen = len(views.seen)
    phis = sorted(v.phi_id for v in second.pseudo)
    assert phis == list(range(n_seen, n_seen + len(second.pseudo)))
    for v in second.pseudo:
        assert int(v.omega_id) == (0 if v.kind.value == "warped" else 1)


def test_single_iteration_returns_first_model(tmp_path):
    best, history = run_pipeline(_cfg("max_iterations=1", "name=one"), root=tmp_path)
    assert best.iteration == 1 and len(history) == 1
    assert (tmp_path / "one" / "best_checkpoint.pt").read_bytes() == (tmp_path / "one" / "iter_1" / "checkpoint.pt").read_bytes()
    assert not (tmp_path / "one" / "iter_2").exists()


def test_frozen_student_stops_after_second_iteration(tmp_path):
    best, history = run_pipeline(_cfg("train.lr=0", "train.lr_final=0", "max_iterations=5", "name=frozen"),
                                 root=tmp_path)
    assert len(history) == 2
    assert history[0]["psnr"] == history[1]["psnr"]
    assert best.iteration == 1


def test_report_structure_and_best_checkpoint(tmp_path):
    cfg = _cfg("max_iterations=3", "eps_conv=-1000", "name=rep")
    best, history = run_pipeline(cfg, root=tmp_path)
    rows = _rows(tmp_path / "rep" / "report.csv")
    assert list(rows[0]) == ["iteration", "psnr", "ssim", "best_psnr", "wall_time"]
    assert [int(r["iteration"]) for r in rows] == [1, 2, 3]
    best_col = [float(r["best_psnr"]) for r in rows]
    assert best_col == sorted(best_col)
    psnrs = [h["psnr"] for h in history]
    assert best.iteration == int(np.argmax(psnrs)) + 1
    assert (tmp_path / "rep" / "best_checkpoint.pt").read_bytes() == best.checkpoint.read_bytes()
    for i in (1, 2, 3):
        assert len(_rows(tmp_path / "rep" / f"iter_{i}" / "metrics.csv")) == 1
        assert any((tmp_path / "rep" / f"iter_{i}" / "val_renders").iterdir())


def test_resume_skips_completed_iterations(tmp_path):
    cfg = _cfg("max_iterations=2", "eps_conv=-1000", "name=res")
    _, first = run_pipeline(cfg, root=tmp_path)
    ckpt = tmp_path / "res" / "iter_2" / "checkpoint.pt"
    stamp = ckpt.stat().st_mtime_ns
    _, again = run_pipeline(cfg, root=tmp_path)
    assert ckpt.stat().st_mtime_ns == stamp
    assert [round(h["psnr"], 6) for h in again] == [round(h["psnr"], 6) for h in first]
