"""Training harness: dataset shape, determinism, checkpoints, loss descent."""

import numpy as np
import pytest

from uvforge import model as M
from uvforge import tensor as T
from uvforge import trainer as TR

TINY_CFG = dict(
    widths=(8, 12), heads=2, uv_res=32, view_res=32, n_views=3,
    batch=1, lr=1e-3, corruption_p=0.0, drop_view_p=0.0,
    checkpoint_every=0, log_every=1, fresh_textures=False,
)


@pytest.fixture(scope="module")
def tiny_data():
    cfg = TR.TrainConfig(steps=0, **TINY_CFG)
    scenes, samples = TR.make_dataset(
        cfg, specs=(("quad", "gradient3d"), ("quad", "sinmix")), variants=2
    )
    return cfg, scenes, samples


def test_make_dataset_counts_and_target_support(tiny_data):
    cfg, scenes, samples = tiny_data
    assert len(samples) == 4  # specs x variants
    assert len(scenes) == 1  # mesh geometry shared across texture draws
    assert all(s.scene is samples[0].scene for s in samples)
    for s in samples:
        assert np.all(s.target[~s.scene.geo.mask] == 0.0)
        assert s.target.min() >= 0.0 and s.target.max() <= 1.0
        for rgb, view in zip(s.view_rgbs, s.scene.views):
            assert np.all(rgb[~view.mask] == 0.0)
    p0 = samples[0].tex_params
    p1 = samples[1].tex_params
    assert any(not np.array_equal(p0[k], p1[k]) for k in p0)


def test_config_validation():
    with pytest.raises(Exception):
        TR.TrainConfig(drop_view_p=1.0)
    with pytest.raises(Exception):
        TR.TrainConfig(ablation="nope")
    with pytest.raises(Exception):
        TR.TrainConfig(batch=0)


def test_zero_steps_leaves_model_bitwise_unchanged(tiny_data):
    cfg, _, samples = tiny_data
    m = M.init_model(cfg.widths, cfg.heads, seed=3)
    before = {k: p.data.copy() for k, p in m.params().items()}
    hist = TR.train(cfg, samples, m)
    assert hist == []
    for k, p in m.params().items():
        assert np.array_equal(p.data, before[k]), k


def test_loss_alias_offset_oracle(tiny_data):
    _, _, samples = tiny_data
    s = samples[0]
    mask = s.scene.geo.mask
    pred = s.target.transpose(2, 0, 1).copy()
    pred[:, mask] += 0.1
    pred[:, ~mask] = 0.0
    val = TR.loss(T.Tensor(pred), s.target, mask)
    assert abs(float(val.data) - 0.01) < 1e-6


def test_training_is_deterministic(tiny_data):
    cfg, _, samples = tiny_data
    cfg = TR.TrainConfig(**{**TINY_CFG, "steps": 4, "corruption_p": 0.5, "drop_view_p": 0.2})
    runs = []
    for _ in range(2):
        m = M.init_model(cfg.widths, cfg.heads, seed=cfg.seed)
        hist = TR.train(cfg, samples, m)
        runs.append((hist, {k: p.data.copy() for k, p in m.params().items()}))
    assert runs[0][0] == runs[1][0]
    for k in runs[0][1]:
        assert np.array_equal(runs[0][1][k], runs[1][1][k]), k


def test_checkpoint_resume_matches_uninterrupted_run(tiny_data, tmp_path):
    _, _, samples = tiny_data
    cfg = TR.TrainConfig(**{**TINY_CFG, "steps": 6, "corruption_p": 0.5, "drop_view_p": 0.2,
                            "checkpoint_every": 3})
    straight = M.init_model(cfg.widths, cfg.heads, seed=cfg.seed)
    TR.train(cfg, samples, straight, out_dir=str(tmp_path / "a"))

    resumed = M.init_model(cfg.widths, cfg.heads, seed=cfg.seed)
    half = TR.TrainConfig(**{**TINY_CFG, "steps": 3, "corruption_p": 0.5, "drop_view_p": 0.2,
                             "checkpoint_every": 3})
    TR.train(half, samples, resumed, out_dir=str(tmp_path / "b"))
    hist = TR.train(cfg, samples, resumed, resume=str(tmp_path / "b" / "ckpt_000003.uvfb"))
    assert hist[0]["step"] == 3

    sp = straight.params()
    for k, p in resumed.params().items():
        np.testing.assert_allclose(p.data, sp[k].data, atol=1e-6, err_msg=k)
    assert (tmp_path / "a" / "metrics.log").exists()
    lines = (tmp_path / "a" / "metrics.log").read_text().strip().splitlines()
    assert len(lines) == 6 and all(len(l.split("\t")) == 3 for l in lines)


def test_checkpoint_restores_optimizer_state(tiny_data, tmp_path):
    cfg, _, samples = tiny_data
    cfg = TR.TrainConfig(**{**TINY_CFG, "steps": 2})
    m = M.init_model(cfg.widths, cfg.heads, seed=1)
    opt = T.Adam(list(m.trainable().values()), lr=cfg.lr)
    opt.t = 7
    for arr in opt.m:
        arr += 0.25
    path = str(tmp_path / "ck.uvfb")
    TR.save_checkpoint(path, m, opt, step=41)
    m2 = M.init_model(cfg.widths, cfg.heads, seed=2)
    opt2 = T.Adam(list(m2.trainable().values()), lr=cfg.lr)
    assert TR.load_checkpoint(path, m2, opt2) == 41
    assert opt2.t == 7
    for a, b in zip(opt.m, opt2.m):
        assert np.array_equal(a, b)
    for k, p in m2.params().items():
        assert np.array_equal(p.data, m.params()[k].data)


def _clean_eval_loss(model, samples):
    total = 0.0
    for s in samples:
        views, embeds, _ = TR.clean_views(s)
        pred = M.forward(model, s.scene.geo, s.scene.uv_embed, views, embeds)
        total += float(TR.loss(pred, s.target, s.scene.geo.mask).data)
    return total / len(samples)


def test_short_run_reduces_loss(tiny_data):
    # per-step losses rotate over samples at batch 1, so compare a clean
    # fixed evaluation before and after instead of the noisy history
    _, _, samples = tiny_data
    cfg = TR.TrainConfig(**{**TINY_CFG, "steps": 120})
    m = M.init_model(cfg.widths, cfg.heads, seed=0)
    before = _clean_eval_loss(m, samples)
    TR.train(cfg, samples, m)
    after = _clean_eval_loss(m, samples)
    assert after < 0.7 * before, f"loss {before:.4f} -> {after:.4f}"


def test_dropout_never_removes_every_view(tiny_data):
    _, _, samples = tiny_data
    cfg = TR.TrainConfig(**{**TINY_CFG, "steps": 0, "drop_view_p": 0.9})
    s = samples[0]
    for trial in range(200):
        rng = np.random.default_rng([5, trial])
        views, embeds, _ = TR.assemble_views(s, cfg, rng, want_bp=False)
        assert any(v.mask.any() for v in views)
        assert len(views) == len(embeds) == cfg.n_views


def test_corruption_touches_exactly_one_view(tiny_data):
    _, _, samples = tiny_data
    cfg = TR.TrainConfig(**{**TINY_CFG, "steps": 0, "corruption_p": 1.0, "shuffle_views": False})
    s = samples[0]
    rng = np.random.default_rng(9)
    views, _, _ = TR.assemble_views(s, cfg, rng, want_bp=False)
    changed = [
        not np.array_equal(v.rgb, rgb) for v, rgb in zip(views, s.view_rgbs)
    ]
    assert sum(changed) == 1
    again, _, _ = TR.assemble_views(s, cfg, np.random.default_rng(9), want_bp=False)
    for a, b in zip(views, again):
        assert np.array_equal(a.rgb, b.rgb) and np.array_equal(a.mask, b.mask)


def test_bp_prior_covers_front_view_footprint(tiny_data):
    _, _, samples = tiny_data
    s = samples[0]
    views, embeds, bp = TR.clean_views(s, want_bp=True)
    assert bp.shape == s.target.shape
    assert np.all(bp[~s.scene.geo.mask] == 0.0)
    covered = (bp != 0).any(axis=-1)
    assert covered.sum() > 0.2 * s.scene.geo.mask.sum()


def test_evaluate_reports_metrics(tiny_data):
    cfg, _, samples = tiny_data
    m = M.init_model(cfg.widths, cfg.heads, seed=0)
    rows = TR.evaluate(m, samples[:2], capture_diag=True)
    assert len(rows) == 2
    for r in rows:
        assert np.isfinite(r["psnr"]) and np.isfinite(r["ssim"])
        assert -1.0 <= r["ssim"] <= 1.0
    assert np.isfinite(TR.summarize(rows, "psnr"))
