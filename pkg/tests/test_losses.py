import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from g2s import losses
from g2s.camera import CameraIntrinsics, WarpResult, so3_exp
from g2s.errors import (ConfigError, DegenerateTranslation, EpochOutOfRange, ShapeMismatch,
                        ZeroMeanDisparity)
from g2s.losses import LossConfig, Weighting

from conftest import tiny_config, triplet_at
from oracles import compare_gradient, rel_err
from g2s.synth import build_scene

C1, C2 = 0.01 ** 2, 0.03 ** 2


# -- SSIM and photometric error --------------------------------------------------

def test_ssim_self_similarity(rng):
    a = rng.uniform(size=(8, 9, 3))
    np.testing.assert_allclose(losses.ssim(a, a), 1.0, atol=1e-12)


def test_ssim_constant_images_closed_form():
    s = losses.ssim(np.zeros((5, 6)), np.ones((5, 6)))
    np.testing.assert_allclose(s, (C1 * C2) / ((1 + C1) * C2), rtol=1e-12)
    assert s[0, 0, 0] == pytest.approx(9.999000099990002e-05, rel=1e-12)


def test_ssim_symmetric_and_bounded(rng):
    a, b = rng.uniform(size=(2, 7, 8, 2))
    sa, sb = losses.ssim(a, b), losses.ssim(b, a)
    np.testing.assert_allclose(sa, sb, atol=1e-15)
    assert np.all(sa <= 1 + 1e-12) and np.all(sa >= -1 - 1e-12)


def test_ssim_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        losses.ssim(np.zeros((4, 4)), np.zeros((4, 5)))


def test_photometric_zero_for_identical(rng):
    a = rng.uniform(size=(6, 7, 3))
    np.testing.assert_allclose(losses.photometric_error(a, a), 0.0, atol=1e-12)


def test_photometric_alpha_zero_is_l1(rng):
    a, b = rng.uniform(size=(2, 6, 7, 3))
    np.testing.assert_allclose(losses.photometric_error(a, b, alpha=0.0),
                               np.abs(a - b).mean(-1), atol=1e-15)


def test_photometric_constant_images():
    pe = losses.photometric_error(np.full((5, 5), 0.5), np.full((5, 5), 0.6), alpha=0.85)
    # 0.85 (1 - SSIM) / 2 + 0.15 * 0.1 with SSIM = 0.6001 / 0.6101
    # variances come from E[x^2] - E[x]^2, which costs a few digits
    np.testing.assert_allclose(pe, 0.021966071135879364, rtol=1e-10)


def test_photometric_excludes_invalid(rng):
    a = rng.uniform(size=(6, 7, 1))
    valid = np.ones((6, 7), bool)
    valid[2, 3] = False
    pe = losses.photometric_error(a, WarpResult(a, valid, None, None))
    # the invalid pixel and its 3x3 neighbourhood are excluded
    assert np.isinf(pe[1:4, 2:5]).all()
    assert np.isfinite(pe).sum() == 42 - 9


# -- minimum reprojection with auto-masking ----------------------------------------

def _full(img, valid=True):
    return WarpResult(img, np.full(img.shape[:2], valid), None, None)


def test_static_scene_masks_everything(rng):
    img = rng.uniform(size=(6, 7, 1))
    ident = losses.identity_errors(img, [img, img])
    res = losses.min_reprojection_with_automask(img, _full(img), _full(img), ident)
    assert not res.mask.any() and res.loss == 0.0


def test_min_picks_the_perfect_source(rng):
    target = rng.uniform(size=(6, 7, 1))
    other = rng.uniform(size=(6, 7, 1))
    ident = losses.identity_errors(target, [other, other])
    res = losses.min_reprojection_with_automask(target, _full(other, valid=False),
                                                _full(target), ident)
    assert abs(res.loss) < 1e-15
    assert (res.choice[res.mask] == 1).all() and res.mask.any()


def test_min_reprojection_below_single_sources(rng):
    for seed in range(20):
        r = np.random.default_rng(seed)
        target, a, b, ia, ib = r.uniform(size=(5, 8, 9, 2))
        va, vb = r.uniform(size=(2, 8, 9)) > 0.1
        ident = losses.identity_errors(target, [ia, ib])
        res = losses.min_reprojection_with_automask(target, WarpResult(a, va, None, None),
                                                    WarpResult(b, vb, None, None), ident)
        pa = losses.photometric_error(target, WarpResult(a, va, None, None))
        pb = losses.photometric_error(target, WarpResult(b, vb, None, None))
        # brute force over the same kept pixels
        best = np.minimum(pa, pb)
        kept = np.isfinite(best) & (best + 1e-5 < ident.min(0))
        np.testing.assert_array_equal(kept, res.mask)
        if kept.any():
            assert res.loss == pytest.approx(best[kept].mean(), rel=1e-12)
            assert res.loss <= pa[kept].mean() and res.loss <= pb[kept].mean()


# -- smoothness ----------------------------------------------------------------

def test_constant_disparity_is_smooth(rng):
    assert losses.smoothness(np.full((6, 7), 0.3), rng.uniform(size=(6, 7))) == 0.0


def test_ramp_closed_form():
    disp = np.tile(1.0 + 0.5 * np.arange(4.0), (3, 1))      # mean 1.75
    assert losses.smoothness(disp, np.zeros((3, 4))) == pytest.approx(0.5 / 1.75, rel=1e-14)


def test_strong_edges_are_not_penalised():
    disp = np.tile(np.array([1.0, 1.0, 5.0, 5.0]), (3, 1))
    image = np.tile(np.array([0.0, 0.0, 80.0, 80.0]), (3, 1))
    assert losses.smoothness(disp, image) < 1e-30


def test_zero_mean_disparity():
    with pytest.raises(ZeroMeanDisparity):
        losses.smoothness(np.zeros((4, 4)), np.zeros((4, 4)))


def test_smoothness_gradient(rng):
    disp = rng.uniform(0.2, 0.5, (6, 7))
    img = rng.uniform(size=(6, 7, 1))
    worst, kinks = compare_gradient(losses.smoothness_grad(disp, img),
                                    lambda d: losses.smoothness(d, img), disp)
    assert worst < 1e-4 and kinks == 0


# -- g2s -----------------------------------------------------------------------

def test_g2s_unit_ratio_is_zero():
    T = np.array([[0.3, 0.0, 0.4], [1.0, 2.0, 2.0]])
    assert losses.g2s_loss([0.5, 3.0], T)[0] == 0.0


def test_g2s_forced_arithmetic():
    T = np.array([[1.0, 0, 0], [0, 2.0, 0]])
    assert losses.g2s_loss([2.0, 2.0], T)[0] == 1.0
    value, grad, ratios = losses.g2s_loss([1.5, 1.0], T)
    assert value == pytest.approx(0.5, abs=1e-15)
    np.testing.assert_allclose(ratios, [1.5, 0.5])
    worst, _ = compare_gradient(grad, lambda x: losses.g2s_loss([1.5, 1.0], x)[0], T)
    assert worst < 1e-8


def test_g2s_gradient_closed_form(rng):
    T = rng.normal(size=(4, 3))
    G = rng.uniform(0.5, 2, 4)
    _, grad, r = losses.g2s_loss(G, T)
    n = np.linalg.norm(T, axis=1)
    np.testing.assert_allclose(grad, (-2 * (r - 1) * r / n ** 2)[:, None] * T, rtol=1e-14)


def test_g2s_skips_pairs_without_gps():
    T = np.array([[1.0, 0, 0], [0, 0, 0]])
    value, grad, ratios = losses.g2s_loss([3.0, None], T)
    assert value == 4.0 and np.isnan(ratios[1]) and not grad[1].any()


def test_g2s_degenerate_translation():
    with pytest.raises(DegenerateTranslation):
        losses.g2s_loss([1.0], np.array([[1e-10, 0, 0]]))


@settings(max_examples=200)
@given(st.integers(0, 2 ** 32 - 1))
def test_g2s_rigid_and_offset_invariance(seed):
    r = np.random.default_rng(seed)
    pts = r.normal(scale=3.0, size=(5, 3))
    R = so3_exp(r.normal(size=3))
    moved = pts @ R.T + r.normal(scale=1e3, size=3)
    T = r.normal(size=(4, 3))

    def mags(p):
        return np.linalg.norm(p[1:] - p[:-1], axis=1)

    a = losses.g2s_loss(mags(pts), T)[0]
    b = losses.g2s_loss(mags(moved), T)[0]
    assert abs(a - b) < 1e-12 * max(1.0, abs(a))


# -- weighting -----------------------------------------------------------------

def test_exp_weight_contract():
    cfg = LossConfig(epoch_max=20)
    assert losses.g2s_weight(20, cfg) == 1.0
    assert abs(losses.g2s_weight(19, cfg) - 0.36787944117144233) <= 1e-15
    w = [losses.g2s_weight(e, cfg) for e in range(21)]
    assert all(b > a for a, b in zip(w, w[1:]))


def test_other_weightings():
    const = LossConfig(weighting=Weighting("const", 1e-3))
    assert {losses.g2s_weight(e, const) for e in range(21)} == {0.001}
    lin = LossConfig(weighting="linear", epoch_max=4)
    assert [losses.g2s_weight(e, lin) for e in range(5)] == [0, 0.25, 0.5, 0.75, 1.0]


@pytest.mark.parametrize("epoch", [-1, 21, 2.5])
def test_epoch_out_of_range(epoch):
    with pytest.raises(EpochOutOfRange):
        losses.g2s_weight(epoch, LossConfig())


def test_fractional_epochs_opt_in():
    cfg = LossConfig(fractional_epochs=True)
    assert losses.g2s_weight(19.5, cfg) == pytest.approx(math.exp(-0.5))


@pytest.mark.parametrize("text,expected", [
    ("exp", Weighting("exp")), ("linear", Weighting("linear")),
    ("const:1", Weighting("const", 1.0)), ("const:1e-3", Weighting("const", 1e-3)),
])
def test_weighting_parse_roundtrip(text, expected):
    w = Weighting.parse(text)
    assert w == expected and Weighting.parse(str(w)) == w


def test_loss_config_validation():
    for bad in [dict(alpha=1.5), dict(smoothness_weight=-1), dict(epoch_max=0)]:
        with pytest.raises(ConfigError):
            LossConfig(**bad)
    with pytest.raises(ConfigError) as info:
        LossConfig.from_dict({"alpha": 0.8, "gamma": 1})
    assert info.value.context["field"] == "loss.gamma"
    cfg = LossConfig(weighting="const:0.001", epoch_max=7)
    assert LossConfig.from_dict(cfg.to_dict()) == cfg


# -- total loss ----------------------------------------------------------------

def test_perfect_warp_leaves_only_smoothness(lateral_scene):
    cfg = LossConfig()
    trip, depth, poses = triplet_at(lateral_scene, 2)
    rep, _ = losses.total_loss(trip, depth, poses, 20, cfg, weight=0.0)
    assert rep.photometric < 1e-12
    assert rep.total == pytest.approx(cfg.smoothness_weight * rep.smoothness, abs=1e-12)


def test_report_identity(tiny_scene):
    cfg = LossConfig()
    trip, depth, poses = triplet_at(tiny_scene, 1, 0.7, 0.05)
    rep, _ = losses.total_loss(trip, depth, poses, 18, cfg)
    assert rep.total == pytest.approx(rep.photometric + cfg.smoothness_weight * rep.smoothness
                                      + rep.w * rep.g2s, abs=1e-12)
    assert min(rep.photometric, rep.smoothness, rep.g2s) >= 0
    assert 0 < rep.mask_frac <= 1


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_total_loss_gradient(seed):
    scene = build_scene(tiny_config(seed), seed=seed)
    cfg = LossConfig()
    trip, depth, (rot, trans) = triplet_at(scene, 1, 0.8, 0.05, seed)
    _, g = losses.total_loss(trip, depth, (rot, trans), 19, cfg)

    def f(d=depth, w=rot, t=trans):
        return losses.total_loss(trip, d, (w, t), 19, cfg)[0].total

    for analytic, fn, x in [(g.depth, lambda d: f(d=d), depth),
                            (g.rotation, lambda w: f(w=w), rot),
                            (g.translation, lambda t: f(t=t), trans)]:
        worst, kinks = compare_gradient(analytic, fn, x)
        assert worst < 1e-4
        assert kinks <= 3


def test_batched_loss_is_the_mean(tiny_scene):
    cfg = LossConfig()
    parts = [triplet_at(tiny_scene, t, 0.9, 0.03, t) for t in (1, 2)]
    reps = [losses.total_loss(*p, 20, cfg)[0] for p in parts]
    trip = losses.ImageTriplet(np.stack([p[0].prev for p in parts]),
                               np.stack([p[0].target for p in parts]),
                               np.stack([p[0].next for p in parts]), tiny_scene.K,
                               np.stack([p[0].gps for p in parts]))
    rep, _ = losses.total_loss(trip, np.stack([p[1] for p in parts]),
                               (np.stack([p[2][0] for p in parts]),
                                np.stack([p[2][1] for p in parts])), 20, cfg)
    assert rep.total == pytest.approx(np.mean([r.total for r in reps]), rel=1e-12)


@pytest.mark.parametrize("k", [0.5, 2.0, 3.0])
def test_joint_scaling(tiny_scene, k):
    cfg = LossConfig()
    trip, depth, (rot, trans) = triplet_at(tiny_scene, 1, 0.8, 0.05)
    base = losses.appearance_loss(trip, depth, (rot, trans), cfg)
    scaled = losses.appearance_loss(trip, k * depth, (rot, k * trans), cfg)
    assert rel_err(base, scaled, 0.0) < 1e-10
    _, _, r = losses.g2s_loss(trip.gps, trans)
    g2s_k = losses.g2s_loss(trip.gps, k * trans)[0]
    assert g2s_k == pytest.approx(np.sum((r / k - 1) ** 2), abs=1e-10)


def test_total_loss_shape_checks(tiny_scene):
    trip, depth, poses = triplet_at(tiny_scene, 1)
    with pytest.raises(ShapeMismatch):
        losses.total_loss(trip, depth[:-1], poses, 20, LossConfig())
    with pytest.raises(ShapeMismatch):
        losses.ImageTriplet(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 4)),
                            CameraIntrinsics(1, 1, 1, 1, 5, 4))
