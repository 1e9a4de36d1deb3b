import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from g2s import camera
from g2s.camera import CameraIntrinsics, DepthRange, Se3Pose
from g2s.errors import NonPositiveDepth, ShapeMismatch

from oracles import compare_gradient, rodrigues

K16 = CameraIntrinsics(12.0, 12.0, 7.5, 5.5, 16, 12)

vec3 = st.tuples(*[st.floats(-2.0, 2.0)] * 3).map(np.array)


def smooth_image(h, w, seed=0, channels=1):
    rng = np.random.default_rng(seed)
    v, u = np.mgrid[0:h, 0:w].astype(float)
    img = np.zeros((h, w, channels))
    for _ in range(6):
        kx, ky = rng.uniform(-0.8, 0.8, 2)
        img += rng.uniform(0.2, 1.0, channels) * np.sin(kx * u + ky * v + rng.uniform(0, 6.3))[..., None]
    return 0.5 + img / 12.0


# -- SE(3) ---------------------------------------------------------------------

def test_zero_rotation_is_identity():
    np.testing.assert_array_equal(camera.so3_exp(np.zeros(3)), np.eye(3))


def test_quarter_turn_about_z():
    R = camera.so3_exp([0.0, 0.0, math.pi / 2])
    np.testing.assert_allclose(R @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-15)


@given(vec3, st.tuples(*[st.floats(-1, 1)] * 3).map(np.array))
def test_exp_matches_rodrigues_oracle(w, x):
    np.testing.assert_allclose(camera.so3_exp(w) @ x, rodrigues(w, x), atol=1e-12)


@given(vec3)
def test_rotation_is_orthonormal(w):
    R = camera.so3_exp(w)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


@given(vec3.filter(lambda w: np.linalg.norm(w) < math.pi - 0.1), vec3)
def test_log_exp_roundtrip(w, t):
    w2, t2 = camera.se3_log(camera.se3_exp(w, t))
    np.testing.assert_allclose(w2, w, atol=1e-10)
    np.testing.assert_allclose(t2, t, atol=1e-12)


@given(vec3.filter(lambda w: np.linalg.norm(w) < 3.0), vec3)
def test_compose_with_inverse_is_identity(w, t):
    p = Se3Pose(w, t)
    e = p.compose(p.inverse())
    np.testing.assert_allclose(e.matrix(), np.eye(4), atol=1e-12)


@given(vec3, vec3, vec3)
def test_composition_is_associative(a, b, c):
    p, q, r = Se3Pose(a, b), Se3Pose(b, c), Se3Pose(c, a)
    lhs = p.compose(q).compose(r).matrix()
    rhs = p.compose(q.compose(r)).matrix()
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_exp_jacobian_matches_differences(rng):
    for w in [rng.normal(size=3), 1e-8 * rng.normal(size=3), np.zeros(3)]:
        J = camera.so3_exp_jacobian(w)
        for k in range(3):
            e = np.zeros(3)
            e[k] = 1e-6
            fd = (camera.so3_exp(w + e) - camera.so3_exp(w - e)) / 2e-6
            np.testing.assert_allclose(J[k], fd, atol=1e-9)


def test_inverse_params_jacobian(rng):
    w, t = rng.normal(size=3), rng.normal(size=3)
    _, t_inv, dt_dw, dt_dt = camera.inverse_params(w, t)
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1e-6
        fd_w = (camera.inverse_params(w + e, t)[1] - camera.inverse_params(w - e, t)[1]) / 2e-6
        fd_t = (camera.inverse_params(w, t + e)[1] - camera.inverse_params(w, t - e)[1]) / 2e-6
        np.testing.assert_allclose(dt_dw[:, k], fd_w, atol=1e-8)
        np.testing.assert_allclose(dt_dt[:, k], fd_t, atol=1e-8)


# -- projection ----------------------------------------------------------------

def test_backproject_examples():
    K = CameraIntrinsics(100.0, 100.0, 50.0, 40.0, 101, 81)
    np.testing.assert_array_equal(camera.backproject((50.0, 40.0), 5.0, K), [0.0, 0.0, 5.0])
    np.testing.assert_allclose(camera.backproject((150.0, 40.0), 2.0, K), [2.0, 0.0, 2.0])


def test_backproject_rejects_nonpositive_depth():
    with pytest.raises(NonPositiveDepth):
        camera.backproject((1.0, 1.0), 0.0, K16)


@given(st.floats(0, 15), st.floats(0, 11), st.floats(0.1, 100))
def test_project_inverts_backproject(u, v, d):
    p = camera.project(camera.backproject((u, v), d, K16), K16)
    np.testing.assert_allclose(p, [u, v], atol=1e-9)


# -- bilinear sampling ---------------------------------------------------------

def test_integer_sample_and_forward_differences():
    img = smooth_image(6, 7, 3)[..., 0]
    s = camera.bilinear_sample(img, 2.0, 3.0)
    assert s.values == img[3, 2]
    assert s.du == pytest.approx(img[3, 3] - img[3, 2], abs=1e-15)
    assert s.dv == pytest.approx(img[4, 2] - img[3, 2], abs=1e-15)


def test_midpoint_of_pair():
    s = camera.bilinear_sample(np.array([[0.2, 0.9], [0.2, 0.9]]), 0.5, 0.0)
    assert s.values == pytest.approx(0.55, abs=1e-15)


def test_out_of_bounds_is_invalid():
    s = camera.bilinear_sample(np.ones((4, 4)), np.array([-0.1, 3.5, 1.0]), np.array([1, 1, 3.0]))
    np.testing.assert_array_equal(s.valid, [False, False, True])
    assert s.values[0] == 0.0 and s.du[0] == 0.0


def test_sample_derivatives_match_differences(rng):
    img = smooth_image(10, 12, 5)[..., 0]
    u = rng.uniform(0.05, 10.95, 200)
    v = rng.uniform(0.05, 8.95, 200)
    # stay clear of cell boundaries, where the interpolant has kinks
    keep = (np.abs(u - np.round(u)) > 1e-4) & (np.abs(v - np.round(v)) > 1e-4)
    u, v = u[keep], v[keep]
    h = 1e-6
    s = camera.bilinear_sample(img, u, v)
    fu = (camera.bilinear_sample(img, u + h, v).values - camera.bilinear_sample(img, u - h, v).values) / (2 * h)
    fv = (camera.bilinear_sample(img, u, v + h).values - camera.bilinear_sample(img, u, v - h).values) / (2 * h)
    for a, n in [(s.du, fu), (s.dv, fv)]:
        rel = np.abs(a - n) / np.maximum(np.abs(a), 1e-3)
        assert rel.max() < 1e-6


# -- warping -------------------------------------------------------------------

def test_identity_warp_reproduces_source():
    src = smooth_image(12, 16, 1)
    res = camera.warp(src, np.full((12, 16), 3.0), Se3Pose(), K16)
    assert res.valid.all()
    np.testing.assert_allclose(res.image, src, atol=1e-15)


def test_fronto_parallel_translation_shifts_uniformly():
    d, tx = 4.0, 0.5
    res = camera.warp(smooth_image(12, 16, 2), np.full((12, 16), d), Se3Pose(translation=[tx, 0, 0]), K16)
    u, v = K16.pixel_grid()
    ok = res.valid
    assert ok.sum() == 12 * (16 - 2)          # a 1.5 px shift loses two columns
    np.testing.assert_allclose((res.u - u)[ok], K16.fx * tx / d, atol=1e-12)
    np.testing.assert_allclose(res.v[ok], v[ok], atol=1e-12)


def test_behind_camera_is_all_invalid():
    res = camera.warp(smooth_image(12, 16, 2), np.full((12, 16), 2.0),
                      Se3Pose(translation=[0, 0, -5.0]), K16)
    assert not res.valid.any()


def test_warp_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        camera.warp(np.zeros((12, 16, 1)), np.ones((11, 16)), Se3Pose(), K16)


@pytest.mark.parametrize("k", [0.5, 2.0, 3.0])
def test_warp_gauge_invariance(k, rng):
    src = smooth_image(12, 16, 4)
    depth = rng.uniform(3, 6, (12, 16))
    pose = Se3Pose(rng.normal(scale=0.02, size=3), rng.normal(scale=0.2, size=3))
    a = camera.warp(src, depth, pose, K16)
    b = camera.warp(src, k * depth, pose.scaled(k), K16)
    both = a.valid & b.valid
    assert both.sum() > 50
    np.testing.assert_allclose(a.image[both], b.image[both], atol=1e-10)


def test_constant_source_has_zero_jacobians():
    _, J = camera.warp_jacobians(np.full((12, 16, 1), 0.4), np.full((12, 16), 3.0), Se3Pose(), K16)
    assert not J.depth.any() and not J.rotation.any() and not J.translation.any()


def test_warp_jacobians_match_differences(rng):
    src = smooth_image(12, 16, 7)
    depth = rng.uniform(3, 5, (12, 16))
    w = rng.normal(scale=0.02, size=3)
    t = np.array([0.3, -0.05, 0.2])
    res, J = camera.warp_jacobians(src, depth, (w, t), K16)
    weights = rng.normal(size=src.shape)

    def f_depth(d):
        return float(np.sum(weights * camera.warp(src, d, (w, t), K16).image))

    def f_w(x):
        return float(np.sum(weights * camera.warp(src, depth, (x, t), K16).image))

    def f_t(x):
        return float(np.sum(weights * camera.warp(src, depth, (w, x), K16).image))

    g_depth = np.sum(weights * J.depth, axis=-1)
    g_w = np.einsum("hwc,hwck->k", weights, J.rotation)
    g_t = np.einsum("hwc,hwck->k", weights, J.translation)
    for analytic, f, x in [(g_depth, f_depth, depth), (g_w, f_w, w), (g_t, f_t, t)]:
        worst, kinks = compare_gradient(analytic, f, x)
        assert worst < 1e-4
        assert kinks <= 2


def test_invalid_pixels_have_zero_jacobian_rows():
    depth = np.full((12, 16), 4.0)
    res, J = camera.warp_jacobians(smooth_image(12, 16, 1), depth,
                                   Se3Pose(translation=[1.5, 0, 0]), K16)
    bad = ~res.valid
    assert bad.any() and res.valid.any()
    assert not J.depth[bad].any()
    assert not J.rotation[bad].any() and not J.translation[bad].any()


# -- depth parameterisation ----------------------------------------------------

def test_depth_range_roundtrip_and_bounds(rng):
    dr = DepthRange()
    assert dr.a == pytest.approx(10.0 - 0.01) and dr.b == 0.01
    d = rng.uniform(0.2, 90, 100)
    np.testing.assert_allclose(dr.depth(dr.encode(d)), d, rtol=1e-12)
    extreme = dr.depth(np.array([-50.0, 50.0]))
    assert 0.1 <= extreme.min() and extreme.max() <= 100.0
    with pytest.raises(ValueError):
        dr.encode(200.0)


def test_disparity_grad(rng):
    dr = DepthRange()
    x = rng.normal(size=20)
    fd = (dr.disparity(x + 1e-6) - dr.disparity(x - 1e-6)) / 2e-6
    np.testing.assert_allclose(dr.disparity_grad(x), fd, rtol=1e-7)
