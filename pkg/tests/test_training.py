import numpy as np
import pytest

from planemix.errors import EmptyInput
from planemix.geometry import PointCloud, Rectangle
from planemix.radiance import make_expert
from planemix.training import (Adam, GeometricLossConfig, TrainSchedule,
                               composite_forward_backward, fit_planes,
                               geometric_loss, params_to_planes,
                               photometric_loss, planes_to_params, point_rmse,
                               refine_planes_by_assignment)


def _random_planes(rng, n):
    return [Rectangle(center=rng.normal(size=3) * 0.3, normal=rng.normal(size=3),
                      up=rng.normal(size=3), width=rng.uniform(0.3, 0.8),
                      height=rng.uniform(0.3, 0.8)) for _ in range(n)]


def test_adam_zero_grad_is_noop():
    params = {"x": np.ones(4)}
    opt = Adam(params, lr=0.1)
    opt.step(params, {"x": np.zeros(4)})
    assert np.array_equal(params["x"], np.ones(4))


def test_adam_descends_quadratic():
    params = {"x": np.array([5.0])}
    opt = Adam(params, lr=0.1)
    for _ in range(500):
        opt.step(params, {"x": 2.0 * params["x"]})
    assert abs(params["x"][0]) < 1e-3


def test_plane_params_round_trip():
    rng = np.random.default_rng(0)
    planes = _random_planes(rng, 4)
    params = planes_to_params(planes)
    assert np.allclose(params["omega"], 0.0)
    back = params_to_planes(params, planes)
    for a, b in zip(planes, back):
        assert np.allclose(a.center, b.center)
        assert np.allclose(a.normal, b.normal)
        assert a.width == pytest.approx(b.width)


def test_rotation_increment_rotates_frame():
    rng = np.random.default_rng(1)
    planes = _random_planes(rng, 1)
    params = planes_to_params(planes)
    params["omega"][0] = [0.0, 0.0, np.pi / 2]
    rotated = params_to_planes(params, planes)[0]
    expected = np.array([-planes[0].normal[1], planes[0].normal[0],
                         planes[0].normal[2]])
    assert np.allclose(rotated.normal, expected, atol=1e-12)


def test_geometric_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(2)
    planes = _random_planes(rng, 3)
    cloud = PointCloud(rng.uniform(-1, 1, size=(40, 3)))
    cfg = GeometricLossConfig(lambda_area=1e-3)
    _, grads = geometric_loss(cloud, planes, cfg)
    params = planes_to_params(planes)
    eps = 1e-6
    for key in params:
        for idx in np.ndindex(params[key].shape):
            vals = []
            for sgn in (1, -1):
                p = {k: v.copy() for k, v in params.items()}
                p[key][idx] += sgn * eps
                loss, _ = geometric_loss(cloud, params_to_planes(p, planes), cfg)
                vals.append(loss)
            fd = (vals[0] - vals[1]) / (2 * eps)
            scale = max(abs(fd), abs(grads[key][idx]), 1e-8)
            assert abs(fd - grads[key][idx]) / scale < 1e-4, (key, idx)


def test_geometric_loss_empty_inputs():
    rng = np.random.default_rng(3)
    with pytest.raises(EmptyInput):
        geometric_loss(PointCloud(np.zeros((0, 3))), _random_planes(rng, 2))


def test_area_regularizer_increases_loss():
    rng = np.random.default_rng(4)
    planes = _random_planes(rng, 2)
    cloud = PointCloud(rng.uniform(-1, 1, size=(30, 3)))
    lo, _ = geometric_loss(cloud, planes, GeometricLossConfig(lambda_area=0.0))
    hi, _ = geometric_loss(cloud, planes, GeometricLossConfig(lambda_area=1.0))
    assert hi > lo


def test_fit_planes_reduces_rmse():
    rng = np.random.default_rng(5)
    true = _random_planes(rng, 3)
    pts = []
    for rect in true:
        ab = rng.uniform(-1, 1, size=(150, 2))
        pts.append(rect.center[None, :]
                   + ab[:, 0:1] * (rect.width / 2) * rect.right[None, :]
                   + ab[:, 1:2] * (rect.height / 2) * rect.up[None, :])
    cloud = PointCloud(np.concatenate(pts))
    start = _random_planes(rng, 3)
    fitted = fit_planes(cloud, start, GeometricLossConfig(iterations=200))
    assert point_rmse(cloud, fitted) < point_rmse(cloud, start)


def test_refinement_never_hurts_on_planar_data():
    rng = np.random.default_rng(6)
    true = _random_planes(rng, 2)
    pts = []
    for rect in true:
        ab = rng.uniform(-1, 1, size=(200, 2))
        pts.append(rect.center[None, :]
                   + ab[:, 0:1] * (rect.width / 2) * rect.right[None, :]
                   + ab[:, 1:2] * (rect.height / 2) * rect.up[None, :])
    cloud = PointCloud(np.concatenate(pts))
    rough = _random_planes(rng, 2)
    before = point_rmse(cloud, rough)
    refined = refine_planes_by_assignment(cloud, rough, rounds=15)
    assert point_rmse(cloud, refined) <= before


def test_photometric_loss_and_gradient():
    rng = np.random.default_rng(7)
    a = rng.uniform(size=(10, 3))
    b = rng.uniform(size=(10, 3))
    loss, grad = photometric_loss(a, b)
    assert loss == pytest.approx(np.sum((a - b) ** 2))
    assert np.allclose(grad, 2 * (a - b))


def test_composite_backward_matches_finite_differences():
    rng = np.random.default_rng(8)
    R, M = 5, 4
    alpha = rng.uniform(0.05, 0.95, size=(R, M))
    color = rng.uniform(size=(R, M, 3))
    bg = np.array([0.2, 0.3, 0.4])
    upstream = rng.normal(size=(R, 3))

    def scalar(a, c):
        pix, _, _, _ = composite_forward_backward(a, c, bg)
        return float(np.sum(pix * upstream))

    _, _, _, backward = composite_forward_backward(alpha, color, bg)
    d_alpha, d_color = backward(upstream)
    eps = 1e-6
    for idx in np.ndindex(alpha.shape):
        ap, am = alpha.copy(), alpha.copy()
        ap[idx] += eps
        am[idx] -= eps
        fd = (scalar(ap, color) - scalar(am, color)) / (2 * eps)
        assert fd == pytest.approx(d_alpha[idx], rel=1e-4, abs=1e-8)
    for idx in np.ndindex(color.shape):
        cp, cm = color.copy(), color.copy()
        cp[idx] += eps
        cm[idx] -= eps
        fd = (scalar(alpha, cp) - scalar(alpha, cm)) / (2 * eps)
        assert fd == pytest.approx(d_color[idx], rel=1e-4, abs=1e-8)


def test_composite_backward_handles_opaque_samples():
    # alpha = 1 must not produce NaNs (no division by 1 - alpha).
    alpha = np.array([[0.5, 1.0, 0.3]])
    color = np.ones((1, 3, 3)) * 0.5
    _, _, _, backward = composite_forward_backward(alpha, color, np.zeros(3))
    d_alpha, d_color = backward(np.ones((1, 3)))
    assert np.all(np.isfinite(d_alpha))
    assert np.all(np.isfinite(d_color))


def test_schedule_zero_epochs_are_noops():
    from planemix.training import finetune
    rng = np.random.default_rng(9)
    planes = _random_planes(rng, 2)
    experts = [make_expert(seed=i) for i in range(2)]
    before = [e.get_vector().copy() for e in experts]
    sched = TrainSchedule(finetune_epochs=0)
    out = finetune(experts, None, planes, sched)
    for e, b in zip(out, before):
        assert np.array_equal(e.get_vector(), b)
