import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from urfgs.core import (CameraView, GaussianPrimitive, Gaussians, InvalidParameterError, build_covariance,
                        eval_gaussian, eval_sh, look_at, project, project_batch, quat_to_rotmat,
                        rgb_to_sh0, rotmat_to_quat)

from conftest import random_primitives, random_quat

IDQ = np.array([1.0, 0.0, 0.0, 0.0])


def zquat(deg):
    a = np.radians(deg) / 2
    return np.array([np.cos(a), 0.0, 0.0, np.sin(a)])


def test_covariance_identity():
    np.testing.assert_allclose(build_covariance(IDQ, [1, 1, 1]), np.eye(3), atol=1e-12)


def test_covariance_diagonal():
    np.testing.assert_allclose(build_covariance(IDQ, [2, 1, 1]), np.diag([4.0, 1, 1]), atol=1e-12)


def test_covariance_rotated_about_z():
    np.testing.assert_allclose(build_covariance(zquat(90), [2, 1, 1]), np.diag([1.0, 4, 1]), atol=1e-12)


def test_covariance_rejects_non_unit_quaternion():
    with pytest.raises(InvalidParameterError):
        build_covariance([1.0, 0.1, 0, 0], [1, 1, 1])


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=50, deadline=None)
def test_covariance_psd_round_trip(seed):
    rng = np.random.default_rng(seed)
    cov = build_covariance(random_quat(rng), rng.uniform(0.01, 3.0, 3))
    assert np.allclose(cov, cov.T, atol=1e-9)
    w, V = np.linalg.eigh(cov)
    assert w.min() >= -1e-12
    np.testing.assert_allclose(V @ np.diag(w) @ V.T, cov, atol=1e-8)


def test_eval_gaussian_examples():
    p = GaussianPrimitive(np.array([1.0, 2, 3]), IDQ, np.ones(3))
    assert eval_gaussian(p, p.mean) == 1.0
    assert eval_gaussian(p, p.mean + [1, 0, 0]) == pytest.approx(np.exp(-0.5), abs=1e-12)
    q = GaussianPrimitive(np.zeros(3), IDQ, np.array([2.0, 1, 1]))
    assert eval_gaussian(q, [2, 0, 0]) == pytest.approx(np.exp(-0.5), abs=1e-12)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=50, deadline=None)
def test_eval_gaussian_rotation_invariance(seed):
    rng = np.random.default_rng(seed)
    q, r = random_quat(rng), random_quat(rng)
    scale = rng.uniform(0.2, 2.0, 3)
    mu = rng.standard_normal(3)
    x = rng.standard_normal(3)
    a = eval_gaussian(GaussianPrimitive(mu, q, scale), x)
    R = quat_to_rotmat(r)
    # rotate the primitive's frame and the offset together
    q2 = rotmat_to_quat(R @ quat_to_rotmat(q))
    b = eval_gaussian(GaussianPrimitive(mu, q2, scale), mu + R @ (x - mu))
    assert abs(a - b) < 1e-9


def test_primitive_invariants():
    with pytest.raises(InvalidParameterError):
        GaussianPrimitive(np.zeros(3), IDQ, np.array([1.0, 0.0, 1.0]))
    with pytest.raises(InvalidParameterError):
        GaussianPrimitive(np.zeros(3), IDQ, np.ones(3), normal=np.array([0.0, 0, 2]))
    p = GaussianPrimitive(np.zeros(3), IDQ, np.ones(3), opacity=1.5, metallic=-1, roughness=2,
                          albedo=np.array([2.0, -1, 0.5]))
    assert p.opacity == 1.0 and p.metallic == 0.0 and p.roughness == 1.0
    np.testing.assert_array_equal(p.albedo, [1.0, 0.0, 0.5])


def test_camera_invariants():
    with pytest.raises(InvalidParameterError):
        CameraView(np.zeros(3), np.eye(3), (1, 1), (0, 0), (4, 4), 1.0, 0.5)
    with pytest.raises(InvalidParameterError):
        CameraView(np.zeros(3), np.eye(3), (1, 1), (0, 0), (0, 4), 0.1, 1.0)


def test_project_on_axis():
    cam = CameraView(np.zeros(3), np.eye(3), (100.0, 100.0), (64.0, 64.0), (128, 128), 0.1, 100.0)
    p = GaussianPrimitive(np.array([0.0, 0, 5]), IDQ, np.full(3, 0.1))
    pr = project(p, cam)
    np.testing.assert_allclose(pr.center_px, [64, 64])
    assert pr.view_depth == 5.0
    # isotropic sigma^2 I on axis: cov2d = (f sigma / z)^2 I
    np.testing.assert_allclose(pr.cov2d, (100 * 0.1 / 5) ** 2 * np.eye(2), rtol=1e-12)


def test_project_culls_behind_camera():
    cam = CameraView(np.zeros(3), np.eye(3), (100.0, 100.0), (64.0, 64.0), (128, 128), 0.1, 100.0)
    assert project(GaussianPrimitive(np.array([0.0, 0, -5]), IDQ, np.ones(3)), cam) is None
    assert project(GaussianPrimitive(np.array([0.0, 0, 0.05]), IDQ, np.ones(3)), cam) is None


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_project_center_matches_pinhole(seed):
    rng = np.random.default_rng(seed)
    cam = look_at(rng.uniform(-2, 2, 3), rng.uniform(-0.2, 0.2, 3) + [0, 0, 0.0], focal=50.0, resolution=(64, 48))
    p = GaussianPrimitive(rng.uniform(-0.3, 0.3, 3), random_quat(rng), np.full(3, 0.05))
    pr = project(p, cam)
    if pr is None:
        return
    uvw = cam.intrinsics @ cam.world_to_camera(p.mean)
    assert np.linalg.norm(uvw[:2] / uvw[2] - pr.center_px) < 0.5
    assert pr.view_depth > 0


def test_project_batch_matches_single(rng):
    cam = CameraView(np.zeros(3), np.eye(3), (60.0, 60.0), (31.5, 31.5), (64, 64), 0.1, 100.0)
    prims = random_primitives(rng, 20)
    g = Gaussians.from_primitives(prims)
    pb = project_batch(g, cam)
    for k, i in enumerate(pb.index.tolist()):
        pr = project(prims[i], cam)
        np.testing.assert_allclose(pb.center[k].detach().numpy(), pr.center_px, atol=1e-9)
        assert abs(pb.depth[k].item() - pr.view_depth) < 1e-9


def test_gaussians_round_trip(rng):
    prims = random_primitives(rng, 5)
    back = Gaussians.from_primitives(prims).to_primitives()
    for a, b in zip(prims, back):
        np.testing.assert_allclose(a.mean, b.mean)
        np.testing.assert_allclose(a.scale, b.scale, rtol=1e-12)
        np.testing.assert_allclose(a.covariance, b.covariance, atol=1e-12)
        assert abs(a.opacity - b.opacity) < 1e-9


def test_sh_constant_color():
    rgb = np.array([[0.2, 0.5, 0.9]])
    c = eval_sh(torch.as_tensor(rgb_to_sh0(rgb))[:, None, :], torch.tensor([[0.0, 0, 1]]))
    np.testing.assert_allclose(c.numpy(), rgb, atol=1e-12)
