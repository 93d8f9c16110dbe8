import numpy as np
import pytest

from urfgs.core import CameraView, GaussianPrimitive, Gaussians, look_at

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_quat(rng):
    q = rng.standard_normal(4)
    return q / np.linalg.norm(q)


def random_unit(rng, n=None):
    v = rng.standard_normal((n or 1, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v if n else v[0]


def random_primitives(rng, n, spread=1.0, depth=(3.0, 6.0), scale=(0.05, 0.4)):
    """Primitives in front of a camera at the origin looking down +z."""
    out = []
    for _ in range(n):
        z = rng.uniform(*depth)
        mean = np.array([rng.uniform(-spread, spread), rng.uniform(-spread, spread), z])
        out.append(GaussianPrimitive(
            mean, random_quat(rng), rng.uniform(*scale, size=3), rng.uniform(0.05, 0.99),
            rng.uniform(-1.5, 1.5, size=(1, 3)), random_unit(rng), rng.uniform(0, 1, 3),
            rng.uniform(), rng.uniform()))
    return out


def axis_camera(res=(64, 64), focal=60.0):
    w, h = res
    return CameraView(np.zeros(3), np.eye(3), (focal, focal), ((w - 1) / 2, (h - 1) / 2), res, 0.1, 100.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def camera():
    return axis_camera()


def random_view(rng, res=(64, 64)):
    pos = rng.uniform(-0.5, 0.5, 3)
    target = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 4.5])
    return look_at(pos, target, up=(0.0, -1.0, 0.0), focal=rng.uniform(40, 80), resolution=res)
