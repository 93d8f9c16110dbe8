import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from urfgs.priors import (ALL_TRANSFORMS, IDENTITY, AlignmentError, SparseDepthMap, align_depth,
                          align_normal_frame, pseudo_normals_from_depth)

K = np.array([[20.0, 0, 7.5], [0, 20.0, 7.5], [0, 0, 1]])


def lstsq_oracle(x, y):
    """Normal equations with an explicit 2x2 inverse."""
    A = np.array([[np.sum(x * x), np.sum(x)], [np.sum(x), len(x)]])
    rhs = np.array([np.sum(x * y), np.sum(y)])
    det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    inv = np.array([[A[1, 1], -A[0, 1]], [-A[1, 0], A[0, 0]]]) / det
    return inv @ rhs


def test_exact_recovery():
    mono = np.arange(1.0, 26.0).reshape(5, 5)
    rows, cols = np.array([0, 1, 2, 3, 4]), np.array([4, 2, 0, 3, 1])
    al = align_depth(mono, SparseDepthMap(rows, cols, 2 * mono[rows, cols] + 1))
    assert abs(al.scale - 2) < 1e-9 and abs(al.shift - 1) < 1e-9
    np.testing.assert_array_equal(al.values, al.scale * mono + al.shift)


def test_identity_fit():
    mono = np.linspace(1, 4, 12).reshape(3, 4)
    r, c = np.array([0, 1, 2]), np.array([0, 2, 3])
    al = align_depth(mono, SparseDepthMap(r, c, mono[r, c]))
    assert abs(al.scale - 1) < 1e-12 and abs(al.shift) < 1e-12


def test_three_point_fit_matches_oracle():
    mono = np.array([[1.0, 2.0, 3.0]])
    sp = SparseDepthMap([0, 0, 0], [0, 1, 2], [2.1, 3.9, 6.0])
    al = align_depth(mono, sp)
    a, b = lstsq_oracle(np.array([1.0, 2, 3]), np.array([2.1, 3.9, 6.0]))
    assert al.scale == pytest.approx(a, abs=1e-12) and al.shift == pytest.approx(b, abs=1e-12)
    assert al.scale == pytest.approx(1.95, abs=1e-9) and al.shift == pytest.approx(0.1, abs=1e-9)


def test_errors():
    mono = np.ones((2, 2))
    with pytest.raises(AlignmentError):
        align_depth(mono, SparseDepthMap([0], [0], [1.0]))
    with pytest.raises(AlignmentError):
        align_depth(mono, SparseDepthMap([0, 1], [0, 1], [1.0, 2.0]))
    with pytest.raises(AlignmentError):  # negative slope is rejected
        align_depth(np.array([[1.0, 2.0]]), SparseDepthMap([0, 0], [0, 1], [3.0, 1.0]))


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_optimality_against_perturbations(seed):
    rng = np.random.default_rng(seed)
    mono = rng.uniform(1, 5, (8, 8))
    n = 10
    r, c = rng.integers(0, 8, n), rng.integers(0, 8, n)
    sparse = 1.7 * mono[r, c] + 0.3 + 0.05 * rng.standard_normal(n)
    al = align_depth(mono, SparseDepthMap(r, c, np.abs(sparse)))
    res = lambda a, b: np.sum((a * mono[r, c] + b - np.abs(sparse)) ** 2)
    best = res(al.scale, al.shift)
    for da, db in rng.normal(0, 0.1, (200, 2)):
        assert best <= res(al.scale + da, al.shift + db) + 1e-12


def test_pseudo_normals_fronto_parallel():
    n = pseudo_normals_from_depth(np.full((16, 16), 3.0), K)
    np.testing.assert_allclose(n[1:-1, 1:-1], np.broadcast_to([0, 0, -1.0], (14, 14, 3)), atol=1e-12)


def test_pseudo_normals_ramp_along_x():
    # z = 3 + 0.2 x in camera space; the camera-facing plane normal is (0.2, 0, -1)/|.|
    rows, cols = np.mgrid[0:16, 0:16].astype(float)
    xn = (cols - K[0, 2]) / K[0, 0]
    depth = 3.0 / (1 - 0.2 * xn)
    n = pseudo_normals_from_depth(depth, K)
    expect = np.array([0.2, 0.0, -1.0]) / np.hypot(0.2, 1.0)
    np.testing.assert_allclose(n[2:-2, 2:-2], np.broadcast_to(expect, (12, 12, 3)), atol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(n, axis=-1), 1.0, atol=1e-12)


def test_pseudo_normals_single_pixel():
    np.testing.assert_allclose(pseudo_normals_from_depth(np.array([[2.0]]), K), [[[0, 0, -1.0]]])


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_pseudo_normals_unit_and_facing(seed):
    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[0:16, 0:16].astype(float)
    a, b, c = rng.uniform(-0.05, 0.05, 3)
    depth = 4.0 + a * cols + b * rows + c * np.sin(cols / 3.0)
    n = pseudo_normals_from_depth(depth, K)
    np.testing.assert_allclose(np.linalg.norm(n, axis=-1), 1.0, atol=1e-9)
    rays = np.stack([(cols - 7.5) / 20, (rows - 7.5) / 20, np.ones_like(cols)], -1)
    assert np.all(np.sum(n * rays, -1) < 0)


def structured_normals(h=12, w=12):
    rows, cols = np.mgrid[0:h, 0:w].astype(float)
    v = np.stack([np.sin(cols / 4.0), 0.5 * np.cos(rows / 3.0), -np.ones_like(rows) - 0.3 * cols / w], -1)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def test_frame_group_is_complete():
    mats = {tuple(t.matrix.ravel()) for t in ALL_TRANSFORMS}
    assert len(mats) == 48 and ALL_TRANSFORMS[0] is IDENTITY


def test_identity_alignment():
    n = structured_normals()
    out, t, score = align_normal_frame(n, n)
    assert t == IDENTITY and score == pytest.approx(1.0)
    np.testing.assert_array_equal(out, n)


def test_swap_and_flip_recovery():
    pseudo = structured_normals()
    mono = pseudo[..., [0, 2, 1]] * np.array([1.0, -1.0, 1.0])   # y<->z swapped, new y (old z) negated
    out, t, score = align_normal_frame(mono, pseudo)
    np.testing.assert_allclose(out, pseudo, atol=1e-12)
    assert score > 0.999


def test_noise_gives_low_similarity():
    rng = np.random.default_rng(3)
    noise = rng.standard_normal((40, 40, 3))
    _, _, score = align_normal_frame(noise, structured_normals(40, 40))
    assert abs(score) < 0.1


def test_zero_pseudo_map_errors():
    with pytest.raises(AlignmentError):
        align_normal_frame(structured_normals(), np.zeros((12, 12, 3)))


@pytest.mark.parametrize("t", ALL_TRANSFORMS[::5])
def test_alignment_equivariance(t):
    pseudo = structured_normals()
    x = structured_normals()[::-1] * 0.9 + 0.1 * pseudo
    ref, _, _ = align_normal_frame(x, pseudo)
    out, _, _ = align_normal_frame(t.apply(x), pseudo)
    np.testing.assert_allclose(out, ref, atol=1e-12)
