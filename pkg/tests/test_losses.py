import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from urfgs.core import Gaussians
from urfgs.losses import (LossReport, depth_loss, edge_weights, normal_loss, normalized_db,
                          photometric_loss, spectrum_loss, ssim_torch)
from urfgs.priors import AlignedDepthMap
from urfgs.raster import rasterize

from conftest import axis_camera, random_primitives
from gradcheck import check


def test_depth_loss_zero_when_equal(rng):
    d = rng.uniform(1, 3, (8, 8))
    assert depth_loss(d, AlignedDepthMap(d, 1.0, 0.0), rng.uniform(0, 1, (8, 8, 3))).item() == 0.0


def test_depth_loss_constant_rgb_unit_log():
    d = np.full((6, 7), 2.0)
    loss = depth_loss(d + np.e - 1, d, np.full((6, 7, 3), 0.4))
    assert loss.item() == pytest.approx(1.0, abs=1e-12)


def test_depth_loss_edges_downweight(rng):
    d = np.full((8, 8), 2.0)
    flat = depth_loss(d + 1, d, np.full((8, 8, 3), 0.5)).item()
    busy = depth_loss(d + 1, d, rng.uniform(0, 1, (8, 8, 3))).item()
    assert busy < flat


def test_edge_weights_constant_image():
    np.testing.assert_array_equal(edge_weights(np.full((4, 5, 3), 0.3)), 1.0)


def test_normal_loss_examples():
    n = np.broadcast_to([0.0, 0.0, -1.0], (4, 4, 3))
    assert [x.item() for x in normal_loss(n, n)] == [0.0, 0.0, 0.0]
    l1, smooth, total = normal_loss(n, np.broadcast_to([0.0, 1.0, 0.0], (4, 4, 3)))
    assert smooth.item() == 0.0 and l1.item() > 0
    two = np.array([[[1.0, 0, 0]], [[0.0, 1, 0]]])
    l1, smooth, total = normal_loss(two, two)
    assert l1.item() == 0.0 and smooth.item() == 2.0 and total.item() == 2.0


def test_normal_loss_mean_reduction():
    two = np.array([[[1.0, 0, 0]], [[0.0, 1, 0]]])
    assert normal_loss(two, two, smooth_reduction="mean")[1].item() == 2.0
    big = np.zeros((3, 3, 3))
    big[1, 1] = [1, 0, 0]
    # 4 neighbour pairs touch the centre pixel, out of 12
    assert normal_loss(big, big, smooth_reduction="mean")[1].item() == pytest.approx(4 / 12)


def test_photometric_examples(rng):
    img = rng.uniform(0.2, 0.8, (12, 12, 3))
    assert photometric_loss(img, img).item() == pytest.approx(0.0, abs=1e-12)
    off = photometric_loss(img, img + 0.1, lam=0.0).item()
    assert off == pytest.approx(0.1, abs=1e-12)
    shifted = photometric_loss(img, img + 0.1).item()
    inverted = photometric_loss(img, 1.0 - img).item()
    assert 0 < shifted < inverted


def test_ssim_torch_matches_skimage(rng):
    from skimage.metrics import structural_similarity
    a = rng.uniform(0, 1, (20, 20, 3))
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
    ours = ssim_torch(torch.as_tensor(a), torch.as_tensor(b)).item()
    ref = structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                data_range=1.0, channel_axis=-1)
    # both evaluate the same windows; skimage averages after cropping 5 pixels per side
    assert ours == pytest.approx(ref, abs=1e-9)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_losses_non_negative(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0, 1, (2, 9, 9, 3))
    assert photometric_loss(a, b).item() >= 0
    assert depth_loss(a[..., 0], b[..., 0], a).item() >= 0
    assert all(x.item() >= 0 for x in normal_loss(a, b))
    assert spectrum_loss(a[..., 0] * 1e-6, b[..., 0] * 1e-6, (-90, -20)).item() >= 0


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=25, deadline=None)
def test_depth_and_normal_zero_iff_equal(seed):
    rng = np.random.default_rng(seed)
    d = rng.uniform(1, 4, (6, 6))
    n = rng.standard_normal((6, 6, 3))
    rgb = rng.uniform(0, 1, (6, 6, 3))
    assert depth_loss(d, d, rgb).item() == 0.0
    assert normal_loss(n, n)[0].item() == 0.0
    i, j = rng.integers(0, 6, 2)
    d2, n2 = d.copy(), n.copy()
    d2[i, j] += 0.5
    n2[i, j, 0] += 0.5
    assert depth_loss(d2, d, rgb).item() > 0
    assert normal_loss(n2, n)[0].item() > 0


def test_depth_loss_mask():
    d = np.full((4, 4), 2.0)
    r = d.copy()
    r[0, 0] = 10.0
    m = np.ones((4, 4), bool)
    m[0, 0] = False
    assert depth_loss(r, d, np.zeros((4, 4, 3)), m).item() == 0.0


def test_normalized_db_range():
    lin = np.array([0.0, 1e-12, 1e-6, 1.0])
    v = normalized_db(lin, (-60.0, 0.0)).numpy()
    np.testing.assert_allclose(v, [0.0, 0.0, 0.5, 1.0])


def test_loss_report_total():
    r = LossReport(1.0, 2.0, 3.0, 4.0, 5.0)
    assert r.total == pytest.approx(1.0 + 0.1 * 2 + 0.05 * 7 + 5.0)
    assert r.row()["total"] == r.total


def test_photometric_gradient_small_scene(rng):
    cam = axis_camera(res=(12, 12), focal=10.0)
    g = Gaussians.from_primitives(random_primitives(rng, 4, spread=1.0, scale=(0.2, 0.5)))
    tgt = rng.uniform(0, 1, (12, 12, 3))
    err, _, _ = check(lambda g: photometric_loss(rasterize(g, cam).color, tgt), g, ("means", "sh"))
    assert np.mean(err < 1e-2) >= 0.95
