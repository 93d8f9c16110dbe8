import filecmp
import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from urfgs.core import Gaussians
from urfgs.radio.propagation import SPEED_OF_LIGHT, RadioLink, render_spectrum
from urfgs.scene import (Checkpoint, CheckpointError, CheckpointVersionError, DatasetError, DescriptorError,
                         SceneDescriptor, builtin, compute_metrics, generate_synthetic, load_checkpoint,
                         load_dataset, oracle_power, psnr, save_checkpoint, save_dataset, ssim)
from urfgs.scene.checkpoint import decode_checkpoint, encode_checkpoint
from urfgs.scene.records import load_spectrum, read_power_csv, save_spectrum, write_power_csv
from urfgs.scene.synthetic import image_source_paths, render_view, toy_mirror_geometry

from conftest import random_primitives

# LOS + mirror reflection power of the built-in toy_mirror link, frozen from the image-source oracle
TOY_MIRROR_POWER_W = 3.686596203471441e-05


def random_gaussians(rng, n):
    g = Gaussians.from_primitives(random_primitives(rng, n))
    g.sh = g.sh + 0.01 * np.pi   # non-trivial bits everywhere
    return g


def assert_bitwise_equal(a: Gaussians, b: Gaussians):
    for f in Gaussians.FIELDS:
        x, y = getattr(a, f).detach().numpy(), getattr(b, f).detach().numpy()
        assert x.shape == y.shape and x.tobytes() == y.tobytes(), f


# -- checkpoints ---------------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    g = random_gaussians(rng, 100)
    save_checkpoint(tmp_path / "a.ckpt", g, {"seed": 3, "iteration": 10, "config_hash": "abc"})
    ck = load_checkpoint(tmp_path / "a.ckpt")
    assert_bitwise_equal(g, ck.gaussians)
    assert ck.meta == {"seed": 3, "iteration": 10, "config_hash": "abc"}


def test_checkpoint_empty_round_trip():
    ck = decode_checkpoint(encode_checkpoint(Checkpoint(Gaussians.empty(sh_degree=1))))
    assert len(ck.gaussians) == 0 and ck.gaussians.sh.shape == (0, 4, 3)


@given(st.integers(0, 2**31 - 1), st.integers(0, 20))
@settings(max_examples=20, deadline=None)
def test_checkpoint_round_trip_property(seed, n):
    rng = np.random.default_rng(seed)
    g = random_gaussians(rng, n) if n else Gaussians.empty()
    assert_bitwise_equal(g, decode_checkpoint(encode_checkpoint(Checkpoint(g))).gaussians)


@pytest.mark.parametrize("cut", [0, 10, 40, 200, -1])
def test_truncated_checkpoint(rng, cut):
    data = encode_checkpoint(Checkpoint(random_gaussians(rng, 5)))
    with pytest.raises(CheckpointError) as e:
        decode_checkpoint(data[:cut])
    assert e.value.offset is not None


def test_corrupt_checkpoint_checksum(rng):
    data = bytearray(encode_checkpoint(Checkpoint(random_gaussians(rng, 5))))
    data[60] ^= 0xFF
    with pytest.raises(CheckpointError, match="checksum"):
        decode_checkpoint(bytes(data))


def test_checkpoint_version_bump(rng):
    data = bytearray(encode_checkpoint(Checkpoint(random_gaussians(rng, 2))))
    data[8] += 1   # major version, little-endian u16 right after the magic
    with pytest.raises(CheckpointVersionError):
        decode_checkpoint(bytes(data))


def test_checkpoint_bad_magic(rng):
    data = b"NOTACKPT" + encode_checkpoint(Checkpoint(random_gaussians(rng, 1)))[8:]
    with pytest.raises(CheckpointError) as e:
        decode_checkpoint(data)
    assert e.value.offset == 0


# -- metrics ------------------------------------------------------------------------------------------

def test_metrics_identical(rng):
    x = rng.uniform(0, 1, (16, 16, 3))
    p, s = compute_metrics(x, x)
    assert p == float("inf") and s == pytest.approx(1.0)


def test_psnr_uniform_offset():
    assert psnr(np.full((8, 8, 3), 0.5), np.full((8, 8, 3), 0.6)) == pytest.approx(20.0)


def test_ssim_negative_for_inverted_checkerboard():
    cb = (np.indices((32, 32)).sum(0) % 2).astype(float)
    img = np.repeat(cb[..., None], 3, -1)
    assert ssim(img, 1 - img) < 0


def test_ssim_matches_skimage(rng):
    from skimage.metrics import structural_similarity
    a = rng.uniform(0, 1, (24, 20, 3))
    b = np.clip(a + 0.2 * rng.standard_normal(a.shape), 0, 1)
    ref = structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                data_range=1.0, channel_axis=-1)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-12)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20, deadline=None)
def test_metrics_self_property(seed):
    x = np.random.default_rng(seed).uniform(0, 1, (12, 12, 3))
    p, s = compute_metrics(x, x)
    assert p == float("inf") and s == pytest.approx(1.0, abs=1e-12)


# -- synthetic scenes -----------------------------------------------------------------------------

def test_fronto_parallel_plane():
    ds = generate_synthetic(builtin("plane"), seed=0)
    v = ds.views[0]
    np.testing.assert_allclose(v.depth, 2.0, atol=1e-12)
    np.testing.assert_allclose(v.normal, np.broadcast_to([0, 0, -1.0], v.normal.shape), atol=1e-12)


def test_empty_room_los():
    ds = generate_synthetic(builtin("empty_room"), seed=0)
    s = ds.channel_samples[0]
    lam = SPEED_OF_LIGHT / s.frequency
    expect = 10 * np.log10((lam / (4 * np.pi * 5.0)) ** 2) + 30
    assert s.power_dbm == pytest.approx(expect, abs=1e-9)
    assert s.spectrum.sum() == pytest.approx((lam / (4 * np.pi * 5.0)) ** 2, rel=1e-12)


def test_one_mirror_room():
    desc = builtin("toy_mirror")
    tx, rx = desc.links[0]
    assert oracle_power(desc.surfaces, tx, rx, desc.frequency) == pytest.approx(TOY_MIRROR_POWER_W, rel=1e-12)
    paths = image_source_paths(desc.surfaces, tx, rx, desc.frequency)
    assert sorted(k for _, _, k in paths) == ["los", "reflection:0"]
    # hand check: mirror with F = 1, unfolded length = |image(tx) - rx|
    lam = SPEED_OF_LIGHT / desc.frequency
    img = tx * np.array([1, 1, -1.0])
    refl = (lam / (4 * np.pi * np.linalg.norm(img - rx))) ** 2
    los = (lam / (4 * np.pi * np.linalg.norm(tx - rx))) ** 2
    assert los + refl == pytest.approx(TOY_MIRROR_POWER_W, rel=1e-12)


def test_toy_mirror_geometry_on_bin_centres():
    tx, rx = toy_mirror_geometry()
    spec = generate_synthetic(builtin("toy_mirror"), 0).channel_samples[0].spectrum
    assert spec.shape == (18, 36) and set(zip(*np.nonzero(spec))) == {(8, 18), (13, 18)}


def test_empty_descriptor_rejected():
    with pytest.raises(DescriptorError):
        generate_synthetic(SceneDescriptor("nothing"), 0)
    with pytest.raises(DescriptorError):
        builtin("no_such_scene")


def test_generation_deterministic(tmp_path):
    for i in range(2):
        save_dataset(generate_synthetic(builtin("toy_mirror"), seed=7), tmp_path / str(i))
    cmp = filecmp.dircmp(tmp_path / "0", tmp_path / "1")
    files = []
    for root, _, names in os.walk(tmp_path / "0"):
        files += [os.path.relpath(os.path.join(root, n), tmp_path / "0") for n in names]
    assert files
    for f in files:
        assert (tmp_path / "0" / f).read_bytes() == (tmp_path / "1" / f).read_bytes(), f
    assert not cmp.left_only and not cmp.right_only


def test_different_seed_changes_priors():
    a = generate_synthetic(builtin("plane"), 1).views[0]
    b = generate_synthetic(builtin("plane"), 2).views[0]
    assert not np.array_equal(a.prior_depth, b.prior_depth)
    np.testing.assert_array_equal(a.rgb, b.rgb)


# -- dataset files ----------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def toy_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("toy")
    save_dataset(generate_synthetic(builtin("toy_mirror"), seed=7), d)
    return d


def test_dataset_round_trip(toy_dir):
    ds = load_dataset(toy_dir)
    ref = generate_synthetic(builtin("toy_mirror"), seed=7)
    assert len(ds.views) == len(ref.views) == 4
    for a, b in zip(ds.views, ref.views):
        np.testing.assert_array_equal(a.rgb, b.rgb)
        np.testing.assert_array_equal(a.prior_depth, b.prior_depth)
        np.testing.assert_array_equal(a.camera.rotation, b.camera.rotation)
        np.testing.assert_array_equal(a.sparse.depths, b.sparse.depths)
        assert a.split == b.split
    s, r = ds.channel_samples[0], ref.channel_samples[0]
    np.testing.assert_allclose(s.spectrum, r.spectrum, rtol=1e-12)
    assert s.power_dbm == r.power_dbm


def _corrupt(toy_dir, tmp_path, edit):
    import shutil
    d = tmp_path / "bad"
    shutil.copytree(toy_dir, d)
    m = json.loads((d / "manifest.json").read_text())
    edit(m, d)
    (d / "manifest.json").write_text(json.dumps(m))
    return d


@pytest.mark.parametrize("edit, field", [
    (lambda m, d: m["views"][1].__setitem__("rgb", "views/missing.png"), "views[1].rgb"),
    (lambda m, d: m["views"][0]["camera"].__setitem__("resolution", [16, 16]), "views[0].rgb"),
    (lambda m, d: m["views"][2]["camera"].__setitem__("resolution", [31, 32]), "views[2].camera.resolution"),
    (lambda m, d: m["views"][0].pop("camera"), "views[0].camera"),
    (lambda m, d: m.__setitem__("version", 99), "version"),
    (lambda m, d: m["channel_samples"][0].__setitem__("frequency", -1.0), "channel_samples[0]"),
    (lambda m, d: m["channel_samples"][0].__setitem__("spectrum", "spectra/none.npy"), "channel_samples[0].spectrum"),
    (lambda m, d: np.save(d / m["views"][0]["prior_depth"], np.zeros((3, 3))), "views[0].prior_depth"),
])
def test_loader_field_diagnostics(toy_dir, tmp_path, edit, field):
    d = _corrupt(toy_dir, tmp_path, edit)
    with pytest.raises(DatasetError) as e:
        load_dataset(d)
    assert e.value.field == field


def test_loader_missing_manifest(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)


# -- records ----------------------------------------------------------------------------------------------

def test_power_csv_round_trip(tmp_path):
    rows = [(np.array([0, 1, 2.0]), np.array([3, 4, 5.0]), 1e-6), (np.zeros(3), np.ones(3), 0.0)]
    write_power_csv(tmp_path / "p.csv", rows)
    back = read_power_csv(tmp_path / "p.csv")
    assert back[0][2] == pytest.approx(-30.0) and back[1][2] == -300.0
    np.testing.assert_array_equal(back[0][1], [3, 4, 5])


def test_spectrum_files(tmp_path):
    spec = render_spectrum(RadioLink([0, 0, 1], [2, 0, 1], 2.4e9), None, dynamic_range=(-80, -20))
    paths = save_spectrum(str(tmp_path / "s"), spec)
    assert all(os.path.exists(p) for p in paths)
    power, meta = load_spectrum(str(tmp_path / "s"))
    np.testing.assert_array_equal(power, spec.power)
    assert meta["dynamic_range_dbm"] == [-80.0, -20.0] and meta["shape"] == [18, 36]
    assert len(meta["elevation_edges_deg"]) == 19 and meta["azimuth_edges_deg"][0] == -180.0


def test_render_view_matches_plane_hit():
    desc = builtin("plane")
    rgb, depth, normal, hit = render_view(desc.surfaces, desc.cameras[0])
    assert hit.all() and np.allclose(rgb, rgb[0, 0])


def test_gain_pattern_table(tmp_path):
    from urfgs.scene.records import load_gain_pattern
    th = [0.0, 90.0, 180.0]
    ph = [-180.0, 0.0, 180.0]
    gain = [[0.0, 0.0, 0.0], [-10.0, 10.0, -10.0], [0.0, 0.0, 0.0]]
    (tmp_path / "g.json").write_text(json.dumps({"theta_deg": th, "phi_deg": ph, "gain_dbi": gain}))
    f = load_gain_pattern(tmp_path / "g.json")
    np.testing.assert_allclose(f(np.pi / 2, 0.0), 10.0)
    np.testing.assert_allclose(f(np.pi / 2, np.pi), 0.1)
    np.testing.assert_allclose(f(np.pi / 4, 0.0), 10 ** 0.5)     # halfway in dB
    np.testing.assert_allclose(f(np.array([0.0, np.pi]), np.array([1.0, -2.0])), [1.0, 1.0])
    (tmp_path / "bad.json").write_text(json.dumps({"theta_deg": [0, 90], "phi_deg": ph, "gain_dbi": gain[:2]}))
    with pytest.raises(ValueError):
        load_gain_pattern(tmp_path / "bad.json")


def test_gain_pattern_scales_los_power(tmp_path):
    from urfgs.radio.propagation import RadioLink, trace_power
    from urfgs.scene.records import load_gain_pattern
    (tmp_path / "g.json").write_text(json.dumps({"theta_deg": [0, 180], "phi_deg": [-180, 180],
                                                 "gain_dbi": [[3.0, 3.0], [3.0, 3.0]]}))
    f = load_gain_pattern(tmp_path / "g.json")
    iso, _ = trace_power(RadioLink([0, 0, 1], [2, 1, 1], 2.4e9), None)
    both, _ = trace_power(RadioLink([0, 0, 1], [2, 1, 1], 2.4e9, 1.0, f, f), None)
    assert both == pytest.approx(iso * 10 ** 0.6, rel=1e-12)
