import csv
import json
import os

import numpy as np
import pytest

from urfgs.cli import EXIT_DATA, EXIT_DIVERGED, EXIT_OK, EXIT_USAGE, heatmap, load_grid, run


def tree(root):
    out = {}
    for base, _, files in os.walk(root):
        for f in files:
            p = os.path.join(base, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = fh.read()
    return out


def error_line(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


@pytest.fixture(scope="module")
def mirror_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("mirror")
    assert run(["gen", "--spec", "toy_mirror", "--out", str(root / "data")]) == EXIT_OK
    assert run(["fit", "--data", str(root / "data"), "--out", str(root / "fit"),
                "--stage1-iters", "150", "--stage2-iters", "3"]) == EXIT_OK
    return root


def test_gen_is_byte_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run(["gen", "--spec", "plane", "--seed", "4", "--out", str(tmp_path / name)]) == EXIT_OK
    a, b = tree(tmp_path / "a"), tree(tmp_path / "b")
    assert a and a == b
    assert "manifest.json" in a


def test_usage_errors(tmp_path, capsys):
    assert run([]) == EXIT_USAGE
    assert error_line(capsys)["code"] == EXIT_USAGE
    assert run(["gen", "--out", str(tmp_path)]) == EXIT_USAGE
    assert error_line(capsys)["error"] == "usage"
    assert run(["spectrum", "--scene", "x", "--tx", "1,2", "--rx", "0,0,0", "--out", str(tmp_path)]) == EXIT_USAGE


def test_data_errors(tmp_path, capsys):
    assert run(["fit", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == EXIT_DATA
    e = error_line(capsys)
    assert e["error"] == "data" and "missing" in e["message"]
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "manifest.json").write_text("{not json")
    assert run(["fit", "--data", str(bad), "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert run(["gen", "--spec", "no_such_scene", "--out", str(tmp_path / "g")]) == EXIT_DATA
    (tmp_path / "junk.ckpt").write_bytes(b"nope")
    assert run(["spectrum", "--scene", str(tmp_path / "junk.ckpt"), "--tx", "0,0,1", "--rx", "1,0,1",
                "--out", str(tmp_path / "s")]) == EXIT_DATA


def test_unknown_config_key(tmp_path, capsys):
    run(["gen", "--spec", "plane", "--out", str(tmp_path / "d")])
    (tmp_path / "c.json").write_text('{"learning_rate": 1}')
    assert run(["fit", "--data", str(tmp_path / "d"), "--config", str(tmp_path / "c.json"),
                "--out", str(tmp_path / "f")]) == EXIT_DATA
    assert "learning_rate" in error_line(capsys)["message"]


def test_divergence_exit(tmp_path, capsys):
    run(["gen", "--spec", "plane", "--out", str(tmp_path / "d")])
    (tmp_path / "c.json").write_text('{"lr": {"means": 1e308}}')
    code = run(["fit", "--data", str(tmp_path / "d"), "--config", str(tmp_path / "c.json"),
                "--stage1-iters", "5", "--stage2-iters", "0", "--out", str(tmp_path / "f")])
    assert code == EXIT_DIVERGED
    assert error_line(capsys)["error"] == "diverged"
    assert (tmp_path / "f" / "last_good.ckpt").exists()
    assert not (tmp_path / "f" / "model.ckpt").exists()


def read_metrics(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return {r["view"]: r for r in rows}


def test_fit_then_eval_improves(mirror_run):
    root = mirror_run
    for name in ("init", "model"):
        assert run(["eval", "--scene", str(root / "fit" / f"{name}.ckpt"), "--data", str(root / "data"),
                    "--split", "all", "--out", str(root / f"eval_{name}")]) == EXIT_OK
    before = float(read_metrics(root / "eval_init" / "metrics.csv")["mean"]["psnr_db"])
    after = float(read_metrics(root / "eval_model" / "metrics.csv")["mean"]["psnr_db"])
    assert after > before
    lines = (root / "fit" / "loss.csv").read_text().splitlines()
    assert len(lines) == 1 + 150 + 4


def test_render_outputs(mirror_run):
    root = mirror_run
    assert run(["render", "--scene", str(root / "fit" / "model.ckpt"), "--data", str(root / "data"),
                "--views", "0", "--out", str(root / "render")]) == EXIT_OK
    names = set(os.listdir(root / "render"))
    assert "view000_color.png" in names
    d = np.load(root / "render" / "view000_depth.npy")
    assert d.ndim == 2 and np.all(np.isfinite(d))
    assert run(["render", "--scene", str(root / "fit" / "model.ckpt"), "--data", str(root / "data"),
                "--views", "99", "--out", str(root / "render")]) == EXIT_DATA


def test_spectrum_outside_scene(mirror_run):
    root = mirror_run
    out = root / "spec"
    assert run(["spectrum", "--scene", str(root / "fit" / "model.ckpt"), "--tx", "0,0,1", "--rx", "90,90,1",
                "--height", "9", "--width", "18", "--bounces", "1", "--out", str(out)]) == EXIT_OK
    spec = np.load(out / "spectrum.npy")
    assert spec.shape == (9, 18) and np.all(np.isfinite(spec))
    meta = json.loads((out / "spectrum.json").read_text())
    assert meta["shape"] == [9, 18]
    assert (out / "spectrum.png").exists()


def test_predict_power_and_rank(tmp_path):
    (tmp_path / "tx.csv").write_text("x,y,z\n0,0,1\n")
    (tmp_path / "rx.csv").write_text("x,y,z\n3,4,1\n1,0,1\n")
    assert run(["predict-power", "--scene", "none", "--tx-csv", str(tmp_path / "tx.csv"),
                "--rx-csv", str(tmp_path / "rx.csv"), "--out", str(tmp_path / "p")]) == EXIT_OK
    with open(tmp_path / "p" / "power.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 2
    assert float(rows[1]["p_rx_dbm"]) > float(rows[0]["p_rx_dbm"])
    (tmp_path / "cand.csv").write_text("x,y,z\n5,5,1\n0.5,0,1\n")
    assert run(["rank-aps", "--scene", "none", "--candidates", str(tmp_path / "cand.csv"),
                "--rx", str(tmp_path / "rx.csv"), "--out", str(tmp_path / "r")]) == EXIT_OK
    with open(tmp_path / "r" / "ranking.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert rows[0]["candidate"] == "1"


def test_plan_path_outputs(tmp_path):
    power = np.full((4, 5), -50.0)
    power[1, 1:4] = -90.0
    grid = {"power_dbm": power.tolist(), "start": [0, 2], "goal": [3, 2]}
    (tmp_path / "g.json").write_text(json.dumps(grid))
    out = tmp_path / "plan"
    assert run(["plan-path", "--grid", str(tmp_path / "g.json"), "--threshold-dbm", "-70", "--max-steps", "9",
                "--fail-prob", "0.2", "--plot", "--out", str(out)]) == EXIT_OK
    assert sorted(os.listdir(out)) == ["path.csv", "path.png", "plan.json"]
    summary = json.loads((out / "plan.json").read_text())
    assert summary["feasible"] and summary["failure_fraction"] == 0.0
    assert summary["baseline_failure_fraction"] > 0
    assert summary["improvement_rate_percent"] == pytest.approx(100.0)
    with open(out / "path.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert (int(rows[0]["row"]), int(rows[0]["col"])) == (0, 2)
    assert (int(rows[-1]["row"]), int(rows[-1]["col"])) == (3, 2)


def test_plan_grid_errors(tmp_path):
    (tmp_path / "g.json").write_text(json.dumps({"power_dbm": [[0, 0]], "start": [0, 0]}))
    assert run(["plan-path", "--grid", str(tmp_path / "g.json"), "--threshold-dbm", "-70", "--max-steps", "3",
                "--out", str(tmp_path / "o")]) == EXIT_DATA
    (tmp_path / "g.json").write_text(json.dumps({"power_dbm": [[0, 0]], "start": [0, 0], "goal": [4, 4]}))
    assert run(["plan-path", "--grid", str(tmp_path / "g.json"), "--threshold-dbm", "-70", "--max-steps", "3",
                "--out", str(tmp_path / "o")]) == EXIT_DATA


def test_heatmap_marks_path(tmp_path):
    (tmp_path / "g.json").write_text(json.dumps({"power_dbm": [[-50, -90], [-60, -40]], "start": [0, 0],
                                                 "goal": [1, 1], "obstacles": [[False, True], [False, False]]}))
    g = load_grid(str(tmp_path / "g.json"), -70, 4, 0.0)
    img = heatmap(g, [(0, 0), (1, 0), (1, 1)], scale=6)
    assert img.shape == (12, 12, 3)
    assert np.all(img[2:4, 2:4] == 1.0)        # path marker
    assert np.all(img[0:6, 6:12] == 0.0)       # obstacle
