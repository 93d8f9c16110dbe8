"""Command-line entry point: ``urfgs <command> [options]``.

Progress goes to stderr, data only to files under ``--out``.  Failures end
with one JSON line on stderr, ``{"error": kind, "code": n, "message": ...}``,
and exit codes 2 (usage), 3 (data) or 4 (numeric divergence).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4
log = logging.getLogger("urfgs")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _vec3(text: str) -> np.ndarray:
    try:
        v = np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}") from None
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise argparse.ArgumentTypeError(f"expected three finite numbers, got {text!r}")
    return v


def _existing(path: str) -> str:
    if not os.path.exists(path):
        raise DataError(f"file not found: {path}")
    return path


def _load_config(path):
    if path is None:
        return {}
    _existing(path)
    try:
        with open(path, encoding="utf-8") as f:
            cfg = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from None
    if not isinstance(cfg, dict):
        raise DataError(f"{path}: config must be a JSON object")
    return cfg


def _train_config(args):
    from .train import TrainConfig
    over = _load_config(args.config)
    fields = TrainConfig.__dataclass_fields__
    unknown = set(over) - set(fields)
    if unknown:
        raise DataError(f"{args.config}: unknown config keys {sorted(unknown)}")
    for name in ("stage1_iters", "stage2_iters"):
        v = getattr(args, name)
        if v is not None:
            over[name] = v
    over["seed"] = args.seed
    try:
        return TrainConfig(**over)
    except (TypeError, ValueError) as e:
        raise DataError(f"invalid training config: {e}") from None


def _radio_config(args, shape=None):
    from .radio.propagation import RadioConfig
    kw = {"max_bounces": args.bounces, "seed": args.seed}
    if shape is not None:
        kw["spectrum_shape"] = tuple(shape)
    return RadioConfig(**kw)


def _gains(args):
    from .radio.propagation import isotropic
    from .scene.records import load_gain_pattern
    return tuple(isotropic if p is None else load_gain_pattern(_existing(p)) for p in (args.tx_gain, args.rx_gain))


def _load_scene(path, allow_empty=False):
    from .scene.checkpoint import load_checkpoint
    if allow_empty and path == "none":
        return None     # free space
    return load_checkpoint(_existing(path)).gaussians


# -- commands --------------------------------------------------------------------------------

def cmd_gen(args):
    from .scene.dataset import save_dataset
    from .scene.synthetic import builtin, generate_synthetic
    ds = generate_synthetic(builtin(args.spec), args.seed)
    save_dataset(ds, args.out)
    log.info("wrote dataset %s with %d views, %d channel samples", args.spec, len(ds.views), len(ds.channel_samples))


def cmd_fit(args):
    from .scene.checkpoint import save_checkpoint
    from .scene.dataset import load_dataset
    from .train import TrainingDivergedError, fit
    ds = load_dataset(_existing(args.data))
    cfg = _train_config(args)
    meta = {"config_hash": cfg.digest(), "seed": cfg.seed}
    try:
        res = fit(ds, cfg)
    except TrainingDivergedError as e:
        save_checkpoint(os.path.join(args.out, "last_good.ckpt"), e.last_good,
                        {**meta, "stage": e.stage, "iteration": e.iteration})
        raise
    save_checkpoint(os.path.join(args.out, "init.ckpt"), res.initial, {**meta, "iteration": 0})
    save_checkpoint(os.path.join(args.out, "model.ckpt"), res.gaussians,
                    {**meta, "iteration": cfg.stage1_iters + cfg.stage2_iters})
    res.write_log(os.path.join(args.out, "loss.csv"))
    log.info("fitted %d primitives", len(res.gaussians))


def _views(ds, which):
    if which is None:
        return list(enumerate(ds.views))
    out = []
    for i in which:
        if not 0 <= i < len(ds.views):
            raise DataError(f"view index {i} out of range (dataset has {len(ds.views)})")
        out.append((i, ds.views[i]))
    return out


def cmd_render(args):
    import torch
    from .raster import rasterize
    from .scene.dataset import load_dataset, save_png
    g = _load_scene(args.scene)
    ds = load_dataset(_existing(args.data))
    for i, v in _views(ds, args.views):
        with torch.no_grad():
            gb = rasterize(g, v.camera).numpy()
        stem = os.path.join(args.out, f"view{i:03d}")
        save_png(stem + "_color.png", np.clip(gb["color"], 0, 1))
        for k in ("depth", "normal", "albedo", "roughness", "metallic", "accum_alpha"):
            np.save(f"{stem}_{k}.npy", np.ascontiguousarray(gb[k], dtype="<f8"))


def cmd_spectrum(args):
    from .radio.propagation import RadioLink, render_spectrum
    from .scene.records import save_spectrum
    g = _load_scene(args.scene, allow_empty=True)
    link = RadioLink(args.tx, args.rx, args.freq, args.tx_power, *_gains(args))
    dr = None if args.range is None else tuple(args.range)
    spec = render_spectrum(link, g, (args.height, args.width), _radio_config(args), dr)
    save_spectrum(os.path.join(args.out, "spectrum"), spec)


def cmd_predict_power(args):
    from .radio.propagation import RadioLink, trace_power
    from .scene.records import read_positions_csv, write_power_csv
    g = _load_scene(args.scene, allow_empty=True)
    txs = read_positions_csv(_existing(args.tx_csv))
    rxs = read_positions_csv(_existing(args.rx_csv))
    cfg = _radio_config(args)
    pattern = _gains(args)
    rows = []
    for tx in txs:
        for rx in rxs:
            p, _ = trace_power(RadioLink(tx, rx, args.freq, args.tx_power, *pattern), g, config=cfg, with_paths=False)
            rows.append((tx, rx, p))
    write_power_csv(os.path.join(args.out, "power.csv"), rows)


def cmd_eval(args):
    import torch
    from .raster import rasterize
    from .scene.dataset import load_dataset
    from .scene.metrics import compute_metrics
    g = _load_scene(args.scene)
    ds = load_dataset(_existing(args.data))
    views = [(i, v) for i, v in enumerate(ds.views) if args.split == "all" or v.split == args.split]
    if not views:
        raise DataError(f"no views in split {args.split!r}")
    rows = []
    for i, v in views:
        with torch.no_grad():
            img = np.clip(rasterize(g, v.camera).color.numpy(), 0, 1)
        p, s = compute_metrics(img, v.rgb)
        rows.append((v.name, p, s))
    finite = [p for _, p, _ in rows if np.isfinite(p)]
    with open(os.path.join(args.out, "metrics.csv"), "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["view", "psnr_db", "ssim"])
        for name, p, s in rows:
            w.writerow([name, "inf" if not np.isfinite(p) else repr(p), repr(s)])
        w.writerow(["mean", repr(float(np.mean(finite))) if finite else "inf", repr(float(np.mean([s for *_, s in rows])))])


def cmd_rank_aps(args):
    from .planner import rank_aps
    from .scene.records import read_positions_csv
    g = _load_scene(args.scene, allow_empty=True)
    cand = read_positions_csv(_existing(args.candidates))
    rxs = read_positions_csv(_existing(args.rx))
    rep = rank_aps(cand, rxs, g, args.freq, args.tx_power, _radio_config(args), linear=args.linear)
    with open(os.path.join(args.out, "ranking.csv"), "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["rank", "candidate", "x", "y", "z", "mean_power_dbm"])
        for r, i in enumerate(rep.order):
            w.writerow([r, int(i), *(repr(float(x)) for x in rep.positions[i]), repr(float(rep.mean_power_dbm[i]))])


def load_grid(path, threshold, max_steps, fail_prob):
    from .planner import PlanningError, PlanningGrid
    cfg = _load_config(_existing(path))
    try:
        return PlanningGrid(np.asarray(cfg["power_dbm"], dtype=np.float64), cfg["start"], cfg["goal"], threshold,
                            max_steps, fail_prob, cfg.get("obstacles"))
    except KeyError as e:
        raise DataError(f"{path}: missing field {e.args[0]!r}") from None
    except (PlanningError, ValueError, TypeError) as e:
        raise DataError(f"{path}: {e}") from None


def heatmap(grid, path, scale: int = 24) -> np.ndarray:
    """RGB image of the cell powers (blue low, red high) with obstacles black and the path white."""
    p = grid.power
    lo, hi = float(p.min()), float(p.max())
    t = (p - lo) / (hi - lo) if hi > lo else np.zeros_like(p)
    img = np.stack([t, 0.2 * np.ones_like(t), 1 - t], axis=-1)
    img[grid.obstacles] = 0.0
    img = np.repeat(np.repeat(img, scale, 0), scale, 1)
    q = scale // 3
    for r, c in path or []:
        img[r * scale + q:(r + 1) * scale - q, c * scale + q:(c + 1) * scale - q] = 1.0
    return img


def cmd_plan_path(args):
    from .planner import improvement_rate, plan_path, shortest_path
    from .scene.dataset import save_png
    grid = load_grid(args.grid, args.threshold_dbm, args.max_steps, args.fail_prob)
    res = plan_path(grid)
    base = shortest_path(grid)
    with open(os.path.join(args.out, "path.csv"), "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "row", "col", "power_dbm", "below_threshold"])
        for k, (r, c) in enumerate(res.path or []):
            w.writerow([k, r, c, repr(float(grid.power[r, c])), int(grid.power[r, c] < grid.power_threshold)])
    summary = {
        "feasible": res.feasible,
        "satisfying": res.satisfying,
        "failure_fraction": res.failure_fraction,
        "length": res.length,
        "baseline_failure_fraction": base.failure_fraction,
        "improvement_rate_percent": (improvement_rate(base.path, res.path, grid)
                                     if res.feasible and base.feasible else None),
    }
    with open(os.path.join(args.out, "plan.json"), "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=1, sort_keys=True)
        f.write("\n")
    if args.plot:
        save_png(os.path.join(args.out, "path.png"), heatmap(grid, res.path))


# -- parser --------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="output directory (created if missing)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    common.add_argument("-v", "--verbose", action="count", default=0)
    radio = argparse.ArgumentParser(add_help=False)
    radio.add_argument("--freq", type=float, default=2.4e9, help="carrier frequency, Hz")
    radio.add_argument("--tx-power", type=float, default=1.0, help="transmit power, W")
    radio.add_argument("--bounces", type=int, default=2, help="maximum interactions per path")
    gains = argparse.ArgumentParser(add_help=False)
    gains.add_argument("--tx-gain", help="JSON antenna table for the transmitter (default isotropic)")
    gains.add_argument("--rx-gain", help="JSON antenna table for the receiver (default isotropic)")

    p = _Parser(prog="urfgs", description="Unified optical and radio field fitting on 3D Gaussians.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("gen", parents=[common], help="write a synthetic dataset")
    s.add_argument("--spec", required=True, help="built-in scene: plane, empty_room, toy_mirror, three_planes")
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("fit", parents=[common], help="two-stage fit; writes model.ckpt and loss.csv")
    s.add_argument("--data", required=True)
    s.add_argument("--config", help="JSON file of training-config overrides")
    s.add_argument("--stage1-iters", type=int)
    s.add_argument("--stage2-iters", type=int)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("render", parents=[common], help="render G-buffers for dataset views")
    s.add_argument("--scene", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--views", type=int, nargs="*")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("spectrum", parents=[common, radio, gains], help="spatial spectrum at one Rx")
    s.add_argument("--scene", required=True, help="checkpoint, or 'none' for free space")
    s.add_argument("--tx", type=_vec3, required=True)
    s.add_argument("--rx", type=_vec3, required=True)
    s.add_argument("--height", type=int, default=18)
    s.add_argument("--width", type=int, default=36)
    s.add_argument("--range", type=float, nargs=2, metavar=("FLOOR_DBM", "CEIL_DBM"))
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("predict-power", parents=[common, radio, gains], help="received power for Tx x Rx position sets")
    s.add_argument("--scene", required=True, help="checkpoint, or 'none' for free space")
    s.add_argument("--tx-csv", required=True)
    s.add_argument("--rx-csv", required=True)
    s.set_defaults(func=cmd_predict_power)

    s = sub.add_parser("eval", parents=[common], help="PSNR/SSIM of rendered views against the dataset")
    s.add_argument("--scene", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test", choices=["train", "test", "all"])
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("rank-aps", parents=[common, radio], help="rank AP candidates by mean received power")
    s.add_argument("--scene", required=True, help="checkpoint, or 'none' for free space")
    s.add_argument("--candidates", required=True)
    s.add_argument("--rx", required=True)
    s.add_argument("--linear", action="store_true", help="average in watts instead of dBm")
    s.set_defaults(func=cmd_rank_aps)

    s = sub.add_parser("plan-path", parents=[common], help="failure-aware path on a power grid")
    s.add_argument("--grid", required=True)
    s.add_argument("--threshold-dbm", type=float, required=True)
    s.add_argument("--max-steps", type=int, required=True)
    s.add_argument("--fail-prob", type=float, default=0.0)
    s.add_argument("--plot", action="store_true", help="also write path.png")
    s.set_defaults(func=cmd_plan_path)
    return p


def _fail(kind: str, code: int, message: str) -> int:
    print(json.dumps({"error": kind, "code": code, "message": message}), file=sys.stderr)
    return code


def run(argv=None) -> int:
    from .core import InvalidParameterError
    from .scene.checkpoint import CheckpointError
    from .scene.dataset import DatasetError
    from .scene.synthetic import DescriptorError
    from .train import InvalidDatasetError, TrainingDivergedError
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required")
    except UsageError as e:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        return _fail("usage", EXIT_USAGE, str(e))
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads:
        import torch
        torch.set_num_threads(args.threads)
    try:
        os.makedirs(args.out, exist_ok=True)
        args.func(args)
    except TrainingDivergedError as e:
        return _fail("diverged", EXIT_DIVERGED, str(e))
    except (DataError, DatasetError, CheckpointError, DescriptorError, InvalidDatasetError,
            InvalidParameterError, FileNotFoundError, ValueError) as e:
        return _fail("data", EXIT_DATA, str(e))
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
