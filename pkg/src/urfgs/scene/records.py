"""CSV power records and spectrum images with their sidecar metadata."""
from __future__ import annotations

import csv
import json
import os

import numpy as np

from ..radio.propagation import SpatialSpectrum, bin_edges, watts_to_dbm
from .dataset import SPECTRUM_FLOOR_DBM, save_png

POWER_FIELDS = ["tx_x", "tx_y", "tx_z", "rx_x", "rx_y", "rx_z", "p_rx_dbm"]


def write_power_csv(path, rows) -> None:
    """``rows`` of (tx, rx, power_w); power is written in dBm."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(POWER_FIELDS)
        for tx, rx, p in rows:
            dbm = float(watts_to_dbm(p)) if p > 0 else SPECTRUM_FLOOR_DBM
            w.writerow([repr(float(x)) for x in (*tx, *rx)] + [repr(dbm)])


def read_power_csv(path) -> list:
    """Rows of (tx, rx, power_dbm)."""
    out = []
    with open(path, newline="", encoding="utf-8") as f:
        r = csv.DictReader(f)
        missing = set(POWER_FIELDS) - set(r.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in r:
            tx = np.array([float(row[k]) for k in POWER_FIELDS[:3]])
            rx = np.array([float(row[k]) for k in POWER_FIELDS[3:6]])
            out.append((tx, rx, float(row["p_rx_dbm"])))
    return out


def read_positions_csv(path) -> np.ndarray:
    """An (N, 3) array from a CSV with columns x, y, z (header required)."""
    with open(path, newline="", encoding="utf-8") as f:
        r = csv.DictReader(f)
        if not r.fieldnames or not {"x", "y", "z"} <= set(r.fieldnames):
            raise ValueError(f"{path}: expected columns x, y, z")
        pts = [[float(row["x"]), float(row["y"]), float(row["z"])] for row in r]
    if not pts:
        raise ValueError(f"{path}: no positions")
    return np.asarray(pts)


def spectrum_metadata(spec: SpatialSpectrum) -> dict:
    H, W = spec.shape
    el, az = bin_edges(H, W)
    return {
        "shape": [H, W],
        "units": "dBm",
        "dynamic_range_dbm": [float(x) for x in spec.dynamic_range],
        "elevation_edges_deg": [float(x) for x in np.degrees(el)],
        "azimuth_edges_deg": [float(x) for x in np.degrees(az)],
        "row0": "elevation +90 deg (zenith)",
        "col0": "azimuth -180 deg",
        "tx_position": [float(x) for x in spec.tx_position],
        "rx_position": [float(x) for x in spec.rx_position],
        "frequency_hz": float(spec.frequency),
        "total_power_dbm": float(watts_to_dbm(spec.total())) if spec.total() > 0 else SPECTRUM_FLOOR_DBM,
    }


def save_spectrum(stem, spec: SpatialSpectrum, png: bool = True) -> list:
    """Write ``stem.npy`` (clamped dBm, float64), ``stem.json`` and optionally ``stem.png``."""
    paths = [stem + ".npy", stem + ".json"]
    np.save(paths[0], np.ascontiguousarray(spec.power, dtype="<f8"))
    with open(paths[1], "w", encoding="utf-8") as f:
        json.dump(spectrum_metadata(spec), f, indent=1, sort_keys=True)
        f.write("\n")
    if png:
        paths.append(stem + ".png")
        save_png(paths[2], np.repeat(spec.normalized[..., None], 3, axis=-1))
    return paths


def load_spectrum(stem) -> tuple:
    power = np.load(stem + ".npy", allow_pickle=False)
    with open(stem + ".json", encoding="utf-8") as f:
        meta = json.load(f)
    if list(power.shape) != meta["shape"]:
        raise ValueError(f"{stem}: image shape {power.shape} does not match metadata {meta['shape']}")
    return power, meta


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def load_gain_pattern(path):
    """Antenna gain table from JSON, as a callable ``(theta, phi) -> linear gain``.

    Keys: ``theta_deg`` (polar angle from +z, ascending from 0 to 180),
    ``phi_deg`` (azimuth from +x toward +y, ascending from -180 to 180) and
    ``gain_dbi`` with shape (len(theta_deg), len(phi_deg)). Values between grid
    points are bilinear in dB.
    """
    from scipy.interpolate import RegularGridInterpolator
    with open(path, encoding="utf-8") as f:
        d = json.load(f)
    try:
        th = np.asarray(d["theta_deg"], dtype=np.float64)
        ph = np.asarray(d["phi_deg"], dtype=np.float64)
        g = np.asarray(d["gain_dbi"], dtype=np.float64)
    except KeyError as e:
        raise ValueError(f"{path}: missing key {e.args[0]!r}") from None
    if g.shape != (len(th), len(ph)) or not np.all(np.isfinite(g)):
        raise ValueError(f"{path}: gain_dbi must be a finite {len(th)}x{len(ph)} table")
    if len(th) < 2 or len(ph) < 2 or np.any(np.diff(th) <= 0) or np.any(np.diff(ph) <= 0):
        raise ValueError(f"{path}: angle grids need at least two strictly ascending values")
    if th[0] > 0 or th[-1] < 180 or ph[0] > -180 or ph[-1] < 180:
        raise ValueError(f"{path}: the table must cover theta 0..180 and phi -180..180 degrees")
    interp = RegularGridInterpolator((th, ph), g)

    def gain(theta, phi):
        t = np.clip(np.degrees(np.asarray(theta, dtype=np.float64)), 0.0, 180.0)
        p = np.clip(np.degrees(np.asarray(phi, dtype=np.float64)), -180.0, 180.0)
        pts = np.stack(np.broadcast_arrays(t, p), axis=-1)
        return 10.0 ** (interp(pts) / 10.0)

    return gain
