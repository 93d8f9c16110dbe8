"""In-memory dataset types and the on-disk manifest layout.

A dataset is a directory holding ``manifest.json`` plus the files it
references by relative path: RGB as 8-bit PNG, everything floating point
(depth, normals, spectra) as ``.npy``.  Powers are written in dBm.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from ..core import CameraView
from ..priors import SparseDepthMap

MANIFEST_NAME = "manifest.json"
DATASET_FORMAT = "urfgs-dataset"
DATASET_VERSION = 1
# empty spectrum bins are written at this level instead of -inf
SPECTRUM_FLOOR_DBM = -300.0


class DatasetError(ValueError):
    """Invalid dataset; ``field`` names the offending manifest entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ViewRecord:
    name: str
    camera: CameraView
    rgb: np.ndarray                      # (H, W, 3) in [0, 1]
    prior_depth: np.ndarray | None = None
    prior_normal: np.ndarray | None = None
    sparse: SparseDepthMap | None = None
    depth: np.ndarray | None = None      # ground truth, when known
    normal: np.ndarray | None = None     # ground truth camera-frame normals, when known
    split: str = "train"


@dataclass
class ChannelSample:
    tx_position: np.ndarray
    rx_position: np.ndarray
    frequency: float
    power_dbm: float
    spectrum: np.ndarray | None = None   # (H, W) watts per arrival bin
    split: str = "train"

    def __post_init__(self):
        self.tx_position = np.asarray(self.tx_position, dtype=np.float64)
        self.rx_position = np.asarray(self.rx_position, dtype=np.float64)
        if not (np.all(np.isfinite(self.tx_position)) and np.all(np.isfinite(self.rx_position))):
            raise DatasetError("channel_samples", "positions must be finite")
        if not self.frequency > 0:
            raise DatasetError("channel_samples", "frequency must be positive")


@dataclass
class SceneDataset:
    name: str
    views: list
    channel_samples: list
    tx_power: float = 1.0
    spectrum_shape: tuple = (18, 36)
    dynamic_range: tuple = (-60.0, 0.0)   # dBm, for normalized spectra
    ap_candidates: list | None = None
    planning_grid: dict | None = None
    meta: dict = field(default_factory=dict)

    def split(self, name: str) -> list:
        return [v for v in self.views if v.split == name]

    def samples(self, name: str) -> list:
        return [s for s in self.channel_samples if s.split == name]


# -- codecs -------------------------------------------------------------------------

def save_png(path, rgb):
    img = np.clip(np.round(np.asarray(rgb) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img, mode="RGB").save(path, format="PNG", optimize=False)


def load_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def quantize_rgb(rgb) -> np.ndarray:
    """The values an RGB image takes after an 8-bit round trip."""
    return np.clip(np.round(np.asarray(rgb) * 255.0), 0, 255) / 255.0


def spectrum_to_dbm(linear) -> np.ndarray:
    with np.errstate(divide="ignore"):
        d = 10.0 * np.log10(np.asarray(linear, dtype=np.float64)) + 30.0
    return np.maximum(d, SPECTRUM_FLOOR_DBM)


def spectrum_from_dbm(dbm) -> np.ndarray:
    dbm = np.asarray(dbm, dtype=np.float64)
    return np.where(dbm <= SPECTRUM_FLOOR_DBM, 0.0, 10.0 ** ((dbm - 30.0) / 10.0))


def camera_to_dict(cam: CameraView) -> dict:
    return {
        "position": [float(x) for x in cam.position],
        "rotation": [[float(x) for x in row] for row in cam.rotation],
        "focal": list(cam.focal),
        "principal_point": list(cam.principal_point),
        "resolution": list(cam.resolution),
        "near": cam.near,
        "far": cam.far,
    }


def camera_from_dict(d: dict, where: str) -> CameraView:
    try:
        return CameraView(np.asarray(d["position"], dtype=np.float64), np.asarray(d["rotation"], dtype=np.float64),
                          tuple(d["focal"]), tuple(d["principal_point"]), tuple(d["resolution"]),
                          float(d.get("near", 0.01)), float(d.get("far", 100.0)))
    except KeyError as e:
        raise DatasetError(f"{where}.{e.args[0]}", "missing camera field") from None
    except (TypeError, ValueError) as e:
        raise DatasetError(where, f"invalid camera: {e}") from None


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=1, sort_keys=True, allow_nan=False)
        f.write("\n")


def save_dataset(ds: SceneDataset, directory) -> str:
    """Write ``ds`` under ``directory``; returns the manifest path."""
    os.makedirs(os.path.join(directory, "views"), exist_ok=True)
    views = []
    for i, v in enumerate(ds.views):
        stem = f"views/{i:03d}"
        rec = {"name": v.name, "camera": camera_to_dict(v.camera), "rgb": f"{stem}_rgb.png", "split": v.split}
        save_png(os.path.join(directory, rec["rgb"]), v.rgb)
        for key, arr in (("prior_depth", v.prior_depth), ("prior_normal", v.prior_normal),
                         ("depth", v.depth), ("normal", v.normal)):
            if arr is not None:
                rec[key] = f"{stem}_{key}.npy"
                np.save(os.path.join(directory, rec[key]), np.ascontiguousarray(arr, dtype="<f8"))
        if v.sparse is not None:
            rec["sparse_depth"] = [[int(r), int(c), float(d)] for r, c, d in zip(v.sparse.rows, v.sparse.cols, v.sparse.depths)]
        views.append(rec)
    samples = []
    if ds.channel_samples:
        os.makedirs(os.path.join(directory, "spectra"), exist_ok=True)
    for i, s in enumerate(ds.channel_samples):
        rec = {"tx": [float(x) for x in s.tx_position], "rx": [float(x) for x in s.rx_position],
               "frequency": float(s.frequency), "power_dbm": _finite(s.power_dbm), "split": s.split}
        if s.spectrum is not None:
            rec["spectrum"] = f"spectra/{i:03d}_dbm.npy"
            np.save(os.path.join(directory, rec["spectrum"]), np.ascontiguousarray(spectrum_to_dbm(s.spectrum), dtype="<f8"))
        samples.append(rec)
    manifest = {
        "format": DATASET_FORMAT, "version": DATASET_VERSION, "name": ds.name,
        "tx_power_w": ds.tx_power, "spectrum_shape": list(ds.spectrum_shape),
        "dynamic_range_dbm": list(ds.dynamic_range), "views": views, "channel_samples": samples,
        "meta": ds.meta,
    }
    if ds.ap_candidates is not None:
        manifest["ap_candidates"] = [[float(x) for x in p] for p in ds.ap_candidates]
    if ds.planning_grid is not None:
        manifest["planning_grid"] = ds.planning_grid
    path = os.path.join(directory, MANIFEST_NAME)
    _write_json(path, manifest)
    return path


def _finite(x):
    x = float(x)
    return x if math.isfinite(x) else SPECTRUM_FLOOR_DBM


def _require(d, key, where):
    if key not in d:
        raise DatasetError(f"{where}.{key}", "missing required field")
    return d[key]


def _load_array(directory, rel, where, shape=None):
    path = os.path.join(directory, rel)
    if not os.path.isfile(path):
        raise DatasetError(where, f"referenced file does not exist: {rel}")
    try:
        arr = np.load(path, allow_pickle=False)
    except Exception as e:
        raise DatasetError(where, f"cannot decode {rel}: {e}") from None
    if shape is not None and arr.shape != shape:
        raise DatasetError(where, f"{rel} has shape {arr.shape}, expected {shape}")
    return arr.astype(np.float64)


def load_dataset(path) -> SceneDataset:
    """Load and validate a dataset directory (or its manifest path)."""
    directory = path if os.path.isdir(path) else os.path.dirname(os.path.abspath(path))
    mpath = os.path.join(directory, MANIFEST_NAME) if os.path.isdir(path) else path
    if not os.path.isfile(mpath):
        raise DatasetError("manifest", f"not found: {mpath}")
    try:
        with open(mpath, encoding="utf-8") as f:
            m = json.load(f)
    except json.JSONDecodeError as e:
        raise DatasetError("manifest", f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from None
    if m.get("format") != DATASET_FORMAT:
        raise DatasetError("format", f"expected {DATASET_FORMAT!r}, got {m.get('format')!r}")
    if int(_require(m, "version", "manifest")) > DATASET_VERSION:
        raise DatasetError("version", f"dataset version {m['version']} is newer than supported {DATASET_VERSION}")
    views = []
    res = None
    for i, rec in enumerate(_require(m, "views", "manifest")):
        where = f"views[{i}]"
        cam = camera_from_dict(_require(rec, "camera", where), f"{where}.camera")
        if res is None:
            res = cam.resolution
        elif cam.resolution != res:
            raise DatasetError(f"{where}.camera.resolution", f"{cam.resolution} differs from {res}")
        rgb_rel = _require(rec, "rgb", where)
        rgb_path = os.path.join(directory, rgb_rel)
        if not os.path.isfile(rgb_path):
            raise DatasetError(f"{where}.rgb", f"referenced file does not exist: {rgb_rel}")
        try:
            rgb = load_png(rgb_path)
        except Exception as e:
            raise DatasetError(f"{where}.rgb", f"cannot decode {rgb_rel}: {e}") from None
        H, W = cam.height, cam.width
        if rgb.shape != (H, W, 3):
            raise DatasetError(f"{where}.rgb", f"image is {rgb.shape[1]}x{rgb.shape[0]}, camera is {W}x{H}")
        arrays = {}
        for key, shape in (("prior_depth", (H, W)), ("prior_normal", (H, W, 3)), ("depth", (H, W)), ("normal", (H, W, 3))):
            if key in rec:
                arrays[key] = _load_array(directory, rec[key], f"{where}.{key}", shape)
        sparse = None
        if "sparse_depth" in rec:
            e = np.asarray(rec["sparse_depth"], dtype=np.float64).reshape(-1, 3)
            r, c = e[:, 0].astype(np.int64), e[:, 1].astype(np.int64)
            if np.any((r < 0) | (r >= H) | (c < 0) | (c >= W)):
                raise DatasetError(f"{where}.sparse_depth", "entry outside the image")
            try:
                sparse = SparseDepthMap(r, c, e[:, 2])
            except ValueError as err:
                raise DatasetError(f"{where}.sparse_depth", str(err)) from None
        views.append(ViewRecord(rec.get("name", f"view{i}"), cam, rgb, sparse=sparse,
                                split=rec.get("split", "train"), **arrays))
    shape = tuple(int(x) for x in m.get("spectrum_shape", (18, 36)))
    samples = []
    for i, rec in enumerate(m.get("channel_samples", [])):
        where = f"channel_samples[{i}]"
        spec = None
        if "spectrum" in rec:
            spec = spectrum_from_dbm(_load_array(directory, rec["spectrum"], f"{where}.spectrum", shape))
        try:
            samples.append(ChannelSample(_require(rec, "tx", where), _require(rec, "rx", where),
                                         float(_require(rec, "frequency", where)),
                                         float(_require(rec, "power_dbm", where)), spec, rec.get("split", "train")))
        except DatasetError as e:
            raise DatasetError(f"{where}.{e.field}" if e.field != "channel_samples" else where, str(e)) from None
    return SceneDataset(
        name=m.get("name", os.path.basename(directory)), views=views, channel_samples=samples,
        tx_power=float(m.get("tx_power_w", 1.0)), spectrum_shape=shape,
        dynamic_range=tuple(float(x) for x in m.get("dynamic_range_dbm", (-60.0, 0.0))),
        ap_candidates=m.get("ap_candidates"), planning_grid=m.get("planning_grid"), meta=m.get("meta", {}),
    )
