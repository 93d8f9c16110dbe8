"""Two-stage fitting: optical geometry first, then radio materials with geometry frozen."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from scipy.spatial import cKDTree

from .core import Gaussians
from .losses import (DEFAULT_WEIGHTS, LossReport, depth_loss, normal_loss, photometric_loss,
                     spectrum_loss)
from .priors import AlignmentError, align_depth, align_normal_frame, backproject, pseudo_normals_from_depth
from .radio.field import GaussianField
from .radio.propagation import RadioConfig, RadioLink, path_powers, spectrum_from_paths, trace_paths
from .raster import rasterize
from .scene.dataset import SceneDataset

log = logging.getLogger(__name__)

GEOMETRY_FIELDS = Gaussians.GEOMETRY
MATERIAL_FIELDS = Gaussians.MATERIAL


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; ``last_good`` holds the parameters before the failing step."""

    def __init__(self, stage: int, iteration: int, last_good: Gaussians):
        super().__init__(f"training diverged in stage {stage} at iteration {iteration}")
        self.stage = stage
        self.iteration = iteration
        self.last_good = last_good


class InvalidDatasetError(ValueError):
    pass


DEFAULT_LR = {
    "means": 2e-3, "quats": 5e-3, "log_scales": 1e-2, "logit_opacity": 5e-2, "sh": 2e-2,
    "raw_normals": 1e-2, "logit_albedo": 5e-2, "logit_metallic": 5e-2, "logit_roughness": 5e-2,
}


@dataclass
class TrainConfig:
    stage1_iters: int = 2000
    stage2_iters: int = 500
    lr: dict = field(default_factory=lambda: dict(DEFAULT_LR))
    weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    ssim_lambda: float = 0.2
    smooth_reduction: str = "mean"      # "sum" gives the literal unnormalized smoothness term
    densify_every: int = 100
    densify_until: float = 0.6          # fraction of stage 1
    densify_grad_threshold: float = 2e-4
    prune_opacity: float = 0.005
    max_primitives: int = 3000
    init_opacity: float = 0.5
    init_color: float = 0.5
    retrace_every: int = 100
    radio_bounces: int = 1
    radio_supersample: int = 2
    radio_max_refine: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.stage1_iters < 0 or self.stage2_iters < 0:
            raise ValueError("iteration counts must be non-negative")
        # partial dicts override the defaults key by key
        for name, default in (("lr", DEFAULT_LR), ("weights", DEFAULT_WEIGHTS)):
            given = getattr(self, name)
            unknown = set(given) - set(default)
            if unknown:
                raise ValueError(f"unknown {name} keys {sorted(unknown)}")
            setattr(self, name, {**default, **given})
        if any(v < 0 for v in self.weights.values()):
            raise ValueError("loss weights must be non-negative")
        if any(v <= 0 for v in self.lr.values()):
            raise ValueError("learning rates must be positive")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]

    def radio(self, shape) -> RadioConfig:
        return RadioConfig(max_bounces=self.radio_bounces, spectrum_shape=tuple(shape),
                           supersample=self.radio_supersample, max_refine=self.radio_max_refine,
                           seed=self.seed)


@dataclass
class FitResult:
    gaussians: Gaussians
    log: list                 # rows: stage, iteration, loss terms, total, count
    initial: Gaussians | None = None
    stage2_start: Gaussians | None = None

    def write_log(self, path) -> None:
        write_loss_csv(path, self.log)


LOG_FIELDS = ["stage", "iteration", "photometric", "depth", "normal_l1", "normal_smooth", "spectrum", "total", "primitives"]


def write_loss_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, LOG_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in LOG_FIELDS})


# -- priors ---------------------------------------------------------------------------------

@dataclass
class ViewPriors:
    depth: np.ndarray | None     # aligned depth
    normal: np.ndarray | None    # prior normals in the camera frame
    mask: np.ndarray             # supervised support


def prepare_priors(view) -> ViewPriors:
    """Align the monocular priors of one view; missing pieces disable the term."""
    cam = view.camera
    H, W = cam.height, cam.width
    depth = normal = None
    mask = np.zeros((H, W), bool)
    if view.prior_depth is not None and view.sparse is not None and len(view.sparse) >= 2:
        try:
            aligned = align_depth(view.prior_depth, view.sparse)
        except AlignmentError as e:
            log.warning("%s: depth prior skipped (%s)", view.name, e)
        else:
            depth = aligned.values
            # far-field pixels (sky / background) are not supervised
            mask = (depth > cam.near) & (depth < 0.5 * cam.far)
            if view.prior_normal is not None:
                pseudo = pseudo_normals_from_depth(np.where(mask, depth, 0.5 * cam.far), cam.intrinsics)
                pseudo = np.where(mask[..., None], pseudo, 0.0)
                try:
                    normal, _, _ = align_normal_frame(view.prior_normal, pseudo)
                except AlignmentError as e:
                    log.warning("%s: normal prior skipped (%s)", view.name, e)
    return ViewPriors(depth, normal, mask)


def init_from_dataset(ds: SceneDataset, cfg: TrainConfig) -> Gaussians:
    """Isotropic Gaussians at the back-projected sparse depth points of the training views."""
    pts, nrm = [], []
    for v in ds.split("train"):
        if v.sparse is None:
            continue
        cam = v.camera
        P = backproject(np.ones((cam.height, cam.width)), cam.intrinsics)[v.sparse.rows, v.sparse.cols]
        P = P * v.sparse.depths[:, None]
        pts.append(P @ cam.rotation + cam.position)
        pri = prepare_priors(v)
        if pri.normal is not None:
            n = pri.normal[v.sparse.rows, v.sparse.cols] @ cam.rotation
        else:
            n = -(P / np.linalg.norm(P, axis=1, keepdims=True)) @ cam.rotation
        nrm.append(n)
    if not pts:
        raise InvalidDatasetError("no training view carries sparse depth to initialize from")
    pts = np.concatenate(pts)
    nrm = np.concatenate(nrm)
    bad = np.linalg.norm(nrm, axis=1) < 1e-6
    nrm[bad] = [0.0, 0.0, 1.0]
    k = min(4, len(pts))
    if k > 1:
        d, _ = cKDTree(pts).query(pts, k=k)
        s = np.clip(d[:, 1:].mean(axis=1), 1e-3, None)
    else:
        s = np.full(len(pts), 0.1)
    n = len(pts)
    return Gaussians.from_values(pts, np.tile([1.0, 0, 0, 0], (n, 1)), np.repeat(s[:, None], 3, axis=1),
                                 np.full(n, cfg.init_opacity), colors=np.full((n, 3), cfg.init_color),
                                 normals=nrm)


# -- optimisation helpers ----------------------------------------------------------------------

def _make_optimizer(g: Gaussians, names, lr):
    params = []
    for k in names:
        t = getattr(g, k).detach().clone().requires_grad_(True)
        setattr(g, k, t)
        params.append({"params": [t], "lr": lr[k], "name": k})
    return torch.optim.Adam(params, eps=1e-15)


def _freeze(g: Gaussians, names):
    for k in names:
        setattr(g, k, getattr(g, k).detach())


def render_losses(g: Gaussians, view, priors: ViewPriors, cfg: TrainConfig):
    """Stage-1 loss terms for one view (tensors)."""
    gb = rasterize(g, view.camera)
    photo = photometric_loss(gb.color, view.rgb, cfg.ssim_lambda)
    zero = photo * 0.0
    dl, l1, sm = zero, zero, zero
    if priors.depth is not None:
        dl = depth_loss(gb.depth, priors.depth, view.rgb, priors.mask)
    if priors.normal is not None:
        n_cam = gb.normal @ torch.as_tensor(view.camera.rotation).T
        l1, sm, _ = normal_loss(n_cam, priors.normal, priors.mask, cfg.smooth_reduction)
    return photo, dl, l1, sm


def _densify_prune(g: Gaussians, grad_accum, steps, cfg: TrainConfig, rng) -> Gaussians:
    with torch.no_grad():
        keep = g.opacity >= cfg.prune_opacity
        mean_grad = grad_accum / max(steps, 1)
        grow = (mean_grad > cfg.densify_grad_threshold) & keep
        room = cfg.max_primitives - int(keep.sum())
        idx = torch.nonzero(grow).flatten()
        if room <= 0:
            idx = idx[:0]
        elif len(idx) > room:
            idx = idx[torch.argsort(-mean_grad[idx], stable=True)[:room]]
        base = g.subset(torch.nonzero(keep).flatten())
        if len(idx) == 0:
            return base
        clone = g.subset(idx)
        # offset each copy by a draw from its own Gaussian so the pair can separate
        z = torch.as_tensor(rng.standard_normal((len(idx), 3)))
        M = torch.linalg.cholesky(clone.covariances() + 1e-12 * torch.eye(3, dtype=torch.float64))
        clone.means = clone.means + (M @ z[:, :, None])[..., 0]
        return base.concat(clone)


# -- stages ------------------------------------------------------------------------------------------

def _params_finite(g: Gaussians, names) -> bool:
    return all(bool(torch.all(torch.isfinite(getattr(g, k)))) for k in names)


def fit_geometry(g: Gaussians, ds: SceneDataset, cfg: TrainConfig, rows: list, rng) -> Gaussians:
    views = ds.split("train")
    priors = [prepare_priors(v) for v in views]
    names = GEOMETRY_FIELDS
    opt = _make_optimizer(g, names, cfg.lr)
    grad_accum = torch.zeros(len(g), dtype=torch.float64)
    steps = 0
    order = []
    for it in range(cfg.stage1_iters):
        if not order:
            order = list(rng.permutation(len(views)))
        vi = int(order.pop())
        last_good = g.clone()
        opt.zero_grad()
        photo, dl, l1, sm = render_losses(g, views[vi], priors[vi], cfg)
        w = cfg.weights
        total = w["photometric"] * photo + w["depth"] * dl + w["normal"] * (l1 + sm)
        if not torch.isfinite(total):
            raise TrainingDivergedError(1, it, last_good)
        if total.requires_grad:
            total.backward()
            for t in (getattr(g, k) for k in names):
                if t.grad is not None and not torch.all(torch.isfinite(t.grad)):
                    raise TrainingDivergedError(1, it, last_good)
            opt.step()
            if not _params_finite(g, names):
                raise TrainingDivergedError(1, it, last_good)
            grad_accum += g.means.grad.norm(dim=1).detach()
        else:
            log.warning("iteration %d: no primitive reaches view %d; step skipped", it, vi)
        steps += 1
        rep = LossReport(photo.item(), dl.item(), l1.item(), sm.item(), 0.0, cfg.weights)
        rows.append({"stage": 1, "iteration": it, **rep.row(), "primitives": len(g)})
        if (cfg.densify_every and (it + 1) % cfg.densify_every == 0
                and it + 1 < cfg.densify_until * cfg.stage1_iters):
            _freeze(g, names)
            g = _densify_prune(g, grad_accum, steps, cfg, rng)
            opt = _make_optimizer(g, names, cfg.lr)
            grad_accum = torch.zeros(len(g), dtype=torch.float64)
            steps = 0
    _freeze(g, names)
    return g


def sample_link(ds: SceneDataset, s) -> RadioLink:
    return RadioLink(s.tx_position, s.rx_position, s.frequency, ds.tx_power)


def fit_materials(g: Gaussians, ds: SceneDataset, cfg: TrainConfig, rows: list) -> Gaussians:
    samples = [s for s in ds.samples("train") if s.spectrum is not None]
    if not samples:
        raise InvalidDatasetError("stage 2 needs at least one channel sample with a spectrum")
    rcfg = cfg.radio(ds.spectrum_shape)
    _freeze(g, GEOMETRY_FIELDS)
    fld = GaussianField(g, rcfg.hit_threshold)
    opt = _make_optimizer(g, MATERIAL_FIELDS, cfg.lr)
    targets = [torch.as_tensor(s.spectrum) for s in samples]
    pathsets = None
    for it in range(cfg.stage2_iters + 1):
        if pathsets is None or (cfg.retrace_every and it % cfg.retrace_every == 0 and it > 0):
            # roughness steers the lobe sampling, so the path set is refreshed periodically
            _sync_field_roughness(fld, g)
            pathsets = [trace_paths(sample_link(ds, s), fld, rcfg) for s in samples]
        last_good = g.clone()
        opt.zero_grad()
        loss = spectrum_total(g, pathsets, targets, ds)
        if not torch.isfinite(loss):
            raise TrainingDivergedError(2, it, last_good)
        rep = LossReport(spectrum=loss.item(), weights=cfg.weights)
        rows.append({"stage": 2, "iteration": it, **rep.row(), "primitives": len(g)})
        if it == cfg.stage2_iters:
            break
        if not loss.requires_grad:
            continue
        (cfg.weights["spectrum"] * loss).backward()
        opt.step()
        if not _params_finite(g, MATERIAL_FIELDS):
            raise TrainingDivergedError(2, it, last_good)
    _freeze(g, MATERIAL_FIELDS)
    return g


def _sync_field_roughness(fld: GaussianField, g: Gaussians):
    fld.roughness = g.roughness.detach().numpy().copy()


def spectrum_total(g: Gaussians, pathsets, targets, ds: SceneDataset) -> torch.Tensor:
    losses = [spectrum_loss(spectrum_from_paths(ps, path_powers(ps, g), ds.spectrum_shape), t, ds.dynamic_range)
              for ps, t in zip(pathsets, targets)]
    return torch.stack(losses).mean()


def fit(ds: SceneDataset, cfg: TrainConfig | None = None, init: Gaussians | None = None) -> FitResult:
    """Run stage 1 (if iterations > 0) then stage 2 (if iterations > 0 and spectra exist)."""
    cfg = cfg or TrainConfig()
    if not ds.views and not ds.channel_samples:
        raise InvalidDatasetError("dataset is empty")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    rows: list = []
    if init is None:
        if not ds.split("train"):
            raise InvalidDatasetError("dataset has no training views")
        init = init_from_dataset(ds, cfg)
    g = init.clone()
    initial = init.clone()
    if cfg.stage1_iters > 0:
        if not ds.split("train"):
            raise InvalidDatasetError("stage 1 needs at least one training view")
        g = fit_geometry(g, ds, cfg, rows, rng)
    stage2_start = g.clone()
    if cfg.stage2_iters > 0:
        g = fit_materials(g, ds, cfg, rows)
    return FitResult(g, rows, initial, stage2_start)
