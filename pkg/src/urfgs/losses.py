"""Training losses: photometric, edge-aware depth, normal, spectrum."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .priors import AlignedDepthMap

SSIM_LAMBDA = 0.2
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2


def _t(x):
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.array(x, dtype=np.float64))


def _gaussian_window(size: int, sigma: float = 1.5) -> torch.Tensor:
    x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-x * x / (2 * sigma * sigma))
    return g / g.sum()


def ssim_torch(a: torch.Tensor, b: torch.Tensor, window: int = 11) -> torch.Tensor:
    """Mean SSIM of two (H, W, C) images over all fully covered window positions."""
    H, W = a.shape[:2]
    size = min(window, H, W)
    if size % 2 == 0:
        size -= 1
    g = _gaussian_window(size)
    C = a.shape[-1]
    x = a.permute(2, 0, 1)[None]
    y = b.permute(2, 0, 1)[None]
    kh = g.view(1, 1, size, 1).repeat(C, 1, 1, 1)
    kw = g.view(1, 1, 1, size).repeat(C, 1, 1, 1)
    f = lambda z: F.conv2d(F.conv2d(z, kh, groups=C), kw, groups=C)
    mx, my = f(x), f(y)
    sxx = f(x * x) - mx * mx
    syy = f(y * y) - my * my
    sxy = f(x * y) - mx * my
    s = ((2 * mx * my + _C1) * (2 * sxy + _C2)) / ((mx * mx + my * my + _C1) * (sxx + syy + _C2))
    return s.mean()


def photometric_loss(rendered, target, lam: float = SSIM_LAMBDA) -> torch.Tensor:
    """(1 - lam) * L1 + lam * (1 - SSIM)."""
    rendered, target = _t(rendered), _t(target)
    mae = (rendered - target).abs().mean()
    return (1.0 - lam) * mae + lam * (1.0 - ssim_torch(rendered, target))


def edge_weights(rgb) -> np.ndarray:
    """exp(-|grad I|): per-channel central-difference gradient magnitude, averaged over channels."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim == 2:
        rgb = rgb[..., None]
    mags = []
    for c in range(rgb.shape[-1]):
        ch = rgb[..., c]
        gy = np.gradient(ch, axis=0) if ch.shape[0] > 1 else np.zeros_like(ch)
        gx = np.gradient(ch, axis=1) if ch.shape[1] > 1 else np.zeros_like(ch)
        mags.append(np.sqrt(gx * gx + gy * gy))
    return np.exp(-np.mean(mags, axis=0))


def depth_loss(rendered, aligned, rgb, mask=None) -> torch.Tensor:
    """Edge-aware depth loss: mean over supervised pixels of g_rgb * log(1 + |D - D_aligned|)."""
    target = aligned.values if isinstance(aligned, AlignedDepthMap) else aligned
    rendered, target = _t(rendered), _t(target)
    g = _t(edge_weights(rgb))
    term = g * torch.log1p((rendered - target).abs())
    if mask is None:
        return term.mean()
    m = _t(mask).to(torch.bool)
    if not bool(m.any()):
        return rendered.sum() * 0.0
    return term[m].mean()


def normal_loss(rendered, prior, mask=None, smooth_reduction: str = "sum"):
    """(l1, smooth, total) for a rendered normal map against the aligned prior.

    ``l1`` averages the per-pixel L1 distance; ``smooth`` sums channel-summed
    absolute forward differences of the rendered map along both image axes.
    With a mask, only pixels (and neighbour pairs) inside it count.
    ``smooth_reduction="mean"`` divides the smoothness sum by the number of
    neighbour pairs, which keeps its scale independent of the resolution.
    """
    rendered, prior = _t(rendered), _t(prior)
    d = (rendered - prior).abs().sum(-1)
    dv = (rendered[1:] - rendered[:-1]).abs().sum(-1)
    du = (rendered[:, 1:] - rendered[:, :-1]).abs().sum(-1)
    if mask is None:
        l1 = d.mean()
        smooth = dv.sum() + du.sum()
        pairs = dv.numel() + du.numel()
    else:
        m = _t(mask).to(torch.bool)
        l1 = d[m].mean() if bool(m.any()) else d.sum() * 0.0
        mv, mu = m[1:] & m[:-1], m[:, 1:] & m[:, :-1]
        smooth = dv[mv].sum() + du[mu].sum()
        pairs = int(mv.sum()) + int(mu.sum())
    if smooth_reduction == "mean":
        smooth = smooth / max(pairs, 1)
    elif smooth_reduction != "sum":
        raise ValueError(f"unknown reduction {smooth_reduction!r}")
    return l1, smooth, l1 + smooth


def normalized_db(linear, dynamic_range) -> torch.Tensor:
    """Map watts to [0, 1] over a (floor, ceil) dBm range."""
    lo, hi = dynamic_range
    linear = _t(linear)
    floor_w = 10.0 ** ((lo - 30.0) / 10.0)
    dbm = 10.0 * torch.log10(linear.clamp_min(floor_w * 1e-3)) + 30.0
    return ((dbm - lo) / (hi - lo)).clamp(0.0, 1.0)


def spectrum_loss(rendered, measured, dynamic_range) -> torch.Tensor:
    """MSE between spectra in normalized dB."""
    return ((normalized_db(rendered, dynamic_range) - normalized_db(measured, dynamic_range)) ** 2).mean()


DEFAULT_WEIGHTS = {"photometric": 1.0, "depth": 0.1, "normal": 0.05, "spectrum": 1.0}


@dataclass
class LossReport:
    photometric: float = 0.0
    depth: float = 0.0
    normal_l1: float = 0.0
    normal_smooth: float = 0.0
    spectrum: float = 0.0
    weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))

    @property
    def total(self) -> float:
        w = self.weights
        return (w["photometric"] * self.photometric + w["depth"] * self.depth
                + w["normal"] * (self.normal_l1 + self.normal_smooth) + w["spectrum"] * self.spectrum)

    def row(self) -> dict:
        return {"photometric": self.photometric, "depth": self.depth, "normal_l1": self.normal_l1,
                "normal_smooth": self.normal_smooth, "spectrum": self.spectrum, "total": self.total}
