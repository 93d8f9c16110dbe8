"""Tile-based forward rasterizer producing a G-buffer.

Colour, normal and material buffers use the plain front-to-back weights
``T_i * alpha_i``.  Depth uses the same weights normalized by their sum, which
keeps the depth of a single contributor exact regardless of its opacity.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .core import (CUTOFF_MAHALANOBIS_SQ, CameraView, GaussianPrimitive, Gaussians,
                   eval_sh, project, project_batch)

DEFAULT_TERMINATION = 1e-4
DEFAULT_TILE = 16


@dataclass
class GBuffer:
    color: torch.Tensor        # (H, W, 3)
    depth: torch.Tensor        # (H, W)
    normal: torch.Tensor       # (H, W, 3), not renormalized
    albedo: torch.Tensor       # (H, W, 3)
    roughness: torch.Tensor    # (H, W)
    metallic: torch.Tensor     # (H, W)
    accum_alpha: torch.Tensor  # (H, W)

    def numpy(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k).detach().numpy() for k in self.__dataclass_fields__}


# feature layout: color(3) normal(3) albedo(3) roughness metallic depth
_F_COLOR, _F_NORMAL, _F_ALBEDO, _F_ROUGH, _F_METAL, _F_DEPTH = (
    slice(0, 3), slice(3, 6), slice(6, 9), 9, 10, 11)


def _features(g: Gaussians, view: CameraView, pb) -> torch.Tensor:
    idx = pb.index
    means = g.means[idx]
    dirs = means - torch.as_tensor(view.position)
    dirs = dirs / dirs.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    color = eval_sh(g.sh[idx], dirs)
    return torch.cat([
        color, g.normals[idx], g.albedo[idx],
        g.roughness[idx, None], g.metallic[idx, None], pb.depth[:, None],
    ], dim=-1)


def _composite(dx, dy, conic, opacity, feats, termination):
    """Blend K depth-sorted splats over P pixels. Returns (P, F) weighted sums and (P,) alpha."""
    maha = conic[:, 0] * dx * dx + 2.0 * conic[:, 1] * dx * dy + conic[:, 2] * dy * dy
    inside = maha <= CUTOFF_MAHALANOBIS_SQ
    gval = torch.where(inside, torch.exp(-0.5 * maha.clamp_max(CUTOFF_MAHALANOBIS_SQ)), torch.zeros_like(maha))
    alpha = opacity[None, :] * gval
    trans = torch.cumprod(1.0 - alpha, dim=1)
    trans = torch.cat([torch.ones_like(trans[:, :1]), trans[:, :-1]], dim=1)
    w = trans * alpha
    if termination > 0:
        w = w * (trans >= termination).to(w.dtype)
    return w @ feats, w.sum(dim=1)


def rasterize(gaussians: Gaussians, view: CameraView, *, background=(0.0, 0.0, 0.0),
              tile_size: int = DEFAULT_TILE, termination: float = DEFAULT_TERMINATION,
              background_depth: float | None = None, dilation: float = 0.0) -> GBuffer:
    """Render the G-buffer of ``gaussians`` seen from ``view``.

    Primitives are sorted once by view depth; each tile composites the subset
    whose 3-sigma bounding box touches it, in that order, and stops adding a
    splat once transmittance drops below ``termination``.
    """
    if not isinstance(gaussians, Gaussians):
        gaussians = Gaussians.from_primitives(list(gaussians))
    H, W = view.height, view.width
    bg = torch.as_tensor(background, dtype=torch.float64)
    far = view.far if background_depth is None else background_depth
    pb = project_batch(gaussians, view, dilation=dilation)
    order = torch.argsort(pb.depth.detach(), stable=True)
    center = pb.center[order]
    conic = pb.conic[order]
    radius = pb.radius[order]
    opacity = gaussians.opacity[pb.index[order]]
    feats = _features(gaussians, view, pb)[order]

    rows_out = []
    for y0 in range(0, H, tile_size):
        y1 = min(y0 + tile_size, H)
        cols_out = []
        for x0 in range(0, W, tile_size):
            x1 = min(x0 + tile_size, W)
            with torch.no_grad():
                hit = ((center[:, 0] - radius[:, 0] <= x1 - 1) & (center[:, 0] + radius[:, 0] >= x0)
                       & (center[:, 1] - radius[:, 1] <= y1 - 1) & (center[:, 1] + radius[:, 1] >= y0))
                sel = torch.nonzero(hit).flatten()
            ys, xs = torch.meshgrid(torch.arange(y0, y1, dtype=torch.float64),
                                    torch.arange(x0, x1, dtype=torch.float64), indexing="ij")
            px, py = xs.reshape(-1, 1), ys.reshape(-1, 1)
            if len(sel) == 0:
                acc_f = torch.zeros(px.shape[0], feats.shape[1], dtype=torch.float64)
                acc = torch.zeros(px.shape[0], dtype=torch.float64)
            else:
                c = center[sel]
                acc_f, acc = _composite(px - c[None, :, 0], py - c[None, :, 1], conic[sel],
                                        opacity[sel], feats[sel], termination)
            cols_out.append((acc_f.reshape(y1 - y0, x1 - x0, -1), acc.reshape(y1 - y0, x1 - x0)))
        rows_out.append((torch.cat([c[0] for c in cols_out], dim=1), torch.cat([c[1] for c in cols_out], dim=1)))
    acc_f = torch.cat([r[0] for r in rows_out], dim=0)
    acc = torch.cat([r[1] for r in rows_out], dim=0)

    covered = acc > 0
    safe = torch.where(covered, acc, torch.ones_like(acc))
    depth = torch.where(covered, acc_f[..., _F_DEPTH] / safe, torch.full_like(acc, far))
    color = acc_f[..., _F_COLOR] + (1.0 - acc)[..., None] * bg
    return GBuffer(
        color=color,
        depth=depth,
        normal=acc_f[..., _F_NORMAL],
        albedo=acc_f[..., _F_ALBEDO],
        roughness=acc_f[..., _F_ROUGH],
        metallic=acc_f[..., _F_METAL],
        accum_alpha=acc,
    )


def blend_list(primitives: list[GaussianPrimitive], view: CameraView, pixel) -> list[tuple[int, float, float]]:
    """Ordered ``(index, alpha, T)`` contributions at one pixel, no early termination."""
    row, col = pixel
    entries = []
    for i, p in enumerate(primitives):
        proj = project(p, view)
        if proj is None:
            continue
        d = np.array([col, row], dtype=np.float64) - proj.center_px
        maha = float(d @ np.linalg.solve(proj.cov2d, d))
        if maha > CUTOFF_MAHALANOBIS_SQ:
            continue
        entries.append((proj.view_depth, i, p.opacity * np.exp(-0.5 * maha)))
    entries.sort(key=lambda e: (e[0], e[1]))
    out, T = [], 1.0
    for _, i, a in entries:
        out.append((i, a, T))
        T *= 1.0 - a
    return out


def oracle_composite(primitives, view: CameraView, pixel, background=(0.0, 0.0, 0.0),
                     background_depth: float | None = None):
    """Brute-force single-pixel compositing used as ground truth for ``rasterize``.

    Every primitive is projected individually, globally depth sorted and
    blended without tiling or termination.
    """
    if isinstance(primitives, Gaussians):
        primitives = primitives.to_primitives()
    bl = blend_list(primitives, view, pixel)
    color = np.zeros(3)
    normal = np.zeros(3)
    wd = 0.0
    acc = 0.0
    for i, a, T in bl:
        p = primitives[i]
        w = T * a
        view_dir = p.mean - view.position
        color += w * p.color(view_dir / np.linalg.norm(view_dir))
        normal += w * p.normal
        wd += w * view.world_to_camera(p.mean)[2]
        acc += w
    color += (1.0 - acc) * np.asarray(background, dtype=np.float64)
    if acc > 0:
        depth = wd / acc
    else:
        depth = view.far if background_depth is None else background_depth
    return color, depth, normal, acc
