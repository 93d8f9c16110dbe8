"""Ray queries against a Gaussian field.

Each primitive contributes once per ray, at the point where the ray passes
closest to its centre in Mahalanobis distance.  Contributions are composited
in ray-parameter order; a surface hit is declared where the accumulated
opacity first exceeds ``hit_threshold``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import CUTOFF_MAHALANOBIS_SQ, Gaussians


@dataclass
class RayHits:
    hit: np.ndarray          # (R,) bool
    t: np.ndarray            # (R,) normalized-weight hit distance (inf when missed)
    position: np.ndarray     # (R, 3)
    normal: np.ndarray       # (R, 3) unit, blended
    roughness: np.ndarray    # (R,) blended
    # sparse contributor table for hit rays: weights are normalized per ray
    contrib_ray: np.ndarray
    contrib_prim: np.ndarray
    contrib_weight: np.ndarray


class GaussianField:
    """Read-only geometric snapshot of a set of Gaussians for ray queries."""

    def __init__(self, gaussians: Gaussians, hit_threshold: float = 0.5, chunk: int | None = None):
        c = {k: v.detach().numpy() for k, v in gaussians.constrained().items()}
        self.n = len(gaussians)
        self.means = c["means"]
        self.opacity = np.minimum(c["opacity"], 1.0 - 1e-9)
        self.normals = c["normals"]
        self.roughness = c["roughness"]
        q = c["quats"]
        w, x, y, z = q.T
        R = np.stack([
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ], axis=-1).reshape(-1, 3, 3)
        # world -> whitened local frame: (R S^-1)^T
        self.whiten = np.transpose(R, (0, 2, 1)) / c["scales"][:, :, None]
        self.radius = 3.0 * c["scales"].max(axis=1)
        self.hit_threshold = hit_threshold
        # bound the (rays x primitives x 3) working set to ~100 MB
        self.chunk = chunk or max(32, int(4e6 // max(self.n, 1)))

    def _pairs(self, origins, dirs, t_min, t_max):
        """Candidate (ray, prim, t*, alpha) tuples for one chunk of rays."""
        rel = self.means[None, :, :] - origins[:, None, :]          # (R, N, 3)
        along = np.einsum("rnk,rk->rn", rel, dirs)
        perp2 = np.einsum("rnk,rnk->rn", rel, rel) - along * along
        cand = (perp2 <= self.radius[None, :] ** 2) & (along + self.radius[None, :] > t_min[:, None]) \
            & (along - self.radius[None, :] < t_max[:, None])
        ri, pi = np.nonzero(cand)
        if len(ri) == 0:
            return ri, pi, np.zeros(0), np.zeros(0)
        Wt = self.whiten[pi]
        o_l = np.einsum("pij,pj->pi", Wt, origins[ri] - self.means[pi])
        d_l = np.einsum("pij,pj->pi", Wt, dirs[ri])
        dd = np.einsum("pi,pi->p", d_l, d_l)
        ts = -np.einsum("pi,pi->p", o_l, d_l) / dd
        cr = np.cross(o_l, d_l)
        q = np.einsum("pi,pi->p", cr, cr) / dd
        ok = (q <= CUTOFF_MAHALANOBIS_SQ) & (ts > t_min[ri]) & (ts < t_max[ri])
        ri, pi, ts, q = ri[ok], pi[ok], ts[ok], q[ok]
        alpha = self.opacity[pi] * np.exp(-0.5 * q)
        return ri, pi, ts, alpha

    def _composite(self, n_rays, ri, pi, ts, alpha):
        order = np.lexsort((pi, ts, ri))
        ri, pi, ts, alpha = ri[order], pi[order], ts[order], alpha[order]
        log1m = np.log1p(-alpha)
        csum = np.cumsum(log1m)
        starts = np.searchsorted(ri, np.arange(n_rays))
        base = np.concatenate([[0.0], csum])[starts]            # cumulative sum before each ray's block
        after = csum - base[ri]                                  # log T after each entry
        before = after - log1m
        acc_after = 1.0 - np.exp(after)
        return ri, pi, ts, alpha, np.exp(before), acc_after

    def march(self, origins, dirs, t_min=1e-3, t_max=np.inf) -> RayHits:
        origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
        dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
        R = len(dirs)
        origins = np.broadcast_to(origins, dirs.shape)
        t_min = np.broadcast_to(np.asarray(t_min, dtype=np.float64), (R,))
        t_max = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (R,))
        hit = np.zeros(R, bool)
        t_hit = np.full(R, np.inf)
        normal = np.zeros((R, 3))
        rough = np.zeros(R)
        cr, cp, cw = [], [], []
        for s in range(0, R, self.chunk):
            e = min(R, s + self.chunk)
            if self.n == 0:
                break
            ri, pi, ts, alpha = self._pairs(origins[s:e], dirs[s:e], t_min[s:e], t_max[s:e])
            if len(ri) == 0:
                continue
            ri, pi, ts, alpha, T, acc = self._composite(e - s, ri, pi, ts, alpha)
            crossed = acc > self.hit_threshold
            # first crossing per ray
            first = np.full(e - s, np.iinfo(np.int64).max)
            idx = np.nonzero(crossed)[0]
            np.minimum.at(first, ri[idx], idx)
            has = first < np.iinfo(np.int64).max
            keep = has[ri] & (np.arange(len(ri)) <= np.where(has, first, 0)[ri])
            ri, pi, ts, w = ri[keep], pi[keep], ts[keep], (T * alpha)[keep]
            wsum = np.bincount(ri, weights=w, minlength=e - s)
            wn = w / wsum[ri]
            rows = s + np.nonzero(has)[0]
            hit[rows] = True
            t_hit[s:e][has] = np.bincount(ri, weights=wn * ts, minlength=e - s)[has]
            nb = np.stack([np.bincount(ri, weights=wn * self.normals[pi, k], minlength=e - s) for k in range(3)], -1)
            normal[s:e] = nb
            rough[s:e] = np.bincount(ri, weights=wn * self.roughness[pi], minlength=e - s)
            cr.append(ri + s)
            cp.append(pi)
            cw.append(wn)
        nrm = np.linalg.norm(normal, axis=1, keepdims=True)
        normal = np.where(nrm > 1e-12, normal / np.where(nrm > 0, nrm, 1), 0.0)
        pos = origins + np.where(hit, t_hit, 0.0)[:, None] * dirs
        cat = lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt)
        return RayHits(hit, t_hit, pos, normal, rough,
                       cat(cr, np.int64), cat(cp, np.int64), cat(cw, np.float64))

    def occluded(self, origins, dirs, t_max, t_min=1e-3) -> np.ndarray:
        """True where accumulated opacity exceeds the hit threshold before ``t_max``."""
        dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
        R = len(dirs)
        origins = np.broadcast_to(np.atleast_2d(np.asarray(origins, dtype=np.float64)), dirs.shape)
        t_min = np.broadcast_to(np.asarray(t_min, dtype=np.float64), (R,))
        t_max = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (R,))
        out = np.zeros(R, bool)
        if self.n == 0:
            return out
        for s in range(0, R, self.chunk):
            e = min(R, s + self.chunk)
            ri, pi, ts, alpha = self._pairs(origins[s:e], dirs[s:e], t_min[s:e], t_max[s:e])
            if len(ri) == 0:
                continue
            logt = np.bincount(ri, weights=np.log1p(-alpha), minlength=e - s)
            out[s:e] = 1.0 - np.exp(logt) > self.hit_threshold
        return out
