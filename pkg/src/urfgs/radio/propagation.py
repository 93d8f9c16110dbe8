"""Free-space transmission, multi-bounce path enumeration and spatial spectra.

Received power follows the product form

    P_rx = P_tx * G_tx(aod) * G_rx(aoa) * FSPL(d_1..d_{L+1}) * prod_l A_l

with ``FSPL = prod_l (c / (4 pi f d_l))**2``.  Each bounce attenuation is the
single-incident ratio ``A = f(wi, wo) * (n.wi) * dOmega`` evaluated along the
traced directions.  The weight ``dOmega = 16 pi^2 (n.wo) dS / lambda^2``
is the one that makes the per-segment FSPL product agree with geometric
optics, where ``dS`` is the surface patch a path vertex stands for.  For a
perfect mirror the sum over patches reproduces the image-source result.

Paths are enumerated from the receiver.  Rays leave the Rx over an
equirectangular cell grid, hit the field, connect to the Tx (visibility is
tested against the same field) and optionally continue inside the specular
lobe for further bounces.  Cells whose hit lies near the specular
configuration are subdivided until they resolve the lobe.  Geometry is traced
once with numpy; shading depends on the material attributes and is
differentiable torch code (deferred shading).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from ..core import Gaussians
from .brdf import MIN_ALPHA, _tangent_frame, brdf_terms, hemisphere_quadrature
from .field import GaussianField

SPEED_OF_LIGHT = 299_792_458.0


class PropagationDomainError(ValueError):
    pass


def fspl(frequency: float, segment_lengths) -> float:
    """Product of per-segment free-space losses ``(c / (4 pi f d))**2``."""
    if not frequency > 0:
        raise PropagationDomainError("frequency must be positive")
    d = np.atleast_1d(np.asarray(segment_lengths, dtype=np.float64))
    if d.size == 0 or np.any(~(d > 0)):
        raise PropagationDomainError("segment lengths must be positive")
    return float(np.prod((SPEED_OF_LIGHT / (4 * np.pi * frequency * d)) ** 2))


def _fspl_rows(frequency, lengths):
    # vectorized over paths; lengths (P, K) padded with nan
    k = SPEED_OF_LIGHT / (4 * np.pi * frequency)
    return np.prod(np.where(np.isnan(lengths), 1.0, (k / lengths) ** 2), axis=1)


def watts_to_dbm(p):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(p, dtype=np.float64)) + 30.0


def dbm_to_watts(p):
    return 10.0 ** ((np.asarray(p, dtype=np.float64) - 30.0) / 10.0)


def isotropic(theta, phi):
    return np.ones_like(np.asarray(theta, dtype=np.float64))


def direction_angles(d):
    """(theta, phi): polar angle from +z and azimuth, for unit directions (..., 3)."""
    d = np.asarray(d, dtype=np.float64)
    return np.arccos(np.clip(d[..., 2], -1, 1)), np.arctan2(d[..., 1], d[..., 0])


@dataclass
class RadioLink:
    tx_position: np.ndarray
    rx_position: np.ndarray
    frequency: float
    tx_power: float = 1.0
    tx_gain: Callable = isotropic
    rx_gain: Callable = isotropic

    def __post_init__(self):
        self.tx_position = np.asarray(self.tx_position, dtype=np.float64)
        self.rx_position = np.asarray(self.rx_position, dtype=np.float64)
        if not self.tx_power > 0:
            raise PropagationDomainError("tx_power must be positive")
        if not self.frequency > 0:
            raise PropagationDomainError("frequency must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.frequency

    def gains(self, departure, arrival) -> np.ndarray:
        """G_tx(aod) * G_rx(aoa) for unit direction rows; arrival points from the Rx outward."""
        gt = np.broadcast_to(self.tx_gain(*direction_angles(departure)), len(departure))
        gr = np.broadcast_to(self.rx_gain(*direction_angles(arrival)), len(arrival))
        g = np.asarray(gt, dtype=np.float64) * np.asarray(gr, dtype=np.float64)
        if np.any(g < 0):
            raise PropagationDomainError("gain patterns must be non-negative")
        return g


# -- equirectangular angular grid --------------------------------------------
# row 0 is the zenith band (+90 deg elevation), column 0 starts at azimuth -180 deg

def bin_edges(height: int, width: int):
    el = np.linspace(np.pi / 2, -np.pi / 2, height + 1)
    az = np.linspace(-np.pi, np.pi, width + 1)
    return el, az


def angles_to_dirs(el, az):
    el, az = np.asarray(el, dtype=np.float64), np.asarray(az, dtype=np.float64)
    return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)


def bin_centers(height: int, width: int):
    """(elevation, azimuth) of every bin centre, each (H, W), radians."""
    el, az = bin_edges(height, width)
    return np.meshgrid(0.5 * (el[:-1] + el[1:]), 0.5 * (az[:-1] + az[1:]), indexing="ij")


def bin_directions(height: int, width: int) -> np.ndarray:
    return angles_to_dirs(*bin_centers(height, width))


def bin_solid_angles(height: int, width: int) -> np.ndarray:
    el, az = bin_edges(height, width)
    return np.outer(np.sin(el[:-1]) - np.sin(el[1:]), np.diff(az))


def direction_to_bin(d, height: int, width: int):
    """(row, col) of the bin containing each unit direction."""
    d = np.asarray(d, dtype=np.float64)
    el = np.arcsin(np.clip(d[..., 2], -1, 1))
    az = np.arctan2(d[..., 1], d[..., 0])
    row = np.clip(np.floor((np.pi / 2 - el) / np.pi * height), 0, height - 1).astype(np.int64)
    col = np.clip(np.floor((az + np.pi) / (2 * np.pi) * width), 0, width - 1).astype(np.int64)
    return row, col


# -- configuration ------------------------------------------------------------

@dataclass
class RadioConfig:
    max_bounces: int = 2
    spectrum_shape: tuple = (18, 36)    # (elevation bins, azimuth bins)
    supersample: int = 4                # Rx cells per bin along each axis
    max_refine: int = 5                 # 2x2 subdivisions near specular configurations
    lobe_rings: int = 2                 # rings of the specular continuation cone
    lobe_scale: float = 3.0             # cone half-angle = lobe_scale * alpha
    lobe_min_deg: float = 1.0
    lobe_max_deg: float = 45.0
    diffuse_continuation: bool = False
    hemisphere_samples: int = 64
    hit_threshold: float = 0.5
    ray_epsilon: float = 1e-3
    coupled_brdf: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.max_bounces < 0:
            raise PropagationDomainError("max_bounces must be >= 0")


def cone_quadrature(axis, half_angle: float, rings: int):
    """Directions and solid-angle weights partitioning a cone around ``axis``."""
    axis = np.asarray(axis, dtype=np.float64)
    t, b = _tangent_frame(axis)
    step = half_angle / (rings + 0.5)
    dirs = [axis[None]]
    weights = [np.array([2 * np.pi * (1 - np.cos(0.5 * step))])]
    for k in range(1, rings + 1):
        lo, hi = (k - 0.5) * step, (k + 0.5) * step
        m = 6 * k
        phi = (np.arange(m) + 0.5 * (k % 2)) * 2 * np.pi / m
        th = k * step
        dirs.append(np.cos(th) * axis[None] + np.sin(th) * (np.cos(phi)[:, None] * t + np.sin(phi)[:, None] * b))
        weights.append(np.full(m, 2 * np.pi * (np.cos(lo) - np.cos(hi)) / m))
    return np.concatenate(dirs), np.concatenate(weights)


# -- traced geometry -------------------------------------------------------------

@dataclass
class PathSet:
    """Geometry of every traced path, ready for (re-)shading.

    Vertices are surface hits; each interaction is a (vertex, incident
    direction) pair.  A path is a chain of interactions ending at the Rx;
    ``entries`` lists them per path, Tx side first, padded with -1.
    ``contrib_*`` map vertices to the primitives whose blended attributes
    define the surface there (normalized weights).
    """

    link: RadioLink
    config: RadioConfig
    # per path
    arrival: np.ndarray          # (P, 3) from the Rx toward the first vertex (or the Tx)
    departure: np.ndarray        # (P, 3) leaving the Tx
    lengths: np.ndarray          # (P, max_b + 1) segment lengths Tx -> Rx, nan padded
    base: np.ndarray             # (P,) P_tx G_tx G_rx FSPL
    entries: np.ndarray          # (P, max_b) interaction ids, -1 padded
    # per vertex
    v_pos: np.ndarray
    v_normal: np.ndarray
    v_wo: np.ndarray
    v_weight: np.ndarray         # 16 pi^2 (n.wo) dS / lambda^2
    # per interaction
    e_vertex: np.ndarray
    e_wi: np.ndarray
    # sparse vertex -> primitive blend
    contrib_vertex: np.ndarray
    contrib_prim: np.ndarray
    contrib_weight: np.ndarray

    def __len__(self):
        return len(self.base)

    @property
    def bounces(self) -> np.ndarray:
        return (self.entries >= 0).sum(axis=1)

    def vertices(self, p: int) -> list:
        """Ordered vertex list Tx -> bounces -> Rx for path ``p``."""
        ids = [e for e in self.entries[p] if e >= 0]
        return [self.link.tx_position] + [self.v_pos[self.e_vertex[e]] for e in ids] + [self.link.rx_position]


class _Tables:
    """Growable columnar storage used while tracing."""

    def __init__(self, **cols):
        self.cols = {k: [] for k in cols}
        self.n = 0

    def add(self, **vals):
        m = None
        for k, v in vals.items():
            v = np.asarray(v)
            m = len(v)
            self.cols[k].append(v)
        start = self.n
        self.n += m
        return np.arange(start, self.n)

    def get(self, k, shape_tail=(), dtype=np.float64):
        xs = self.cols[k]
        return np.concatenate(xs).astype(dtype) if xs else np.zeros((0,) + shape_tail, dtype)


def _cell_dirs(el0, el1, az0, az1):
    return angles_to_dirs(0.5 * (el0 + el1), 0.5 * (az0 + az1))


def _rx_cells(link, fld: GaussianField, cfg: RadioConfig):
    """Adaptive Rx-side quadrature: (dirs, solid angles, RayHits over kept cells)."""
    H, W = cfg.spectrum_shape
    s = cfg.supersample
    el, az = bin_edges(H * s, W * s)
    E0, A0 = np.meshgrid(el[:-1], az[:-1], indexing="ij")
    E1, A1 = np.meshgrid(el[1:], az[1:], indexing="ij")
    cells = [x.reshape(-1) for x in (E0, E1, A0, A1)]
    eps = cfg.ray_epsilon
    kept = []
    for level in range(cfg.max_refine + 1):
        el0, el1, az0, az1 = cells
        if len(el0) == 0:
            break
        dirs = _cell_dirs(*cells)
        hits = fld.march(link.rx_position[None], dirs, t_min=eps)
        refine = np.zeros(len(dirs), bool)
        if level < cfg.max_refine:
            n = hits.normal * np.where(np.einsum("ij,ij->i", hits.normal, dirs) > 0, -1.0, 1.0)[:, None]
            wo = -dirs
            refl = 2 * np.einsum("ij,ij->i", n, wo)[:, None] * n - wo
            to_tx = link.tx_position[None] - hits.position
            d_tx = np.linalg.norm(to_tx, axis=1)
            wi = to_tx / np.maximum(d_tx, 1e-12)[:, None]
            mismatch = np.arccos(np.clip(np.einsum("ij,ij->i", refl, wi), -1, 1))
            cos_o = np.maximum(np.einsum("ij,ij->i", n, wo), 0.1)
            lobe = 2 * np.maximum(hits.roughness ** 2, MIN_ALPHA)
            size = np.maximum(el0 - el1, (az1 - az0) * np.cos(0.5 * (el0 + el1)))
            t = np.where(hits.hit, hits.t, 0.0)
            reach = 3 * lobe + 3 * size * (1 + t / (cos_o * np.maximum(d_tx, 1e-9)))
            refine = hits.hit & (size > 0.5 * lobe) & (mismatch < reach)
        keep = hits.hit & ~refine
        idx = np.nonzero(keep)[0]
        omega = (np.sin(el0) - np.sin(el1)) * (az1 - az0)
        kept.append((dirs[idx], omega[idx], _select(hits, idx)))
        r = np.nonzero(refine)[0]
        em, am = 0.5 * (el0[r] + el1[r]), 0.5 * (az0[r] + az1[r])
        cells = [np.concatenate(x) for x in (
            (el0[r], el0[r], em, em), (em, em, el1[r], el1[r]),
            (az0[r], am, az0[r], am), (am, az1[r], am, az1[r]))]
    dirs = np.concatenate([k[0] for k in kept])
    omega = np.concatenate([k[1] for k in kept])
    return dirs, omega, _merge([k[2] for k in kept])


def _select(hits, idx):
    """Hit attributes of rays ``idx`` with contributors renumbered 0..len(idx)-1."""
    remap = np.full(len(hits.hit), -1)
    remap[idx] = np.arange(len(idx))
    m = remap[hits.contrib_ray] >= 0
    return dict(t=hits.t[idx], position=hits.position[idx], normal=hits.normal[idx],
                roughness=hits.roughness[idx], c_ray=remap[hits.contrib_ray[m]],
                c_prim=hits.contrib_prim[m], c_w=hits.contrib_weight[m])


def _merge(parts):
    out = {k: [] for k in ("t", "position", "normal", "roughness", "c_ray", "c_prim", "c_w")}
    off = 0
    for p in parts:
        for k in out:
            out[k].append(p[k] + off if k == "c_ray" else p[k])
        off += len(p["t"])
    return {k: np.concatenate(v) for k, v in out.items()}


def trace_paths(link: RadioLink, scene, config: RadioConfig | None = None, max_bounces=None) -> PathSet:
    """Enumerate propagation paths Tx -> bounces -> Rx through the field."""
    cfg = config or RadioConfig()
    max_b = cfg.max_bounces if max_bounces is None else int(max_bounces)
    if max_b < 0:
        raise PropagationDomainError("max_bounces must be >= 0")
    fld = scene if isinstance(scene, GaussianField) else GaussianField(scene, cfg.hit_threshold)
    eps = cfg.ray_epsilon
    k_omega = 16 * np.pi ** 2 / link.wavelength ** 2

    V = _Tables(pos=0, normal=0, wo=0, weight=0, arrival=0, parent=0, seg=0, rough=0)
    Ei = _Tables(vertex=0, wi=0)
    C = _Tables(v=0, p=0, w=0)
    paths = _Tables(arrival=0, departure=0, lengths=0, entries=0)

    def chain_of(vids):
        """Interaction ids and segment lengths from each vertex back to the Rx."""
        parent = V.get("parent", dtype=np.int64)
        seg = V.get("seg")
        e_vertex = Ei.get("vertex", dtype=np.int64)
        ents, lens = [], []
        for v in vids:
            e_list, l_list = [], []
            while True:
                l_list.append(seg[v])
                p = parent[v]
                if p < 0:
                    break
                e_list.append(p)
                v = e_vertex[p]
            ents.append(e_list)
            lens.append(l_list)
        return ents, lens

    # line of sight
    los = link.tx_position - link.rx_position
    d_los = float(np.linalg.norm(los))
    if d_los > 0:
        u = los / d_los
        if not fld.occluded(link.rx_position[None], u[None], np.array([d_los - eps]), eps)[0]:
            paths.add(arrival=u[None], departure=-u[None],
                      lengths=np.array([[d_los] + [np.nan] * max_b]),
                      entries=np.full((1, max_b), -1))

    if max_b >= 1 and fld.n > 0:
        dirs, omega, h = _rx_cells(link, fld, cfg)
        vids = V.add(pos=h["position"], normal=h["normal"], wo=-dirs, weight=k_omega * omega * h["t"] ** 2,
                     arrival=dirs, parent=np.full(len(dirs), -1), seg=h["t"], rough=h["roughness"])
        C.add(v=vids[h["c_ray"]] if len(vids) else h["c_ray"], p=h["c_prim"], w=h["c_w"])
        front = vids
        for depth in range(1, max_b + 1):
            if len(front) == 0:
                break
            pos = V.get("pos", (3,))[front]
            wo = V.get("wo", (3,))[front]
            n = V.get("normal", (3,))[front]
            cos_o = np.einsum("ij,ij->i", n, wo)
            # orient blended normals toward the side the ray arrived from
            flip = cos_o < 0
            n[flip] *= -1
            cos_o = np.abs(cos_o)
            V.cols["normal"] = [V.get("normal", (3,))]
            V.cols["normal"][0][front] = n
            ok = cos_o > 1e-6
            origin = pos + eps * n

            # connect to the Tx
            to_tx = link.tx_position[None] - pos
            d_tx = np.linalg.norm(to_tx, axis=1)
            wi = to_tx / np.maximum(d_tx, 1e-300)[:, None]
            vis = ok & (np.einsum("ij,ij->i", n, wi) > 1e-6) & (d_tx > eps)
            idx = np.nonzero(vis)[0]
            if len(idx):
                o_d = np.linalg.norm(link.tx_position[None] - origin[idx], axis=1)
                blocked = fld.occluded(origin[idx], (link.tx_position[None] - origin[idx]) / o_d[:, None],
                                       o_d - eps, eps)
                idx = idx[~blocked]
            if len(idx):
                e_ids = Ei.add(vertex=front[idx], wi=wi[idx])
                ents, lens = chain_of(front[idx])
                arr = V.get("arrival", (3,))[front[idx]]
                L = np.full((len(idx), max_b + 1), np.nan)
                En = np.full((len(idx), max_b), -1)
                for r, (e, el_, ll) in enumerate(zip(e_ids, ents, lens)):
                    seq = [e] + el_
                    En[r, :len(seq)] = seq
                    segs = [d_tx[idx[r]]] + ll
                    L[r, :len(segs)] = segs
                paths.add(arrival=arr, departure=-wi[idx], lengths=L, entries=En)
            if depth == max_b:
                break

            # continue inside the reflection lobe (and optionally the diffuse hemisphere)
            rough = V.get("rough")[front]
            ro, rd, rw, par = [], [], [], []
            for j in np.nonzero(ok)[0]:
                refl = 2 * cos_o[j] * n[j] - wo[j]
                alpha = max(rough[j] ** 2, MIN_ALPHA)
                half = np.clip(cfg.lobe_scale * alpha, np.radians(cfg.lobe_min_deg), np.radians(cfg.lobe_max_deg))
                d, w = cone_quadrature(refl, half, cfg.lobe_rings)
                if cfg.diffuse_continuation:
                    hd, hw = hemisphere_quadrature(n[j], cfg.hemisphere_samples, cfg.seed + int(front[j]), cosine=False)
                    d, w = np.concatenate([d, hd]), np.concatenate([w, hw])
                up = d @ n[j] > 1e-6
                ro.append(np.broadcast_to(origin[j], (int(up.sum()), 3)))
                rd.append(d[up])
                rw.append(w[up])
                par.append(np.full(int(up.sum()), j))
            if not rd:
                break
            ro, rd, rw, par = (np.concatenate(x) for x in (ro, rd, rw, par))
            hits = fld.march(ro, rd, t_min=eps)
            sel = np.nonzero(hits.hit)[0]
            h = _select(hits, sel)
            if len(sel) == 0:
                break
            e_ids = Ei.add(vertex=front[par[sel]], wi=rd[sel])
            seg = np.linalg.norm(h["position"] - pos[par[sel]], axis=1)
            t_o = h["t"]
            new = V.add(pos=h["position"], normal=h["normal"], wo=-rd[sel], weight=k_omega * rw[sel] * t_o ** 2,
                        arrival=V.get("arrival", (3,))[front[par[sel]]], parent=e_ids, seg=seg, rough=h["roughness"])
            C.add(v=new[h["c_ray"]], p=h["c_prim"], w=h["c_w"])
            front = new

    arrival = paths.get("arrival", (3,))
    departure = paths.get("departure", (3,))
    lengths = paths.get("lengths", (max_b + 1,))
    base = link.tx_power * link.gains(departure, arrival) * _fspl_rows(link.frequency, lengths) \
        if len(arrival) else np.zeros(0)
    return PathSet(
        link=link, config=cfg,
        arrival=arrival, departure=departure, lengths=lengths, base=base,
        entries=paths.get("entries", (max_b,), np.int64),
        v_pos=V.get("pos", (3,)), v_normal=V.get("normal", (3,)), v_wo=V.get("wo", (3,)),
        v_weight=V.get("weight"),
        e_vertex=Ei.get("vertex", dtype=np.int64), e_wi=Ei.get("wi", (3,)),
        contrib_vertex=C.get("v", dtype=np.int64), contrib_prim=C.get("p", dtype=np.int64),
        contrib_weight=C.get("w"),
    )


# -- shading -----------------------------------------------------------------------

def vertex_materials(paths: PathSet, gaussians: Gaussians):
    """Blended (albedo, metallic, roughness) per vertex as differentiable tensors."""
    nv = len(paths.v_pos)
    w = torch.as_tensor(paths.contrib_weight)
    vi = torch.as_tensor(paths.contrib_vertex)
    pi = torch.as_tensor(paths.contrib_prim)
    alb = torch.zeros(nv, 3, dtype=torch.float64).index_add(0, vi, w[:, None] * gaussians.albedo[pi])
    met = torch.zeros(nv, dtype=torch.float64).index_add(0, vi, w * gaussians.metallic[pi])
    rough = torch.zeros(nv, dtype=torch.float64).index_add(0, vi, w * gaussians.roughness[pi])
    return alb.clamp(0, 1), met.clamp(0, 1), rough.clamp(0, 1)


def interaction_attenuation(paths: PathSet, gaussians: Gaussians, coupled: bool | None = None) -> torch.Tensor:
    """Per-interaction, per-channel attenuation A (E, 3)."""
    coupled = paths.config.coupled_brdf if coupled is None else coupled
    if len(paths.e_vertex) == 0:
        return torch.zeros(0, 3, dtype=torch.float64)
    alb, met, rough = vertex_materials(paths, gaussians)
    v = torch.as_tensor(paths.e_vertex)
    n = torch.as_tensor(paths.v_normal)[v]
    wo = torch.as_tensor(paths.v_wo)[v]
    wi = torch.as_tensor(paths.e_wi)
    f_s, f_r = brdf_terms(n, wi, wo, alb[v], met[v], rough[v], coupled=coupled)
    cos_i = (n * wi).sum(-1)
    return (f_s + f_r) * (cos_i * torch.as_tensor(paths.v_weight)[v])[:, None]


def path_powers(paths: PathSet, gaussians: Gaussians, channels: bool = False) -> torch.Tensor:
    """Received power per path in watts, (P,) or per channel (P, 3)."""
    A = interaction_attenuation(paths, gaussians)
    A = torch.cat([A, torch.ones(1, 3, dtype=torch.float64)])   # index -1 -> 1
    ent = torch.as_tensor(paths.entries)
    prod = A[ent].prod(dim=1) if ent.shape[1] else torch.ones(len(paths), 3, dtype=torch.float64)
    per = torch.as_tensor(paths.base)[:, None] * prod
    return per if channels else per.mean(dim=1)


@dataclass
class PropagationPath:
    vertices: list
    segment_lengths: list
    bounce_attenuations: list     # per bounce, (3,) per channel, Tx side first
    departure: np.ndarray
    arrival: np.ndarray
    power: float

    @property
    def bounces(self) -> int:
        return len(self.segment_lengths) - 1


def trace_power(link: RadioLink, scene: Gaussians | None, max_bounces: int | None = None,
                config: RadioConfig | None = None, with_paths: bool = True):
    """Received power P_rx (watts) and the list of contributing paths."""
    g = scene if scene is not None else Gaussians.empty()
    ps = trace_paths(link, g, config, max_bounces)
    with torch.no_grad():
        A = interaction_attenuation(ps, g).numpy()
        pw = path_powers(ps, g).numpy()
    total = float(pw.sum())
    if not with_paths:
        return total, []
    out = []
    for p in range(len(ps)):
        ids = [e for e in ps.entries[p] if e >= 0]
        segs = [float(x) for x in ps.lengths[p] if not np.isnan(x)]
        out.append(PropagationPath(ps.vertices(p), segs, [A[e] for e in ids],
                                   ps.departure[p], ps.arrival[p], float(pw[p])))
    return total, out


# -- spatial spectrum -------------------------------------------------------------------

DEFAULT_DYNAMIC_RANGE_DB = 40.0


@dataclass
class SpatialSpectrum:
    """Received power per equirectangular arrival bin.

    ``linear`` holds watts per bin.  ``dynamic_range`` is (floor, ceil) in dBm;
    ``power`` is the clamped dBm image.
    """

    linear: np.ndarray
    dynamic_range: tuple
    rx_position: np.ndarray
    tx_position: np.ndarray
    frequency: float

    @property
    def shape(self):
        return self.linear.shape

    @property
    def power(self) -> np.ndarray:
        lo, hi = self.dynamic_range
        return np.clip(watts_to_dbm(self.linear), lo, hi)

    @property
    def normalized(self) -> np.ndarray:
        lo, hi = self.dynamic_range
        return (self.power - lo) / (hi - lo)

    def lit(self) -> np.ndarray:
        return self.power > self.dynamic_range[0]

    def total(self) -> float:
        return float(self.linear.sum())

    def bin_angles(self):
        """(elevation, azimuth) of the bin centres in degrees."""
        el, az = bin_centers(*self.shape)
        return np.degrees(el), np.degrees(az)


def spectrum_from_paths(paths: PathSet, powers, shape) -> torch.Tensor:
    """Bin per-path powers (torch, differentiable) by arrival direction."""
    H, W = shape
    r, c = direction_to_bin(paths.arrival, H, W) if len(paths) else (np.zeros(0, np.int64),) * 2
    flat = torch.zeros(H * W, dtype=torch.float64)
    flat = flat.index_add(0, torch.as_tensor(r * W + c, dtype=torch.int64), powers)
    return flat.reshape(H, W)


def auto_dynamic_range(linear, span_db: float = DEFAULT_DYNAMIC_RANGE_DB):
    peak = float(np.max(linear)) if np.size(linear) else 0.0
    hi = float(watts_to_dbm(peak)) if peak > 0 else -150.0
    return hi - span_db, hi


def render_spectrum(link: RadioLink, scene: Gaussians | None, resolution=None,
                    config: RadioConfig | None = None, dynamic_range=None,
                    max_bounces: int | None = None) -> SpatialSpectrum:
    """Equirectangular spatial spectrum at the link's Rx."""
    cfg = config or RadioConfig()
    if resolution is not None:
        cfg = RadioConfig(**{**cfg.__dict__, "spectrum_shape": tuple(resolution)})
    g = scene if scene is not None else Gaussians.empty()
    ps = trace_paths(link, g, cfg, max_bounces)
    with torch.no_grad():
        lin = spectrum_from_paths(ps, path_powers(ps, g), cfg.spectrum_shape).numpy()
    dr = auto_dynamic_range(lin) if dynamic_range is None else tuple(dynamic_range)
    return SpatialSpectrum(lin, dr, link.rx_position, link.tx_position, link.frequency)
