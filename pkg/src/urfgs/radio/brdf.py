"""Cook-Torrance surface model for radio signals.

The BRDF splits into a direction-independent scattering lobe
``f_s = (1 - m) a / pi`` and a microfacet reflection lobe
``f_r = D F G / (4 (n.wi)(n.wo))``.  The microfacet terms are

* D: GGX / Trowbridge-Reitz with ``alpha = roughness**2``
* F: Schlick with ``F0 = mix(0.04, albedo, metallic)``
* G: Smith height-correlated masking-shadowing

By default the two lobes are coupled for energy conservation: the
scattering lobe is scaled by ``(1 - E(wi)) (1 - E(wo)) / (1 - E_avg)``, where
``E`` is the directional albedo of the reflection lobe (tabulated once) and
``E_avg`` its cosine-weighted hemispherical mean.  The factor is symmetric in
``wi``/``wo`` and bounds the white-furnace integral by one.  ``coupled=False``
gives the plain sum ``f_s + f_r``.

All functions are vectorized torch code and broadcast over leading axes, so
the same code is used for single evaluations, quadrature and training.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch

DIELECTRIC_F0 = 0.04
MIN_ALPHA = 1e-3


class DomainError(ValueError):
    pass


def _t(x):
    return torch.as_tensor(x, dtype=torch.float64)


def ggx_ndf(n_dot_h, alpha):
    a2 = alpha * alpha
    d = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0
    return a2 / (math.pi * d * d)


def smith_lambda(cos_theta, alpha):
    c2 = (cos_theta * cos_theta).clamp_min(1e-30)
    tan2 = (1.0 - c2).clamp_min(0.0) / c2
    return 0.5 * (torch.sqrt(1.0 + alpha * alpha * tan2) - 1.0)


def smith_g2(n_dot_i, n_dot_o, alpha):
    return 1.0 / (1.0 + smith_lambda(n_dot_i, alpha) + smith_lambda(n_dot_o, alpha))


def fresnel_schlick(cos_theta, f0):
    return f0 + (1.0 - f0) * (1.0 - cos_theta).clamp(0.0, 1.0) ** 5


def base_reflectance(albedo, metallic):
    m = metallic[..., None] if torch.is_tensor(metallic) and metallic.dim() else metallic
    return DIELECTRIC_F0 * (1.0 - m) + albedo * m


def scattering_term(albedo, metallic):
    m = metallic[..., None] if torch.is_tensor(metallic) and metallic.dim() else metallic
    return (1.0 - m) * albedo / math.pi


def reflection_term(normal, wi, wo, albedo, metallic, roughness):
    """Microfacet lobe, per channel; inputs broadcast, directions along the last axis."""
    n_i = (normal * wi).sum(-1)
    n_o = (normal * wo).sum(-1)
    h = wi + wo
    h = h / h.norm(dim=-1, keepdim=True).clamp_min(1e-30)
    n_h = (normal * h).sum(-1)
    o_h = (wo * h).sum(-1)
    alpha = (roughness * roughness).clamp_min(MIN_ALPHA)
    D = ggx_ndf(n_h, alpha)
    G = smith_g2(n_i, n_o, alpha)
    F = fresnel_schlick(o_h[..., None], base_reflectance(albedo, metallic))
    return (D * G / (4.0 * n_i * n_o))[..., None] * F


LUT_SIZE = 33


@lru_cache(maxsize=1)
def _albedo_tables(n_samples: int = 4096):
    """Directional-albedo tables of the reflection lobe on a (roughness, sqrt(cos)) grid.

    With Schlick's Fresnel the albedo splits as ``E = F0 * E1 + (1 - F0) * E2``.
    Returns ``(E1, E2, E1_avg, E2_avg)``: two (R, M) tables and their cosine
    weighted hemispherical means per roughness.
    """
    rough = np.linspace(0.0, 1.0, LUT_SIZE)
    # cos axis sampled uniformly in sqrt(cos) for resolution near the horizon
    mu = np.linspace(0.0, 1.0, LUT_SIZE) ** 2
    mu_eval = np.clip(mu, 1e-3, 1.0)
    e1 = np.zeros((LUT_SIZE, LUT_SIZE))
    e2 = np.zeros((LUT_SIZE, LUT_SIZE))
    n = np.array([0.0, 0.0, 1.0])
    for r_i, r in enumerate(rough):
        alpha = max(r * r, MIN_ALPHA)
        for m_i, c in enumerate(mu_eval):
            wo = np.array([np.sqrt(1 - c * c), 0.0, c])
            wi, w = ggx_quadrature(n, wo, r, n_samples, seed=r_i * LUT_SIZE + m_i)
            h = wi + wo
            h /= np.linalg.norm(h, axis=1, keepdims=True)
            o_h = np.clip(h @ wo, 0.0, 1.0)
            cos_i = np.clip(wi[:, 2], 1e-12, None)
            lam = lambda ct: 0.5 * (np.sqrt(1 + alpha * alpha * (1 - ct * ct) / (ct * ct)) - 1)
            G = 1.0 / (1.0 + lam(cos_i) + lam(c))
            a2 = alpha * alpha
            d = h[:, 2] ** 2 * (a2 - 1) + 1
            D = a2 / (np.pi * d * d)
            base = D * G / (4 * cos_i * c) * cos_i * w
            e1[r_i, m_i] = base.sum()
            e2[r_i, m_i] = (base * (1 - o_h) ** 5).sum()
    e1 = np.clip(e1, 0.0, 1.0)
    e2 = np.clip(e2, 0.0, 1.0)
    avg = lambda e: 2.0 * np.trapezoid(e * mu[None, :], mu, axis=1)
    return (torch.as_tensor(e1), torch.as_tensor(e2),
            torch.as_tensor(avg(e1)), torch.as_tensor(avg(e2)))


def _interp1(table, x):
    """Linear interpolation on the uniform [0, 1] grid; ``table`` (K,) or (..., K) gathered."""
    pos = x.clamp(0.0, 1.0) * (LUT_SIZE - 1)
    i0 = pos.floor().clamp(0, LUT_SIZE - 2).long()
    t = pos - i0.to(pos.dtype)
    return table[i0] * (1 - t) + table[i0 + 1] * t


def _interp2(table, rough, mu):
    pr = rough.clamp(0.0, 1.0) * (LUT_SIZE - 1)
    pm = mu.clamp(1e-12, 1.0).sqrt() * (LUT_SIZE - 1)
    r0 = pr.floor().clamp(0, LUT_SIZE - 2).long()
    m0 = pm.floor().clamp(0, LUT_SIZE - 2).long()
    tr = pr - r0.to(pr.dtype)
    tm = pm - m0.to(pm.dtype)
    return ((table[r0, m0] * (1 - tm) + table[r0, m0 + 1] * tm) * (1 - tr)
            + (table[r0 + 1, m0] * (1 - tm) + table[r0 + 1, m0 + 1] * tm) * tr)


def reflection_albedo(cos_theta, albedo, metallic, roughness):
    """Per-channel directional albedo E of the reflection lobe (tabulated)."""
    e1, e2, _, _ = _albedo_tables()
    f0 = base_reflectance(albedo, metallic)
    rough = torch.broadcast_to(roughness, cos_theta.shape) if torch.is_tensor(roughness) else roughness
    a = _interp2(e1, rough, cos_theta)[..., None]
    b = _interp2(e2, rough, cos_theta)[..., None]
    return f0 * a + (1 - f0) * b


def coupling_factor(n_dot_i, n_dot_o, albedo, metallic, roughness):
    _, _, e1_avg, e2_avg = _albedo_tables()
    f0 = base_reflectance(albedo, metallic)
    e_avg = f0 * _interp1(e1_avg, roughness)[..., None] + (1 - f0) * _interp1(e2_avg, roughness)[..., None]
    e_i = reflection_albedo(n_dot_i, albedo, metallic, roughness)
    e_o = reflection_albedo(n_dot_o, albedo, metallic, roughness)
    return (1 - e_i) * (1 - e_o) / (1 - e_avg).clamp_min(1e-6)


def brdf_terms(normal, wi, wo, albedo, metallic, roughness, coupled: bool = True):
    """Scattering and reflection contributions, per channel on the last axis.

    With ``coupled`` the returned scattering part already includes the
    energy coupling factor.  No hemisphere checks.
    """
    f_r = reflection_term(normal, wi, wo, albedo, metallic, roughness)
    f_s = torch.broadcast_to(scattering_term(albedo, metallic), f_r.shape)
    if coupled:
        n_i = (normal * wi).sum(-1)
        n_o = (normal * wo).sum(-1)
        f_s = f_s * coupling_factor(n_i, n_o, albedo, metallic, roughness)
    return f_s, f_r


@dataclass(frozen=True)
class SurfacePoint:
    position: np.ndarray
    normal: np.ndarray
    albedo: np.ndarray
    metallic: float
    roughness: float

    def __post_init__(self):
        for name in ("position", "normal", "albedo"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if abs(np.linalg.norm(self.normal) - 1.0) > 1e-6:
            raise DomainError("surface normal must be unit length")
        if not (0 <= self.metallic <= 1 and 0 <= self.roughness <= 1):
            raise DomainError("metallic and roughness must lie in [0, 1]")
        if np.any((self.albedo < 0) | (self.albedo > 1)):
            raise DomainError("albedo must lie in [0, 1]^3")


def brdf(point: SurfacePoint, wi, wo, split: bool = False, coupled: bool = True):
    """Per-channel BRDF value for unit directions in the upper hemisphere.

    ``split=True`` returns the raw lobes ``(f_s, f_r)`` instead of the sum.
    """
    n = _t(point.normal)
    wi, wo = _t(wi), _t(wo)
    if float(n @ wi) <= 0 or float(n @ wo) <= 0:
        raise DomainError("incident and outgoing directions must lie in the upper hemisphere")
    albedo, metallic, rough = _t(point.albedo), _t(point.metallic), _t(point.roughness)
    if split:
        f_r = reflection_term(n, wi, wo, albedo, metallic, rough)
        return torch.broadcast_to(scattering_term(albedo, metallic), f_r.shape).numpy(), f_r.numpy()
    f_s, f_r = brdf_terms(n, wi, wo, albedo, metallic, rough, coupled)
    return (f_s + f_r).numpy()


def _tangent_frame(n):
    n = np.asarray(n, dtype=np.float64)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t = np.cross(n, helper)
    t /= np.linalg.norm(t)
    return t, np.cross(n, t)


def hemisphere_quadrature(normal, n_samples: int = 64, seed: int = 0, cosine: bool = True):
    """Stratified hemisphere directions and solid-angle weights.

    With ``cosine=True`` directions are cosine-distributed and each weight is
    ``pi / (n cos)``, so ``sum(f * cos * w)`` estimates ``int f cos dw``.
    Deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    k = max(1, int(np.round(np.sqrt(n_samples))))
    m = int(np.ceil(n_samples / k))
    i, j = np.meshgrid(np.arange(k), np.arange(m), indexing="ij")
    u1 = ((i + rng.random(i.shape)) / k).ravel()
    u2 = ((j + rng.random(j.shape)) / m).ravel()
    phi = 2 * np.pi * u2
    if cosine:
        r = np.sqrt(u1)
        local = np.stack([r * np.cos(phi), r * np.sin(phi), np.sqrt(np.clip(1 - u1, 0, None))], -1)
        cos = local[:, 2]
        weights = np.pi / (len(u1) * np.maximum(cos, 1e-12))
    else:
        cos = u1
        s = np.sqrt(np.clip(1 - cos * cos, 0, None))
        local = np.stack([s * np.cos(phi), s * np.sin(phi), cos], -1)
        weights = np.full(len(u1), 2 * np.pi / len(u1))
    t, b = _tangent_frame(normal)
    dirs = local[:, :1] * t + local[:, 1:2] * b + local[:, 2:] * np.asarray(normal, dtype=np.float64)
    return dirs, weights


@dataclass
class SurfaceResponse:
    scattered: np.ndarray   # S_s per channel
    reflected: np.ndarray   # S_r per channel
    outgoing: np.ndarray    # S_o = S_s + S_r
    attenuation: np.ndarray  # S_o / S_i (single incident direction only)


def surface_outgoing(point: SurfacePoint, incident, wo, solid_angles=None,
                     coupled: bool = True) -> SurfaceResponse:
    """Discrete rendering-equation sum over an incident field.

    ``incident`` is a list of ``(wi, S_i)`` pairs; ``S_i`` may be scalar or
    per-channel.  ``solid_angles`` gives the quadrature weight of each
    entry (defaults to an equal split of the hemisphere).
    """
    if len(incident) == 0:
        raise DomainError("empty incident field: attenuation is undefined")
    n = _t(point.normal)
    wo = _t(wo)
    if float(n @ wo) <= 0:
        raise DomainError("outgoing direction must lie in the upper hemisphere")
    wi = _t(np.stack([np.asarray(w, dtype=np.float64) for w, _ in incident]))
    si = _t(np.stack([np.broadcast_to(np.asarray(s, dtype=np.float64), (3,)) for _, s in incident]))
    cos_i = wi @ n
    if torch.any(cos_i <= 0):
        raise DomainError("incident directions must lie in the upper hemisphere")
    dw = _t(np.full(len(incident), 2 * np.pi / len(incident)) if solid_angles is None else solid_angles)
    f_s, f_r = brdf_terms(n, wi, wo, _t(point.albedo), _t(point.metallic), _t(point.roughness), coupled)
    k = (cos_i * dw)[:, None] * si
    s_s = (f_s * k).sum(0).numpy()
    s_r = (f_r * k).sum(0).numpy()
    s_o = s_s + s_r
    if len(incident) == 1:
        s_in = si[0].numpy()
        att = np.divide(s_o, s_in, out=np.zeros(3), where=s_in != 0)
    else:
        att = np.full(3, np.nan)
    return SurfaceResponse(s_s, s_r, s_o, att)


def ggx_quadrature(normal, wo, roughness, n_samples: int = 16384, seed: int = 0):
    """Stratified GGX half-vector samples turned into incident directions.

    Returns ``(wi, weights)`` where ``weights`` are solid-angle weights
    ``1 / (n * pdf(wi))``; samples reflected below the horizon get weight 0.
    """
    rng = np.random.default_rng(seed)
    k = max(1, int(np.round(np.sqrt(n_samples))))
    m = int(np.ceil(n_samples / k))
    i, j = np.meshgrid(np.arange(k), np.arange(m), indexing="ij")
    u1 = ((i + rng.random(i.shape)) / k).ravel()
    u2 = ((j + rng.random(j.shape)) / m).ravel()
    alpha = max(float(roughness) ** 2, MIN_ALPHA)
    cos_h = np.sqrt((1 - u1) / (1 + (alpha * alpha - 1) * u1))
    sin_h = np.sqrt(np.clip(1 - cos_h * cos_h, 0, None))
    phi = 2 * np.pi * u2
    t, b = _tangent_frame(normal)
    n = np.asarray(normal, dtype=np.float64)
    h = (sin_h * np.cos(phi))[:, None] * t + (sin_h * np.sin(phi))[:, None] * b + cos_h[:, None] * n
    wo = np.asarray(wo, dtype=np.float64)
    o_h = h @ wo
    wi = 2 * o_h[:, None] * h - wo
    a2 = alpha * alpha
    d = cos_h * cos_h * (a2 - 1) + 1
    D = a2 / (np.pi * d * d)
    pdf = D * cos_h / (4 * np.abs(o_h))
    ok = (wi @ n > 0) & (o_h > 0)
    weights = np.where(ok, 1.0 / (len(u1) * np.where(ok, pdf, 1.0)), 0.0)
    return wi, weights


def directional_albedo(point: SurfacePoint, wo, n_samples: int = 16384, seed: int = 0,
                       coupled: bool = True) -> np.ndarray:
    """Hemispherical integral of ``f * cos`` for a fixed outgoing direction (white furnace).

    The scattering lobe is integrated with cosine-weighted samples and the
    reflection lobe with GGX importance samples; both are stratified.
    """
    n = _t(point.normal)
    wo_t = _t(wo)
    albedo, metallic, rough = _t(point.albedo), _t(point.metallic), _t(point.roughness)
    dirs, w = hemisphere_quadrature(point.normal, n_samples, seed, cosine=True)
    wi = _t(dirs)
    cos = (wi @ n).clamp_min(0.0)
    f_s, _ = brdf_terms(n, wi, wo_t, albedo, metallic, rough, coupled)
    diffuse = (f_s * (cos * _t(w))[:, None]).sum(0)
    dirs, w = ggx_quadrature(point.normal, wo, point.roughness, n_samples, seed + 1)
    wi = _t(dirs)
    cos = (wi @ n).clamp_min(1e-12)
    f_r = reflection_term(n, wi, wo_t, albedo, metallic, rough)
    specular = (f_r * (cos * _t(w))[:, None]).sum(0)
    return (diffuse + specular).numpy()
