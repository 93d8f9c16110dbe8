"""Analytic synthetic scenes with exact ground truth.

Geometry is a set of textured rectangles.  Images are produced by direct ray
casting against the rectangles and channel samples by the image-source
construction (line of sight plus first-order mirror reflections), so neither
depends on the Gaussian renderer they are used to test.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import CameraView, Gaussians, look_at, rotmat_to_quat
from ..priors import ALL_TRANSFORMS, SparseDepthMap
from ..radio.brdf import DIELECTRIC_F0
from ..radio.propagation import SPEED_OF_LIGHT, direction_to_bin, watts_to_dbm
from .dataset import ChannelSample, SceneDataset, ViewRecord, quantize_rgb


class DescriptorError(ValueError):
    pass


@dataclass
class Rect:
    center: np.ndarray
    normal: np.ndarray
    u_axis: np.ndarray
    half_size: tuple
    color: tuple = (0.7, 0.7, 0.7)
    color2: tuple | None = None         # checker colour
    checker: float = 0.5                # checker cell edge (m)
    albedo: tuple = (0.5, 0.5, 0.5)
    metallic: float = 0.0
    roughness: float = 0.5

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        self.normal = np.asarray(self.normal, dtype=np.float64)
        self.normal = self.normal / np.linalg.norm(self.normal)
        u = np.asarray(self.u_axis, dtype=np.float64)
        u = u - (u @ self.normal) * self.normal
        self.u_axis = u / np.linalg.norm(u)

    @property
    def v_axis(self):
        return np.cross(self.normal, self.u_axis)

    def intersect(self, origins, dirs):
        """Ray parameters (inf on miss) and in-plane coordinates (a, b)."""
        denom = dirs @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((self.center - origins) @ self.normal) / denom
        p = origins + np.where(np.isfinite(t), t, 0.0)[..., None] * dirs
        a = (p - self.center) @ self.u_axis
        b = (p - self.center) @ self.v_axis
        ok = np.isfinite(t) & (np.abs(denom) > 1e-12) & (np.abs(a) <= self.half_size[0]) & (np.abs(b) <= self.half_size[1])
        return np.where(ok, t, np.inf), a, b

    def texture(self, a, b):
        base = np.broadcast_to(np.asarray(self.color, dtype=np.float64), a.shape + (3,))
        if self.color2 is None:
            return base.copy()
        k = (np.floor(a / self.checker) + np.floor(b / self.checker)).astype(np.int64) % 2
        return np.where(k[..., None] == 1, np.asarray(self.color2, dtype=np.float64), base)


def box(center, size, **material) -> list:
    """Six outward-facing rectangles of an axis-aligned box."""
    c = np.asarray(center, dtype=np.float64)
    h = 0.5 * np.asarray(size, dtype=np.float64)
    out = []
    for ax in range(3):
        u_ax = (ax + 1) % 3
        v_ax = (ax + 2) % 3
        for s in (1.0, -1.0):
            n = np.zeros(3)
            n[ax] = s
            u = np.zeros(3)
            u[u_ax] = 1.0
            out.append(Rect(c + s * h[ax] * n, n, u, (h[u_ax], h[v_ax]), **material))
    return out


@dataclass
class SceneDescriptor:
    name: str
    surfaces: list = field(default_factory=list)
    cameras: list = field(default_factory=list)
    links: list = field(default_factory=list)          # (tx, rx) pairs
    test_views: tuple = ()
    test_links: tuple = ()
    frequency: float = 2.4e9
    tx_power: float = 1.0
    spectrum_shape: tuple = (18, 36)
    dynamic_range: tuple = (-60.0, 0.0)
    background: tuple = (0.0, 0.0, 0.0)
    sparse_per_view: int = 48
    prior_noise: float = 0.005
    normal_noise: float = 0.03


# -- analytic rendering ---------------------------------------------------------------

def cast(surfaces, origins, dirs):
    """Nearest hit per ray: (t, surface index or -1, a, b)."""
    shape = dirs.shape[:-1]
    best_t = np.full(shape, np.inf)
    best_k = np.full(shape, -1)
    best_a = np.zeros(shape)
    best_b = np.zeros(shape)
    for k, s in enumerate(surfaces):
        t, a, b = s.intersect(origins, dirs)
        closer = (t > 1e-9) & (t < best_t)
        best_t = np.where(closer, t, best_t)
        best_k = np.where(closer, k, best_k)
        best_a = np.where(closer, a, best_a)
        best_b = np.where(closer, b, best_b)
    return best_t, best_k, best_a, best_b


def render_view(surfaces, cam: CameraView, background=(0.0, 0.0, 0.0)):
    """Ground-truth (rgb, z-depth, camera-frame normal, hit mask) for one camera."""
    dirs, d_cam = cam.pixel_rays()
    H, W = cam.height, cam.width
    t, k, a, b = cast(surfaces, np.broadcast_to(cam.position, dirs.shape), dirs)
    hit = k >= 0
    rgb = np.broadcast_to(np.asarray(background, dtype=np.float64), (H, W, 3)).copy()
    normal = np.zeros((H, W, 3))
    for i, s in enumerate(surfaces):
        m = k == i
        if not np.any(m):
            continue
        rgb[m] = s.texture(a[m], b[m])
        n = np.where((dirs[m] @ s.normal)[:, None] > 0, -s.normal, s.normal)
        normal[m] = n @ cam.rotation.T
    # z-depth = ray length times the camera-frame z of the unit ray
    zdir = d_cam[..., 2] / np.linalg.norm(d_cam, axis=-1)
    depth = np.where(hit, t * zdir, cam.far)
    return rgb, depth, normal, hit


def _segment_blocked(surfaces, p, q, skip=()):
    d = q - p
    L = float(np.linalg.norm(d))
    if L <= 0:
        return False
    u = d / L
    for k, s in enumerate(surfaces):
        if k in skip:
            continue
        t, _, _ = s.intersect(p[None], u[None])
        if 1e-9 < t[0] < L - 1e-9:
            return True
    return False


def image_source_paths(surfaces, tx, rx, frequency, tx_power=1.0):
    """LOS and first-order specular paths as (power_w, arrival_dir, kind) tuples.

    A reflection carries the channel-mean Schlick Fresnel factor of the
    surface at the specular incidence angle.
    """
    tx = np.asarray(tx, dtype=np.float64)
    rx = np.asarray(rx, dtype=np.float64)
    lam = SPEED_OF_LIGHT / frequency
    out = []
    d = float(np.linalg.norm(tx - rx))
    if d > 0 and not _segment_blocked(surfaces, rx, tx):
        out.append((tx_power * (lam / (4 * np.pi * d)) ** 2, (tx - rx) / d, "los"))
    for k, s in enumerate(surfaces):
        st = (tx - s.center) @ s.normal
        sr = (rx - s.center) @ s.normal
        if st * sr <= 0:
            continue
        img = tx - 2 * st * s.normal
        u = img - rx
        total = float(np.linalg.norm(u))
        u = u / total
        t, _, _ = s.intersect(rx[None], u[None])
        if not np.isfinite(t[0]):
            continue
        p = rx + t[0] * u
        if _segment_blocked(surfaces, rx, p, skip=(k,)) or _segment_blocked(surfaces, p, tx, skip=(k,)):
            continue
        cos_t = abs(u @ s.normal)
        f0 = (1 - s.metallic) * DIELECTRIC_F0 + s.metallic * np.asarray(s.albedo, dtype=np.float64)
        fres = float(np.mean(f0 + (1 - f0) * (1 - cos_t) ** 5))
        out.append((tx_power * fres * (lam / (4 * np.pi * total)) ** 2, u, f"reflection:{k}"))
    return out


def oracle_power(surfaces, tx, rx, frequency, tx_power=1.0) -> float:
    return float(sum(p for p, _, _ in image_source_paths(surfaces, tx, rx, frequency, tx_power)))


def oracle_spectrum(surfaces, tx, rx, frequency, shape, tx_power=1.0) -> np.ndarray:
    H, W = shape
    spec = np.zeros((H, W))
    for p, u, _ in image_source_paths(surfaces, tx, rx, frequency, tx_power):
        r, c = direction_to_bin(u, H, W)
        spec[r, c] += p
    return spec


# -- dataset generation -----------------------------------------------------------------

def generate_synthetic(desc: SceneDescriptor, seed: int = 0) -> SceneDataset:
    """Render the descriptor into a dataset; deterministic in (desc, seed)."""
    if not desc.surfaces and not desc.links:
        raise DescriptorError("descriptor has no surfaces and no links")
    rng = np.random.default_rng(seed)
    views = []
    for i, cam in enumerate(desc.cameras):
        rgb, depth, normal, hit = render_view(desc.surfaces, cam, desc.background)
        # monocular depth prior: unknown affine map of the true depth plus noise
        scale = rng.uniform(0.5, 2.0)
        shift = rng.uniform(-0.5, 0.5)
        mono = (depth - shift) / scale + desc.prior_noise * rng.standard_normal(depth.shape)
        # monocular normal prior: noisy normals in an unknown signed-permutation frame
        frame = ALL_TRANSFORMS[int(rng.integers(len(ALL_TRANSFORMS)))]
        noisy = normal + desc.normal_noise * rng.standard_normal(normal.shape)
        nn = np.linalg.norm(noisy, axis=-1, keepdims=True)
        noisy = np.where(hit[..., None], noisy / np.maximum(nn, 1e-12), 0.0)
        prior_normal = frame.inverse().apply(noisy)
        valid = np.flatnonzero(hit)
        k = min(desc.sparse_per_view, len(valid))
        pick = np.sort(rng.choice(valid, size=k, replace=False)) if k else np.zeros(0, np.int64)
        rows, cols = np.unravel_index(pick, depth.shape)
        sparse = SparseDepthMap(rows, cols, depth[rows, cols]) if k else None
        views.append(ViewRecord(
            f"view{i:02d}", cam, quantize_rgb(rgb), mono, prior_normal, sparse, depth, normal,
            "test" if i in desc.test_views else "train"))
    samples = []
    for j, (tx, rx) in enumerate(desc.links):
        spec = oracle_spectrum(desc.surfaces, tx, rx, desc.frequency, desc.spectrum_shape, desc.tx_power)
        total = spec.sum()
        samples.append(ChannelSample(tx, rx, desc.frequency, float(watts_to_dbm(total)) if total > 0 else -300.0,
                                     spec, "test" if j in desc.test_links else "train"))
    return SceneDataset(desc.name, views, samples, desc.tx_power, tuple(desc.spectrum_shape),
                        tuple(desc.dynamic_range), meta={"seed": int(seed), "generator": "analytic"})


def gaussians_from_surfaces(surfaces, spacing: float = 0.1, opacity: float = 0.95, colors=True) -> Gaussians:
    """Flat Gaussians tiling each rectangle on a square lattice."""
    means, quats, normals, cols, alb, met, rough = [], [], [], [], [], [], []
    for s in surfaces:
        nu = max(1, int(round(2 * s.half_size[0] / spacing)))
        nv = max(1, int(round(2 * s.half_size[1] / spacing)))
        a = (np.arange(nu) + 0.5) / nu * 2 * s.half_size[0] - s.half_size[0]
        b = (np.arange(nv) + 0.5) / nv * 2 * s.half_size[1] - s.half_size[1]
        A, B = np.meshgrid(a, b, indexing="ij")
        A, B = A.ravel(), B.ravel()
        means.append(s.center + A[:, None] * s.u_axis + B[:, None] * s.v_axis)
        # rotation whose columns are (u, v, n): local z is the surface normal
        R = np.stack([s.u_axis, s.v_axis, s.normal], axis=1)
        quats.append(np.tile(rotmat_to_quat(R), (len(A), 1)))
        normals.append(np.tile(s.normal, (len(A), 1)))
        cols.append(s.texture(A, B))
        alb.append(np.tile(s.albedo, (len(A), 1)))
        met.append(np.full(len(A), s.metallic))
        rough.append(np.full(len(A), s.roughness))
    if not means:
        return Gaussians.empty()
    cat = np.concatenate
    n = sum(len(m) for m in means)
    return Gaussians.from_values(
        cat(means), cat(quats), np.tile([0.6 * spacing, 0.6 * spacing, 1e-3 * spacing], (n, 1)),
        np.full(n, opacity), colors=cat(cols) if colors else None, normals=cat(normals),
        albedo=cat(alb), metallic=cat(met), roughness=cat(rough))


# -- built-in descriptors -----------------------------------------------------------------

def _ring(center, radius, heights, azimuths_deg, resolution=(32, 32), fov_deg=60.0):
    w, _ = resolution
    f = 0.5 * w / np.tan(np.radians(fov_deg) / 2)
    cams = []
    c = np.asarray(center, dtype=np.float64)
    for z in heights:
        for az in azimuths_deg:
            a = np.radians(az)
            pos = np.array([c[0] + radius * np.cos(a), c[1] + radius * np.sin(a), z])
            cams.append(look_at(pos, c, focal=f, resolution=resolution, far=50.0))
    return cams


def single_plane() -> SceneDescriptor:
    """Fronto-parallel plane at z = 2 seen by one camera at the origin looking down +z."""
    plane = Rect([0, 0, 2.0], [0, 0, -1.0], [1, 0, 0], (3.0, 3.0), color=(0.6, 0.4, 0.2))
    cam = CameraView(np.zeros(3), np.eye(3), (20.0, 20.0), (7.5, 7.5), (16, 16), 0.01, 50.0)
    return SceneDescriptor("plane", [plane], [cam])


def empty_room() -> SceneDescriptor:
    return SceneDescriptor("empty_room", links=[(np.array([0.0, 0.0, 1.5]), np.array([3.0, 4.0, 1.5]))])


MIRROR_ROUGHNESS = 0.05


def toy_mirror_geometry():
    """Tx/Rx pair above a mirror floor, placed so both arrivals sit at bin centres of an 18x36 grid."""
    d = 2.0
    hr = 1.0 - 0.5 * d * np.tan(np.radians(5.0))
    ht = 2.0 - hr
    az = np.radians(5.0)
    rx = np.array([-1.0, 0.0, hr])
    tx = rx + np.array([d * np.cos(az), d * np.sin(az), ht - hr])
    return tx, rx


def toy_mirror() -> SceneDescriptor:
    mirror = Rect([0, 0, 0], [0, 0, 1.0], [1, 0, 0], (3.0, 3.0), color=(0.8, 0.8, 0.85),
                  color2=(0.3, 0.3, 0.35), checker=1.0, albedo=(1.0, 1.0, 1.0),
                  metallic=1.0, roughness=MIRROR_ROUGHNESS)
    tx, rx = toy_mirror_geometry()
    cams = _ring([0, 0, 0], 4.0, [2.5], [0, 90, 180, 270])
    return SceneDescriptor("toy_mirror", [mirror], cams, [(tx, rx)])


def three_planes() -> SceneDescriptor:
    """A floor and two walls meeting in a corner; 12 views, 10 links."""
    floor = Rect([1, 1, 0], [0, 0, 1.0], [1, 0, 0], (1.0, 1.0), color=(0.85, 0.8, 0.7),
                 color2=(0.25, 0.3, 0.45), checker=0.5, albedo=(0.6, 0.6, 0.6), metallic=0.0, roughness=0.8)
    wall_x = Rect([0, 1, 1], [1.0, 0, 0], [0, 1, 0], (1.0, 1.0), color=(0.75, 0.2, 0.15),
                  color2=(0.9, 0.85, 0.3), checker=1.0, albedo=(0.9, 0.9, 0.9), metallic=0.9, roughness=0.15)
    wall_y = Rect([1, 0, 1], [0, 1.0, 0], [1, 0, 0], (1.0, 1.0), color=(0.2, 0.55, 0.3),
                  albedo=(0.5, 0.5, 0.5), metallic=0.3, roughness=0.35)
    cams = _ring([0.8, 0.8, 0.6], 3.0, [1.3, 2.2], [10, 26, 38, 52, 64, 80])
    rng = np.random.default_rng(1234)
    links = []
    for _ in range(10):
        tx = np.array([rng.uniform(0.3, 1.7), rng.uniform(0.3, 1.7), rng.uniform(0.4, 1.6)])
        rx = np.array([rng.uniform(0.3, 1.7), rng.uniform(0.3, 1.7), rng.uniform(0.4, 1.6)])
        links.append((tx, rx))
    return SceneDescriptor("three_planes", [floor, wall_x, wall_y], cams, links,
                           test_views=(3, 8), test_links=(8, 9))


BUILTIN = {
    "plane": single_plane,
    "empty_room": empty_room,
    "toy_mirror": toy_mirror,
    "three_planes": three_planes,
}


def builtin(name: str) -> SceneDescriptor:
    try:
        return BUILTIN[name]()
    except KeyError:
        raise DescriptorError(f"unknown scene {name!r}; choose from {sorted(BUILTIN)}") from None
