"""Gaussian primitives, covariance construction and camera projection.

Two flavours of every geometric operation live here:

* scalar reference versions on plain numpy (``build_covariance``,
  ``eval_gaussian``, ``project``) that work on one primitive at a time, and
* batched torch versions (``covariance_batch``, ``project_batch``) used by
  the differentiable rasterizer.

The scalar versions double as independent references for the batched path.

Camera convention: the camera frame looks down +z with x to the right and y
down.  ``CameraView.rotation`` maps world vectors into the camera frame, so
``p_cam = rotation @ (p_world - position)``.  Pixel ``(row, col)`` has its
centre at image coordinates ``(u, v) = (col, row)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

UNIT_TOL = 1e-6
# 3-sigma footprint expressed as a squared Mahalanobis distance.
CUTOFF_MAHALANOBIS_SQ = 9.0

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
         -0.5900435899266435)


class InvalidParameterError(ValueError):
    pass


class NumericDegenerateError(ArithmeticError):
    pass


def quat_to_rotmat(q):
    """Rotation matrix of a unit quaternion ``(w, x, y, z)``."""
    w, x, y, z = np.asarray(q, dtype=np.float64)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rotmat_to_quat(R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.asarray(q)
    return q / np.linalg.norm(q)


def quat_to_rotmat_batch(q: torch.Tensor) -> torch.Tensor:
    """(N, 4) quaternions -> (N, 3, 3) rotation matrices.  Normalizes first."""
    q = q / q.norm(dim=-1, keepdim=True)
    w, x, y, z = q.unbind(-1)
    rows = [
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ]
    return torch.stack(rows, dim=-1).reshape(q.shape[:-1] + (3, 3))


def normal_to_quat(n) -> np.ndarray:
    """Quaternion whose rotation takes the local z axis onto ``n``."""
    n = np.asarray(n, dtype=np.float64)
    n = n / np.linalg.norm(n)
    z = np.array([0.0, 0.0, 1.0])
    c = float(np.dot(z, n))
    if c < -1 + 1e-12:
        return np.array([0.0, 1.0, 0.0, 0.0])
    axis = np.cross(z, n)
    q = np.array([1.0 + c, *axis])
    return q / np.linalg.norm(q)


@dataclass(frozen=True)
class GaussianPrimitive:
    mean: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    opacity: float = 1.0
    color_coeffs: np.ndarray = field(default_factory=lambda: np.zeros((1, 3)))
    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    albedo: np.ndarray = field(default_factory=lambda: np.full(3, 0.5))
    metallic: float = 0.0
    roughness: float = 0.5

    def __post_init__(self):
        conv = lambda v: np.asarray(v, dtype=np.float64)
        for name in ("mean", "rotation", "scale", "color_coeffs", "normal", "albedo"):
            object.__setattr__(self, name, conv(getattr(self, name)))
        if abs(np.linalg.norm(self.rotation) - 1.0) > UNIT_TOL:
            raise InvalidParameterError("rotation quaternion must have unit norm")
        if np.any(self.scale <= 0):
            raise InvalidParameterError("scale components must be strictly positive")
        if abs(np.linalg.norm(self.normal) - 1.0) > UNIT_TOL:
            raise InvalidParameterError("normal must have unit norm")
        object.__setattr__(self, "opacity", float(np.clip(self.opacity, 0.0, 1.0)))
        object.__setattr__(self, "metallic", float(np.clip(self.metallic, 0.0, 1.0)))
        object.__setattr__(self, "roughness", float(np.clip(self.roughness, 0.0, 1.0)))
        object.__setattr__(self, "albedo", np.clip(self.albedo, 0.0, 1.0))

    @property
    def covariance(self) -> np.ndarray:
        return build_covariance(self.rotation, self.scale)

    def color(self, view_dir=None) -> np.ndarray:
        coeffs = torch.as_tensor(self.color_coeffs)[None]
        if view_dir is None:
            view_dir = np.array([0.0, 0.0, 1.0])
        d = torch.as_tensor(np.asarray(view_dir, dtype=np.float64))[None]
        return eval_sh(coeffs, d)[0].numpy()


def build_covariance(rotation, scale) -> np.ndarray:
    """Sigma = R S S^T R^T for a unit quaternion and positive axis scales."""
    q = np.asarray(rotation, dtype=np.float64)
    if abs(np.linalg.norm(q) - 1.0) > UNIT_TOL:
        raise InvalidParameterError(f"non-unit quaternion (norm {np.linalg.norm(q):.8g})")
    scale = np.asarray(scale, dtype=np.float64)
    if np.any(scale <= 0):
        raise InvalidParameterError("scale components must be strictly positive")
    M = quat_to_rotmat(q) * scale[None, :]
    cov = M @ M.T
    return 0.5 * (cov + cov.T)


def eval_gaussian(primitive: GaussianPrimitive, x) -> float:
    """Unnormalized density exp(-0.5 (x-mu)^T Sigma^-1 (x-mu)); 1 at the mean."""
    cov = primitive.covariance
    if np.min(primitive.scale) < 1e-3 * np.max(primitive.scale):
        cov = cov + 1e-6 * float(np.max(primitive.scale)) ** 2 * np.eye(3)
    try:
        diff = np.asarray(x, dtype=np.float64) - primitive.mean
        sol = np.linalg.solve(cov, diff)
    except np.linalg.LinAlgError as exc:
        raise NumericDegenerateError("covariance is singular after regularization") from exc
    if not np.all(np.isfinite(sol)):
        raise NumericDegenerateError("covariance is singular after regularization")
    return float(np.exp(-0.5 * diff @ sol))


@dataclass(frozen=True)
class CameraView:
    position: np.ndarray
    rotation: np.ndarray  # world -> camera
    focal: tuple[float, float]
    principal_point: tuple[float, float]
    resolution: tuple[int, int]  # (width, height)
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        rot = np.asarray(self.rotation, dtype=np.float64)
        if rot.shape == (4,):
            rot = quat_to_rotmat(rot / np.linalg.norm(rot))
        if rot.shape != (3, 3) or not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6):
            raise InvalidParameterError("camera rotation must be orthonormal")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "focal", tuple(float(f) for f in self.focal))
        object.__setattr__(self, "principal_point", tuple(float(c) for c in self.principal_point))
        object.__setattr__(self, "resolution", tuple(int(r) for r in self.resolution))
        if not 0 < self.near < self.far:
            raise InvalidParameterError("camera requires 0 < near < far")
        if self.resolution[0] < 1 or self.resolution[1] < 1:
            raise InvalidParameterError("resolution must be at least 1x1")

    @property
    def width(self) -> int:
        return self.resolution[0]

    @property
    def height(self) -> int:
        return self.resolution[1]

    @property
    def intrinsics(self) -> np.ndarray:
        fx, fy = self.focal
        cx, cy = self.principal_point
        return np.array([[fx, 0, cx], [0, fy, cy], [0, 0, 1.0]])

    def world_to_camera(self, p) -> np.ndarray:
        return (np.asarray(p, dtype=np.float64) - self.position) @ self.rotation.T

    def pixel_rays(self) -> tuple[np.ndarray, np.ndarray]:
        """Unit world-space ray directions (H, W, 3) through every pixel centre."""
        rows, cols = np.mgrid[0:self.height, 0:self.width].astype(np.float64)
        fx, fy = self.focal
        cx, cy = self.principal_point
        d_cam = np.stack([(cols - cx) / fx, (rows - cy) / fy, np.ones_like(cols)], axis=-1)
        d_world = d_cam @ self.rotation
        return d_world / np.linalg.norm(d_world, axis=-1, keepdims=True), d_cam

    def with_resolution(self, width: int, height: int) -> "CameraView":
        sx, sy = width / self.width, height / self.height
        return replace(
            self,
            focal=(self.focal[0] * sx, self.focal[1] * sy),
            principal_point=((self.principal_point[0] + 0.5) * sx - 0.5,
                             (self.principal_point[1] + 0.5) * sy - 0.5),
            resolution=(width, height),
        )


def look_at(position, target, up=(0.0, 0.0, 1.0), focal=50.0, resolution=(64, 64),
            near=0.01, far=100.0) -> CameraView:
    """Camera at ``position`` looking at ``target``; principal point at the image centre."""
    position = np.asarray(position, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - position
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])
    w, h = resolution
    f = (focal, focal) if np.isscalar(focal) else focal
    return CameraView(position, rot, f, ((w - 1) / 2.0, (h - 1) / 2.0), (w, h), near, far)


@dataclass(frozen=True)
class ProjectedGaussian:
    center_px: np.ndarray
    cov2d: np.ndarray
    view_depth: float


def _ewa_jacobian(t, fx, fy):
    x, y, z = t
    return np.array([[fx / z, 0.0, -fx * x / (z * z)],
                     [0.0, fy / z, -fy * y / (z * z)]])


def project(primitive: GaussianPrimitive, view: CameraView):
    """Project one primitive; returns ``None`` when culled.

    Culling happens when the mean lies in front of the near plane or when the
    3-sigma footprint does not touch the image.
    """
    t = view.world_to_camera(primitive.mean)
    z = t[2]
    if not np.isfinite(z) or z < view.near:
        return None
    fx, fy = view.focal
    cx, cy = view.principal_point
    center = np.array([fx * t[0] / z + cx, fy * t[1] / z + cy])
    J = _ewa_jacobian(t, fx, fy)
    M = J @ view.rotation
    cov2d = M @ primitive.covariance @ M.T
    cov2d = 0.5 * (cov2d + cov2d.T)
    if np.linalg.det(cov2d) <= 1e-18:
        return None
    radius = 3.0 * np.sqrt(np.maximum(np.diag(cov2d), 0.0))
    if (center[0] + radius[0] < -0.5 or center[0] - radius[0] > view.width - 0.5
            or center[1] + radius[1] < -0.5 or center[1] - radius[1] > view.height - 0.5):
        return None
    return ProjectedGaussian(center, cov2d, float(z))


def eval_sh(coeffs: torch.Tensor, dirs: torch.Tensor) -> torch.Tensor:
    """Evaluate real spherical harmonics colour.

    coeffs: (N, K, 3) with K in {1, 4, 9, 16}; dirs: (N, 3) unit view directions.
    Returns (N, 3) colours, offset by 0.5 and clamped at zero.
    """
    K = coeffs.shape[-2]
    out = SH_C0 * coeffs[..., 0, :]
    if K > 1:
        x, y, z = (dirs[..., i:i + 1] for i in range(3))
        out = out - SH_C1 * y * coeffs[..., 1, :] + SH_C1 * z * coeffs[..., 2, :] - SH_C1 * x * coeffs[..., 3, :]
        if K > 4:
            xx, yy, zz = x * x, y * y, z * z
            xy, yz, xz = x * y, y * z, x * z
            out = (out + SH_C2[0] * xy * coeffs[..., 4, :] + SH_C2[1] * yz * coeffs[..., 5, :]
                   + SH_C2[2] * (2 * zz - xx - yy) * coeffs[..., 6, :]
                   + SH_C2[3] * xz * coeffs[..., 7, :] + SH_C2[4] * (xx - yy) * coeffs[..., 8, :])
            if K > 9:
                out = (out + SH_C3[0] * y * (3 * xx - yy) * coeffs[..., 9, :]
                       + SH_C3[1] * xy * z * coeffs[..., 10, :]
                       + SH_C3[2] * y * (4 * zz - xx - yy) * coeffs[..., 11, :]
                       + SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy) * coeffs[..., 12, :]
                       + SH_C3[4] * x * (4 * zz - xx - yy) * coeffs[..., 13, :]
                       + SH_C3[5] * z * (xx - yy) * coeffs[..., 14, :]
                       + SH_C3[6] * x * (xx - 3 * yy) * coeffs[..., 15, :])
    return torch.clamp(out + 0.5, min=0.0)


def rgb_to_sh0(rgb) -> np.ndarray:
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


class Gaussians:
    """Structure-of-arrays container for N primitives (torch, float64).

    Scale and opacity live in unconstrained form (``log_scale``,
    ``logit_opacity``), as do the material scalars and albedo; the constrained
    values are materialized by the properties.  Quaternions and normals are
    renormalized on read.
    """

    GEOMETRY = ("means", "quats", "log_scales", "logit_opacity", "sh", "raw_normals")
    MATERIAL = ("logit_albedo", "logit_metallic", "logit_roughness")
    FIELDS = GEOMETRY + MATERIAL

    def __init__(self, means, quats, log_scales, logit_opacity, sh, raw_normals,
                 logit_albedo, logit_metallic, logit_roughness):
        t = lambda v: torch.as_tensor(v, dtype=torch.float64)
        self.means = t(means)
        self.quats = t(quats)
        self.log_scales = t(log_scales)
        self.logit_opacity = t(logit_opacity)
        self.sh = t(sh)
        self.raw_normals = t(raw_normals)
        self.logit_albedo = t(logit_albedo)
        self.logit_metallic = t(logit_metallic)
        self.logit_roughness = t(logit_roughness)

    @classmethod
    def from_values(cls, means, quats, scales, opacity, colors=None, normals=None,
                    albedo=None, metallic=None, roughness=None, sh_degree=0):
        means = np.asarray(means, dtype=np.float64).reshape(-1, 3)
        n = len(means)
        k = (sh_degree + 1) ** 2
        sh = np.zeros((n, k, 3))
        if colors is not None:
            sh[:, 0, :] = rgb_to_sh0(np.broadcast_to(colors, (n, 3)))
        if normals is None:
            normals = np.tile([0.0, 0.0, 1.0], (n, 1))
        albedo = np.full((n, 3), 0.5) if albedo is None else np.broadcast_to(albedo, (n, 3))
        metallic = np.full(n, 0.5) if metallic is None else np.broadcast_to(metallic, (n,))
        roughness = np.full(n, 0.5) if roughness is None else np.broadcast_to(roughness, (n,))
        return cls(
            means,
            np.broadcast_to(quats, (n, 4)).copy(),
            np.log(np.broadcast_to(scales, (n, 3))),
            _logit(np.broadcast_to(opacity, (n,))),
            sh,
            np.broadcast_to(normals, (n, 3)).copy(),
            _logit(albedo),
            _logit(metallic),
            _logit(roughness),
        )

    @classmethod
    def from_primitives(cls, prims: list[GaussianPrimitive]) -> "Gaussians":
        if not prims:
            return cls.empty()
        k = max(p.color_coeffs.shape[0] for p in prims)
        sh = np.zeros((len(prims), k, 3))
        for i, p in enumerate(prims):
            sh[i, :p.color_coeffs.shape[0]] = p.color_coeffs
        return cls(
            np.stack([p.mean for p in prims]),
            np.stack([p.rotation for p in prims]),
            np.log(np.stack([p.scale for p in prims])),
            _logit(np.array([p.opacity for p in prims])),
            sh,
            np.stack([p.normal for p in prims]),
            _logit(np.stack([p.albedo for p in prims])),
            _logit(np.array([p.metallic for p in prims])),
            _logit(np.array([p.roughness for p in prims])),
        )

    @classmethod
    def empty(cls, sh_degree=0) -> "Gaussians":
        k = (sh_degree + 1) ** 2
        z = lambda *s: np.zeros((0,) + s)
        return cls(z(3), z(4), z(3), z(), z(k, 3), z(3), z(3), z(), z())

    def to_primitives(self) -> list[GaussianPrimitive]:
        arr = {k: v.detach().numpy() for k, v in self.constrained().items()}
        return [
            GaussianPrimitive(arr["means"][i], arr["quats"][i], arr["scales"][i],
                              arr["opacity"][i], self.sh[i].detach().numpy(), arr["normals"][i],
                              arr["albedo"][i], arr["metallic"][i], arr["roughness"][i])
            for i in range(len(self))
        ]

    def __len__(self) -> int:
        return self.means.shape[0]

    @property
    def sh_degree(self) -> int:
        return int(round(np.sqrt(self.sh.shape[1]))) - 1

    @property
    def scales(self):
        return torch.exp(self.log_scales)

    @property
    def opacity(self):
        return torch.sigmoid(self.logit_opacity)

    @property
    def rotations(self):
        return self.quats / self.quats.norm(dim=-1, keepdim=True)

    @property
    def normals(self):
        return self.raw_normals / self.raw_normals.norm(dim=-1, keepdim=True).clamp_min(1e-12)

    @property
    def albedo(self):
        return torch.sigmoid(self.logit_albedo)

    @property
    def metallic(self):
        return torch.sigmoid(self.logit_metallic)

    @property
    def roughness(self):
        return torch.sigmoid(self.logit_roughness)

    def constrained(self) -> dict:
        return {
            "means": self.means, "quats": self.rotations, "scales": self.scales,
            "opacity": self.opacity, "normals": self.normals, "albedo": self.albedo,
            "metallic": self.metallic, "roughness": self.roughness,
        }

    def tensors(self) -> dict:
        return {name: getattr(self, name) for name in self.FIELDS}

    def clone(self) -> "Gaussians":
        return Gaussians(**{k: v.detach().clone() for k, v in self.tensors().items()})

    def subset(self, idx) -> "Gaussians":
        return Gaussians(**{k: v[idx] for k, v in self.tensors().items()})

    def concat(self, other: "Gaussians") -> "Gaussians":
        return Gaussians(**{k: torch.cat([v, getattr(other, k)]) for k, v in self.tensors().items()})

    def covariances(self) -> torch.Tensor:
        return covariance_batch(self.rotations, self.scales)


def _logit(p, eps=1e-12):
    p = np.clip(np.asarray(p, dtype=np.float64), eps, 1 - eps)
    return np.log(p) - np.log1p(-p)


def covariance_batch(quats: torch.Tensor, scales: torch.Tensor) -> torch.Tensor:
    M = quat_to_rotmat_batch(quats) * scales[:, None, :]
    return M @ M.transpose(-1, -2)


@dataclass
class ProjectedBatch:
    """Batched projection result for the rasterizer (torch, differentiable)."""

    index: torch.Tensor      # (M,) primitive indices that survived culling
    center: torch.Tensor     # (M, 2)
    conic: torch.Tensor      # (M, 3) inverse 2D covariance entries (a, b, c)
    depth: torch.Tensor      # (M,)
    radius: torch.Tensor     # (M, 2) half-extent of the 3-sigma bounding box in px


def project_batch(g: Gaussians, view: CameraView, dilation: float = 0.0) -> ProjectedBatch:
    """EWA projection of every primitive; culls those behind ``near`` or off-screen.

    ``dilation`` adds a constant to the diagonal of each 2D covariance (px^2).
    """
    W = torch.as_tensor(view.rotation)
    t = (g.means - torch.as_tensor(view.position)) @ W.T
    z = t[:, 2]
    keep = z >= view.near
    idx = torch.nonzero(keep).flatten()
    t = t[idx]
    z = z[idx]
    fx, fy = view.focal
    cx, cy = view.principal_point
    center = torch.stack([fx * t[:, 0] / z + cx, fy * t[:, 1] / z + cy], dim=-1)
    zeros = torch.zeros_like(z)
    J = torch.stack([
        torch.stack([fx / z, zeros, -fx * t[:, 0] / (z * z)], dim=-1),
        torch.stack([zeros, fy / z, -fy * t[:, 1] / (z * z)], dim=-1),
    ], dim=-2)
    M = J @ W
    cov3 = covariance_batch(g.quats[idx], g.scales[idx])
    cov2 = M @ cov3 @ M.transpose(-1, -2)
    a = cov2[:, 0, 0] + dilation
    b = 0.5 * (cov2[:, 0, 1] + cov2[:, 1, 0])
    c = cov2[:, 1, 1] + dilation
    det = a * c - b * b
    ok = det > 1e-18
    with torch.no_grad():
        radius = 3.0 * torch.sqrt(torch.stack([a, c], dim=-1).clamp_min(0.0))
        onscreen = ((center[:, 0] + radius[:, 0] >= -0.5) & (center[:, 0] - radius[:, 0] <= view.width - 0.5)
                    & (center[:, 1] + radius[:, 1] >= -0.5) & (center[:, 1] - radius[:, 1] <= view.height - 0.5))
        sel = torch.nonzero(ok & onscreen).flatten()
    conic = torch.stack([c, -b, a], dim=-1)[sel] / det[sel, None]
    return ProjectedBatch(idx[sel], center[sel], conic, z[sel], radius[sel])
