"""Monocular prior alignment: depth scale/shift and normal coordinate frames."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np


class AlignmentError(ValueError):
    """Raised when a prior cannot be aligned (too little or degenerate data)."""


@dataclass(frozen=True)
class SparseDepthMap:
    rows: np.ndarray
    cols: np.ndarray
    depths: np.ndarray

    def __post_init__(self):
        for name in ("rows", "cols"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        object.__setattr__(self, "depths", np.asarray(self.depths, dtype=np.float64))
        if not (self.rows.shape == self.cols.shape == self.depths.shape):
            raise ValueError("sparse depth arrays must share a shape")
        if np.any(self.depths <= 0):
            raise ValueError("sparse depths must be positive")

    def __len__(self):
        return len(self.depths)


@dataclass(frozen=True)
class AlignedDepthMap:
    values: np.ndarray
    scale: float
    shift: float


def align_depth(mono, sparse: SparseDepthMap) -> AlignedDepthMap:
    """Closed-form least-squares scale/shift taking ``mono`` onto the sparse depths.

    Only pixels that carry a sparse sample enter the fit.
    """
    mono = np.asarray(mono, dtype=np.float64)
    if len(sparse) < 2:
        raise AlignmentError(f"need at least 2 sparse depth entries, got {len(sparse)}")
    x = mono[sparse.rows, sparse.cols]
    y = sparse.depths
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    sxx = float(dx @ dx)
    if sxx <= 1e-12 * max(1.0, float(x @ x)):
        raise AlignmentError("monocular depths at the sparse pixels are all identical (rank-deficient fit)")
    scale = float(dx @ (y - ym)) / sxx
    shift = ym - scale * xm
    if scale <= 0:
        raise AlignmentError(f"fitted scale {scale:.6g} is not positive; prior and sparse depths disagree")
    return AlignedDepthMap(scale * mono + shift, scale, float(shift))


def backproject(depth, intrinsics) -> np.ndarray:
    """Camera-frame points (H, W, 3) for a z-depth map."""
    depth = np.asarray(depth, dtype=np.float64)
    H, W = depth.shape
    K = np.asarray(intrinsics, dtype=np.float64)
    fx, fy, cx, cy = K[0, 0], K[1, 1], K[0, 2], K[1, 2]
    rows, cols = np.mgrid[0:H, 0:W].astype(np.float64)
    return np.stack([(cols - cx) / fx * depth, (rows - cy) / fy * depth, depth], axis=-1)


def pseudo_normals_from_depth(depth, intrinsics) -> np.ndarray:
    """Camera-frame unit normals from finite differences of the back-projected depth.

    Central differences inside, one-sided at the borders.  An axis of length 1
    gets the tangent of a constant-depth surface.  Normals face the camera.
    """
    depth = np.asarray(depth, dtype=np.float64)
    H, W = depth.shape
    K = np.asarray(intrinsics, dtype=np.float64)
    P = backproject(depth, K)
    if W > 1:
        du = np.gradient(P, axis=1)
    else:
        du = np.zeros_like(P)
        du[..., 0] = depth / K[0, 0]
    if H > 1:
        dv = np.gradient(P, axis=0)
    else:
        dv = np.zeros_like(P)
        dv[..., 1] = depth / K[1, 1]
    n = np.cross(du, dv)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    fallback = np.broadcast_to([0.0, 0.0, -1.0], n.shape)
    n = np.where(norm > 1e-12, n / np.where(norm > 0, norm, 1.0), fallback)
    # face the camera: n . (point - origin) < 0
    flip = np.sum(n * P, axis=-1) > 0
    n[flip] *= -1
    return n


PERMUTATIONS = list(itertools.permutations(range(3)))
SIGNS = list(itertools.product((1.0, -1.0), repeat=3))


@dataclass(frozen=True)
class FrameTransform:
    """Signed channel permutation: ``out[..., k] = signs[k] * x[..., perm[k]]``."""

    perm: tuple[int, int, int]
    signs: tuple[float, float, float]

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x)
        return x[..., list(self.perm)] * np.asarray(self.signs)

    def inverse(self) -> "FrameTransform":
        inv = [0, 0, 0]
        signs = [0.0, 0.0, 0.0]
        for k, p in enumerate(self.perm):
            inv[p] = k
            signs[p] = self.signs[k]
        return FrameTransform(tuple(inv), tuple(signs))

    def compose(self, other: "FrameTransform") -> "FrameTransform":
        """Transform equal to applying ``other`` first, then ``self``."""
        perm = tuple(other.perm[p] for p in self.perm)
        signs = tuple(self.signs[k] * other.signs[self.perm[k]] for k in range(3))
        return FrameTransform(perm, signs)

    @property
    def matrix(self) -> np.ndarray:
        return self.apply(np.eye(3)).T

    @property
    def index(self) -> int:
        return PERMUTATIONS.index(self.perm) * len(SIGNS) + SIGNS.index(self.signs)


ALL_TRANSFORMS = [FrameTransform(p, s) for p in PERMUTATIONS for s in SIGNS]
IDENTITY = ALL_TRANSFORMS[0]


def _unit(x):
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, n, out=np.zeros_like(x), where=n > 1e-12), n[..., 0] > 1e-12


def align_normal_frame(mono_normals, pseudo) -> tuple[np.ndarray, FrameTransform, float]:
    """Pick the signed channel permutation of ``mono_normals`` that best matches ``pseudo``.

    Returns the transformed map, the transform and its mean cosine similarity.
    Ties go to the earliest transform in enumeration order, which starts with
    the identity.
    """
    mono = np.asarray(mono_normals, dtype=np.float64)
    pseudo = np.asarray(pseudo, dtype=np.float64)
    if mono.shape != pseudo.shape or mono.shape[-1] != 3:
        raise ValueError("normal maps must share shape (..., 3)")
    pu, valid = _unit(pseudo)
    if not np.any(valid):
        raise AlignmentError("pseudo-normal map is all zero; alignment undefined")
    mu, _ = _unit(mono)
    mu, pu = mu[valid], pu[valid]
    # mean cosine of a signed permutation = sum_k s_k * mean(mono[perm_k] * pseudo[k])
    cross = np.einsum("pi,pj->ij", mu, pu) / len(pu)   # cross[i, j] = mean(mono_i * pseudo_j)
    best, best_score = IDENTITY, -np.inf
    for t in ALL_TRANSFORMS:
        score = sum(t.signs[k] * cross[t.perm[k], k] for k in range(3))
        if score > best_score + 1e-12:
            best, best_score = t, score
    return best.apply(mono), best, float(best_score)
