"""Image quality metrics: PSNR and Gaussian-window SSIM."""
from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import gaussian_filter

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5        # radius 5 at sigma 1.5: an 11x11 window


def psnr(rendered, reference) -> float:
    """10 log10(1 / MSE) for images in [0, 1]; +inf when identical."""
    a = np.asarray(rendered, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    mse = float(np.mean((a - b) ** 2))
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


def ssim(rendered, reference, data_range: float = 1.0) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5) over the interior.

    Local statistics are population moments; channels are averaged.  Pixels
    closer than the window radius to the border are excluded.
    """
    a = np.asarray(rendered, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    r = int(SSIM_TRUNCATE * SSIM_SIGMA + 0.5)
    vals = []
    for ch in range(a.shape[-1]):
        x, y = a[..., ch], b[..., ch]
        f = lambda z: gaussian_filter(z, SSIM_SIGMA, truncate=SSIM_TRUNCATE, mode="reflect")
        mx, my = f(x), f(y)
        sxx = f(x * x) - mx * mx
        syy = f(y * y) - my * my
        sxy = f(x * y) - mx * my
        s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
        inner = s[r:s.shape[0] - r, r:s.shape[1] - r]
        vals.append((inner if inner.size else s).mean())
    return float(np.mean(vals))


def compute_metrics(rendered, reference) -> tuple[float, float]:
    a = np.asarray(rendered, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return psnr(a, b), ssim(a, b)
