"""RMSE and SSIM over a centered circular region of interest."""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

SSIM_SIGMA = 1.5
# truncate * sigma + 0.5 rounds to a radius of 5, i.e. an 11x11 window
SSIM_TRUNCATE = 3.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


@dataclass(frozen=True)
class RoiMask:
    shape: tuple
    center: tuple
    radius: float

    @classmethod
    def centered(cls, shape, radius=None, center=None):
        h, w = shape
        if center is None:
            center = ((h - 1) / 2.0, (w - 1) / 2.0)
        if radius is None:
            radius = 0.48 * min(h, w)
        return cls((int(h), int(w)), (float(center[0]), float(center[1])), float(radius))

    @property
    def mask(self):
        r, c = np.ogrid[: self.shape[0], : self.shape[1]]
        return (r - self.center[0]) ** 2 + (c - self.center[1]) ** 2 <= self.radius**2


def circular_roi(shape, radius=None, center=None):
    """Boolean raster of the default evaluation ROI (radius 0.48 min(H, W))."""
    return RoiMask.centered(shape, radius, center).mask


def _as_mask(mask, shape):
    if mask is None:
        mask = circular_roi(shape)
    elif isinstance(mask, RoiMask):
        mask = mask.mask
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != tuple(shape):
        raise ValueError(f"mask shape {mask.shape} does not match image shape {tuple(shape)}")
    if not mask.any():
        raise ValueError("empty ROI mask")
    return mask


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"images must be 2-D with equal shapes, got {a.shape} and {b.shape}")
    return a, b


def rmse(a, b, mask=None):
    a, b = _pair(a, b)
    m = _as_mask(mask, a.shape)
    d = (a - b)[m]
    return float(np.sqrt(np.mean(d * d)))


def ssim_map(a, b, dynamic_range):
    """Local SSIM with an 11x11 Gaussian window (sigma 1.5), reflected borders."""
    a, b = _pair(a, b)
    if not dynamic_range > 0:
        raise ValueError("dynamic_range must be positive")
    c1 = (SSIM_K1 * dynamic_range) ** 2
    c2 = (SSIM_K2 * dynamic_range) ** 2

    def blur(x):
        return gaussian_filter(x, SSIM_SIGMA, mode="reflect", truncate=SSIM_TRUNCATE)

    mu_a, mu_b = blur(a), blur(b)
    # second moments via E[xy] - E[x]E[y], valid because the window sums to 1
    va = blur(a * a) - mu_a**2
    vb = blur(b * b) - mu_b**2
    cov = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (va + vb + c2)
    return num / den


def ssim(a, b, mask=None, dynamic_range=None):
    """Mean local SSIM over window centers inside ``mask``.

    ``dynamic_range`` defaults to the joint value span of both images so the
    result stays symmetric in its arguments.
    """
    a, b = _pair(a, b)
    m = _as_mask(mask, a.shape)
    if dynamic_range is None:
        dynamic_range = float(max(a.max(), b.max()) - min(a.min(), b.min())) or 1.0
    return float(np.mean(ssim_map(a, b, dynamic_range)[m]))
