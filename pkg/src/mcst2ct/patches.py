"""Patch extraction ``P_i x`` and its adjoint.

Patches are square ``b x b`` windows vectorized row-major into columns of a
``p x N'`` matrix (``p = b**2``). Windows are enumerated row-major over their
top-left corners. With ``boundary="wrap"`` corners run over every stride step
of the image and windows wrap periodically; with ``"trim"`` only windows that
fit inside the image are used.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class PatchGeometry:
    image_height: int
    image_width: int
    patch_side: int = 8
    stride: int = 1
    boundary: str = "wrap"

    def __post_init__(self):
        if self.patch_side < 1 or self.stride < 1:
            raise ValueError("patch_side and stride must be >= 1")
        if self.patch_side > min(self.image_height, self.image_width):
            raise ValueError(
                f"patch_side {self.patch_side} exceeds image size "
                f"{self.image_height}x{self.image_width}"
            )
        if self.boundary not in ("wrap", "trim"):
            raise ValueError(f"unknown boundary mode {self.boundary!r}")

    @property
    def shape(self):
        return (self.image_height, self.image_width)

    @property
    def patch_dim(self):
        return self.patch_side**2

    def corners(self):
        """Top-left corner rows/cols along each axis."""
        b, s = self.patch_side, self.stride
        if self.boundary == "wrap":
            rows = np.arange(0, self.image_height, s)
            cols = np.arange(0, self.image_width, s)
        else:
            rows = np.arange(0, self.image_height - b + 1, s)
            cols = np.arange(0, self.image_width - b + 1, s)
        return rows, cols

    @property
    def num_patches(self):
        rows, cols = self.corners()
        return len(rows) * len(cols)

    def index_map(self):
        """``(p, N')`` array of flat pixel indices; column i is patch i."""
        return _index_map(self)


@lru_cache(maxsize=16)
def _index_map(geom):
    b = geom.patch_side
    H, W = geom.shape
    rows, cols = geom.corners()
    dr, dc = np.divmod(np.arange(b * b), b)  # row-major inside the patch
    r = rows[None, :, None] + dr[:, None, None]
    c = cols[None, None, :] + dc[:, None, None]
    if geom.boundary == "wrap":
        r %= H
        c %= W
    idx = (r * W + c).reshape(b * b, -1)
    idx.setflags(write=False)
    return idx


@dataclass
class PatchMatrix:
    data: np.ndarray
    geometry: PatchGeometry

    def __post_init__(self):
        g = self.geometry
        if self.data.shape != (g.patch_dim, g.num_patches):
            raise ValueError(
                f"patch matrix shape {self.data.shape} does not match geometry "
                f"({g.patch_dim}, {g.num_patches})"
            )

    @property
    def num_patches(self):
        return self.data.shape[1]


def extract_patches(image, geom):
    image = np.asarray(image, dtype=np.float64)
    if image.shape != geom.shape:
        raise ValueError(f"image shape {image.shape} does not match geometry {geom.shape}")
    return PatchMatrix(image.ravel()[geom.index_map()], geom)


def aggregate_patches(patches):
    """Adjoint of :func:`extract_patches`.

    Returns ``(sum_part, count)`` where ``sum_part = sum_i P_i^T y_i`` and
    ``count = sum_i P_i^T 1`` is the per-pixel cover count.
    """
    g = patches.geometry
    idx = g.index_map().ravel()
    n = g.image_height * g.image_width
    total = np.bincount(idx, weights=patches.data.ravel(), minlength=n)
    return total.reshape(g.shape), cover_count(g)


def cover_count(geom):
    n = geom.image_height * geom.image_width
    return np.bincount(geom.index_map().ravel(), minlength=n).astype(np.float64).reshape(geom.shape)


@dataclass(frozen=True)
class PatchSet:
    """Patches pooled from several images, e.g. a training set.

    Columns are the concatenation of each image's patch matrix in order;
    ``geometries`` keeps one geometry per source image.
    """

    data: np.ndarray
    geometries: tuple

    @property
    def num_patches(self):
        return self.data.shape[1]


def patch_set(images, geoms):
    """Extract and concatenate patches of each image with its geometry."""
    mats = [extract_patches(im, g) for im, g in zip(images, geoms, strict=True)]
    if not mats:
        raise ValueError("need at least one image")
    if len({m.geometry.patch_dim for m in mats}) != 1:
        raise ValueError("all geometries must use the same patch size")
    return PatchSet(np.hstack([m.data for m in mats]), tuple(m.geometry for m in mats))
