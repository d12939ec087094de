"""Pure-numpy Siddon ray tracing, used when the compiled kernel is absent.

Mirrors ``_siddon.pyx`` (same plane-crossing formulas, same midpoint pixel
lookup) so both backends produce the same system matrix up to rounding.
"""

import numpy as np


def _axis_range(x0, dx, lo, hi):
    if dx != 0.0:
        a0 = (lo - x0) / dx
        a1 = (hi - x0) / dx
        return min(a0, a1), max(a0, a1)
    if lo < x0 < hi:
        return -np.inf, np.inf
    return None


def _plane_alphas(x0, dx, lo, pixel, n, amin, amax):
    if dx == 0.0:
        return np.empty(0)
    planes = np.arange(n + 1)
    alphas = (lo + planes * pixel - x0) / dx
    return alphas[(alphas > amin) & (alphas < amax)]


def trace_ray(x0, y0, x1, y1, nx, ny, pixel):
    """Return ``(flat_pixel_indices, lengths)`` for the segment p0 -> p1."""
    dx, dy = x1 - x0, y1 - y0
    xmin, ymin = -0.5 * nx * pixel, -0.5 * ny * pixel
    rx = _axis_range(x0, dx, xmin, -xmin)
    ry = _axis_range(y0, dy, ymin, -ymin)
    if rx is None or ry is None:
        return np.empty(0, dtype=np.int64), np.empty(0)
    amin = max(0.0, rx[0], ry[0])
    amax = min(1.0, rx[1], ry[1])
    if amin >= amax:
        return np.empty(0, dtype=np.int64), np.empty(0)
    alphas = np.concatenate((
        [amin],
        np.sort(np.concatenate((
            _plane_alphas(x0, dx, xmin, pixel, nx, amin, amax),
            _plane_alphas(y0, dy, ymin, pixel, ny, amin, amax),
        ))),
        [amax],
    ))
    seg = np.diff(alphas)
    keep = seg > 1e-14
    amid = 0.5 * (alphas[:-1] + alphas[1:])[keep]
    ic = np.clip(np.floor((x0 + amid * dx - xmin) / pixel).astype(np.int64), 0, nx - 1)
    ir = np.clip(np.floor((y0 + amid * dy - ymin) / pixel).astype(np.int64), 0, ny - 1)
    norm = np.sqrt(dx * dx + dy * dy)
    return (ny - 1 - ir) * nx + ic, seg[keep] * norm


def system_matrix(x0, y0, x1, y1, nx, ny, pixel):
    """CSR triplets ``(indptr, indices, data)`` of intersection lengths."""
    indptr = np.zeros(len(x0) + 1, dtype=np.int64)
    idx_parts, w_parts = [], []
    for r in range(len(x0)):
        idx, w = trace_ray(x0[r], y0[r], x1[r], y1[r], nx, ny, pixel)
        idx_parts.append(idx)
        w_parts.append(w)
        indptr[r + 1] = indptr[r] + len(idx)
    if not idx_parts:
        return indptr, np.empty(0, dtype=np.int64), np.empty(0)
    return indptr, np.concatenate(idx_parts), np.concatenate(w_parts)


def forward(image, x0, y0, x1, y1, nx, ny, pixel):
    out = np.zeros(len(x0))
    for r in range(len(x0)):
        idx, w = trace_ray(x0[r], y0[r], x1[r], y1[r], nx, ny, pixel)
        out[r] = np.dot(w, image[idx])
    return out


def back(sino, x0, y0, x1, y1, nx, ny, pixel):
    out = np.zeros(nx * ny)
    for r in range(len(x0)):
        if sino[r] == 0.0:
            continue
        idx, w = trace_ray(x0[r], y0[r], x1[r], y1[r], nx, ny, pixel)
        np.add.at(out, idx, w * sino[r])
    return out
