# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Siddon ray-tracing kernels.

Same algorithm and floating-point formulas as ``_siddon_py``; the two backends
agree to rounding. Grid convention: ``nx`` columns spanning
``[-nx*pixel/2, nx*pixel/2]`` in x, ``ny`` rows with row 0 at the top (max y).
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, sqrt, INFINITY

cnp.import_array()

ctypedef cnp.float64_t f64
ctypedef cnp.int64_t i64


cdef inline bint _clip_range(double x0, double dx, double lo, double hi,
                             double* amin, double* amax) noexcept nogil:
    cdef double a0, a1
    if dx != 0.0:
        a0 = (lo - x0) / dx
        a1 = (hi - x0) / dx
        if a0 > a1:
            a0, a1 = a1, a0
        if a0 > amin[0]:
            amin[0] = a0
        if a1 < amax[0]:
            amax[0] = a1
        return True
    return lo < x0 < hi


cdef inline void _first_plane(double x0, double dx, double lo, double pixel,
                              double amin, int* i, double* a,
                              int* step) noexcept nogil:
    """Index and parameter of the first grid plane crossed after ``amin``."""
    if dx == 0.0:
        a[0] = INFINITY
        step[0] = 0
        i[0] = 0
        return
    i[0] = <int>floor((x0 + amin * dx - lo) / pixel)
    if dx > 0:
        step[0] = 1
        i[0] += 1
    else:
        step[0] = -1
    a[0] = (lo + i[0] * pixel - x0) / dx
    while a[0] <= amin:
        i[0] += step[0]
        a[0] = (lo + i[0] * pixel - x0) / dx


cdef Py_ssize_t _trace(double x0, double y0, double x1, double y1,
                       int nx, int ny, double pixel,
                       i64* idx, f64* wts, bint write) noexcept nogil:
    """Trace one ray; write (pixel, length) pairs if ``write``; return count."""
    cdef double dx = x1 - x0, dy = y1 - y0
    cdef double xmin = -0.5 * nx * pixel, ymin = -0.5 * ny * pixel
    cdef double xmax = -xmin, ymax = -ymin
    cdef double amin = 0.0, amax = 1.0
    cdef double norm = sqrt(dx * dx + dy * dy)
    cdef double ax, ay, a_prev, a_next, amid, px, py
    cdef int ix_step, iy_step, i, j, ic, ir
    cdef Py_ssize_t n = 0

    if not _clip_range(x0, dx, xmin, xmax, &amin, &amax):
        return 0
    if not _clip_range(y0, dy, ymin, ymax, &amin, &amax):
        return 0
    if amin >= amax:
        return 0

    _first_plane(x0, dx, xmin, pixel, amin, &i, &ax, &ix_step)
    _first_plane(y0, dy, ymin, pixel, amin, &j, &ay, &iy_step)

    a_prev = amin
    while a_prev < amax:
        if ax < ay:
            a_next = ax
            i += ix_step
            ax = (xmin + i * pixel - x0) / dx
        elif ay < ax:
            a_next = ay
            j += iy_step
            ay = (ymin + j * pixel - y0) / dy
        else:
            a_next = ax
            if ix_step != 0:
                i += ix_step
                ax = (xmin + i * pixel - x0) / dx
            if iy_step != 0:
                j += iy_step
                ay = (ymin + j * pixel - y0) / dy
        if a_next > amax:
            a_next = amax
        if a_next - a_prev > 1e-14:
            amid = 0.5 * (a_prev + a_next)
            px = (x0 + amid * dx - xmin) / pixel
            py = (y0 + amid * dy - ymin) / pixel
            ic = <int>floor(px)
            ir = <int>floor(py)
            if ic < 0:
                ic = 0
            elif ic >= nx:
                ic = nx - 1
            if ir < 0:
                ir = 0
            elif ir >= ny:
                ir = ny - 1
            if write:
                idx[n] = (ny - 1 - ir) * nx + ic
                wts[n] = (a_next - a_prev) * norm
            n += 1
        a_prev = a_next
    return n


def system_matrix(f64[::1] x0, f64[::1] y0, f64[::1] x1, f64[::1] y1,
                  int nx, int ny, double pixel):
    """CSR triplets ``(indptr, indices, data)`` of intersection lengths."""
    cdef Py_ssize_t nrays = x0.shape[0], r, total = 0
    cdef cnp.ndarray[i64, ndim=1] indptr = np.zeros(nrays + 1, dtype=np.int64)
    cdef i64[::1] ip = indptr
    with nogil:
        for r in range(nrays):
            total += _trace(x0[r], y0[r], x1[r], y1[r], nx, ny, pixel,
                            NULL, NULL, False)
            ip[r + 1] = total
    cdef cnp.ndarray[i64, ndim=1] indices = np.empty(total, dtype=np.int64)
    cdef cnp.ndarray[f64, ndim=1] data = np.empty(total, dtype=np.float64)
    cdef i64[::1] iv = indices
    cdef f64[::1] dv = data
    with nogil:
        for r in range(nrays):
            if ip[r + 1] > ip[r]:
                _trace(x0[r], y0[r], x1[r], y1[r], nx, ny, pixel,
                       &iv[ip[r]], &dv[ip[r]], True)
    return indptr, indices, data


def forward(f64[::1] image, f64[::1] x0, f64[::1] y0, f64[::1] x1, f64[::1] y1,
            int nx, int ny, double pixel):
    """Matrix-free line integrals of a flattened row-major image."""
    cdef Py_ssize_t nrays = x0.shape[0], r, m, cnt
    cdef cnp.ndarray[f64, ndim=1] out = np.zeros(nrays, dtype=np.float64)
    cdef f64[::1] ov = out
    cdef i64[::1] ib = np.empty(2 * (nx + ny) + 4, dtype=np.int64)
    cdef f64[::1] wb = np.empty(2 * (nx + ny) + 4, dtype=np.float64)
    cdef double acc
    with nogil:
        for r in range(nrays):
            cnt = _trace(x0[r], y0[r], x1[r], y1[r], nx, ny, pixel,
                         &ib[0], &wb[0], True)
            acc = 0.0
            for m in range(cnt):
                acc = acc + wb[m] * image[ib[m]]
            ov[r] = acc
    return out


def back(f64[::1] sino, f64[::1] x0, f64[::1] y0, f64[::1] x1, f64[::1] y1,
         int nx, int ny, double pixel):
    """Matrix-free adjoint of :func:`forward`."""
    cdef Py_ssize_t nrays = x0.shape[0], r, m, cnt
    cdef cnp.ndarray[f64, ndim=1] out = np.zeros(nx * ny, dtype=np.float64)
    cdef f64[::1] ov = out
    cdef i64[::1] ib = np.empty(2 * (nx + ny) + 4, dtype=np.int64)
    cdef f64[::1] wb = np.empty(2 * (nx + ny) + 4, dtype=np.float64)
    cdef double s
    with nogil:
        for r in range(nrays):
            s = sino[r]
            if s == 0.0:
                continue
            cnt = _trace(x0[r], y0[r], x1[r], y1[r], nx, ny, pixel,
                         &ib[0], &wb[0], True)
            for m in range(cnt):
                ov[ib[m]] += wb[m] * s
    return out
