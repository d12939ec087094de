"""2D CT system model: geometry, Siddon projector, noise simulation, FBP.

Images are ``(ny, nx)`` rasters in modified Hounsfield units (air 0, water
1000); ``geometry.mu_per_unit`` converts them to linear attenuation in 1/mm,
so ``A @ x`` is a dimensionless line integral. Sinograms are flattened
view-major: ``sino.reshape(num_views, num_detectors)``.

Parallel-beam views cover [0, pi); fan-beam views cover [0, 2 pi) with an
equiangular (arc) detector of radius ``source_to_detector``.
"""

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .kernels import siddon

MU_WATER = 0.02  # 1/mm


@dataclass(frozen=True)
class CtGeometry:
    mode: str = "parallel"
    num_detectors: int = 185
    num_views: int = 180
    detector_spacing: float = 1.6
    source_to_detector: float = 1085.6
    source_to_center: float = 595.0
    image_pixel_size: float = 1.6
    image_shape: tuple = (128, 128)
    detector_offset: float = 0.25  # in detector channels
    mu_per_unit: float = MU_WATER / 1000.0

    def __post_init__(self):
        if self.mode not in ("parallel", "fan"):
            raise ValueError(f"unknown geometry mode {self.mode!r}")
        lengths = (self.detector_spacing, self.source_to_detector, self.source_to_center,
                   self.image_pixel_size, self.mu_per_unit)
        if min(lengths) <= 0:
            raise ValueError("geometry lengths must be positive")
        if self.num_detectors < 1 or self.num_views < 1:
            raise ValueError("need at least one detector and one view")
        if self.mode == "fan" and not self.source_to_center < self.source_to_detector:
            raise ValueError("fan mode requires source_to_center < source_to_detector")
        object.__setattr__(self, "image_shape", tuple(int(n) for n in self.image_shape))

    @property
    def num_rays(self):
        return self.num_views * self.num_detectors

    @property
    def sino_shape(self):
        return (self.num_views, self.num_detectors)

    def view_angles(self):
        span = np.pi if self.mode == "parallel" else 2 * np.pi
        return span * np.arange(self.num_views) / self.num_views

    def detector_positions(self):
        """Detector coordinates: mm for parallel, fan angle (rad) for fan."""
        u = (np.arange(self.num_detectors) - (self.num_detectors - 1) / 2
             + self.detector_offset) * self.detector_spacing
        return u if self.mode == "parallel" else u / self.source_to_detector

    def pixel_centers(self):
        ny, nx = self.image_shape
        d = self.image_pixel_size
        x = (np.arange(nx) - (nx - 1) / 2) * d
        y = ((ny - 1) / 2 - np.arange(ny)) * d
        return x[None, :], y[:, None]


PRESETS = {
    "desk": CtGeometry(),
    "paper-fan": CtGeometry(mode="fan", num_detectors=888, num_views=984,
                            detector_spacing=1.2858, source_to_detector=1085.6,
                            source_to_center=595.0, image_pixel_size=0.9766,
                            image_shape=(420, 420), detector_offset=0.0),
}


def preset(name, **overrides):
    try:
        geom = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown geometry preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(geom, **overrides) if overrides else geom


def ray_endpoints(geom):
    """Start/end points ``(x0, y0, x1, y1)`` of every ray, view-major."""
    beta = geom.view_angles()[:, None]
    u = geom.detector_positions()[None, :]
    if geom.mode == "parallel":
        ny, nx = geom.image_shape
        reach = geom.image_pixel_size * np.hypot(nx, ny)
        cx, cy = u * np.cos(beta), u * np.sin(beta)
        ex, ey = -np.sin(beta), np.cos(beta)
        x0, y0 = cx - reach * ex, cy - reach * ey
        x1, y1 = cx + reach * ex, cy + reach * ey
    else:
        sx = geom.source_to_center * np.cos(beta)
        sy = geom.source_to_center * np.sin(beta)
        phi = beta + np.pi + u  # central ray points at the origin
        x0, y0 = sx + 0 * u, sy + 0 * u
        x1 = sx + geom.source_to_detector * np.cos(phi)
        y1 = sy + geom.source_to_detector * np.sin(phi)
    return tuple(np.ascontiguousarray(a, dtype=np.float64).ravel() for a in (x0, y0, x1, y1))


# above this many estimated nonzeros the projector runs matrix-free
_MAX_MATRIX_NNZ = 60_000_000


class Projector:
    """Linear operator ``A`` with exact adjoint.

    With ``matrix=True`` (default when it fits in memory) the Siddon system
    matrix is stored in CSR form; otherwise rays are traced on every call.
    """

    def __init__(self, geom, matrix=None):
        self.geometry = geom
        self._rays = ray_endpoints(geom)
        ny, nx = geom.image_shape
        if matrix is None:
            matrix = geom.num_rays * (nx + ny) < _MAX_MATRIX_NNZ
        self.matrix = None
        if matrix:
            indptr, indices, data = siddon.system_matrix(*self._rays, nx, ny, geom.image_pixel_size)
            self.matrix = sp.csr_matrix((data * geom.mu_per_unit, indices, indptr),
                                        shape=(geom.num_rays, nx * ny))
            self._matrix_t = self.matrix.T.tocsr()

    def _check_image(self, image):
        image = np.asarray(image, dtype=np.float64)
        if image.shape != self.geometry.image_shape:
            raise ValueError(f"image shape {image.shape} does not match geometry "
                             f"{self.geometry.image_shape}")
        return image

    def _check_sino(self, sino):
        sino = np.asarray(sino, dtype=np.float64).ravel()
        if sino.size != self.geometry.num_rays:
            raise ValueError(f"sinogram has {sino.size} entries, geometry expects "
                             f"{self.geometry.num_rays}")
        return sino

    def forward(self, image):
        x = self._check_image(image).ravel()
        if self.matrix is not None:
            return self.matrix @ x
        ny, nx = self.geometry.image_shape
        out = siddon.forward(np.ascontiguousarray(x), *self._rays, nx, ny,
                             self.geometry.image_pixel_size)
        return out * self.geometry.mu_per_unit

    def back(self, sino):
        u = self._check_sino(sino)
        ny, nx = self.geometry.image_shape
        if self.matrix is not None:
            return (self._matrix_t @ u).reshape(ny, nx)
        out = siddon.back(np.ascontiguousarray(u), *self._rays, nx, ny,
                          self.geometry.image_pixel_size)
        return (out * self.geometry.mu_per_unit).reshape(ny, nx)


@lru_cache(maxsize=4)
def get_projector(geom):
    return Projector(geom)


def forward_project(image, geom):
    return get_projector(geom).forward(image)


def back_project(sino, geom):
    return get_projector(geom).back(sino)


@dataclass(frozen=True)
class NoiseModel:
    incident_intensity: float = 1e4
    gaussian_std: float = 5.0
    count_floor: float = 0.1

    def __post_init__(self):
        if self.incident_intensity <= 0:
            raise ValueError("incident_intensity must be positive")
        if self.gaussian_std < 0 or self.count_floor <= 0:
            raise ValueError("gaussian_std must be >= 0 and count_floor > 0")


@dataclass
class CtProblem:
    sinogram: np.ndarray
    weights: np.ndarray
    geometry: CtGeometry = field(default_factory=CtGeometry)

    def __post_init__(self):
        self.sinogram = np.asarray(self.sinogram, dtype=np.float64).ravel()
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if self.sinogram.shape != self.weights.shape:
            raise ValueError("sinogram and weights must have the same length")
        if self.sinogram.size != self.geometry.num_rays:
            raise ValueError("sinogram length does not match geometry")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite and nonnegative")


def simulate_measurements(ground_truth, geom, noise=NoiseModel(), seed=0, noiseless=False,
                          projector=None):
    """Poisson + Gaussian low-dose measurements and their statistical weights.

    Counts ``N = Poisson(I0 exp(-A x)) + Normal(0, sigma^2)``; post-log data
    ``y = log(I0 / max(N, floor))``; weights ``w = Y^2 / (Y + sigma^2)`` with
    ``Y = max(N, floor)``. ``noiseless`` returns ``y = A x`` with weights equal to
    the expected counts.
    """
    truth = np.asarray(ground_truth, dtype=np.float64)
    if np.any(truth < 0):
        raise ValueError("ground truth attenuation must be nonnegative")
    proj = projector or get_projector(geom)
    line = proj.forward(truth)
    i0 = noise.incident_intensity
    mean_counts = i0 * np.exp(-line)
    if noiseless:
        return CtProblem(line, mean_counts, geom)
    rng = np.random.default_rng(seed)
    counts = rng.poisson(mean_counts).astype(np.float64)
    if noise.gaussian_std > 0:
        counts += rng.normal(0.0, noise.gaussian_std, size=counts.shape)
    y_hat = np.maximum(counts, noise.count_floor)
    sino = np.log(i0 / y_hat)
    weights = y_hat**2 / (y_hat + noise.gaussian_std**2)
    return CtProblem(sino, weights, geom)


def _ramp_kernel(n, spacing):
    """Band-limited ramp filter samples at integer offsets ``-n+1 .. n-1``."""
    k = np.arange(-(n - 1), n)
    h = np.zeros(k.shape)
    h[k == 0] = 1.0 / (4 * spacing**2)
    odd = (k % 2) == 1
    h[odd] = -1.0 / (np.pi * k[odd] * spacing) ** 2
    return k, h


def _filter_rows(rows, kernel_k, kernel_h, spacing, window):
    """Convolve each row with the (windowed) kernel via zero-padded FFT."""
    n = rows.shape[1]
    size = 1 << int(np.ceil(np.log2(2 * n - 1 + len(kernel_k))))
    kern = np.zeros(size)
    kern[kernel_k % size] = kernel_h
    freq = np.fft.rfft(kern)
    if window == "hann":
        f = np.arange(freq.size) / (freq.size - 1)
        freq = freq * 0.5 * (1 + np.cos(np.pi * f))
    elif window not in ("ramp", None):
        raise ValueError(f"unknown FBP window {window!r}")
    out = np.fft.irfft(np.fft.rfft(rows, size, axis=1) * freq, size, axis=1)
    return out[:, :n] * spacing


def _interp_rows(q, idx_float):
    """Linear interpolation of a filtered view at fractional detector indices."""
    nd = q.shape[0]
    i0 = np.floor(idx_float).astype(np.int64)
    frac = idx_float - i0
    inside0 = (i0 >= 0) & (i0 < nd)
    inside1 = (i0 + 1 >= 0) & (i0 + 1 < nd)
    lo = np.where(inside0, q[np.clip(i0, 0, nd - 1)], 0.0)
    hi = np.where(inside1, q[np.clip(i0 + 1, 0, nd - 1)], 0.0)
    return (1 - frac) * lo + frac * hi


def fbp_reconstruct(problem, window="hann"):
    """Filtered back-projection; returns an image in the geometry's image units.

    Parallel beam: ramp filter (Hann-apodized by default) and pixel-driven
    linear-interpolation backprojection over [0, pi). Fan beam: equiangular
    weighted FBP over a full rotation (cosine pre-weighting, ``(g/sin g)^2``
    kernel correction, ``1/L^2`` backprojection weight).
    """
    geom = problem.geometry
    if geom.num_views < 2:
        raise ValueError("FBP needs at least 2 views")
    sino = problem.sinogram.reshape(geom.sino_shape)
    angles = geom.view_angles()
    x, y = geom.pixel_centers()
    nd = geom.num_detectors
    centre = (nd - 1) / 2 - geom.detector_offset
    image = np.zeros(geom.image_shape)
    if geom.mode == "parallel":
        ds = geom.detector_spacing
        k, h = _ramp_kernel(nd, ds)
        q = _filter_rows(sino, k, h, ds, window)
        for v, theta in enumerate(angles):
            t = x * np.cos(theta) + y * np.sin(theta)
            image += _interp_rows(q[v], t / ds + centre)
        image *= np.pi / geom.num_views
    else:
        dg = geom.detector_spacing / geom.source_to_detector
        gam = geom.detector_positions()
        k, h = _ramp_kernel(nd, dg)
        with np.errstate(invalid="ignore", divide="ignore"):
            corr = np.where(k == 0, 1.0, (k * dg / np.sin(k * dg)) ** 2)
        pre = sino * geom.source_to_center * np.cos(gam)[None, :]
        q = _filter_rows(pre, k, 0.5 * corr * h, dg, window)
        for v, beta in enumerate(angles):
            sx = geom.source_to_center * np.cos(beta)
            sy = geom.source_to_center * np.sin(beta)
            cx, cy = -np.cos(beta), -np.sin(beta)
            vx, vy = x - sx, y - sy
            g = np.arctan2(cx * vy - cy * vx, cx * vx + cy * vy)
            image += _interp_rows(q[v], g / dg + centre) / (vx**2 + vy**2)
        image *= 2 * np.pi / geom.num_views
    return image / geom.mu_per_unit
