"""PWLS reconstruction with the MCST2 regularizer, plus the PWLS-EP baseline.

The MCST2 objective is

    1/2 ||y - A x||_W^2 + beta * S(x),
    S(x) = sum_i ||Omega1 P_i x - Z1_i||^2 + gamma1^2 ||Z1_i||_0
         + ||Omega2 R2_i - Z2_i||^2 + gamma2^2 ||Z2_i||_0,
    R2_i = Omega1 P_i x - Z1_i,

minimized by alternating an image update (codes fixed) with the exact
sparse coding / clustering step of the training algorithm (image fixed).

With orthonormal transforms both patch terms are ``||P_i x - target||^2`` for
fixed targets, so the regularizer is an exactly separable quadratic in x with
Hessian ``4 beta diag(cover count)``. The image update is a separable quadratic
surrogate (SQS) step using that Hessian plus the diagonal majorizer
``A^T W A 1`` of the data term, projected onto ``x >= 0``. Every step minimizes
a majorizer of the objective, so the objective never increases.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .ct import fbp_reconstruct, get_projector
from .model import (
    CodingState,
    _apply_bank,
    check_state,
    layer2_feedback,
    sparsification_cost,
    update_layer1_codes_clusters,
    update_layer2_codes_clusters,
)
from .patches import (
    PatchGeometry,
    PatchMatrix,
    aggregate_patches,
    cover_count,
    extract_patches,
)

INIT_MODES = ("fbp", "zeros", "provided")


@dataclass(frozen=True)
class ReconConfig:
    beta: float = 1.5e5
    gamma1: float = 20.0
    gamma2: float = 5.0
    outer_iterations: int = 1500
    inner_iterations: int = 5
    init: str = "fbp"

    def __post_init__(self):
        if min(self.beta, self.gamma1, self.gamma2) < 0:
            raise ValueError("beta, gamma1 and gamma2 must be nonnegative")
        if self.outer_iterations < 1 or self.inner_iterations < 0:
            raise ValueError("outer_iterations must be >= 1 and inner_iterations >= 0")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}")


@dataclass
class ReconState:
    image: np.ndarray
    coding: CodingState
    trace: list = field(default_factory=list)


@dataclass(frozen=True)
class EpConfig:
    beta: float = 2**15.5
    delta: float = 10.0
    iterations: int = 1500
    potential: str = "hyperbola"
    init: str = "fbp"

    def __post_init__(self):
        if self.beta < 0 or self.delta <= 0 or self.iterations < 0:
            raise ValueError("need beta >= 0, delta > 0, iterations >= 0")
        if self.potential not in ("hyperbola", "quadratic"):
            raise ValueError("potential must be 'hyperbola' or 'quadratic'")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}")


def data_term(image, problem, projector=None):
    proj = projector or get_projector(problem.geometry)
    res = proj.forward(image) - problem.sinogram
    return 0.5 * float(np.dot(problem.weights, res * res))


def data_majorizer(problem, projector=None):
    """Diagonal of ``A^T W A 1``, an SQS curvature for the data term (A >= 0)."""
    proj = projector or get_projector(problem.geometry)
    ones = np.ones(problem.geometry.image_shape)
    return proj.back(problem.weights * proj.forward(ones))


def objective_p1(state, problem, model, geom, cfg, projector=None):
    """Data term plus ``beta`` times the regularizer at the stored codes."""
    patches = extract_patches(state.image, geom)
    check_state(patches.data, model, state.coding)
    reg = sparsification_cost(model, state.coding, cfg.gamma1, cfg.gamma2)
    return data_term(state.image, problem, projector) + cfg.beta * reg


def _regularizer_target(model, coding, geom):
    """Aggregated ``Omega1^T (2 Z1 + Omega2^T Z2)`` over all patches."""
    inner = 2.0 * coding.z1 + layer2_feedback(model, coding)
    cols = _apply_bank(model.layer1, coding.labels1, inner, transpose=True)
    return aggregate_patches(PatchMatrix(cols, geom))[0]


def regularizer_gradient(image, model, coding, geom):
    """Gradient of the image-dependent part of ``S`` with codes fixed.

    Uses the orthonormality of every transform:
    ``grad = 2 (2 count * x - sum_i P_i^T Omega1^T (2 Z1_i + Omega2^T Z2_i))``.
    """
    count = cover_count(geom)
    return 2.0 * (2.0 * count * image - _regularizer_target(model, coding, geom))


def smooth_gradient(image, problem, model, coding, geom, beta, projector=None):
    """Gradient of ``1/2 ||y - A x||_W^2 + beta S(x)`` with the codes fixed."""
    proj = projector or get_projector(problem.geometry)
    g = proj.back(problem.weights * (proj.forward(image) - problem.sinogram))
    if beta:
        g = g + beta * regularizer_gradient(image, model, coding, geom)
    return g


def refresh_residual(image, model, coding, geom):
    """Coding state with ``r2`` recomputed for the (new) image."""
    r1 = extract_patches(image, geom).data
    return replace(coding, r2=_apply_bank(model.layer1, coding.labels1, r1) - coding.z1)


def image_update(state, problem, model, geom, cfg, projector=None, majorizer=None):
    """``cfg.inner_iterations`` projected SQS steps on the image, codes fixed."""
    if cfg.inner_iterations == 0:
        return state
    proj = projector or get_projector(problem.geometry)
    d_data = data_majorizer(problem, proj) if majorizer is None else majorizer
    count = cover_count(geom)
    target = _regularizer_target(model, state.coding, geom) if cfg.beta else 0.0
    denom = d_data + 4.0 * cfg.beta * count
    x = state.image
    for _ in range(cfg.inner_iterations):
        g = proj.back(problem.weights * (proj.forward(x) - problem.sinogram))
        if cfg.beta:
            g = g + 2.0 * cfg.beta * (2.0 * count * x - target)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(denom > 0, g / denom, 0.0)
        x = np.maximum(x - step, 0.0)
    return replace(state, image=x, coding=refresh_residual(x, model, state.coding, geom))


def initial_coding(image, model, geom, cfg):
    """Codes for a fresh image: layer-2 codes start at zero in cluster 0."""
    r1 = extract_patches(image, geom).data
    zeros = np.zeros_like(r1)
    labels = np.zeros(r1.shape[1], dtype=np.int64)
    start = CodingState(zeros, zeros.copy(), labels, labels.copy(),
                        _apply_bank(model.layer1, labels, r1))
    return _code(r1, start, model, geom, cfg)


def _code(r1, coding, model, geom, cfg):
    coding = update_layer1_codes_clusters(PatchMatrix(r1, geom), model, coding, cfg.gamma1)
    return update_layer2_codes_clusters(coding, model, cfg.gamma2)


def sparse_code_and_cluster(state, model, geom, cfg):
    """Exact layer-1 then layer-2 coding/clustering for the current image."""
    r1 = extract_patches(state.image, geom).data
    return replace(state, coding=_code(r1, state.coding, model, geom, cfg))


def initial_image(problem, init, image=None):
    shape = problem.geometry.image_shape
    if init == "provided":
        if image is None:
            raise ValueError("init='provided' requires an initial image")
        x = np.asarray(image, dtype=np.float64)
        if x.shape != tuple(shape):
            raise ValueError(f"initial image shape {x.shape} != {tuple(shape)}")
        return np.maximum(x, 0.0)
    if init == "zeros":
        return np.zeros(shape)
    return np.maximum(fbp_reconstruct(problem), 0.0)


def reconstruct_pwls_mcst2(problem, model, geom=None, cfg=ReconConfig(), image=None,
                           callback=None):
    """Alternate image updates and sparse coding for ``cfg.outer_iterations``.

    The trace holds the objective after initialization, then after every image
    update and every coding step (``1 + 2 * outer_iterations`` values).
    """
    shape = tuple(problem.geometry.image_shape)
    if geom is None:
        geom = PatchGeometry(*shape, patch_side=int(round(np.sqrt(model.patch_dim))))
    if geom.shape != shape or geom.patch_dim != model.patch_dim:
        raise ValueError("patch geometry does not match image or model")
    proj = get_projector(problem.geometry)
    maj = data_majorizer(problem, proj)
    x = initial_image(problem, cfg.init, image)
    state = ReconState(x, initial_coding(x, model, geom, cfg))
    state.trace = [objective_p1(state, problem, model, geom, cfg, proj)]
    for t in range(cfg.outer_iterations):
        state = image_update(state, problem, model, geom, cfg, proj, maj)
        state.trace.append(objective_p1(state, problem, model, geom, cfg, proj))
        state = sparse_code_and_cluster(state, model, geom, cfg)
        state.trace.append(objective_p1(state, problem, model, geom, cfg, proj))
        if callback is not None:
            callback(t + 1, state)
    return state


# edge-preserving baseline: 8-neighbour pixel differences, each pair once
_EP_OFFSETS = ((0, 1, 1.0), (1, 0, 1.0), (1, 1, 2**-0.5), (1, -1, 2**-0.5))


def _pair_slices(shape, dr, dc):
    h, w = shape
    rows_a = slice(0, h - dr)
    rows_b = slice(dr, h)
    if dc >= 0:
        cols_a, cols_b = slice(0, w - dc), slice(dc, w)
    else:
        cols_a, cols_b = slice(-dc, w), slice(0, w + dc)
    return (rows_a, cols_a), (rows_b, cols_b)


def ep_potential(d, delta, potential="hyperbola"):
    if potential == "quadratic":
        return 0.5 * d * d
    # delta^2 (sqrt(1 + (d/delta)^2) - 1), written without cancellation
    return d * d / (np.sqrt(1.0 + (d / delta) ** 2) + 1.0)


def _ep_weight(d, delta, potential):
    """Huber curvature ``psi'(d) / d``."""
    if potential == "quadratic":
        return np.ones_like(d)
    return 1.0 / np.sqrt(1.0 + (d / delta) ** 2)


def ep_penalty(image, delta, potential="hyperbola"):
    total = 0.0
    for dr, dc, w in _EP_OFFSETS:
        a, b = _pair_slices(image.shape, dr, dc)
        total += w * float(np.sum(ep_potential(image[a] - image[b], delta, potential)))
    return total


def _ep_grad_curv(image, delta, potential):
    grad = np.zeros_like(image)
    curv = np.zeros_like(image)
    for dr, dc, w in _EP_OFFSETS:
        a, b = _pair_slices(image.shape, dr, dc)
        d = image[a] - image[b]
        om = w * _ep_weight(d, delta, potential)
        grad[a] += om * d
        grad[b] -= om * d
        curv[a] += 2 * om
        curv[b] += 2 * om
    return grad, curv


def ep_objective(image, problem, cfg, projector=None):
    return data_term(image, problem, projector) + cfg.beta * ep_penalty(image, cfg.delta, cfg.potential)


def reconstruct_pwls_ep(problem, cfg=EpConfig(), image=None, callback=None):
    """PWLS with the edge-preserving hyperbola penalty; returns ``(image, trace)``.

    Each iteration minimizes a separable quadratic surrogate built from the
    data majorizer and the Huber curvatures of the current pixel differences.
    """
    proj = get_projector(problem.geometry)
    maj = data_majorizer(problem, proj)
    x = initial_image(problem, cfg.init, image)
    trace = [ep_objective(x, problem, cfg, proj)]
    for t in range(cfg.iterations):
        g = proj.back(problem.weights * (proj.forward(x) - problem.sinogram))
        denom = maj
        if cfg.beta:
            rg, rc = _ep_grad_curv(x, cfg.delta, cfg.potential)
            g = g + cfg.beta * rg
            denom = maj + cfg.beta * rc
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(denom > 0, g / denom, 0.0)
        x = np.maximum(x - step, 0.0)
        trace.append(ep_objective(x, problem, cfg, proj))
        if callback is not None:
            callback(t + 1, x)
    return x, trace
