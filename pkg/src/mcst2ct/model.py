"""Two-layer clustering-based sparsifying transform (MCST2) model.

Layer 1 clusters patches ``R1[:, i]`` into K groups, each with an orthonormal
transform ``Omega1[k]``; the sparsification residuals
``R2[:, i] = Omega1[k] R1[:, i] - Z1[:, i]`` are clustered again into L groups
with transforms ``Omega2[l]``. Training minimizes

    sum_i ||Omega1[c1(i)] R1_i - Z1_i||^2 + eta1^2 ||Z1_i||_0
  + sum_j ||Omega2[c2(j)] R2_j - Z2_j||^2 + eta2^2 ||Z2_j||_0

by exact block coordinate descent over (Z1, c1), Omega1, (Z2, c2), Omega2.
Every block update is a closed-form global minimizer, so the objective never
increases.

Cluster labels are 0-based. Transforms are stored stacked as ``(K, p, p)``
and ``(L, p, p)`` arrays.
"""

import json
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.fft import dct

MODEL_MAGIC = b"MCST2"
MODEL_VERSION = 1
_HEADER = struct.Struct("<5sIIII")

# relative slack when deciding argmin ties; keeps the lowest-index rule
# stable against rounding in mathematically equal costs
_TIE_RTOL = 1e-13


@dataclass
class Mcst2Model:
    layer1: np.ndarray
    layer2: np.ndarray

    def __post_init__(self):
        self.layer1 = np.asarray(self.layer1, dtype=np.float64)
        self.layer2 = np.asarray(self.layer2, dtype=np.float64)
        if self.layer1.ndim != 3 or self.layer2.ndim != 3:
            raise ValueError("transform banks must be (count, p, p) arrays")
        p = self.layer1.shape[1]
        if self.layer1.shape[1:] != (p, p) or self.layer2.shape[1:] != (p, p):
            raise ValueError("all transforms must be square with the same size")
        if len(self.layer1) < 1 or len(self.layer2) < 1:
            raise ValueError("need at least one transform per layer")

    @property
    def num_clusters1(self):
        return self.layer1.shape[0]

    @property
    def num_clusters2(self):
        return self.layer2.shape[0]

    @property
    def patch_dim(self):
        return self.layer1.shape[1]

    def orthonormality_error(self):
        """Largest ``||W W^T - I||_F`` over all transforms."""
        eye = np.eye(self.patch_dim)
        bank = np.concatenate((self.layer1, self.layer2))
        return max(np.linalg.norm(w @ w.T - eye) for w in bank)

    def copy(self):
        return Mcst2Model(self.layer1.copy(), self.layer2.copy())


@dataclass
class CodingState:
    z1: np.ndarray
    z2: np.ndarray
    labels1: np.ndarray
    labels2: np.ndarray
    r2: np.ndarray

    @property
    def num_patches(self):
        return self.z1.shape[1]

    def copy(self):
        return CodingState(self.z1.copy(), self.z2.copy(), self.labels1.copy(),
                           self.labels2.copy(), self.r2.copy())


@dataclass
class TrainConfig:
    """Training hyperparameters; defaults are the XCAT setting (K=5, L=2)."""

    eta1: float = 125.0
    eta2: float = 70.0
    num_clusters1: int = 5
    num_clusters2: int = 2
    iterations: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.eta1 < 0 or self.eta2 < 0:
            raise ValueError("eta1 and eta2 must be nonnegative")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.num_clusters1 < 1 or self.num_clusters2 < 1:
            raise ValueError("cluster counts must be >= 1")


@dataclass
class TrainResult:
    model: Mcst2Model
    state: CodingState
    trace: list = field(default_factory=list)


def hard_threshold(v, eta):
    """Zero the entries with magnitude strictly below ``eta``."""
    v = np.asarray(v, dtype=np.float64)
    return np.where(np.abs(v) >= eta, v, 0.0)


def dct_transform(p):
    """Orthonormal 2D DCT acting on row-major vectorized ``b x b`` patches."""
    b = int(round(np.sqrt(p)))
    if b * b != p:
        raise ValueError(f"patch dimension {p} is not a perfect square")
    d = dct(np.eye(b), norm="ortho", axis=0)
    return np.kron(d, d)


def _first_argmin(costs):
    """Column-wise argmin over axis 0, lowest index among (near-)ties."""
    best = costs.min(axis=0)
    slack = _TIE_RTOL * np.maximum(np.abs(best), 1.0)
    return np.argmax(costs <= best + slack, axis=0)


def _apply_bank(bank, labels, x, transpose=False):
    """Column-wise ``bank[labels[i]] @ x[:, i]`` (or its transpose)."""
    if len(bank) == 1:
        return (bank[0].T if transpose else bank[0]) @ x
    # group columns by label so each transform multiplies one contiguous block
    order = np.argsort(labels, kind="stable")
    bounds = np.concatenate(([0], np.cumsum(np.bincount(labels, minlength=len(bank)))))
    xs = np.take(x, order, axis=1)
    ys = np.empty_like(xs)
    for c in range(len(bank)):
        lo, hi = bounds[c], bounds[c + 1]
        if hi > lo:
            w = bank[c].T if transpose else bank[c]
            ys[:, lo:hi] = w @ xs[:, lo:hi]
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    return np.take(ys, inverse, axis=1)


def _cluster_products(x, y, labels, count):
    """Per-cluster ``x[:, C] @ y[:, C].T``; ``None`` for empty clusters."""
    order = np.argsort(labels, kind="stable")
    bounds = np.concatenate(([0], np.cumsum(np.bincount(labels, minlength=count))))
    xs, ys = np.take(x, order, axis=1), np.take(y, order, axis=1)
    return [xs[:, bounds[c]:bounds[c + 1]] @ ys[:, bounds[c]:bounds[c + 1]].T
            if bounds[c + 1] > bounds[c] else None for c in range(count)]


def _procrustes_bank(bank, products):
    """``V U^T`` from the SVD of each product; keeps the old transform if degenerate."""
    out = bank.copy()
    for c, m in enumerate(products):
        if m is None or not m.any():
            continue
        u, _, vt = np.linalg.svd(m)
        out[c] = vt.T @ u.T
    return out


# column block size for the per-patch loops; keeps temporaries cache-resident
_CHUNK = 2048


def _chunks(n):
    for lo in range(0, n, _CHUNK):
        yield slice(lo, min(lo + _CHUNK, n))


def _colsq(x):
    return np.einsum("ij,ij->j", x, x)


def layer2_feedback(model, state):
    """Columns ``Omega2[c2(i)]^T Z2[:, i]``."""
    return _apply_bank(model.layer2, state.labels2, state.z2, transpose=True)


def layer1_residual(r1, model, labels1, z1):
    return _apply_bank(model.layer1, labels1, r1) - z1


def check_state(r1, model, state, rtol=1e-10):
    """Reject a coding state whose stored residual disagrees with ``Omega1 R1 - Z1``."""
    n = r1.shape[1]
    for name in ("z1", "z2", "r2"):
        if getattr(state, name).shape != r1.shape:
            raise ValueError(f"state.{name} has shape {getattr(state, name).shape}, expected {r1.shape}")
    for labels, count, name in ((state.labels1, model.num_clusters1, "labels1"),
                                (state.labels2, model.num_clusters2, "labels2")):
        if labels.shape != (n,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= count:
            raise ValueError(f"state.{name} is not a valid partition into {count} clusters")
    expect = layer1_residual(r1, model, state.labels1, state.z1)
    scale = max(1.0, np.abs(expect).max(initial=0.0), np.abs(r1).max(initial=0.0))
    if np.abs(expect - state.r2).max(initial=0.0) > rtol * scale:
        raise ValueError("state.r2 is inconsistent with Omega1 R1 - Z1")


def sparsification_cost(model, state, thr1, thr2):
    """Value of the two-layer cost using the stored residual ``state.r2``.

    The layer-1 fit ``||Omega1 R1 - Z1||^2`` equals ``||R2||^2`` by definition
    of the residual, so only the layer-2 transforms are applied here.
    """
    fit2 = _apply_bank(model.layer2, state.labels2, state.r2)
    fit = 0.0
    for sl in _chunks(fit2.shape[1]):
        fit += float(np.sum(_colsq(state.r2[:, sl])) + np.sum(_colsq(fit2[:, sl] - state.z2[:, sl])))
    return float(fit + thr1**2 * np.count_nonzero(state.z1) + thr2**2 * np.count_nonzero(state.z2))


def objective_p0(patches, model, state, cfg):
    check_state(patches.data, model, state)
    return sparsification_cost(model, state, cfg.eta1, cfg.eta2)


def update_layer1_codes_clusters(patches, model, state, eta1):
    """Exact joint update of layer-1 codes and clusters.

    Layer-2 memberships and codes stay fixed. For cluster k the per-patch cost
    reduces to ``2 ||z - (Omega1[k] r - 0.5 f)||^2 + eta1^2 ||z||_0 + const``
    with ``f = Omega2[c2]^T Z2``, hence the threshold ``eta1 / sqrt(2)``.
    """
    r1 = patches.data
    fb = layer2_feedback(model, state)
    thr = eta1 / np.sqrt(2.0)
    n = r1.shape[1]
    kk = model.num_clusters1
    labels1 = np.empty(n, dtype=np.int64)
    z1 = np.empty_like(r1)
    r2 = np.empty_like(r1)
    for sl in _chunks(n):
        r, f = r1[:, sl], fb[:, sl]
        a_all = np.empty((kk,) + r.shape)
        z_all = np.empty_like(a_all)
        costs = np.empty((kk, r.shape[1]))
        for k, w in enumerate(model.layer1):
            a = np.matmul(w, r, out=a_all[k])
            z = hard_threshold(a - 0.5 * f, thr)
            z_all[k] = z
            d = a - z
            costs[k] = _colsq(d) + eta1**2 * np.count_nonzero(z, axis=0) + _colsq(d - f)
        lab = _first_argmin(costs)
        pick = lab[None, None, :]
        labels1[sl] = lab
        z1[:, sl] = np.take_along_axis(z_all, pick, axis=0)[0]
        r2[:, sl] = np.take_along_axis(a_all, pick, axis=0)[0] - z1[:, sl]
    return replace(state, z1=z1, labels1=labels1, r2=r2)


def update_layer1_transforms(patches, model, state):
    """Closed-form Procrustes update of every layer-1 transform.

    Returns the new model and the state with ``r2`` recomputed.
    """
    r1 = patches.data
    target = state.z1 + 0.5 * layer2_feedback(model, state)
    layer1 = _procrustes_bank(
        model.layer1, _cluster_products(r1, target, state.labels1, model.num_clusters1))
    new = Mcst2Model(layer1, model.layer2)
    return new, replace(state, r2=layer1_residual(r1, new, state.labels1, state.z1))


def update_layer2_codes_clusters(state, model, eta2):
    r2 = state.r2
    n = r2.shape[1]
    ll = model.num_clusters2
    labels2 = np.empty(n, dtype=np.int64)
    z2 = np.empty_like(r2)
    for sl in _chunks(n):
        r = r2[:, sl]
        z_all = np.empty((ll,) + r.shape)
        costs = np.empty((ll, r.shape[1]))
        for l, w in enumerate(model.layer2):
            a = w @ r
            keep = np.abs(a) >= eta2
            z_all[l] = np.where(keep, a, 0.0)
            costs[l] = _colsq(a - z_all[l]) + eta2**2 * np.count_nonzero(keep, axis=0)
        lab = _first_argmin(costs)
        labels2[sl] = lab
        z2[:, sl] = np.take_along_axis(z_all, lab[None, None, :], axis=0)[0]
    return replace(state, z2=z2, labels2=labels2)


def update_layer2_transforms(state, model):
    layer2 = _procrustes_bank(
        model.layer2, _cluster_products(state.r2, state.z2, state.labels2, model.num_clusters2))
    return Mcst2Model(model.layer1, layer2)


def _balanced_labels(rng, n, count):
    labels = np.empty(n, dtype=np.int64)
    labels[rng.permutation(n)] = np.arange(n) % count
    return labels


def initialize(patches, cfg):
    """DCT transforms, seeded balanced clusters, codes for those clusters.

    All slots start from the same DCT and would tie in every cluster
    assignment, so one transform pass on the random partition is run before
    returning to make the slots distinct.
    """
    r1 = patches.data
    p, n = r1.shape
    if n < max(cfg.num_clusters1, cfg.num_clusters2):
        raise ValueError(f"need at least max(K, L) patches, got {n}")
    d = dct_transform(p)
    model = Mcst2Model(np.repeat(d[None], cfg.num_clusters1, axis=0),
                       np.repeat(d[None], cfg.num_clusters2, axis=0))
    rng = np.random.default_rng(cfg.seed)
    labels1 = _balanced_labels(rng, n, cfg.num_clusters1)
    labels2 = _balanced_labels(rng, n, cfg.num_clusters2)
    a = _apply_bank(model.layer1, labels1, r1)
    z1 = hard_threshold(a, cfg.eta1 / np.sqrt(2.0))
    r2 = a - z1
    z2 = hard_threshold(_apply_bank(model.layer2, labels2, r2), cfg.eta2)
    state = CodingState(z1, z2, labels1, labels2, r2)
    model, state = update_layer1_transforms(patches, model, state)
    model = update_layer2_transforms(state, model)
    return model, state


def bcd_iteration(patches, model, state, eta1, eta2):
    state = update_layer1_codes_clusters(patches, model, state, eta1)
    model, state = update_layer1_transforms(patches, model, state)
    state = update_layer2_codes_clusters(state, model, eta2)
    model = update_layer2_transforms(state, model)
    return model, state


def train_mcst2(patches, cfg, init=None, callback=None):
    """Run ``cfg.iterations`` BCD sweeps.

    ``trace[0]`` is the objective at initialization and ``trace[t]`` the value
    after sweep t. ``init`` may supply a ``(model, state)`` pair to start from;
    ``callback(t, model, state)`` is called after every sweep.
    """
    if patches.num_patches < max(cfg.num_clusters1, cfg.num_clusters2):
        raise ValueError("fewer patches than clusters")
    if init is None:
        model, state = initialize(patches, cfg)
    else:
        model, state = init[0].copy(), init[1].copy()
        check_state(patches.data, model, state)
    trace = [sparsification_cost(model, state, cfg.eta1, cfg.eta2)]
    for t in range(cfg.iterations):
        model, state = bcd_iteration(patches, model, state, cfg.eta1, cfg.eta2)
        trace.append(sparsification_cost(model, state, cfg.eta1, cfg.eta2))
        if callback is not None:
            callback(t + 1, model, state)
    return TrainResult(model, state, trace)


def save_model(path, model, cfg=None, extra=None):
    """Write the binary model file and its ``<path>.json`` sidecar.

    Binary layout (little-endian): 5-byte magic ``b"MCST2"``, uint32 version,
    uint32 p, uint32 K, uint32 L, then the K layer-1 and L layer-2 transforms
    as row-major float64 ``p x p`` blocks.
    """
    path = str(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, model.patch_dim,
                              model.num_clusters1, model.num_clusters2))
        fh.write(np.ascontiguousarray(model.layer1, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.layer2, dtype="<f8").tobytes())
    meta = {"format": "MCST2", "version": MODEL_VERSION, "patch_dim": model.patch_dim,
            "num_clusters1": model.num_clusters1, "num_clusters2": model.num_clusters2}
    if cfg is not None:
        meta["train"] = asdict(cfg)
    if extra:
        meta.update(extra)
    with open(path + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated model file")
    magic, version, p, k, l = _HEADER.unpack_from(raw)
    if magic != MODEL_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {version}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if body.size != (k + l) * p * p:
        raise ValueError(f"{path}: payload size does not match header")
    body = body.astype(np.float64)
    return Mcst2Model(body[: k * p * p].reshape(k, p, p), body[k * p * p:].reshape(l, p, p))


def load_model_meta(path):
    with open(str(path) + ".json") as fh:
        return json.load(fh)

