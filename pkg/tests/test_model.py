import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import (
    l0_prox_bruteforce,
    layer1_bruteforce,
    layer1_cost,
    layer2_bruteforce,
    p0_termwise,
    random_orthonormal,
    rotation_sweep,
)

from mcst2ct.model import (
    CodingState,
    Mcst2Model,
    TrainConfig,
    check_state,
    dct_transform,
    hard_threshold,
    initialize,
    layer1_residual,
    load_model,
    objective_p0,
    save_model,
    train_mcst2,
    update_layer1_codes_clusters,
    update_layer1_transforms,
    update_layer2_codes_clusters,
    update_layer2_transforms,
)
from mcst2ct.patches import PatchGeometry, PatchMatrix, extract_patches


class _FlatGeometry:
    """Minimal geometry for patch matrices built from arbitrary columns."""

    def __init__(self, p, n):
        self.patch_dim, self.num_patches = p, n


def random_instance(rng, p, n, k, l, scale=1.0):
    r1 = scale * rng.standard_normal((p, n))
    model = Mcst2Model(np.stack([random_orthonormal(rng, p) for _ in range(k)]),
                       np.stack([random_orthonormal(rng, p) for _ in range(l)]))
    labels1 = rng.integers(0, k, n)
    labels2 = rng.integers(0, l, n)
    z1 = hard_threshold(rng.standard_normal((p, n)), 0.7)
    z2 = hard_threshold(rng.standard_normal((p, n)), 0.7)
    r2 = layer1_residual(r1, model, labels1, z1)
    return PatchMatrix(r1, _FlatGeometry(p, n)), model, CodingState(z1, z2, labels1, labels2, r2)


def test_hard_threshold_examples():
    np.testing.assert_array_equal(hard_threshold([3.0, -0.5, 1.2], 1.2), [3.0, 0.0, 1.2])
    v = np.array([0.1, -2.0, 0.0])
    np.testing.assert_array_equal(hard_threshold(v, 0.0), v)


def test_hard_threshold_is_l0_prox(rng):
    for _ in range(50):
        v = rng.standard_normal(4)
        z, best = l0_prox_bruteforce(v, 0.8)
        out = hard_threshold(v, 0.8)
        cost = np.sum((v - out) ** 2) + 0.64 * np.count_nonzero(out)
        assert cost <= best + 1e-14
        np.testing.assert_array_equal(out, z)


def test_dct_is_orthonormal_and_separable():
    d = dct_transform(16)
    np.testing.assert_allclose(d @ d.T, np.eye(16), atol=1e-14)
    # constant patch maps to the DC coefficient only
    out = d @ np.ones(16)
    assert abs(out[0] - 4.0) < 1e-13 and np.abs(out[1:]).max() < 1e-13
    with pytest.raises(ValueError):
        dct_transform(10)


def test_objective_zero_when_codes_exact(rng):
    r1 = rng.standard_normal((4, 6))
    w = random_orthonormal(rng, 4)
    model = Mcst2Model(w[None], w[None])
    z1 = w @ r1
    state = CodingState(z1, np.zeros_like(r1), np.zeros(6, int), np.zeros(6, int), np.zeros_like(r1))
    assert objective_p0(PatchMatrix(r1, _FlatGeometry(4, 6)), model, state,
                        TrainConfig(eta1=0, eta2=0, iterations=1)) == pytest.approx(0.0, abs=1e-20)


def test_objective_zero_codes_is_twice_energy(rng):
    r1 = rng.standard_normal((4, 6))
    w = random_orthonormal(rng, 4)
    model = Mcst2Model(w[None], random_orthonormal(rng, 4)[None])
    zero = np.zeros_like(r1)
    state = CodingState(zero, zero, np.zeros(6, int), np.zeros(6, int), w @ r1)
    val = objective_p0(PatchMatrix(r1, _FlatGeometry(4, 6)), model, state,
                       TrainConfig(eta1=0, eta2=0, iterations=1))
    assert val == pytest.approx(2 * np.sum(r1**2), rel=1e-13)


def test_objective_matches_termwise_oracle(rng):
    pm, model, state = random_instance(rng, 4, 6, 2, 2)
    cfg = TrainConfig(eta1=0.9, eta2=0.4, num_clusters1=2, num_clusters2=2, iterations=1)
    expect = p0_termwise(pm.data, model.layer1, model.layer2, state.z1, state.z2,
                         state.labels1, state.labels2, 0.9, 0.4)
    assert objective_p0(pm, model, state, cfg) == pytest.approx(expect, rel=1e-13)


def test_objective_rejects_inconsistent_state(rng):
    pm, model, state = random_instance(rng, 4, 6, 2, 2)
    state.r2 = state.r2 + 1.0
    with pytest.raises(ValueError):
        objective_p0(pm, model, state, TrainConfig(iterations=1))


def test_layer1_single_cluster_formula(rng):
    pm, model, state = random_instance(rng, 4, 7, 1, 2)
    out = update_layer1_codes_clusters(pm, model, state, 0.9)
    assert not out.labels1.any()
    for i in range(7):
        w2 = model.layer2[state.labels2[i]]
        c = model.layer1[0] @ pm.data[:, i] - 0.5 * w2.T @ state.z2[:, i]
        np.testing.assert_allclose(out.z1[:, i], hard_threshold(c, 0.9 / np.sqrt(2)), atol=1e-14)


def test_layer1_without_layer2_codes(rng):
    pm, model, state = random_instance(rng, 4, 7, 3, 2)
    state.z2[:] = 0
    out = update_layer1_codes_clusters(pm, model, state, 0.9)
    for i in range(7):
        a = model.layer1[out.labels1[i]] @ pm.data[:, i]
        np.testing.assert_allclose(out.z1[:, i], hard_threshold(a, 0.9 / np.sqrt(2)), atol=1e-14)


@pytest.mark.parametrize("seed", range(20))
def test_layer1_matches_bruteforce(seed):
    rng = np.random.default_rng(seed)
    pm, model, state = random_instance(rng, 3, 5, 3, 2)
    eta1 = rng.uniform(0.2, 1.5)
    out = update_layer1_codes_clusters(pm, model, state, eta1)
    for i in range(5):
        w2 = model.layer2[state.labels2[i]]
        best = layer1_bruteforce(model.layer1, pm.data[:, i], w2, state.z2[:, i], eta1)
        got = layer1_cost(model.layer1[out.labels1[i]], pm.data[:, i], out.z1[:, i], w2,
                          state.z2[:, i], eta1)
        assert abs(got - best) <= 1e-12
    check_state(pm.data, model, out)


def test_layer2_single_cluster_formula(rng):
    pm, model, state = random_instance(rng, 4, 6, 2, 1)
    out = update_layer2_codes_clusters(state, model, 0.5)
    assert not out.labels2.any()
    np.testing.assert_allclose(out.z2, hard_threshold(model.layer2[0] @ state.r2, 0.5))


def test_layer2_huge_threshold_falls_to_lowest_index(rng):
    pm, model, state = random_instance(rng, 4, 30, 2, 3)
    out = update_layer2_codes_clusters(state, model, 1e6)
    assert not out.z2.any()
    assert not out.labels2.any()


@pytest.mark.parametrize("seed", range(20))
def test_layer2_matches_bruteforce(seed):
    rng = np.random.default_rng(100 + seed)
    pm, model, state = random_instance(rng, 3, 6, 2, 2)
    eta2 = rng.uniform(0.2, 1.5)
    out = update_layer2_codes_clusters(state, model, eta2)
    for j in range(6):
        best = layer2_bruteforce(model.layer2, state.r2[:, j], eta2)
        a = model.layer2[out.labels2[j]] @ state.r2[:, j]
        got = np.sum((a - out.z2[:, j]) ** 2) + eta2**2 * np.count_nonzero(out.z2[:, j])
        assert abs(got - best) <= 1e-12


def layer1_transform_cost(w1, r1c, z1c, w2s, z2c):
    """Per-cluster layer-1 transform objective written out column by column."""
    total = 0.0
    for i in range(r1c.shape[1]):
        res = w1 @ r1c[:, i] - z1c[:, i]
        total += np.sum(res**2) + np.sum((w2s[i] @ res - z2c[:, i]) ** 2)
    return total


def test_layer1_transform_identity_fixed_point():
    p = 4
    r1 = np.eye(p)
    model = Mcst2Model(np.eye(p)[None] * 1.0, np.eye(p)[None])
    zero = np.zeros((p, p))
    state = CodingState(np.eye(p), zero, np.zeros(p, int), np.zeros(p, int), zero)
    new, st2 = update_layer1_transforms(PatchMatrix(r1, _FlatGeometry(p, p)), model, state)
    np.testing.assert_allclose(new.layer1[0], np.eye(p), atol=1e-14)


def test_layer1_transform_recovers_exact_fit(rng):
    p, n = 4, 12
    w0 = random_orthonormal(rng, p)
    r1 = rng.standard_normal((p, n))
    model = Mcst2Model(random_orthonormal(rng, p)[None], random_orthonormal(rng, p)[None])
    z1 = w0 @ r1
    zero = np.zeros((p, n))
    state = CodingState(z1, zero, np.zeros(n, int), np.zeros(n, int),
                        model.layer1[0] @ r1 - z1)
    new, st2 = update_layer1_transforms(PatchMatrix(r1, _FlatGeometry(p, n)), model, state)
    assert layer1_transform_cost(new.layer1[0], r1, z1, [model.layer2[0]] * n, zero) < 1e-20
    np.testing.assert_allclose(new.layer1[0] @ r1, z1, atol=1e-12)
    np.testing.assert_allclose(st2.r2, 0, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_layer1_transform_beats_rotation_sweep(seed):
    rng = np.random.default_rng(200 + seed)
    pm, model, state = random_instance(rng, 2, 8, 2, 2)
    new, _ = update_layer1_transforms(pm, model, state)
    for k in range(2):
        cols = state.labels1 == k
        if not cols.any():
            continue
        w2s = [model.layer2[l] for l in state.labels2[cols]]
        args = (pm.data[:, cols], state.z1[:, cols], w2s, state.z2[:, cols])
        opt = layer1_transform_cost(new.layer1[k], *args)
        for g in rotation_sweep():
            assert opt <= layer1_transform_cost(g @ new.layer1[k], *args) + 1e-10


def test_layer2_transform_identity_and_zero(rng):
    p = 3
    model = Mcst2Model(np.eye(p)[None], random_orthonormal(rng, p)[None])
    state = CodingState(np.zeros((p, p)), np.eye(p), np.zeros(p, int), np.zeros(p, int), np.eye(p))
    np.testing.assert_allclose(update_layer2_transforms(state, model).layer2[0], np.eye(p), atol=1e-14)
    state.z2[:] = 0
    np.testing.assert_array_equal(update_layer2_transforms(state, model).layer2[0], model.layer2[0])


@pytest.mark.parametrize("seed", range(10))
def test_layer2_transform_beats_rotation_sweep(seed):
    rng = np.random.default_rng(300 + seed)
    pm, model, state = random_instance(rng, 2, 8, 2, 2)
    new = update_layer2_transforms(state, model)
    for l in range(2):
        cols = state.labels2 == l
        if not cols.any():
            continue
        r2, z2 = state.r2[:, cols], state.z2[:, cols]
        opt = np.sum((new.layer2[l] @ r2 - z2) ** 2)
        for g in rotation_sweep():
            assert opt <= np.sum((g @ new.layer2[l] @ r2 - z2) ** 2) + 1e-10


def test_empty_clusters_keep_transform(rng):
    pm, model, state = random_instance(rng, 4, 6, 3, 3)
    state.labels1[:] = 0
    state.r2 = layer1_residual(pm.data, model, state.labels1, state.z1)
    state.labels2[:] = 1
    new, _ = update_layer1_transforms(pm, model, state)
    np.testing.assert_array_equal(new.layer1[1:], model.layer1[1:])
    new2 = update_layer2_transforms(state, model)
    np.testing.assert_array_equal(new2.layer2[[0, 2]], model.layer2[[0, 2]])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), k=st.integers(1, 3), l=st.integers(1, 3),
       eta1=st.floats(0, 2), eta2=st.floats(0, 2))
def test_each_update_is_monotone(seed, k, l, eta1, eta2):
    rng = np.random.default_rng(seed)
    pm, model, state = random_instance(rng, 4, 8, k, l)
    cfg = TrainConfig(eta1=eta1, eta2=eta2, num_clusters1=k, num_clusters2=l, iterations=1)

    def f(m, s):
        return objective_p0(pm, m, s, cfg)

    # layer-1 codes first: a random state is not a layer-2 optimum
    v0 = f(model, state)
    state = update_layer1_codes_clusters(pm, model, state, eta1)
    v1 = f(model, state)
    model, state = update_layer1_transforms(pm, model, state)
    v2 = f(model, state)
    state = update_layer2_codes_clusters(state, model, eta2)
    v3 = f(model, state)
    model = update_layer2_transforms(state, model)
    v4 = f(model, state)
    vals = [v0, v1, v2, v3, v4]
    for a, b in zip(vals, vals[1:]):
        assert b <= a + 1e-9 * abs(a)
    assert model.orthonormality_error() <= 1e-10


def small_images_patches(rng, n_img=2, size=16, b=4):
    from mcst2ct.phantoms import random_ellipse_phantom
    geom = PatchGeometry(size, size, patch_side=b)
    data = np.hstack([extract_patches(random_ellipse_phantom(size, rng), geom).data
                      for _ in range(n_img)])
    return PatchMatrix(data, _FlatGeometry(b * b, data.shape[1]))


def test_training_trace_monotone_and_orthonormal(rng):
    pm = small_images_patches(rng)
    cfg = TrainConfig(eta1=60, eta2=30, num_clusters1=3, num_clusters2=2, iterations=30, seed=3)
    res = train_mcst2(pm, cfg)
    assert len(res.trace) == 31
    t = np.array(res.trace)
    assert np.all(t[1:] <= t[:-1] + 1e-9 * np.abs(t[:-1]))
    assert res.model.orthonormality_error() <= 1e-10
    assert objective_p0(pm, res.model, res.state, cfg) == pytest.approx(t[-1], rel=1e-12)


def test_training_rejects_too_few_patches(rng):
    pm = PatchMatrix(rng.standard_normal((4, 3)), _FlatGeometry(4, 3))
    with pytest.raises(ValueError):
        train_mcst2(pm, TrainConfig(num_clusters1=5, num_clusters2=2, iterations=1))


def test_permutation_equivariance(rng):
    # generic data with a small layer-2 threshold keeps every Procrustes matrix
    # full rank, so the transform updates are unique
    pm = PatchMatrix(100 * rng.standard_normal((9, 144)), _FlatGeometry(9, 144))
    cfg = TrainConfig(eta1=40, eta2=2, num_clusters1=3, num_clusters2=2, iterations=8, seed=1)
    model, state = initialize(pm, cfg)
    perm = rng.permutation(pm.num_patches)
    pstate = CodingState(state.z1[:, perm], state.z2[:, perm], state.labels1[perm],
                         state.labels2[perm], state.r2[:, perm])
    ppm = PatchMatrix(pm.data[:, perm], pm.geometry)
    a = train_mcst2(pm, cfg, init=(model, state))
    b = train_mcst2(ppm, cfg, init=(model, pstate))
    np.testing.assert_allclose(a.trace, b.trace, rtol=1e-9)
    np.testing.assert_array_equal(a.state.labels1[perm], b.state.labels1)
    np.testing.assert_array_equal(a.state.labels2[perm], b.state.labels2)
    np.testing.assert_allclose(a.state.z1[:, perm], b.state.z1, atol=1e-8)


def test_cluster_relabeling_invariance(rng):
    pm, model, state = random_instance(rng, 4, 8, 3, 2)
    cfg = TrainConfig(eta1=0.5, eta2=0.3, num_clusters1=3, num_clusters2=2, iterations=1)
    perm = np.array([2, 0, 1])
    inv = np.argsort(perm)
    m2 = Mcst2Model(model.layer1[perm], model.layer2)
    s2 = CodingState(state.z1, state.z2, inv[state.labels1], state.labels2, state.r2)
    assert objective_p0(pm, m2, s2, cfg) == pytest.approx(objective_p0(pm, model, state, cfg), rel=1e-13)


def test_model_roundtrip(tmp_path, rng):
    model = Mcst2Model(np.stack([random_orthonormal(rng, 4) for _ in range(3)]),
                       np.stack([random_orthonormal(rng, 4) for _ in range(2)]))
    path = tmp_path / "m.mcst2"
    save_model(path, model, TrainConfig(iterations=3))
    raw = path.read_bytes()
    assert raw[:5] == b"MCST2"
    assert len(raw) == 5 + 16 + 5 * 16 * 8
    back = load_model(path)
    np.testing.assert_array_equal(back.layer1, model.layer1)
    np.testing.assert_array_equal(back.layer2, model.layer2)
    # layer-1 block starts right after the 21-byte header
    np.testing.assert_array_equal(np.frombuffer(raw[21:21 + 128], "<f8"), model.layer1[0].ravel())


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.mcst2"
    path.write_bytes(b"XXXXX" + b"\0" * 16)
    with pytest.raises(ValueError):
        load_model(path)
