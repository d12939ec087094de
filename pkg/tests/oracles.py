"""Independent reference computations used by the test-suite.

Nothing here calls the package's update routines; costs are evaluated term
by term from their defining formulas.
"""

import itertools

import numpy as np


def random_orthonormal(rng, p):
    q, r = np.linalg.qr(rng.standard_normal((p, p)))
    return q * np.sign(np.diag(r))


def supports(p):
    for mask in itertools.product([False, True], repeat=p):
        yield np.array(mask)


def l0_prox_bruteforce(v, eta):
    """argmin_z ||v - z||^2 + eta^2 ||z||_0 by enumerating supports."""
    best, best_z = np.inf, None
    for s in supports(len(v)):
        z = np.where(s, v, 0.0)
        cost = np.sum((v - z) ** 2) + eta**2 * s.sum()
        if cost < best - 1e-15:
            best, best_z = cost, z
    return best_z, best


def layer1_cost(w1, r, z, w2, z2, eta1):
    """Literal per-patch layer-1 cost with fixed layer-2 transform/code."""
    a = w1 @ r
    return (np.sum((a - z) ** 2) + eta1**2 * np.count_nonzero(z)
            + np.sum((w2 @ (a - z) - z2) ** 2))


def layer1_bruteforce(w1_bank, r, w2, z2, eta1):
    """Minimum over clusters x supports; least squares on each support."""
    p = len(r)
    best = np.inf
    for w1 in w1_bank:
        a = w1 @ r
        for s in supports(p):
            e = np.eye(p)[:, s]
            if s.any():
                lhs = np.vstack((e, w2 @ e))
                rhs = np.concatenate((a, w2 @ a - z2))
                zs = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
                z = e @ zs
            else:
                z = np.zeros(p)
            cost = (np.sum((a - z) ** 2) + eta1**2 * s.sum()
                    + np.sum((w2 @ (a - z) - z2) ** 2))
            best = min(best, cost)
    return best


def layer2_bruteforce(w2_bank, r2, eta2):
    best = np.inf
    for w2 in w2_bank:
        a = w2 @ r2
        for s in supports(len(r2)):
            z = np.where(s, a, 0.0)
            best = min(best, np.sum((a - z) ** 2) + eta2**2 * s.sum())
    return best


def p0_termwise(r1, w1_bank, w2_bank, z1, z2, labels1, labels2, eta1, eta2):
    total = 0.0
    n = r1.shape[1]
    for i in range(n):
        w1 = w1_bank[labels1[i]]
        res = w1 @ r1[:, i] - z1[:, i]
        total += np.sum(res**2) + eta1**2 * np.count_nonzero(z1[:, i])
        total += np.sum((w2_bank[labels2[i]] @ res - z2[:, i]) ** 2)
        total += eta2**2 * np.count_nonzero(z2[:, i])
    return total


def rotation_sweep(num=360):
    """360 rotations and 360 reflections sampling the 2x2 orthogonal group."""
    out = []
    for t in np.linspace(0, 2 * np.pi, num, endpoint=False):
        c, s = np.cos(t), np.sin(t)
        out.append(np.array([[c, -s], [s, c]]))
        out.append(np.array([[c, s], [s, -c]]))
    return out


def mrst2_init(r1, eta1, eta2, w1, w2):
    """Single-transform two-layer codes for fixed transforms."""
    z1 = np.where(np.abs(w1 @ r1) >= eta1 / np.sqrt(2), w1 @ r1, 0.0)
    r2 = w1 @ r1 - z1
    z2 = np.where(np.abs(w2 @ r2) >= eta2, w2 @ r2, 0.0)
    return z1, z2


def procrustes(m, fallback):
    if not m.any():
        return fallback
    u, _, vt = np.linalg.svd(m)
    return vt.T @ u.T


def mrst2_train(r1, w1, w2, z1, z2, eta1, eta2, iterations):
    """Single-transform two-layer BCD, written out without cluster logic.

    Returns the list of (w1, w2, objective) after every sweep.
    """
    out = []
    t1, t2 = eta1 / np.sqrt(2), eta2
    for _ in range(iterations):
        c = w1 @ r1 - 0.5 * (w2.T @ z2)
        z1 = c * (np.abs(c) >= t1)
        w1 = procrustes(r1 @ (z1 + 0.5 * (w2.T @ z2)).T, w1)
        r2 = w1 @ r1 - z1
        a = w2 @ r2
        z2 = a * (np.abs(a) >= t2)
        w2 = procrustes(r2 @ z2.T, w2)
        obj = (np.sum((w1 @ r1 - z1) ** 2) + eta1**2 * np.count_nonzero(z1)
               + np.sum((w2 @ r2 - z2) ** 2) + eta2**2 * np.count_nonzero(z2))
        out.append((w1, w2, obj))
    return out


def wrap_patch_rows(x, b):
    """(b*b, H*W) patch matrix of a periodic image built from shifted copies.

    Row ``r*b + c`` holds pixel (r, c) of every patch, corners in raster order.
    """
    return np.stack([np.roll(x, (-r, -c), axis=(0, 1)).ravel()
                     for r in range(b) for c in range(b)])


def wrap_patch_adjoint(cols, shape, b):
    out = np.zeros(shape)
    for r in range(b):
        for c in range(b):
            out += np.roll(cols[r * b + c].reshape(shape), (r, c), axis=(0, 1))
    return out


def mrst2_regularizer(x, w1, w2, z1, z2, b):
    """Smooth regularizer part with one transform per layer, codes fixed."""
    res = w1 @ wrap_patch_rows(x, b) - z1
    return np.sum(res**2) + np.sum((w2 @ res - z2) ** 2)


def mrst2_regularizer_grad(x, w1, w2, z1, z2, b):
    res = w1 @ wrap_patch_rows(x, b) - z1
    back = w1.T @ (res + w2.T @ (w2 @ res - z2))
    return 2 * wrap_patch_adjoint(back, x.shape, b)


def mrst2_recon(a, y, w, w1, w2, x0, beta, gamma1, gamma2, b, outer, inner):
    """Single-transform two-layer PWLS written against a dense system matrix.

    Returns the image after every image update and the codes after every
    coding step.
    """
    shape = x0.shape
    t1 = gamma1 / np.sqrt(2)

    def code(x, z2):
        c = w1 @ wrap_patch_rows(x, b)
        u = c - 0.5 * (w2.T @ z2)
        z1 = u * (np.abs(u) >= t1)
        v = w2 @ (c - z1)
        return z1, v * (np.abs(v) >= gamma2)

    x = x0.copy()
    z1, z2 = code(x, np.zeros((b * b, x.size)))
    denom = (a.T @ (w * (a @ np.ones(x.size)))).reshape(shape) + 4 * beta * b * b
    images, codes = [], []
    for _ in range(outer):
        for _ in range(inner):
            g = (a.T @ (w * (a @ x.ravel() - y))).reshape(shape)
            g = g + beta * mrst2_regularizer_grad(x, w1, w2, z1, z2, b)
            x = np.maximum(x - g / denom, 0.0)
        images.append(x.copy())
        z1, z2 = code(x, z2)
        codes.append((z1, z2))
    return images, codes
