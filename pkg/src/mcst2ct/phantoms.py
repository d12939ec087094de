"""Ellipse phantoms in modified Hounsfield units (air 0, water 1000).

Rasterization averages a ``supersample x supersample`` grid of point samples
per pixel, so edges carry partial-volume values.
"""

import numpy as np

# (x0, y0, a, b, phi_deg, additive value); geometry of the classic head
# phantom on [-1, 1]^2, contrasts rescaled to CT-like tissue differences
SHEPP_LOGAN_CT = (
    (0.0, 0.0, 0.69, 0.92, 0.0, 1800.0),
    (0.0, -0.0184, 0.6624, 0.874, 0.0, -760.0),
    (0.22, 0.0, 0.11, 0.31, -18.0, -40.0),
    (-0.22, 0.0, 0.16, 0.41, 18.0, -40.0),
    (0.0, 0.35, 0.21, 0.25, 0.0, 40.0),
    (0.0, 0.1, 0.046, 0.046, 0.0, 60.0),
    (0.0, -0.1, 0.046, 0.046, 0.0, 60.0),
    (-0.08, -0.605, 0.046, 0.023, 0.0, 60.0),
    (0.0, -0.605, 0.023, 0.023, 0.0, 60.0),
    (0.06, -0.605, 0.023, 0.046, 0.0, 60.0),
)


def rasterize_ellipses(ellipses, n, supersample=4):
    """Sum of uniform ellipses on an ``n x n`` grid covering [-1, 1]^2.

    Row 0 is the top of the image (y = +1).
    """
    s = supersample
    offs = (np.arange(s) + 0.5) / s
    coords = -1.0 + 2.0 * (np.arange(n)[:, None] + offs[None, :]).ravel() / n
    x = coords[None, :]
    y = coords[::-1][:, None]
    img = np.zeros((n * s, n * s))
    for x0, y0, a, b, phi, val in ellipses:
        t = np.deg2rad(phi)
        c, sn = np.cos(t), np.sin(t)
        xr = (x - x0) * c + (y - y0) * sn
        yr = -(x - x0) * sn + (y - y0) * c
        img += val * ((xr / a) ** 2 + (yr / b) ** 2 <= 1.0)
    return img.reshape(n, s, n, s).mean(axis=(1, 3))


def shepp_logan(n, supersample=4):
    return rasterize_ellipses(SHEPP_LOGAN_CT, n, supersample)


def disk(n, radius, supersample=8):
    """Unit-valued disk of ``radius`` (in [-1, 1] units) centered in the grid."""
    return rasterize_ellipses(((0.0, 0.0, radius, radius, 0.0, 1.0),), n, supersample)


def random_ellipse_phantom(n, rng, num_features=None, supersample=4):
    """Water body with a bone rim and randomly placed soft-tissue ellipses."""
    a = rng.uniform(0.72, 0.9)
    b = rng.uniform(0.6, 0.85)
    phi = rng.uniform(-20, 20)
    ellipses = [(0.0, 0.0, a, b, phi, 1000.0 + rng.uniform(-20, 40))]
    if rng.random() < 0.5:
        rim = rng.uniform(0.03, 0.06)
        ellipses.insert(0, (0.0, 0.0, a + rim, b + rim, phi, rng.uniform(400, 900)))
        ellipses[1] = ellipses[1][:5] + (ellipses[1][5] - ellipses[0][5],)
    count = rng.integers(6, 12) if num_features is None else num_features
    for _ in range(count):
        r = rng.uniform(0.0, 0.55)
        t = rng.uniform(0, 2 * np.pi)
        ellipses.append((r * a * np.cos(t), r * b * np.sin(t),
                         rng.uniform(0.03, 0.22), rng.uniform(0.03, 0.22),
                         rng.uniform(0, 180), rng.choice([-1, 1]) * rng.uniform(20, 150)))
    return rasterize_ellipses(ellipses, n, supersample)


def phantom_set(n, count=5, seed=0):
    """Seeded list of training phantoms."""
    rng = np.random.default_rng(seed)
    return [random_ellipse_phantom(n, rng) for _ in range(count)]
