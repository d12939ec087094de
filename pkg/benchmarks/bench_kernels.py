"""Time the compiled and pure-Python Siddon kernels on the same rays.

    python3 benchmarks/bench_kernels.py [--size 128] [--views 180] [--repeat 3]
"""

import argparse
import time

import numpy as np

from mcst2ct import _siddon_py
from mcst2ct.ct import preset, ray_endpoints

try:
    from mcst2ct import _siddon as compiled
except ImportError:
    compiled = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--views", type=int, default=180)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    geom = preset("desk", image_shape=(args.size, args.size), num_views=args.views,
                  num_detectors=int(np.ceil(args.size * 1.45)))
    rays = ray_endpoints(geom)
    n = args.size
    pix = geom.image_pixel_size
    image = np.random.default_rng(0).random(n * n)
    sino = np.random.default_rng(1).random(geom.num_rays)
    backends = [("python", _siddon_py)]
    if compiled is not None:
        backends.insert(0, ("cython", compiled))
    else:
        print("compiled extension not built; timing the fallback only")
    print(f"{geom.num_rays} rays, {n}x{n} image")
    print(f"{'backend':8s} {'matrix':>10s} {'forward':>10s} {'back':>10s}")
    results = {}
    for name, mod in backends:
        t_mat = best_of(lambda: mod.system_matrix(*rays, n, n, pix), args.repeat)
        t_fwd = best_of(lambda: mod.forward(image, *rays, n, n, pix), args.repeat)
        t_bck = best_of(lambda: mod.back(sino, *rays, n, n, pix), args.repeat)
        results[name] = (t_mat, t_fwd, t_bck)
        print(f"{name:8s} {t_mat:9.3f}s {t_fwd:9.3f}s {t_bck:9.3f}s")
    if len(results) == 2:
        speed = [p / c for p, c in zip(results["python"], results["cython"])]
        print("speed-up " + " ".join(f"{s:10.1f}x" for s in speed))


if __name__ == "__main__":
    main()
