"""The experiment harness behind the ``mcst2ct`` command-line verbs.

Every command reads an :class:`~mcst2ct.config.ExperimentConfig`, writes into
``output_dir`` and returns the list of files it produced. Output layout::

    model.bin, model.bin.json, train_trace.csv         train
    truth.raw, sinogram.raw, weights.raw (+ .json)     simulate
    recon_<method>.raw, recon_<method>_manifest.json,
    recon_<method>_trace.csv, recon_<method>_codes/    reconstruct
    metrics.csv                                        evaluate
    report/                                            report
"""

import os
from dataclasses import asdict

import numpy as np

from . import io
from .config import ConfigError
from .ct import (
    CtGeometry,
    CtProblem,
    NoiseModel,
    fbp_reconstruct,
    preset,
    simulate_measurements,
)
from .kernels import BACKEND
from .metrics import RoiMask, rmse, ssim
from .model import (
    CodingState,
    TrainConfig,
    layer1_residual,
    load_model,
    load_model_meta,
    save_model,
    train_mcst2,
)
from .patches import PatchGeometry, extract_patches, patch_set
from .phantoms import phantom_set, shepp_logan
from .recon import (
    EpConfig,
    ReconConfig,
    ReconState,
    objective_p1,
    reconstruct_pwls_ep,
    reconstruct_pwls_mcst2,
)

BUILTIN_PHANTOM_SEED = 0


def _version():
    from importlib.metadata import PackageNotFoundError, version
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "unknown"


def _provenance():
    return {"package_version": _version(), "projector_backend": BACKEND}


def load_images(spec_list, size, cfg):
    """Resolve ``builtin:phantoms``, ``builtin:shepp_logan`` and file paths."""
    images = []
    for item in spec_list:
        if item == "builtin:phantoms":
            images.extend(phantom_set(size, 5, seed=BUILTIN_PHANTOM_SEED))
        elif item == "builtin:shepp_logan":
            images.append(shepp_logan(size))
        elif item.startswith("builtin:"):
            raise ConfigError(f"unknown built-in image {item!r}")
        else:
            path = cfg.path(item)
            if not path.exists():
                raise FileNotFoundError(f"input image not found: {path}")
            images.append(io.read_image(path))
    return images


def _outdir(cfg):
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(cfg):
    t = cfg.train
    images = load_images(t.images, t.image_size, cfg)
    geoms = [PatchGeometry(im.shape[0], im.shape[1], t.patch_side, t.stride, t.boundary)
             for im in images]
    patches = patch_set(images, geoms)
    tc = TrainConfig(t.eta1, t.eta2, t.num_clusters1, t.num_clusters2, t.iterations, t.seed)
    res = train_mcst2(patches, tc)
    out = _outdir(cfg)
    model_path = out / "model.bin"
    extra = {"train_section": asdict(t), "num_patches": patches.num_patches,
             "final_objective": res.trace[-1], **_provenance()}
    save_model(model_path, res.model, tc, extra=extra)
    trace_path = io.write_trace(out / "train_trace.csv", res.trace)
    return [model_path, io.header_path(model_path), trace_path]


def simulate_geometry(cfg, shape):
    s = cfg.simulate
    try:
        return preset(s.preset, image_shape=tuple(shape), **s.geometry)
    except TypeError as exc:
        raise ConfigError(f"simulate.geometry: {exc}") from exc


def cmd_simulate(cfg):
    s = cfg.simulate
    truth = load_images([s.truth], s.image_size, cfg)
    if len(truth) != 1:
        raise ConfigError("simulate.truth must name exactly one image")
    truth = truth[0]
    geom = simulate_geometry(cfg, truth.shape)
    noise = NoiseModel(s.incident_intensity, s.gaussian_std, s.count_floor)
    prob = simulate_measurements(truth, geom, noise, seed=s.seed, noiseless=s.noiseless)
    out = _outdir(cfg)
    meta = {"geometry": asdict(geom), "noise": asdict(noise), "seed": s.seed,
            "noiseless": s.noiseless, **_provenance()}
    written = [
        io.write_raster(out / "truth.raw", truth, units="modified HU (air 0, water 1000)"),
        io.write_raster(out / "sinogram.raw", prob.sinogram.reshape(geom.sino_shape),
                        units="line integral (views x detectors)", **meta),
        io.write_raster(out / "weights.raw", prob.weights.reshape(geom.sino_shape),
                        units="inverse variance", **meta),
    ]
    return written + [io.header_path(p) for p in written]


def load_problem(out):
    sino, head = io.read_raster(out / "sinogram.raw")
    weights, _ = io.read_raster(out / "weights.raw")
    g = dict(head["geometry"])
    g["image_shape"] = tuple(g["image_shape"])
    return CtProblem(sino.ravel(), weights.ravel(), CtGeometry(**g))


def _recon_geometry(model, shape, stride):
    b = int(round(np.sqrt(model.patch_dim)))
    return PatchGeometry(shape[0], shape[1], b, stride, "wrap")


def _recon_config(r):
    return ReconConfig(r.beta, r.gamma1, r.gamma2, r.outer_iterations, r.inner_iterations, r.init)


def _write_codes(folder, coding):
    folder.mkdir(exist_ok=True)
    paths = [io.write_raster(folder / "z1.raw", coding.z1, units="layer-1 codes (p x patches)"),
             io.write_raster(folder / "z2.raw", coding.z2, units="layer-2 codes (p x patches)"),
             io.write_raster(folder / "labels1.raw", coding.labels1, units="0-based cluster"),
             io.write_raster(folder / "labels2.raw", coding.labels2, units="0-based cluster")]
    return paths + [io.header_path(p) for p in paths]


def load_codes(folder, image, model, pgeom):
    z1, _ = io.read_raster(folder / "z1.raw")
    z2, _ = io.read_raster(folder / "z2.raw")
    l1, _ = io.read_raster(folder / "labels1.raw")
    l2, _ = io.read_raster(folder / "labels2.raw")
    r1 = extract_patches(image, pgeom).data
    return CodingState(z1, z2, l1, l2, layer1_residual(r1, model, l1, z1))


def final_objective_from_files(cfg, method):
    """Recompute the PWLS objective from saved image, codes and sinogram."""
    out = cfg.out
    manifest = io.load_json(out / f"recon_{method}_manifest.json")
    image, _ = io.read_raster(out / f"recon_{method}.raw")
    prob = load_problem(out)
    model = load_model(out / manifest["model"])
    pgeom = PatchGeometry(**manifest["patch_geometry"])
    coding = load_codes(out / f"recon_{method}_codes", image, model, pgeom)
    rc = ReconConfig(**manifest["recon_config"])
    return objective_p1(ReconState(image, coding), prob, model, pgeom, rc)


def cmd_reconstruct(cfg):
    r = cfg.reconstruct.resolved()
    out = _outdir(cfg)
    prob = load_problem(out)
    method = r.method
    init_image = None
    if r.init == "provided":
        if not r.init_image:
            raise ConfigError("reconstruct.init = 'provided' needs reconstruct.init_image")
        init_image = io.read_image(cfg.path(r.init_image))
    manifest = {"method": method, "reconstruct_section": asdict(r),
                "inputs": {name: io.sha256(out / name) for name in ("sinogram.raw", "weights.raw")},
                **_provenance()}
    written = []
    trace, phases = None, None
    if method == "fbp":
        image = fbp_reconstruct(prob, window=r.fbp_window)
    elif method == "ep":
        ec = EpConfig(r.ep_beta, r.ep_delta, r.ep_iterations, r.ep_potential, r.init)
        image, trace = reconstruct_pwls_ep(prob, ec, image=init_image)
        phases = ["init"] + ["image"] * (len(trace) - 1)
        manifest["ep_config"] = asdict(ec)
    else:
        model_path = cfg.path(r.model) if r.model else out / "model.bin"
        if not model_path.exists():
            raise FileNotFoundError(f"model file not found: {model_path}")
        model = load_model(model_path)
        if method == "mrst2" and (model.num_clusters1 != 1 or model.num_clusters2 != 1):
            raise ConfigError("method 'mrst2' needs a model trained with K = L = 1")
        pgeom = _recon_geometry(model, prob.geometry.image_shape, r.patch_stride)
        rc = _recon_config(r)
        state = reconstruct_pwls_mcst2(prob, model, pgeom, rc, image=init_image)
        image, trace = state.image, state.trace
        phases = ["init"] + ["image", "coding"] * rc.outer_iterations
        written += _write_codes(out / f"recon_{method}_codes", state.coding)
        manifest.update(model=os.path.relpath(model_path.resolve(), out.resolve()), model_sha256=io.sha256(model_path),
                        model_meta=load_model_meta(model_path),
                        patch_geometry={"image_height": pgeom.image_height,
                                        "image_width": pgeom.image_width,
                                        "patch_side": pgeom.patch_side, "stride": pgeom.stride,
                                        "boundary": pgeom.boundary},
                        recon_config=asdict(rc))
    image_path = io.write_raster(out / f"recon_{method}.raw", image,
                                 units="modified HU (air 0, water 1000)", method=method)
    written += [image_path, io.header_path(image_path)]
    if trace is not None:
        manifest["final_objective"] = float(trace[-1])
        manifest["iterations"] = len(trace) - 1
        written.append(io.write_trace(out / f"recon_{method}_trace.csv", trace, phases))
    manifest["image_sha256"] = io.sha256(image_path)
    man_path = out / f"recon_{method}_manifest.json"
    io.dump_json(man_path, manifest)
    return written + [man_path]


def _reference(cfg):
    e = cfg.evaluate
    if not e.reference:
        path = cfg.out / "truth.raw"
        if not path.exists():
            raise FileNotFoundError(f"reference image not found: {path} (run simulate first)")
        return io.read_raster(path)[0]
    return load_images([e.reference], cfg.simulate.image_size, cfg)[0]


def _evaluated_images(cfg):
    out = cfg.out
    items = []
    for method in cfg.evaluate.methods:
        path = out / f"recon_{method}.raw"
        if not path.exists():
            raise FileNotFoundError(f"reconstruction not found: {path}")
        items.append((method, io.read_raster(path)[0]))
    for label, p in sorted(cfg.evaluate.images.items()):
        items.append((label, io.read_image(cfg.path(p))))
    return items


def metric_rows(cfg):
    ref = _reference(cfg)
    e = cfg.evaluate
    roi = RoiMask.centered(ref.shape, e.roi_radius)
    dr = e.dynamic_range if e.dynamic_range is not None else float(ref.max() - ref.min())
    rows = []
    for label, img in _evaluated_images(cfg):
        if img.shape != ref.shape:
            raise ValueError(f"{label}: image shape {img.shape} != reference {ref.shape}")
        rows.append((label, rmse(img, ref, roi), ssim(img, ref, roi, dr)))
    return ref, rows


METRIC_COLUMNS = ["method", "rmse", "ssim"]


def cmd_evaluate(cfg):
    _, rows = metric_rows(cfg)
    out = _outdir(cfg)
    return [io.write_csv(out / "metrics.csv", METRIC_COLUMNS, rows)]


def _tile(images, cols):
    h, w = images[0].shape
    rows = -(-len(images) // cols)
    grid = np.zeros((rows * h, cols * w))
    for n, im in enumerate(images):
        r, c = divmod(n, cols)
        grid[r * h:(r + 1) * h, c * w:(c + 1) * w] = im
    return grid


def _transform_grid(bank):
    """Rows of every transform as ``b x b`` tiles, one transform per block."""
    kk, p, _ = bank.shape
    b = int(round(np.sqrt(p)))
    blocks = []
    for w in bank:
        tiles = [row.reshape(b, b) for row in w]
        blocks.append(_tile([np.pad(t, ((0, 1), (0, 1))) for t in tiles], b))
    return _tile(blocks, kk)


def cmd_report(cfg):
    out = _outdir(cfg)
    rep = out / "report"
    rep.mkdir(exist_ok=True)
    written = []
    trace_rows = []
    train_trace = out / "train_trace.csv"
    if train_trace.exists():
        trace_rows += [("train", row["index"], row["phase"], row["objective"])
                       for row in io.read_csv(train_trace)]
    for method in cfg.evaluate.methods:
        path = out / f"recon_{method}_trace.csv"
        if path.exists():
            trace_rows += [(method, row["index"], row["phase"], row["objective"])
                           for row in io.read_csv(path)]
    written.append(io.write_csv(rep / "traces.csv", ["source", "index", "phase", "objective"],
                                trace_rows))
    ref, rows = metric_rows(cfg)
    written.append(io.write_csv(rep / "metrics.csv", METRIC_COLUMNS, rows))
    lo, hi = cfg.evaluate.display_window
    images = [ref] + [img for _, img in _evaluated_images(cfg)]
    labels = [{"label": "reference", "tile": 0, "rmse": 0.0, "ssim": 1.0}]
    labels += [{"label": l, "tile": i + 1, "rmse": e, "ssim": s} for i, (l, e, s) in enumerate(rows)]
    for item in labels:
        p = rep / f"{item['label']}.pgm"
        io.write_pgm(p, images[item["tile"]], window=(lo, hi))
        written.append(p)
    grid = rep / "grid.pgm"
    io.write_pgm(grid, _tile(images, len(images)), window=(lo, hi))
    side = rep / "grid.pgm.json"
    io.dump_json(side, {"display_window": [lo, hi], "tile_shape": list(ref.shape),
                        "columns": len(images), "tiles": labels})
    written += [grid, side]
    model_path = out / "model.bin"
    if model_path.exists():
        model = load_model(model_path)
        for name, bank in (("layer1", model.layer1), ("layer2", model.layer2)):
            g = _transform_grid(bank)
            m = np.abs(g).max() or 1.0
            p = rep / f"transforms_{name}.pgm"
            written.append(io.write_pgm(p, g, window=(-m, m)))
    return written


COMMANDS = {"train": cmd_train, "simulate": cmd_simulate, "reconstruct": cmd_reconstruct,
            "evaluate": cmd_evaluate, "report": cmd_report}
