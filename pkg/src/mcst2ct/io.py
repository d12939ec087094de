"""File formats: raw little-endian rasters with JSON headers, 16-bit PGM, CSV.

A raster ``name.raw`` holds the array in C order as ``<f8`` (or ``<i8`` for
label vectors); ``name.raw.json`` records dtype, shape, units and any extra
metadata such as the CT geometry. All text outputs are written with sorted
keys and full-precision floats so repeated runs are byte-identical.
"""

import csv
import hashlib
import json
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np

_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


def header_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def _jsonable(obj):
    if is_dataclass(obj):
        return _jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dump_json(path, obj):
    text = json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False)
    Path(path).write_text(text + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())


def write_raster(path, array, units="", **meta):
    """Write ``array`` as raw little-endian data plus a JSON header."""
    array = np.asarray(array)
    dtype = "<i8" if np.issubdtype(array.dtype, np.integer) else "<f8"
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(array, dtype=_DTYPES[dtype]).tobytes())
    head = {"dtype": dtype, "shape": list(array.shape), "units": units}
    head.update(meta)
    dump_json(header_path(path), head)
    return path


def read_raster(path):
    """Return ``(array, header)`` for a raster written by :func:`write_raster`."""
    path = Path(path)
    head = load_json(header_path(path))
    dtype = _DTYPES.get(head.get("dtype"))
    if dtype is None:
        raise ValueError(f"{path}: unsupported dtype {head.get('dtype')!r}")
    shape = tuple(int(s) for s in head["shape"])
    raw = path.read_bytes()
    if len(raw) != dtype.itemsize * int(np.prod(shape, dtype=np.int64)):
        raise ValueError(f"{path}: size {len(raw)} does not match header shape {shape}")
    return np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("=")), head


def write_pgm(path, image, window=None):
    """16-bit binary PGM; ``window=(lo, hi)`` maps linearly onto 0..65535.

    Without a window the values are rounded and clipped to 0..65535 as is.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("PGM images must be 2-D")
    if window is not None:
        lo, hi = window
        img = (img - lo) / (hi - lo) * 65535.0
    levels = np.clip(np.rint(img), 0, 65535).astype(">u2")
    h, w = levels.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n65535\n".encode() + levels.tobytes())
    return Path(path)


def _pgm_tokens(data):
    """Parse the four header fields; returns (fields, offset of pixel data)."""
    fields, i = [], 0
    while len(fields) < 4:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        if j == i:
            raise ValueError("truncated PGM header")
        fields.append(data[i:j])
        i = j
    return fields, i + 1


def read_pgm(path):
    """Read a binary (P5) PGM with 8- or 16-bit samples as float64 levels."""
    data = Path(path).read_bytes()
    fields, off = _pgm_tokens(data)
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(f) for f in fields[1:])
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: bad maxval {maxval}")
    dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    count = w * h
    if len(data) - off < count * dtype.itemsize:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=dtype, count=count, offset=off).reshape(h, w).astype(np.float64)


def read_image(path):
    """Load a ground-truth or training image from ``.pgm`` or raw+header."""
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_pgm(path)
    img, _ = read_raster(path)
    if img.ndim != 2:
        raise ValueError(f"{path}: expected a 2-D image, got shape {img.shape}")
    return img.astype(np.float64)


def fmt(v):
    """Shortest round-tripping text for a float (or int)."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        for row in rows:
            out.writerow([fmt(v) for v in row])
    return Path(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_trace(path, trace, phases=None):
    """Objective trace as ``index,phase,objective`` rows."""
    phases = phases or [""] * len(trace)
    return write_csv(path, ["index", "phase", "objective"],
                     [(i, ph, float(v)) for i, (ph, v) in enumerate(zip(phases, trace, strict=True))])


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
