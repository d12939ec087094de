"""Experiment configuration: one TOML file with train / simulate /
reconstruct / evaluate sections and a top-level ``output_dir``.

Unknown sections or keys are rejected. Every field has a default, so an empty
file is a valid desk-scale configuration.
"""

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


# (beta, gamma1, gamma2) presets for the MCST2 reconstruction. The published
# values assume its own image and projector scaling; "desk" is tuned for the
# modified-HU units and default geometry of this package.
RECON_PRESETS = {
    "xcat": {"beta": 1.5e5, "gamma1": 20.0, "gamma2": 5.0},
    "mayo": {"beta": 4.5e4, "gamma1": 25.0, "gamma2": 5.0},
    "desk": {"beta": 10**-4.5, "gamma1": 30.0, "gamma2": 10.0},
}
EP_PRESETS = {
    "xcat": {"ep_beta": 2**15.5},
    "desk": {"ep_beta": 10**-3.25},
}
METHODS = ("fbp", "ep", "mcst2", "mrst2")


@dataclass
class TrainSection:
    images: list = field(default_factory=lambda: ["builtin:phantoms"])
    image_size: int = 128
    patch_side: int = 8
    stride: int = 1
    boundary: str = "wrap"
    eta1: float = 125.0
    eta2: float = 70.0
    num_clusters1: int = 5
    num_clusters2: int = 2
    iterations: int = 1000
    seed: int = 0


@dataclass
class SimulateSection:
    truth: str = "builtin:shepp_logan"
    image_size: int = 128
    preset: str = "desk"
    geometry: dict = field(default_factory=dict)
    incident_intensity: float = 1e4
    gaussian_std: float = 5.0
    count_floor: float = 0.1
    noiseless: bool = False
    seed: int = 0


@dataclass
class ReconstructSection:
    method: str = "fbp"
    model: str = ""
    preset: str = "desk"
    beta: float = None
    gamma1: float = None
    gamma2: float = None
    outer_iterations: int = 200
    inner_iterations: int = 5
    init: str = "fbp"
    init_image: str = ""
    patch_stride: int = 1
    fbp_window: str = "hann"
    ep_preset: str = "desk"
    ep_beta: float = None
    ep_delta: float = 10.0
    ep_iterations: int = 750
    ep_potential: str = "hyperbola"

    def resolved(self):
        """Copy with preset values filled in wherever a key was not given."""
        out = {}
        for table, key, names in ((RECON_PRESETS, self.preset, ("beta", "gamma1", "gamma2")),
                                  (EP_PRESETS, self.ep_preset, ("ep_beta",))):
            if key not in table:
                raise ConfigError(f"unknown preset {key!r}; choose from {sorted(table)}")
            for name in names:
                if getattr(self, name) is None:
                    out[name] = float(table[key][name])
        return replace(self, **out)


@dataclass
class EvaluateSection:
    reference: str = ""
    methods: list = field(default_factory=lambda: ["fbp", "ep", "mcst2"])
    images: dict = field(default_factory=dict)
    roi_radius: float = None
    dynamic_range: float = None
    display_window: list = field(default_factory=lambda: [800.0, 1200.0])


@dataclass
class ExperimentConfig:
    output_dir: str = "out"
    train: TrainSection = field(default_factory=TrainSection)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    reconstruct: ReconstructSection = field(default_factory=ReconstructSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)

    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def path(self, value):
        """Resolve a config-relative path."""
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def out(self):
        return self.path(self.output_dir)


_SECTIONS = {"train": TrainSection, "simulate": SimulateSection,
             "reconstruct": ReconstructSection, "evaluate": EvaluateSection}


def _coerce(section, name, want, value):
    where = f"{section}.{name}"
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if want is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false")
        return value
    if want is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    if want is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be an array")
        return value
    if not isinstance(value, dict):
        raise ConfigError(f"{where} must be a table")
    return value


def _section(name, cls, table):
    if not isinstance(table, dict):
        raise ConfigError(f"[{name}] must be a table")
    types = {f.name: f.type for f in fields(cls)}
    unknown = sorted(set(table) - set(types))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    return cls(**{k: _coerce(name, k, types[k], v) for k, v in table.items()})


def parse_config(data, base_dir=Path(".")):
    unknown = sorted(set(data) - set(_SECTIONS) - {"output_dir"})
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kwargs = {name: _section(name, cls, data.get(name, {})) for name, cls in _SECTIONS.items()}
    if "output_dir" in data:
        kwargs["output_dir"] = _coerce("", "output_dir", str, data["output_dir"])
    cfg = ExperimentConfig(base_dir=Path(base_dir), **kwargs)
    validate(cfg)
    return cfg


def load_config(path=None):
    if path is None:
        return parse_config({})
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data, path.parent)


def validate(cfg):
    r = cfg.reconstruct
    if r.method not in METHODS:
        raise ConfigError(f"reconstruct.method must be one of {METHODS}, got {r.method!r}")
    r.resolved()
    if cfg.train.boundary not in ("wrap", "trim"):
        raise ConfigError("train.boundary must be 'wrap' or 'trim'")
    if not cfg.train.images:
        raise ConfigError("train.images must list at least one image")
    for m in cfg.evaluate.methods:
        if m not in METHODS:
            raise ConfigError(f"evaluate.methods: unknown method {m!r}")
    if len(cfg.evaluate.display_window) != 2:
        raise ConfigError("evaluate.display_window must be [low, high]")


def with_overrides(cfg, seed=None, out=None):
    """Apply the ``--seed`` and ``--out`` command-line overrides."""
    if seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=seed),
                      simulate=replace(cfg.simulate, seed=seed))
    if out is not None:
        cfg = replace(cfg, output_dir=str(Path(out).resolve()))
    return cfg
