"""JSON experiment configuration (schema version 1).

Example::

    {
      "schema_version": 1,
      "seed": 0,
      "geometry": {"n_per_side": 25, "sensors_per_layer": 20, "n_coils": 60},
      "phantom": "tumor",
      "noise": {"snr_db": 80},
      "sensing": {"scheme": "deterministic", "m": 20, "seed": null,
                  "noise_placement": "full"},
      "solver": {"method": "douglas_rachford", "mu": 4e-13, "alpha": 1e-14,
                 "s": 1.0, "n_max": 1.0, "n_iter": 50, "inner_iter": 30,
                 "beta_active": true, "tolerance": 0.0, "tikhonov_mu": 1e-12},
      "sweep": {"m_values": [10, 20, 40], "schemes": ["deterministic"],
                "methods": ["douglas_rachford"], "mu_grid": [1e-16, 1e-14, 1e-12]},
      "output_dir": "runs/tumor",
      "cache_dir": null
    }

``sensing.m = null`` (or an absent ``sensing`` section) means full
sequential data. ``noise.snr_db`` may be ``"inf"``. Per-stage seeds are
derived from the master ``seed`` by fixed offsets (see ``SEED_OFFSETS``)
unless given explicitly.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .model import GeometryConfig, GeometryError
from .phantom import KINDS
from .sensing import SCHEMES
from .solvers import SolverConfig

SCHEMA_VERSION = 1
METHODS = ("tikhonov", "douglas_rachford", "forward_backward")
NOISE_PLACEMENTS = ("full", "compressed")
SEED_OFFSETS = {"noise": 1, "activation": 2, "compressed_noise": 3}


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class SensingConfig:
    scheme: str = "deterministic"
    m: int | None = None
    seed: int | None = None
    noise_placement: str = "full"


@dataclass(frozen=True)
class SolverSection:
    method: str = "douglas_rachford"
    params: SolverConfig = field(default_factory=SolverConfig)
    tikhonov_mu: float = 1e-12


@dataclass(frozen=True)
class SweepConfig:
    m_values: tuple[int, ...] = ()
    schemes: tuple[str, ...] = ()
    methods: tuple[str, ...] = ()
    mu_grid: tuple[float, ...] = ()


@dataclass(frozen=True)
class ExperimentConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    phantom: str = "tumor"
    snr_db: float = 80.0
    sensing: SensingConfig = field(default_factory=SensingConfig)
    solver: SolverSection = field(default_factory=SolverSection)
    sweep: SweepConfig | None = None
    output_dir: str = "runs/default"
    cache_dir: str | None = None
    seed: int = 0

    def stage_seed(self, stage: str) -> int:
        if stage == "activation" and self.sensing.seed is not None:
            return self.sensing.seed
        return self.seed + SEED_OFFSETS[stage]

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=int(seed))

    def with_output(self, out: str) -> "ExperimentConfig":
        return replace(self, output_dir=str(out))

    def to_dict(self) -> dict:
        """Canonical JSON-ready form; parsing it back gives an equal config."""
        sweep = None
        if self.sweep is not None:
            sweep = {k: list(v) for k, v in asdict(self.sweep).items()}
        return {
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "geometry": self.geometry.to_dict(),
            "phantom": self.phantom,
            "noise": {"snr_db": "inf" if math.isinf(self.snr_db) else self.snr_db},
            "sensing": asdict(self.sensing),
            "solver": {"method": self.solver.method, "tikhonov_mu": self.solver.tikhonov_mu,
                       **self.solver.params.to_dict()},
            "sweep": sweep,
            "output_dir": self.output_dir,
            "cache_dir": self.cache_dir,
        }


def _expect(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def _check_keys(section: dict, allowed, where: str):
    _expect(isinstance(section, dict), f"{where} must be an object")
    unknown = set(section) - set(allowed)
    _expect(not unknown, f"unknown keys in {where}: {sorted(unknown)}")


def _snr(value) -> float:
    if value is None or (isinstance(value, str) and value.lower() in ("inf", "infinity")):
        return math.inf
    try:
        snr = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"noise.snr_db must be a number or 'inf', got {value!r}") from None
    _expect(snr > 0, "noise.snr_db must be positive")
    return snr


def parse_config(raw: dict) -> ExperimentConfig:
    _check_keys(raw, ("schema_version", "seed", "geometry", "phantom", "noise", "sensing",
                      "solver", "sweep", "output_dir", "cache_dir"), "config")
    version = raw.get("schema_version", SCHEMA_VERSION)
    _expect(version == SCHEMA_VERSION, f"unsupported schema_version {version}")

    try:
        geometry = GeometryConfig.from_dict(raw.get("geometry") or {})
    except (GeometryError, TypeError) as exc:
        raise ConfigError(f"geometry: {exc}") from None

    phantom = raw.get("phantom", "tumor")
    _expect(phantom in KINDS, f"phantom must be one of {KINDS}, got {phantom!r}")

    noise = raw.get("noise") or {}
    _check_keys(noise, ("snr_db",), "noise")
    snr = _snr(noise.get("snr_db", 80.0))

    sens = raw.get("sensing") or {}
    _check_keys(sens, ("scheme", "m", "seed", "noise_placement"), "sensing")
    sensing = SensingConfig(**{**asdict(SensingConfig()), **sens})
    _expect(sensing.scheme in SCHEMES, f"sensing.scheme must be one of {SCHEMES}")
    _expect(sensing.noise_placement in NOISE_PLACEMENTS,
            f"sensing.noise_placement must be one of {NOISE_PLACEMENTS}")
    if sensing.m is not None:
        _expect(isinstance(sensing.m, int) and 1 <= sensing.m <= geometry.n_coils,
                f"sensing.m must be an integer in [1, {geometry.n_coils}]")

    sol = dict(raw.get("solver") or {})
    param_keys = tuple(SolverConfig.__dataclass_fields__)
    _check_keys(sol, ("method", "tikhonov_mu") + param_keys, "solver")
    method = sol.pop("method", "douglas_rachford")
    _expect(method in METHODS, f"solver.method must be one of {METHODS}, got {method!r}")
    tik_mu = float(sol.pop("tikhonov_mu", 1e-12))
    _expect(tik_mu > 0, "solver.tikhonov_mu must be positive")
    try:
        params = SolverConfig(**sol)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"solver: {exc}") from None

    sweep = None
    if raw.get("sweep") is not None:
        sw = raw["sweep"]
        _check_keys(sw, ("m_values", "schemes", "methods", "mu_grid"), "sweep")
        for key in sw:
            _expect(isinstance(sw[key], list) and sw[key], f"sweep.{key} must be a nonempty list")
        sweep = SweepConfig(
            m_values=tuple(int(m) for m in sw.get("m_values", ())),
            schemes=tuple(sw.get("schemes", ())),
            methods=tuple(sw.get("methods", ())),
            mu_grid=tuple(float(mu) for mu in sw.get("mu_grid", ())),
        )
        _expect(all(s in SCHEMES for s in sweep.schemes), f"sweep.schemes must be drawn from {SCHEMES}")
        _expect(all(m in METHODS for m in sweep.methods), f"sweep.methods must be drawn from {METHODS}")
        _expect(all(m >= 1 for m in sweep.m_values), "sweep.m_values must be positive")
        _expect(all(mu > 0 for mu in sweep.mu_grid), "sweep.mu_grid must be positive")

    seed = raw.get("seed", 0)
    _expect(isinstance(seed, int) and seed >= 0, "seed must be a nonnegative integer")
    return ExperimentConfig(
        geometry=geometry,
        phantom=phantom,
        snr_db=snr,
        sensing=sensing,
        solver=SolverSection(method, params, tik_mu),
        sweep=sweep,
        output_dir=str(raw.get("output_dir", "runs/default")),
        cache_dir=raw.get("cache_dir"),
        seed=seed,
    )


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(raw)
