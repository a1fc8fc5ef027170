"""Declarative experiment configuration, presets and TOML round-tripping."""

from __future__ import annotations

import copy
import dataclasses
import sys
import typing
from dataclasses import dataclass, field

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigurationError

MODELS = ("kpp", "advdiff")
INITIAL_KINDS = ("sine", "gaussian", "gp-fixture")
PRIOR_CENTERS = ("truth", "zero")
SCALES = ("full", "desk")


@dataclass
class ModelSpec:
    kind: str = "kpp"
    D: float = 0.01
    K: float = 2.0 / 3.0
    c: float = 0.0
    bc: str = "neumann"
    # empty means the default direction (diagonal in 2D)
    velocity: list[float] = field(default_factory=list)


@dataclass
class GridSpec:
    extent: list[float] = field(default_factory=lambda: [1.0])
    count: list[int] = field(default_factory=lambda: [1000])


@dataclass
class InitialSpec:
    kind: str = "sine"
    frequency: float = 4.0
    offset: float = 1.0
    center: float = 0.25
    width: float = 200.0


@dataclass
class TimeSpec:
    n_times: int = 25
    interval: float = 0.04

    @property
    def final(self) -> float:
        return self.n_times * self.interval

    def observation_times(self) -> list[float]:
        return [i * self.interval for i in range(1, self.n_times + 1)]


@dataclass
class ObservationSpec:
    n_obs: int = 200
    gamma: float = 0.01
    gamma_is_std: bool = False


@dataclass
class BasisSpec:
    kind: str = "bspline"
    num_bases: int = 11
    bandwidth_rule: str = "lowe"
    # only used by the "fixed" rule
    bandwidth: float = 0.0
    seed: int = 0


@dataclass
class FilterSpec:
    sigma: float = 0.1
    n_ens: int = 1000
    threads: int = 1
    store_forecast_cov: bool = True


@dataclass
class PriorSpec:
    center: str = "truth"
    tau: float = 0.1


@dataclass
class SearchSpec:
    sigma_grid: list[float] = field(default_factory=lambda: [0.025, 0.1, 0.4])
    num_bases_grid: list[int] = field(default_factory=lambda: [7, 11, 19])
    paper_literal_objective: bool = False


@dataclass
class StudySpec:
    # run the truth-centred prior alongside and compare closure means
    compare_priors: bool = False
    compare_after: int = 3
    reference_tau: float = 0.1


@dataclass
class ExperimentConfig:
    name: str = "custom"
    scale: str = "full"
    seed: int = 42
    model: ModelSpec = field(default_factory=ModelSpec)
    grid: GridSpec = field(default_factory=GridSpec)
    initial: InitialSpec = field(default_factory=InitialSpec)
    time: TimeSpec = field(default_factory=TimeSpec)
    observations: ObservationSpec = field(default_factory=ObservationSpec)
    basis: BasisSpec = field(default_factory=BasisSpec)
    filter: FilterSpec = field(default_factory=FilterSpec)
    prior: PriorSpec = field(default_factory=PriorSpec)
    search: SearchSpec = field(default_factory=SearchSpec)
    study: StudySpec = field(default_factory=StudySpec)

    @property
    def dim(self) -> int:
        return len(self.grid.count)

    def validate(self) -> "ExperimentConfig":
        if self.model.kind not in MODELS:
            raise ConfigurationError(f"unknown model {self.model.kind!r}")
        if self.initial.kind not in INITIAL_KINDS:
            raise ConfigurationError(f"unknown initial condition {self.initial.kind!r}")
        if self.prior.center not in PRIOR_CENTERS:
            raise ConfigurationError(f"unknown prior center {self.prior.center!r}")
        if self.scale not in SCALES:
            raise ConfigurationError(f"unknown scale {self.scale!r}")
        if len(self.grid.extent) != len(self.grid.count) or self.dim not in (1, 2):
            raise ConfigurationError("grid extent and count must both have 1 or 2 entries")
        if self.filter.n_ens < 2:
            raise ConfigurationError("filter.n_ens must be at least 2")
        if self.time.n_times < 0 or self.time.interval <= 0:
            raise ConfigurationError("invalid observation schedule")
        return self

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(copy.deepcopy(self), **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _build(cls, data, "").validate()

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @classmethod
    def from_toml(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(tomllib.loads(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))

    def with_overrides(self, overrides: dict[str, str]) -> "ExperimentConfig":
        cfg = copy.deepcopy(self)
        for key, raw in overrides.items():
            set_dotted(cfg, key, raw)
        return cfg.validate()


def _build(cls, data: dict, prefix: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigurationError(f"unknown config key {prefix + sorted(unknown)[0]!r}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        tp = hints[f.name]
        if dataclasses.is_dataclass(tp):
            if not isinstance(value, dict):
                raise ConfigurationError(f"config key {prefix + f.name!r} must be a table")
            kwargs[f.name] = _build(tp, value, prefix + f.name + ".")
        else:
            kwargs[f.name] = _coerce(tp, value, prefix + f.name)
    return cls(**kwargs)


def _coerce(tp, value, key: str):
    origin = typing.get_origin(tp)
    try:
        if origin is list:
            (inner,) = typing.get_args(tp)
            if isinstance(value, str):
                text = value.strip()
                if text.startswith("[") and text.endswith("]"):
                    text = text[1:-1]
                value = [v for v in text.split(",") if v.strip()]
            return [_coerce(inner, v, key) for v in value]
        if tp is bool:
            if isinstance(value, str):
                if value.lower() in ("true", "1", "yes"):
                    return True
                if value.lower() in ("false", "0", "no"):
                    return False
                raise ValueError(value)
            return bool(value)
        if tp is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if tp is float:
            return float(value)
        if tp is str:
            return str(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"invalid value {value!r} for config key {key!r}") from None
    raise ConfigurationError(f"unsupported type for config key {key!r}")


def set_dotted(cfg, key: str, raw):
    """Set ``a.b.c`` on a nested dataclass, coercing ``raw`` to the field's type."""
    parts = key.split(".")
    obj = cfg
    for depth, part in enumerate(parts):
        if not dataclasses.is_dataclass(obj) or part not in {f.name for f in dataclasses.fields(obj)}:
            raise ConfigurationError(f"unknown config key {key!r}")
        if depth == len(parts) - 1:
            tp = typing.get_type_hints(type(obj))[part]
            if dataclasses.is_dataclass(tp):
                raise ConfigurationError(f"config key {key!r} is a table, not a value")
            setattr(obj, part, _coerce(tp, raw, key))
        else:
            obj = getattr(obj, part)


# --- presets ----------------------------------------------------------------

def _kpp_1d(name, n_obs, gamma) -> ExperimentConfig:
    return ExperimentConfig(
        name=name,
        model=ModelSpec("kpp", D=0.01, K=2.0 / 3.0, bc="neumann"),
        grid=GridSpec([1.0], [1000]),
        initial=InitialSpec("sine", frequency=4.0, offset=1.0),
        time=TimeSpec(25, 1.0 / 25),
        observations=ObservationSpec(n_obs, gamma),
        basis=BasisSpec("bspline", 11),
        filter=FilterSpec(sigma=0.1, n_ens=1000),
    )


def _advdiff_1d(name, n_obs, gamma, c=0.1, length=1.0, count=1000, n_times=25) -> ExperimentConfig:
    return ExperimentConfig(
        name=name,
        model=ModelSpec("advdiff", D=0.01, c=c, bc="dirichlet"),
        grid=GridSpec([length], [count]),
        initial=InitialSpec("gaussian", center=0.25, width=200.0),
        time=TimeSpec(n_times, 1.0 / n_times),
        observations=ObservationSpec(n_obs, gamma),
        basis=BasisSpec("bspline", 11),
        filter=FilterSpec(sigma=0.1, n_ens=1000),
    )


def _2d(name, kind, sigma, c=0.1, length=1.0, count=50, n_times=50) -> ExperimentConfig:
    if kind == "kpp":
        model = ModelSpec("kpp", D=0.01, K=2.0 / 3.0, bc="neumann")
        initial = InitialSpec("gp-fixture")
    else:
        model = ModelSpec("advdiff", D=0.01, c=c, bc="dirichlet")
        initial = InitialSpec("gaussian", center=0.25, width=100.0)
    return ExperimentConfig(
        name=name,
        model=model,
        grid=GridSpec([length, length], [count, count]),
        initial=initial,
        time=TimeSpec(n_times, 1.0 / n_times),
        observations=ObservationSpec(count * count, 0.0025),
        basis=BasisSpec("rbf", 80, bandwidth_rule="lowe", seed=0),
        filter=FilterSpec(sigma=sigma, n_ens=1000),
    )


def _priorstudy() -> ExperimentConfig:
    cfg = _kpp_1d("kpp-1d-priorstudy", 200, 0.01)
    cfg.prior = PriorSpec(center="zero", tau=10.0)
    cfg.study = StudySpec(compare_priors=True, compare_after=3, reference_tau=0.1)
    return cfg


PRESETS = {
    "kpp-1d-dense": lambda: _kpp_1d("kpp-1d-dense", 200, 0.01),
    "kpp-1d-sparse": lambda: _kpp_1d("kpp-1d-sparse", 15, 0.001),
    "kpp-2d": lambda: _2d("kpp-2d", "kpp", sigma=0.025),
    "advdiff-1d-dense": lambda: _advdiff_1d("advdiff-1d-dense", 200, 0.01),
    "advdiff-1d-sparse": lambda: _advdiff_1d("advdiff-1d-sparse", 20, 0.001),
    "advdiff-2d": lambda: _2d("advdiff-2d", "advdiff", sigma=0.1),
    "advdiff-1d-dominant": lambda: _advdiff_1d("advdiff-1d-dominant", 30, 0.001, c=0.5, length=1.5,
                                               count=1500, n_times=50),
    "advdiff-2d-dominant": lambda: _2d("advdiff-2d-dominant", "advdiff", sigma=0.1, c=0.5, length=1.5,
                                       count=75, n_times=100),
    "kpp-1d-priorstudy": _priorstudy,
}


def preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]().validate()
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None


DESK_1D_POINTS = 200
DESK_2D_POINTS = 25
DESK_ENSEMBLE = 200


def desk_scale(config: ExperimentConfig) -> ExperimentConfig:
    """Reduced-resolution copy of a full-scale config; physics and hyperparameters unchanged."""
    cfg = copy.deepcopy(config)
    if cfg.dim == 1:
        cfg.grid.count = [DESK_1D_POINTS]
        cfg.observations.n_obs = min(cfg.observations.n_obs, DESK_1D_POINTS)
    else:
        cfg.grid.count = [DESK_2D_POINTS, DESK_2D_POINTS]
        cfg.observations.n_obs = DESK_2D_POINTS * DESK_2D_POINTS
    cfg.filter.n_ens = min(cfg.filter.n_ens, DESK_ENSEMBLE)
    cfg.scale = "desk"
    return cfg.validate()
