"""Run configuration read from a single YAML (or JSON) document.

Reference (every key optional unless marked required)::

    seed: 0                       # overridden by the global --seed flag
    data:
      path: train.csv             # required for fit / experiment
      factors: [f1, f2]           # required, one column per factor group
      response: y                 # required
      features: [x1, x2]          # default: every other column
      categorical: []
      levels: {f1: [a, b]}        # default: sorted distinct values
    model:
      bases_per_group: [2, 2]     # default: 2 per factor group
      alpha: 1.0                  # scalar, or one value per basis when heterogeneous
      sigma0: 1.0
      heterogeneous: false
      prior: {lambda0: 1.0, nu0: null, a_y: 1.0, b_y: 1.0}
    sampler:
      aux: 3
      iterations: 2000
      burn_in: 1000
      thin: 5
      u_step: 0.5
      u_sampler: random-walk      # or gradient
      slice_width: 1.0
      shuffle: false
      check_invariants: false
    preprocess:
      pca_k: null
      scale: false
      log1p_response: false
      center_response: false
      coding: onehot              # or dummy
    experiment:
      fraction: 0.5
      repetitions: 10
      metric: rmse                # or auc
      baseline: false             # also fit the one-basis (plain DP) model
      jobs: 1
    simulate:
      factors_per_group: [2, 2]
      bases_per_group: [2, 2]
      truncation: 60
      n_sims: 10000
      threshold: 0.0
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields

import yaml

from .data import Schema
from .errors import ConfigError
from .gibbs import SamplerConfig
from .metrics import METRICS
from .prior import Hyperparams


@dataclass
class ModelConfig:
    bases_per_group: list[int] | None = None
    alpha: float | list[float] = 1.0
    sigma0: float = 1.0
    heterogeneous: bool = False
    prior: dict = field(default_factory=dict)

    def hyper(self) -> Hyperparams:
        return Hyperparams(self.alpha, self.sigma0, self.heterogeneous)


@dataclass
class PreprocessConfig:
    pca_k: int | None = None
    scale: bool = False
    log1p_response: bool = False
    center_response: bool = False
    coding: str = "onehot"


@dataclass
class ExperimentConfig:
    fraction: float = 0.5
    repetitions: int = 10
    metric: str = "rmse"
    baseline: bool = False
    jobs: int = 1

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigError(f"experiment.metric must be one of {sorted(METRICS)}")
        if self.repetitions < 1 or self.jobs < 1:
            raise ConfigError("experiment.repetitions and experiment.jobs must be >= 1")
        if not 0 < self.fraction < 1:
            raise ConfigError("experiment.fraction must be in (0, 1)")


@dataclass
class SimulateConfig:
    factors_per_group: list[int] = field(default_factory=lambda: [2, 2])
    bases_per_group: list[int] = field(default_factory=lambda: [2, 2])
    truncation: int = 60
    n_sims: int = 10000
    threshold: float = 0.0


@dataclass
class DataConfig:
    path: str | None = None
    factors: list[str] = field(default_factory=list)
    response: str = "y"
    features: list[str] | None = None
    categorical: list[str] = field(default_factory=list)
    levels: dict | None = None

    def schema(self) -> Schema:
        if not self.factors:
            raise ConfigError("data.factors must list one column per factor group")
        return Schema(list(self.factors), self.response,
                      None if self.features is None else list(self.features), list(self.categorical))


_PRIOR_KEYS = {"lambda0", "nu0", "a_y", "b_y"}


def _build(cls, d, where):
    if d is None:
        d = {}
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a mapping")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    seed: int = 0
    base_dir: str = "."

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "RunConfig":
        d = dict(d or {})
        top = {"data", "model", "sampler", "preprocess", "experiment", "simulate", "seed"}
        unknown = sorted(set(d) - top)
        if unknown:
            raise ConfigError(f"config: unknown top-level key(s) {unknown}")
        seed = int(d.get("seed", 0))
        sampler = dict(d.get("sampler") or {})
        if "seed" in sampler:
            raise ConfigError("sampler.seed is not a key; use the top-level seed or --seed")
        model = _build(ModelConfig, d.get("model"), "model")
        bad = sorted(set(model.prior) - _PRIOR_KEYS)
        if bad:
            raise ConfigError(f"model.prior: unknown key(s) {bad}")
        model.hyper()  # validates alpha and sigma0
        return cls(
            data=_build(DataConfig, d.get("data"), "data"),
            model=model,
            sampler=_build(SamplerConfig, dict(sampler, seed=seed), "sampler"),
            preprocess=_build(PreprocessConfig, d.get("preprocess"), "preprocess"),
            experiment=_build(ExperimentConfig, d.get("experiment"), "experiment"),
            simulate=_build(SimulateConfig, d.get("simulate"), "simulate"),
            seed=seed,
            base_dir=base_dir,
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = os.fspath(path)
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path) as fh:
            text = fh.read()
        try:
            d = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
        except (ValueError, yaml.YAMLError) as exc:
            raise ConfigError(f"{path}: cannot parse config ({exc})") from exc
        if d is not None and not isinstance(d, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        return cls.from_dict(d or {}, os.path.dirname(os.path.abspath(path)))

    def with_seed(self, seed: int) -> "RunConfig":
        import dataclasses

        return dataclasses.replace(self, seed=seed, sampler=dataclasses.replace(self.sampler, seed=seed))

    def data_path(self) -> str:
        if not self.data.path:
            raise ConfigError("data.path is required")
        p = self.data.path
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)
