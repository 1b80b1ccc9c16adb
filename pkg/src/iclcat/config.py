"""Experiment configuration: a fixed YAML schema with defaults, strict key
checking and a normalized echo that reproduces a run."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import yaml

from .attacks import AttackConfig
from .mathcore import SpdMatrix
from .montecarlo import McConfig
from .tasks import TaskConfig
from .trainer import InitSpec, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LambdaSpec:
    kind: str = "identity"          # identity | diagonal | random
    values: tuple[float, ...] = ()  # diagonal entries
    seed: int = 0                   # random SPD
    spread: float = 3.0

    def build(self, d0: int) -> SpdMatrix:
        if self.kind == "identity":
            return SpdMatrix.identity(d0)
        if self.kind == "diagonal":
            if len(self.values) != d0:
                raise ConfigError(f"lambda_spec.values needs {d0} entries, got {len(self.values)}")
            return SpdMatrix.diagonal(self.values)
        if self.kind == "random":
            return SpdMatrix.random(d0, np.random.default_rng(self.seed), self.spread)
        raise ConfigError(f"unknown lambda_spec.kind {self.kind!r}")


@dataclass(frozen=True)
class EmbeddingSpec:
    kind: str = "identity"           # identity | scaled | diagonal | explicit
    scale: float = 1.0
    values: tuple[float, ...] = ()   # diagonal entries (d <= d0, padded with zero columns)
    matrix: tuple[tuple[float, ...], ...] = ()

    def build(self, d: int, d0: int) -> np.ndarray:
        if self.kind == "identity":
            return np.eye(d, d0)
        if self.kind == "scaled":
            return self.scale * np.eye(d, d0)
        if self.kind == "diagonal":
            if len(self.values) != min(d, d0):
                raise ConfigError(f"we_init.values needs {min(d, d0)} entries")
            we = np.zeros((d, d0))
            we[np.arange(len(self.values)), np.arange(len(self.values))] = self.values
            return we
        if self.kind == "explicit":
            we = np.array(self.matrix, dtype=float)
            if we.shape != (d, d0):
                raise ConfigError(f"we_init.matrix must be {d}x{d0}, got {we.shape}")
            return we
        raise ConfigError(f"unknown we_init.kind {self.kind!r}")


@dataclass(frozen=True)
class AttackSpec:
    steps: int = 10
    step_size: float = 0.01
    eval_steps: int = 20  # risk evaluation uses step size rho/10
    restarts: int = 0


@dataclass(frozen=True)
class InitFields:
    zeta: float = 0.1


@dataclass(frozen=True)
class ExperimentConfig:
    d0: int = 4
    d: int = 4
    n: int = 16
    m: int = 1
    eps: float = 0.05
    rho: float = 0.5
    bound_checks: bool = True
    lambda_spec: LambdaSpec = field(default_factory=LambdaSpec)
    we_init: EmbeddingSpec = field(default_factory=EmbeddingSpec)
    attack: AttackSpec = field(default_factory=AttackSpec)
    mc: McConfig = field(default_factory=lambda: McConfig(num_tasks=4000))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(steps=20_000, tol=1e-10))
    init: InitFields = field(default_factory=InitFields)

    def __post_init__(self):
        if min(self.d0, self.d, self.n) < 1:
            raise ConfigError("d0, d and n must be positive")
        if not 0 <= self.m <= self.n:
            raise ConfigError(f"need 0 <= m <= n, got m={self.m}, n={self.n}")
        if self.eps < 0 or self.rho < 0:
            raise ConfigError("eps and rho must be nonnegative")
        if self.bound_checks and self.d > self.d0:
            raise ConfigError(
                f"robust bound requires embedding dim d <= input dim d0 (got d={self.d}, d0={self.d0}); "
                "set bound_checks: false to run without it"
            )

    # derived objects
    def lam(self) -> SpdMatrix:
        return self.lambda_spec.build(self.d0)

    def task_config(self) -> TaskConfig:
        return TaskConfig(d0=self.d0, n=self.n, lam=self.lam())

    def embedding(self) -> np.ndarray:
        return self.we_init.build(self.d, self.d0)

    def train_attack(self) -> AttackConfig:
        return AttackConfig(steps=self.attack.steps, step_size=self.attack.step_size, radius=self.eps,
                            restarts=self.attack.restarts)

    def eval_attack(self, rho: float | None = None) -> AttackConfig:
        atk = AttackConfig.for_radius(self.rho if rho is None else rho, self.attack.eval_steps)
        return dataclasses.replace(atk, restarts=self.attack.restarts)

    def train_config(self) -> TrainConfig:
        # the training radius is the experiment's eps
        return dataclasses.replace(self.train, eps=self.eps)

    def init_spec(self) -> InitSpec:
        return InitSpec(zeta=self.init.zeta, we_init=self.embedding())

    def with_updates(self, **changes) -> "ExperimentConfig":
        return from_dict(_merge(to_dict(self), changes))


_NESTED = {
    "lambda_spec": LambdaSpec, "we_init": EmbeddingSpec, "attack": AttackSpec,
    "mc": McConfig, "train": TrainConfig, "init": InitFields,
}


# fields set from the top level rather than inside the nested block
_HIDDEN = {TrainConfig: {"eps"}}


def _tuplify(v):
    return tuple(_tuplify(x) for x in v) if isinstance(v, (list, tuple)) else v


def _build(cls, raw: dict, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)} - _HIDDEN.get(cls, set())
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for k, v in raw.items():
        kwargs[k] = _build(_NESTED[k], v, k) if cls is ExperimentConfig and k in _NESTED else _tuplify(v)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def from_dict(raw: dict | None) -> ExperimentConfig:
    return _build(ExperimentConfig, raw or {}, "config")


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def to_dict(cfg: ExperimentConfig) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            hidden = _HIDDEN.get(type(v), set())
            v = {g.name: _plain(getattr(v, g.name)) for g in dataclasses.fields(v) if g.name not in hidden}
        out[f.name] = _plain(v)
    return out


def _merge(base: dict, changes: dict) -> dict:
    out = dict(base)
    for k, v in changes.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return from_dict(raw)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False, default_flow_style=None)
