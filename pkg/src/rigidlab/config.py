"""Experiment configuration: nested dataclasses loaded from YAML.

Unknown keys are rejected at every level so that typos cannot silently fall
back to defaults.  See ``configs/`` in the repository for annotated examples.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError

__all__ = [
    "PipelineConfig",
    "FamilyConfig",
    "HeatflowConfig",
    "NullspaceConfig",
    "ExperimentConfig",
    "load_config",
    "config_from_dict",
    "FAMILY_KINDS",
]

FAMILY_KINDS = ("identity", "constant", "isometry", "torus_double", "random_smooth", "killing")
FIELD_KINDS = ("random", "conformal", "shear", "killing")
BASE_KINDS = ("identity", "random")
INJ = np.pi


@dataclass
class PipelineConfig:
    """Thresholds of the isometry-recovery pipeline.

    ``None`` selects the documented default: clamp bound ``10 sqrt 2``,
    ``dt = 1e-3 h^2``, ``delta1 = inj/8``, ``delta0 = inj/16``.
    """

    p: float = 2.0
    clamp_bound: float | None = None
    heat_flow: bool = True
    t1: float = 0.05
    dt: float | None = None
    scheme: str = "tangent"
    delta1: float | None = None
    delta0: float | None = None
    log_radius: float | None = None
    multi_start: bool = False

    def resolved(self, inj: float = INJ) -> "PipelineConfig":
        return dataclasses.replace(
            self,
            clamp_bound=10.0 * np.sqrt(2.0) if self.clamp_bound is None else self.clamp_bound,
            delta1=inj / 8 if self.delta1 is None else self.delta1,
            delta0=inj / 16 if self.delta0 is None else self.delta0,
            log_radius=inj / 2 if self.log_radius is None else self.log_radius,
        )

    def validate(self):
        if not (1.1 < self.p < 10):
            raise ConfigError(f"p must lie in (1.1, 10), got {self.p}")
        if self.clamp_bound is not None and self.clamp_bound <= np.sqrt(2.0):
            raise ConfigError("clamp_bound must exceed sqrt(2)")
        if self.t1 <= 0:
            raise ConfigError("t1 must be positive")
        if self.dt is not None and self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.scheme not in ("tangent", "heat_project"):
            raise ConfigError(f"unknown heat-flow scheme {self.scheme!r}")
        for name in ("delta1", "delta0", "log_radius"):
            val = getattr(self, name)
            if val is not None and not (0 < val < INJ):
                raise ConfigError(f"{name} must lie in (0, inj)")


@dataclass
class FamilyConfig:
    """Which maps to generate.

    kind
        identity, constant, isometry, torus_double, random_smooth (maps
        ``exp(eps X) o R``) or killing (same with a Killing ``X``).
    count
        Number of family members (seeded consecutively).
    epsilons
        Perturbation ladder; ``energy``/``recover`` use the first entry.
    field
        random, conformal, shear or killing.
    field_scale
        Target ``sup |X|`` of generated fields.
    base_isometry
        identity or random.
    """

    kind: str = "random_smooth"
    count: int = 1
    epsilons: list = field(default_factory=lambda: [1e-3, 2e-3, 5e-3, 1e-2, 2e-2, 5e-2, 1e-1])
    field: str = "random"
    field_scale: float = 1.0
    base_isometry: str = "random"

    def validate(self, manifold: str):
        if self.kind not in FAMILY_KINDS:
            raise ConfigError(f"family.kind must be one of {FAMILY_KINDS}, got {self.kind!r}")
        if self.kind == "torus_double" and manifold != "flat_torus":
            raise ConfigError("family.kind torus_double needs manifold flat_torus")
        if self.field not in FIELD_KINDS:
            raise ConfigError(f"family.field must be one of {FIELD_KINDS}, got {self.field!r}")
        if self.field == "conformal" and manifold != "sphere":
            raise ConfigError("conformal fields exist only on the sphere")
        if self.field == "shear" and manifold != "flat_torus":
            raise ConfigError("shear fields exist only on the flat torus")
        if self.base_isometry not in BASE_KINDS:
            raise ConfigError(f"family.base_isometry must be one of {BASE_KINDS}")
        if not isinstance(self.count, int) or self.count < 1:
            raise ConfigError("family.count must be a positive integer")
        if not self.epsilons:
            raise ConfigError("family.epsilons must be non-empty")
        for e in self.epsilons:
            if not (0 < float(e) < INJ / 4):
                raise ConfigError(f"epsilon {e} outside (0, inj/4)")
        if not (0 < self.field_scale <= 1.0):
            raise ConfigError("family.field_scale must lie in (0, 1]")


@dataclass
class HeatflowConfig:
    steps: int | None = None
    monitor_every: int = 1

    def validate(self):
        if self.steps is not None and self.steps < 1:
            raise ConfigError("heatflow.steps must be positive")
        if self.monitor_every < 1:
            raise ConfigError("heatflow.monitor_every must be positive")


@dataclass
class NullspaceConfig:
    n_eigs: int = 6
    gap: float = 0.01
    export_mesh: bool = True

    def validate(self):
        if self.n_eigs < 2:
            raise ConfigError("nullspace.n_eigs must be at least 2")
        if not (0 < self.gap < 1):
            raise ConfigError("nullspace.gap must lie in (0, 1)")


@dataclass
class ExperimentConfig:
    """Top-level experiment description; fully determines outputs given ``seed``."""

    manifold: str = "sphere"
    resolution: int | None = None
    seed: int = 0
    output_dir: str = "out"
    family: FamilyConfig = field(default_factory=FamilyConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    heatflow: HeatflowConfig = field(default_factory=HeatflowConfig)
    nullspace: NullspaceConfig = field(default_factory=NullspaceConfig)

    @property
    def p(self) -> float:
        return self.pipeline.p

    def validate(self) -> "ExperimentConfig":
        if self.manifold not in ("sphere", "flat_torus"):
            raise ConfigError(f"manifold must be sphere or flat_torus, got {self.manifold!r}")
        if self.resolution is not None:
            lo, hi = (0, 6) if self.manifold == "sphere" else (3, 256)
            if not isinstance(self.resolution, int) or not (lo <= self.resolution <= hi):
                raise ConfigError(f"resolution for {self.manifold} must be an integer in [{lo}, {hi}]")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        self.family.validate(self.manifold)
        self.pipeline.validate()
        self.heatflow.validate()
        self.nullspace.validate()
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_NESTED = {
    "family": FamilyConfig,
    "pipeline": PipelineConfig,
    "heatflow": HeatflowConfig,
    "nullspace": NullspaceConfig,
}


def _build(cls, data, where):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for key, val in data.items():
        if cls is ExperimentConfig and key in _NESTED:
            kwargs[key] = _build(_NESTED[key], val, key)
        else:
            kwargs[key] = val
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def config_from_dict(data: dict | None) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, data or {}, "config")
    try:
        return cfg.validate()
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return config_from_dict(data)
