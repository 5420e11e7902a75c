"""Run configuration: a JSON document mapped onto nested dataclasses.

Unknown keys are rejected at every level, and :meth:`RunConfig.to_dict`
materializes every default so the effective configuration of a run can be
written next to its outputs and replayed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .clad import DEFAULT_GAMMA_C
from .crlf import CrlfConfig
from .features import FEATURE_MODES, UNIQUE_ID
from .irlf import IrlfConfig
from .mdp import DEFAULT_GAMMA


class ConfigError(ValueError):
    pass


@dataclass
class IrlfSection:
    learning_rate: float = IrlfConfig.learning_rate
    max_iterations: int = IrlfConfig.max_iterations
    tolerance: float = IrlfConfig.tolerance
    lr_decay: float = IrlfConfig.lr_decay


@dataclass
class CrlfSection:
    iterations: int = CrlfConfig.iterations
    step_size: float = CrlfConfig.step_size
    cache_size: int = CrlfConfig.cache_size
    reward_tolerance: float = CrlfConfig.reward_tolerance
    estimation_tolerance: float = CrlfConfig.estimation_tolerance
    eps1: float | None = None
    eps2: float | None = None
    n_meas: int = CrlfConfig.n_meas
    n_report: int = 5000
    oracle: str = CrlfConfig.oracle
    measurement: str = CrlfConfig.measurement
    # optional hand-made target {"c1": [...], "c2": [...]} replacing the expert expectations
    target: dict | None = None


@dataclass
class RunConfig:
    seed: int = 0
    gamma: float = DEFAULT_GAMMA
    horizon: int | None = None
    feature_mode: str = UNIQUE_ID
    gamma_c: float = DEFAULT_GAMMA_C
    irlf: IrlfSection = field(default_factory=IrlfSection)
    crlf: CrlfSection = field(default_factory=CrlfSection)

    def __post_init__(self):
        if self.feature_mode not in FEATURE_MODES:
            raise ConfigError(f"feature_mode must be one of {FEATURE_MODES}, got {self.feature_mode!r}")
        if self.horizon is not None and self.horizon < 1:
            raise ConfigError("horizon must be a positive integer")
        if self.gamma_c < 0:
            raise ConfigError("gamma_c must be non-negative")
        target = self.crlf.target
        if target is not None and (not isinstance(target, dict) or set(target) != {"c1", "c2"}):
            raise ConfigError("crlf.target must be an object with exactly the keys c1 and c2")
        try:
            IrlfConfig(**asdict(self.irlf))
            CrlfConfig(**{k: v for k, v in asdict(self.crlf).items()
                          if k not in ("eps1", "eps2", "n_report", "target")})
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        _reject_unknown(cls, data, "")
        sections = {}
        for name, section in (("irlf", IrlfSection), ("crlf", CrlfSection)):
            raw = data.pop(name, {}) or {}
            if not isinstance(raw, dict):
                raise ConfigError(f"{name} must be an object")
            _reject_unknown(section, raw, name + ".")
            sections[name] = section(**raw)
        return cls(**data, **sections)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_seed(self, seed: int | None) -> "RunConfig":
        if seed is None:
            return self
        return RunConfig.from_dict(dict(self.to_dict(), seed=seed))


def _reject_unknown(cls, data: dict, prefix: str) -> None:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(prefix + k for k in unknown)}")


def load_config(path=None) -> RunConfig:
    """Read a JSON config file; ``None`` gives all defaults."""
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    try:
        return RunConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
