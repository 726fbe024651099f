"""Pipeline configuration: nested dataclasses loaded from JSON.

Unknown keys are rejected with the full key path. The graph section's
distance/velocity weight is spelled ``lambda`` in JSON.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .equinet import EquiNetConfig, EquiNetParams
from .errors import ConfigError
from .evaluation import DEFAULT_SEGMENTS
from .graph import GraphConfig
from .loss import LossParams, TrainConfig
from .matching import IcpConfig, MatchConfig, PairConfig, PipelineParams
from .preprocess import IrlsConfig

JSON_ALIASES = {"lam": "lambda"}
EXCLUDED = {("equinet", "egnn_c_mode"): "use the top-level 'egnn_c_mode' key"}


@dataclass
class EvalConfig:
    segment_lengths: tuple = DEFAULT_SEGMENTS  # m

    def __post_init__(self):
        self.segment_lengths = tuple(float(x) for x in self.segment_lengths)
        if not self.segment_lengths or min(self.segment_lengths) <= 0:
            raise ValueError("segment_lengths must be positive")


@dataclass
class PipelineConfig:
    irls: IrlsConfig = field(default_factory=IrlsConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    equinet: EquiNetConfig = field(default_factory=EquiNetConfig)
    matching: MatchConfig = field(default_factory=MatchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    icp: IcpConfig = field(default_factory=IcpConfig)
    niv: bool = False
    nal: bool = False
    egnn_c_mode: str = "inverse_degree"
    seed: int = 0

    def __post_init__(self):
        if self.egnn_c_mode not in ("inverse_degree", "degree"):
            raise ValueError(f"egnn_c_mode must be 'inverse_degree' or 'degree'")

    def pair_config(self) -> PairConfig:
        eq = dataclasses.replace(self.equinet, egnn_c_mode=self.egnn_c_mode)
        return PairConfig(self.irls, self.graph, eq, self.matching, self.niv)

    def to_dict(self) -> dict:
        return _to_dict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        return _from_dict(cls, data, "")

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError("<file>", f"cannot read {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON in {path}: {exc}") from exc
        return cls.from_dict(data)


def _to_dict(obj, section: str = "") -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        if (section, f.name) in EXCLUDED:
            continue
        v = getattr(obj, f.name)
        key = JSON_ALIASES.get(f.name, f.name)
        if dataclasses.is_dataclass(v):
            out[key] = _to_dict(v, key)
        elif isinstance(v, tuple):
            out[key] = list(v)
        else:
            out[key] = v
    return out


def _from_dict(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", "expected an object")
    hints = typing.get_type_hints(cls)
    by_json = {JSON_ALIASES.get(f.name, f.name): f for f in dataclasses.fields(cls)}
    section = path.split(".")[-1] if path else ""
    kwargs = {}
    for key, value in data.items():
        kp = f"{path}.{key}" if path else key
        if (section, key) in EXCLUDED:
            raise ConfigError(kp, EXCLUDED[(section, key)])
        if key not in by_json:
            raise ConfigError(kp, f"unknown key (allowed: {sorted(by_json)})")
        f = by_json[key]
        hint = hints.get(f.name)
        if dataclasses.is_dataclass(hint):
            kwargs[f.name] = _from_dict(hint, value, kp)
        else:
            kwargs[f.name] = _check_value(kp, value, getattr(cls(), f.name) if _default_ok(cls) else None)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path or "<root>", str(exc)) from exc


def _default_ok(cls) -> bool:
    try:
        cls()
        return True
    except TypeError:
        return False


def _check_value(kp, value, default):
    if default is None:
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, (int, float)):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, tuple):
        ok = isinstance(value, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(kp, f"expected {type(default).__name__}, got {type(value).__name__}")
    return value


def init_params(config: PipelineConfig) -> PipelineParams:
    """Deterministic initial parameters for a configuration."""
    eq = EquiNetParams.init(config.pair_config().equinet, seed=config.seed)
    lp = LossParams.nal_preset() if config.nal else LossParams()
    return PipelineParams(eq, alpha=config.matching.alpha, beta=config.matching.beta,
                          s_r=lp.s_r, s_t=lp.s_t, s_p=lp.s_p, s_y=lp.s_y)
