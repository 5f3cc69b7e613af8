"""Run configuration: one TOML file with a section per pipeline stage."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .planner import PlannerConfig
from .safety import TABLE_HORIZONS_S
from .transformer.model import ModelConfig


@dataclass
class DataSection:
    n_episodes: int = 202
    aggressive_fraction: float = 0.49


@dataclass
class ClusteringSection:
    k: int = 2
    restarts: int = 20
    max_iter: int = 100
    tol: float = 1e-10


@dataclass
class StyleSection:
    max_prefix_steps: int = 10
    test_fraction: float = 0.2
    lr: float = 0.1
    iters: int = 5000
    l2: float = 1e-3


@dataclass
class TransformerSection:
    d_model: int = 48
    n_heads: int = 12
    n_layers: int = 4
    ffn_width: int = 64
    dense_width: int = 64
    dropout: float = 0.1
    window_seconds: float = 6.67
    residual: bool = True
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    lr_final: Optional[float] = None
    decay: float = 0.9
    eps: float = 1e-8
    stride: int = 10
    val_stride: int = 20
    train_fraction: float = 0.7

    def model_config(self, window_seconds: Optional[float] = None) -> ModelConfig:
        from .transformer.data import seconds_to_steps
        w = seconds_to_steps(self.window_seconds if window_seconds is None else window_seconds)
        return ModelConfig(d_model=self.d_model, window=w, n_heads=self.n_heads, ffn_width=self.ffn_width,
                           n_layers=self.n_layers, dense_width=self.dense_width, dropout=self.dropout,
                           residual=self.residual)


@dataclass
class ScenarioSection:
    normal_seed: int = 2024
    aggressive_seed: int = 2024
    normal_merge_gap: float = 1.11
    aggressive_merge_gap: float = 0.41
    horizon: float = 10.0


@dataclass
class SweepSection:
    horizons: list = field(default_factory=lambda: list(TABLE_HORIZONS_S))


@dataclass
class RunConfig:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    clustering: ClusteringSection = field(default_factory=ClusteringSection)
    style: StyleSection = field(default_factory=StyleSection)
    transformer: TransformerSection = field(default_factory=TransformerSection)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


_SECTIONS = {f.name: f for f in dataclasses.fields(RunConfig) if f.name != "seed"}


def _build(cls, name: str, values: dict):
    if not isinstance(values, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    defaults = cls()
    for key, val in values.items():
        ref = getattr(defaults, key)
        if isinstance(ref, bool) != isinstance(val, bool):
            raise ConfigError(f"[{name}] {key} must be {type(ref).__name__}")
        if isinstance(ref, (int, float)) and not isinstance(ref, bool):
            if not isinstance(val, (int, float)) or (isinstance(ref, int) and not isinstance(val, int)):
                raise ConfigError(f"[{name}] {key} must be {type(ref).__name__}")
        if ref is None and (isinstance(val, bool) or not isinstance(val, (int, float))):
            raise ConfigError(f"[{name}] {key} must be a number")
        if isinstance(ref, list) and not isinstance(val, list):
            raise ConfigError(f"[{name}] {key} must be a list")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}] {exc}") from exc


def config_from_dict(d: dict) -> RunConfig:
    unknown = sorted(set(d) - set(_SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    if "seed" not in d:
        raise ConfigError("the top-level 'seed' key is required")
    seed = d["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    sections = {name: _build(f.default_factory().__class__, name, d.get(name, {}))
                for name, f in _SECTIONS.items()}
    cfg = RunConfig(seed=seed, **sections)
    if list(cfg.sweep.horizons) != sorted(set(cfg.sweep.horizons)) or not cfg.sweep.horizons:
        raise ConfigError("[sweep] horizons must be a non-empty strictly increasing list")
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(Path(path), "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return config_from_dict(raw)
