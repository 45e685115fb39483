"""Experiment configuration: one YAML file with every knob, defaults
embedded so `print-config` fully describes an experiment."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any, Optional

import yaml

from .dpgo import RbcdConfig
from .errors import ConfigError
from .geometry import RansacConfig
from .mesh_deform import LmoConfig
from .multirobot import ProtocolConfig, ScenarioConfig, VerificationConfig, WireSchema
from .pcm import PcmConfig

__all__ = ["DatasetConfig", "BenchConfig", "ExperimentConfig", "load_config", "dump_config"]


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "manhattan"  # manhattan | g2o | scenario
    path: Optional[str] = None  # g2o file or scenario bundle directory
    poses: int = 3500
    step: float = 1.0
    sigma_rot: float = 0.01
    sigma_trans: float = 0.05
    loop_prob: float = 0.15
    grid_size: Optional[int] = 20

    def __post_init__(self):
        if self.kind not in ("manhattan", "g2o", "scenario"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.kind in ("g2o", "scenario") and not self.path:
            raise ConfigError(f"dataset kind {self.kind!r} requires a path")


@dataclass(frozen=True)
class BenchConfig:
    pcm_batch: int = 50  # candidates added per benchmark step
    pcm_max_vertices: int = 1000
    shuffle: bool = True  # interleave clean and injected loops
    repetitions: int = 3  # timing repetitions (median reported)
    sample_density: float = 100.0  # mesh accuracy sampling, points/m^2


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out: str = "runs/out"
    robots: int = 3
    outliers: int = 1000
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    pcm: PcmConfig = field(
        default_factory=lambda: PcmConfig(
            trans_threshold=0.5, rot_threshold=0.08, use_covariance_scaling=True,
            scale_cap=1e9,
        )
    )
    ransac: RansacConfig = field(default_factory=RansacConfig)
    verification: VerificationConfig = field(default_factory=VerificationConfig)
    rbcd: RbcdConfig = field(default_factory=RbcdConfig)
    lmo: LmoConfig = field(default_factory=LmoConfig)
    wire: WireSchema = field(default_factory=WireSchema)
    bench: BenchConfig = field(default_factory=BenchConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    similarity_threshold: float = 0.5
    simplify_cell: float = 1.0
    dpgo_every_window: bool = False

    def protocol_config(self) -> ProtocolConfig:
        return ProtocolConfig(
            similarity_threshold=self.similarity_threshold,
            verification=self.verification,
            pcm=self.pcm,
            rbcd=self.rbcd,
            schema=self.wire,
            dpgo_every_window=self.dpgo_every_window,
        )


def _to_dict(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {
            f.name: _to_dict(getattr(obj, f.name))
            for f in dataclasses.fields(obj)
            if not f.name.startswith("_")
        }
    if isinstance(obj, tuple):
        return list(obj)
    return obj


def _from_dict(cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"expected mapping for {cls.__name__}, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown key {key!r} in {cls.__name__}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc


_SECTIONS = {
    "dataset": DatasetConfig,
    "pcm": PcmConfig,
    "ransac": RansacConfig,
    "verification": VerificationConfig,
    "rbcd": RbcdConfig,
    "lmo": LmoConfig,
    "wire": WireSchema,
    "bench": BenchConfig,
    "scenario": ScenarioConfig,
}


def load_config(path_or_text: Optional[str] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Build an ExperimentConfig from YAML (path or literal text) plus
    flat CLI overrides.  Unknown keys are errors."""
    data: dict = {}
    if path_or_text:
        if os.path.exists(path_or_text):
            with open(path_or_text) as fh:
                data = yaml.safe_load(fh) or {}
        else:
            try:
                data = yaml.safe_load(path_or_text) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"cannot read config {path_or_text!r}: {exc}") from exc
            if isinstance(data, str):
                raise ConfigError(f"config file not found: {path_or_text!r}")
    if not isinstance(data, dict):
        raise ConfigError("top-level config must be a mapping")
    if overrides:
        for key, value in overrides.items():
            if value is None:
                continue
            data[key] = value
    kwargs: dict = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _from_dict(_SECTIONS[key], value or {})
        elif key in (
            "seed",
            "out",
            "robots",
            "outliers",
            "similarity_threshold",
            "simplify_cell",
            "dpgo_every_window",
        ):
            kwargs[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(_to_dict(cfg), sort_keys=True)


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(
        json.dumps(_to_dict(cfg), sort_keys=True).encode()
    ).hexdigest()
