"""Repo-wide configuration file.

A single JSON document overrides any subset of the dataclass defaults:
grid, actions, noise, adaptation parameters, PID gains, scenario synthesis,
training, the driver roster, and service settings. Missing keys keep their
defaults, so a config file only states what it changes.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .adaptation import AdaptParams
from .controller import PidGains
from .drivers import DriverProfile, default_roster
from .experiments import ExperimentConfig
from .irl import TrainConfig
from .mdp import ActionSet, NoiseSpec, StateGrid
from .scenarios import SynthesisConfig


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8765
    store_path: str = "store"
    pedal_accel: float = 1.5
    pedal_brake: float = -2.5


@dataclass
class LabConfig:
    grid: StateGrid = field(default_factory=StateGrid)
    actions: ActionSet = field(default_factory=ActionSet)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    adapt: AdaptParams = field(default_factory=AdaptParams)
    gains: PidGains = field(default_factory=PidGains)
    scenario: SynthesisConfig = field(default_factory=SynthesisConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)
    roster: list = field(default_factory=default_roster)
    repetitions: int = 3
    master_seed: int = 7

    def experiment_config(self, configs=None) -> ExperimentConfig:
        kwargs = dict(
            repetitions=self.repetitions,
            master_seed=self.master_seed,
            scenario_cfg=self.scenario,
            adapt_params=self.adapt,
            gains=self.gains,
            grid=self.grid,
            train_config=self.training,
        )
        if configs:
            kwargs["configs"] = tuple(configs)
        return ExperimentConfig(**kwargs)


_SECTIONS = {
    "grid": StateGrid,
    "actions": ActionSet,
    "noise": NoiseSpec,
    "adapt": AdaptParams,
    "gains": PidGains,
    "scenario": SynthesisConfig,
    "training": TrainConfig,
    "service": ServiceConfig,
}


def _build(cls, overrides: dict):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(overrides) - fields
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    coerced = {
        k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()
    }
    return cls(**coerced)


def load_config(path=None) -> LabConfig:
    cfg = LabConfig()
    if path is None:
        return cfg
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    for name, cls in _SECTIONS.items():
        if name in doc:
            setattr(cfg, name, _build(cls, doc[name]))
    if "roster" in doc:
        cfg.roster = [_build(DriverProfile, entry) for entry in doc["roster"]]
    cfg.repetitions = int(doc.get("repetitions", cfg.repetitions))
    cfg.master_seed = int(doc.get("master_seed", cfg.master_seed))
    return cfg


def dump_default_config(fh) -> None:
    """Write the full default configuration as an editable starting point."""
    doc = {
        name: dataclasses.asdict(getattr(LabConfig(), name))
        for name in _SECTIONS
    }
    doc["roster"] = [dataclasses.asdict(p) for p in default_roster()]
    doc["repetitions"] = 3
    doc["master_seed"] = 7
    json.dump(doc, fh, indent=2)
    fh.write("\n")
