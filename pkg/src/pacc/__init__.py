"""Personalized adaptive cruise control lab."""

from .adaptation import AdaptParams, TakeoverSegment, TakeoverState, on_takeover_end
from .controller import HeadwayReference, PidGains, headway_to_dgpt
from .dgpt import Dgpt
from .drivers import DriverProfile, default_roster, generate_demos
from .experiments import ExperimentConfig, run_experiment
from .features import FeatureBasis, default_basis
from .irl import Demonstration, RewardModel, TrainConfig, extract_dgpt, finetune, train_irl
from .mdp import ActionSet, CfState, NoiseSpec, StateGrid, build_transition_model
from .scenarios import SpeedProfile, SynthesisConfig, builtin_segment_source
from .trip import TripEngine

__all__ = [
    "AdaptParams", "TakeoverSegment", "TakeoverState", "on_takeover_end",
    "HeadwayReference", "PidGains", "headway_to_dgpt", "Dgpt",
    "DriverProfile", "default_roster", "generate_demos",
    "ExperimentConfig", "run_experiment", "FeatureBasis", "default_basis",
    "Demonstration", "RewardModel", "TrainConfig", "extract_dgpt", "finetune",
    "train_irl", "ActionSet", "CfState", "NoiseSpec", "StateGrid",
    "build_transition_model", "SpeedProfile", "SynthesisConfig",
    "builtin_segment_source", "TripEngine",
]
