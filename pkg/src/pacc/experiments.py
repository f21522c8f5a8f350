"""Interruption metrics and the four-configuration experiment matrix.

PoI is the percentage of trip time a pedal override is active; NIM counts
contiguous override intervals per minute (intervals closer than the debounce
gap merge, so pedal chatter is one interruption). The matrix crosses the
driver roster with seen/unseen scenarios and the four controller setups and
reports per-cell means plus the aggregate reductions against the predefined
baseline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .adaptation import AdaptParams
from .controller import HeadwayReference, PidGains
from .dgpt import Dgpt
from .drivers import DriverProfile, default_roster
from .irl import RewardModel, TrainConfig, build_training_transitions, extract_dgpt, train_irl
from .features import default_basis
from .mdp import ActionSet, StateGrid
from .scenarios import SynthesisConfig, builtin_segment_source, demo_scenarios, scenario_a, scenario_b
from .seeding import derive_seed, substream
from .trip import TakeoverLog, TripEngine, TripResult
from .drivers import generate_demos

CONFIGS = ("predefined", "predefined+adapt", "irl", "irl+adapt")
PREDEFINED_LEVELS = (1.0, 3.0, 4.0)
NIM_MERGE_GAP = 0.5  # s; closer intervals count as one interruption


def poi(log: TakeoverLog) -> float:
    """Percent of trip ticks with a pedal override active."""
    if log.total_ticks == 0:
        raise ValueError("zero-length trip")
    covered = sum(end - start for start, end, _ in log.intervals)
    return 100.0 * covered / log.total_ticks


def merged_intervals(log: TakeoverLog, gap_s: float = NIM_MERGE_GAP) -> list:
    gap_ticks = int(round(gap_s / log.dt)) if log.dt > 0 else 0
    merged = []
    for start, end, pedal in log.intervals:
        if merged and start - merged[-1][1] < gap_ticks:
            merged[-1] = (merged[-1][0], end, merged[-1][2])
        else:
            merged.append((start, end, pedal))
    return merged


def nim(log: TakeoverLog) -> float:
    """Interruptions per minute of trip time."""
    if log.total_ticks == 0:
        raise ValueError("zero-length trip")
    minutes = log.total_ticks * log.dt / 60.0
    return len(merged_intervals(log)) / minutes


def interruption_count(log: TakeoverLog) -> int:
    return len(merged_intervals(log))


def predefined_tau(tau_pref: float) -> float:
    """Production headway level nearest the driver's own; ties go long."""
    return min(PREDEFINED_LEVELS, key=lambda t: (abs(t - tau_pref), -t))


@dataclass(frozen=True)
class ExperimentConfig:
    configs: tuple = CONFIGS
    repetitions: int = 3
    master_seed: int = 7
    scenario_cfg: SynthesisConfig = SynthesisConfig()
    adapt_params: AdaptParams = AdaptParams()
    gains: PidGains = PidGains()
    grid: StateGrid = StateGrid()
    train_config: TrainConfig = TrainConfig()

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.configs:
            raise ValueError("no controller configurations selected")
        unknown = set(self.configs) - set(CONFIGS)
        if unknown:
            raise ValueError(f"unknown configs: {unknown}")


@dataclass
class ReportRow:
    driver_id: str
    scenario_class: str  # seen | unseen
    config: str
    poi: float
    nim: float
    count: float
    reps: list
    collided: bool = False

    def __post_init__(self):
        if not (0.0 <= self.poi <= 100.0):
            raise ValueError("PoI out of range")
        if self.nim < 0:
            raise ValueError("negative NIM")


@dataclass
class ExperimentReport:
    rows: list
    aggregates: dict  # config -> {"poi": mean, "nim": mean, "count": mean}
    reductions: dict  # config -> {"poi_pct": ..., "nim_pct": ...} vs predefined

    def write_csv(self, fh) -> None:
        fh.write("driver,scenario_class,config,poi_pct,nim_per_min,interruptions,collided\n")
        for r in self.rows:
            fh.write(f"{r.driver_id},{r.scenario_class},{r.config},"
                     f"{r.poi:.3f},{r.nim:.3f},{r.count:.3f},{int(r.collided)}\n")

    def write_json(self, fh) -> None:
        json.dump({
            "rows": [vars(r) for r in self.rows],
            "aggregates": self.aggregates,
            "reductions": self.reductions,
        }, fh, indent=2)

    def render(self) -> str:
        """Text table shaped like the published results matrix."""
        configs = sorted({r.config for r in self.rows}, key=CONFIGS.index)
        lines = []
        head = f"{'driver':<10}{'class':<8}" + "".join(f"{c:>22}" for c in configs)
        lines.append(head)
        lines.append(f"{'':<18}" + "".join(f"{'PoI%':>13}{'NIM':>9}" for _ in configs))
        key = lambda r: (r.driver_id, r.scenario_class)
        cells = {(r.driver_id, r.scenario_class, r.config): r for r in self.rows}
        for driver in sorted({r.driver_id for r in self.rows}):
            for klass in ("seen", "unseen"):
                row = f"{driver:<10}{klass:<8}"
                for c in configs:
                    r = cells.get((driver, klass, c))
                    row += (f"{r.poi:>12.1f}%{r.nim:>9.1f}" if r else f"{'-':>13}{'-':>9}")
                lines.append(row)
        row = f"{'average':<18}"
        for c in configs:
            agg = self.aggregates[c]
            row += f"{agg['poi']:>12.1f}%{agg['nim']:>9.1f}"
        lines.append(row)
        for c, red in self.reductions.items():
            lines.append(f"reduction vs predefined [{c}]: "
                         f"PoI {red['poi_pct']:.1f}%  NIM {red['nim_pct']:.1f}%")
        return "\n".join(lines)


def train_roster_model(profile: DriverProfile, cfg: ExperimentConfig) -> RewardModel:
    """Demos on the four manual scenarios, then MaxEnt recovery."""
    lib = builtin_segment_source(cfg.scenario_cfg.seed, dt=cfg.scenario_cfg.dt)
    demos = generate_demos(profile, demo_scenarios(cfg.scenario_cfg, lib),
                           seed=derive_seed(cfg.master_seed, "demos", profile.driver_id))
    basis = default_basis(cfg.grid)
    transitions = build_training_transitions(cfg.grid, ActionSet(), cfg.train_config)
    return train_irl(demos, basis, transitions, cfg.train_config)


def make_engine(profile: DriverProfile | None, config: str, scenario, reference,
                seed: int, cfg: ExperimentConfig, mode: str = "acc") -> TripEngine:
    """Canonical engine construction; the session service uses the same one
    so headless service runs replay harness trips exactly."""
    return TripEngine(
        scenario=scenario,
        reference=reference,
        grid=cfg.grid,
        profile=profile,
        rng=substream(seed, "trip"),
        adapt=config.endswith("+adapt"),
        params=cfg.adapt_params,
        gains=cfg.gains,
        mode=mode,
        config_label=config,
    )


def run_trip(profile: DriverProfile, config: str, scenario, reference,
             seed: int, cfg: ExperimentConfig) -> TripResult:
    """One closed-loop ACC trip under a controller configuration."""
    return make_engine(profile, config, scenario, reference, seed, cfg).run()


def reference_for(config: str, profile: DriverProfile, model: RewardModel | None,
                  cfg: ExperimentConfig):
    if config.startswith("predefined"):
        return HeadwayReference(predefined_tau(profile.tau_pref),
                                cfg.adapt_params.standstill_gap)
    if model is None:
        raise ValueError(f"{config} requires a trained model for {profile.driver_id}")
    return extract_dgpt(model)


def run_experiment(cfg: ExperimentConfig, roster: list | None = None,
                   models: dict | None = None, progress=None) -> ExperimentReport:
    """Full matrix: roster x {seen, unseen} x configs x repetitions.

    `models` maps driver_id -> RewardModel; missing models are trained here
    (the slow part). Seeds derive from content, so execution order is
    irrelevant to the results. Collisions flag the row instead of killing
    the run.
    """
    roster = roster if roster is not None else default_roster()
    models = dict(models) if models else {}
    needs_model = any(c.startswith("irl") for c in cfg.configs)
    if needs_model:
        for profile in roster:
            if profile.driver_id not in models:
                if progress:
                    progress(f"training {profile.driver_id}")
                models[profile.driver_id] = train_roster_model(profile, cfg)

    lib = builtin_segment_source(cfg.scenario_cfg.seed, dt=cfg.scenario_cfg.dt)
    scenario_map = {"seen": scenario_a(cfg.scenario_cfg, lib),
                    "unseen": scenario_b(cfg.scenario_cfg, lib)}
    rows = []
    for profile in roster:
        for klass, scenario in scenario_map.items():
            for config in cfg.configs:
                pois, nims, counts, collided = [], [], [], False
                for rep in range(cfg.repetitions):
                    seed = derive_seed(cfg.master_seed, profile.driver_id, klass,
                                       config, rep)
                    ref = reference_for(config, profile,
                                        models.get(profile.driver_id), cfg)
                    result = run_trip(profile, config, scenario, ref, seed, cfg)
                    pois.append(poi(result.log))
                    nims.append(nim(result.log))
                    counts.append(interruption_count(result.log))
                    collided = collided or result.collided
                rows.append(ReportRow(
                    driver_id=profile.driver_id, scenario_class=klass,
                    config=config, poi=float(np.mean(pois)),
                    nim=float(np.mean(nims)), count=float(np.mean(counts)),
                    reps=[{"poi": p, "nim": n} for p, n in zip(pois, nims)],
                    collided=collided))
                if progress:
                    progress(f"{profile.driver_id}/{klass}/{config} done")
    return build_report(rows)


def build_report(rows: list) -> ExperimentReport:
    aggregates = {}
    for config in {r.config for r in rows}:
        sub = [r for r in rows if r.config == config]
        aggregates[config] = {
            "poi": float(np.mean([r.poi for r in sub])),
            "nim": float(np.mean([r.nim for r in sub])),
            "count": float(np.mean([r.count for r in sub])),
        }
    reductions = {}
    base = aggregates.get("predefined")
    if base:
        for config, agg in aggregates.items():
            if config == "predefined":
                continue
            reductions[config] = {
                "poi_pct": 100.0 * (base["poi"] - agg["poi"]) / base["poi"] if base["poi"] else 0.0,
                "nim_pct": 100.0 * (base["nim"] - agg["nim"]) / base["nim"] if base["nim"] else 0.0,
            }
    return ExperimentReport(rows=rows, aggregates=aggregates, reductions=reductions)


def run_adaptation_sequence(profile: DriverProfile, scenario, reference,
                            n_trips: int, seed: int,
                            cfg: ExperimentConfig) -> list:
    """Consecutive adaptive trips on one scenario, carrying the table over."""
    results = []
    ref = reference
    for trip_idx in range(n_trips):
        result = run_trip(profile, "predefined+adapt" if isinstance(ref, HeadwayReference)
                          else "irl+adapt", scenario, ref,
                          derive_seed(seed, "sequence", trip_idx), cfg)
        results.append(result)
        ref = result.final_table
    return results
