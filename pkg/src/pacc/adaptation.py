"""Online gap-table adaptation from takeover feedback.

Pipeline, run once at each takeover release: behavior filter -> steady-state
gap prediction -> local table update with smoothing -> safety clamp. Short or
feeble takeovers, and releases with a large residual speed difference, leave
the table untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dgpt import Dgpt, smoothing_matrix
from .mdp import CfState, StateGrid
from .trajectory import Trajectory


@dataclass(frozen=True)
class AdaptParams:
    min_takeover_time: float = 1.0  # s; shorter takeovers are noise
    coast_down_coeff: float = 2.0  # s; gap closure while speeds equalize
    max_speed_diff: float = 3.0  # m/s; larger at release = no steady state
    window_size: int = 5  # speed bins
    safe_tg_min: float = 0.8  # s
    safe_tg_max: float = 4.0  # s
    standstill_gap: float = 2.0  # m
    min_input_accel: float = 0.3  # m/s^2; small-input floor

    def __post_init__(self):
        for name in ("min_takeover_time", "coast_down_coeff", "max_speed_diff",
                     "window_size", "safe_tg_min", "safe_tg_max",
                     "standstill_gap", "min_input_accel"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.safe_tg_min >= self.safe_tg_max:
            raise ValueError("safe_tg_min must be below safe_tg_max")
        if self.window_size % 2 == 0:
            raise ValueError("window_size must be odd")


@dataclass
class TakeoverState:
    """Live bookkeeping while a pedal override is in progress."""

    active: bool = False
    elapsed: float = 0.0
    pedal: str = "none"
    release_snapshot: CfState | None = None

    def begin(self, pedal: str) -> None:
        self.active = True
        self.elapsed = 0.0
        self.pedal = pedal
        self.release_snapshot = None


@dataclass(frozen=True)
class TakeoverSegment:
    """Contiguous pedal-override slice plus the state at release."""

    traj: Trajectory
    duration: float
    release_state: CfState
    pedal: str
    start_tick: int = 0
    end_tick: int = 0

    def __post_init__(self):
        if len(self.traj) == 0:
            raise ValueError("empty takeover segment")
        dt = self.traj.dt if len(self.traj) > 1 else self.duration / len(self.traj)
        if dt > 0 and abs(self.duration - len(self.traj) * dt) > 1e-6:
            raise ValueError("duration inconsistent with tick count")


def behavior_filter(seg: TakeoverSegment, params: AdaptParams) -> bool:
    """Accept only takeovers long enough and with a meaningful pedal input.

    Both thresholds are closed: duration exactly at the minimum accepts.
    """
    if seg.duration < params.min_takeover_time:
        return False
    return float(np.max(np.abs(seg.traj.a))) >= params.min_input_accel


def predict_steady_gap(release: CfState, params: AdaptParams) -> float:
    """Gap the driver is steering toward, from the release-time state.

    Still closing on the lead (v > v_f): the gap keeps shrinking by roughly
    the speed difference times the coast-down constant before speeds
    equalize. Otherwise the release gap is already the steady one.
    """
    if release.v_f >= release.v:
        g = release.g
    else:
        g = release.g - params.coast_down_coeff * (release.v - release.v_f)
    return max(g, params.standstill_gap)


def apply_update(table: Dgpt, v_release: float, g_desire: float,
                 window_size: int) -> Dgpt:
    """Write the predicted gap into the release-speed bin and smooth locally.

    The edit delta is spread through the centered moving-average kernel, so
    bins further than (window_size - 1) // 2 from the written bin never move
    and a flat table written with its own value is a fixed point. Bumps the
    version.
    """
    k = table.bin_of(v_release)
    delta = g_desire - table.gaps[k]
    kernel = smoothing_matrix(len(table.gaps), window_size)[:, k]
    return table.with_gaps(table.gaps + delta * kernel)


def safety_clamp(table: Dgpt, grid: StateGrid, params: AdaptParams) -> Dgpt:
    """Clamp every bin into the safety time-gap envelope.

    Bounds are distances: safe_tg * v + standstill gap, with the ceiling also
    capped at the grid's top gap bin. Does not bump the version; the pipeline
    counts as a single edit.
    """
    v = np.asarray(table.speeds, dtype=float)
    lo = params.safe_tg_min * v + params.standstill_gap
    hi = np.minimum(params.safe_tg_max * v + params.standstill_gap, grid.g_max)
    return table.with_gaps(np.clip(table.gaps, lo, hi), bump_version=False)


def on_takeover_end(table: Dgpt, seg: TakeoverSegment, params: AdaptParams,
                    grid: StateGrid) -> tuple[Dgpt, bool]:
    """Full pipeline at a takeover's falling edge.

    Returns (table, accepted). Rejected segments return the input table
    object unchanged. A release with |v_f - v| above the speed-difference
    guard is treated as transient and rejected as well.
    """
    if not behavior_filter(seg, params):
        return table, False
    release = seg.release_state
    if abs(release.v_f - release.v) > params.max_speed_diff:
        return table, False
    g_desire = predict_steady_gap(release, params)
    updated = apply_update(table, release.v, g_desire, params.window_size)
    return safety_clamp(updated, grid, params), True
