"""Longitudinal gap controllers.

A PID tracker referenced to a gap-preference table (linear interpolation
between speed bins) and the constant-time-headway baseline found on
production ACCs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dgpt import Dgpt
from .mdp import StateGrid


@dataclass(frozen=True)
class PidGains:
    """Defaults are stable across the whole safety headway envelope: the
    discrete derivative feeds back through the reference slope (gain ~ kd
    times the local headway), so kd stays below 1/safe_tg_max."""

    kp: float = 0.6
    ki: float = 0.02
    kd: float = 0.2
    integral_limit: float = 20.0
    a_min: float = -3.0
    a_max: float = 3.0

    def __post_init__(self):
        if min(self.kp, self.ki, self.kd) < 0:
            raise ValueError("gains must be >= 0")
        if not (self.a_min < 0 < self.a_max):
            raise ValueError("output limits must bracket 0")
        if self.integral_limit <= 0:
            raise ValueError("integral limit must be positive")


@dataclass(frozen=True)
class ControllerState:
    integral: float = 0.0
    prev_error: float | None = None


@dataclass(frozen=True)
class HeadwayReference:
    """Constant time headway; production levels are 1, 3 or 4 seconds."""

    tau: float
    standstill_gap: float = 2.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("headway must be positive")


def gap_error(desired: float, g: float) -> float:
    """e = desired - g."""
    return desired - g


def reference_gap(ref: Dgpt | HeadwayReference, v: float) -> float:
    """Desired gap at speed v from either reference kind."""
    if isinstance(ref, HeadwayReference):
        return predefined_reference(ref.tau, ref.standstill_gap, v)
    return ref.lookup(v)


def predefined_reference(tau: float, standstill_gap: float, v: float) -> float:
    if v < 0:
        raise ValueError("speed must be >= 0")
    return tau * v + standstill_gap


def headway_to_dgpt(tau: float, standstill_gap: float, grid: StateGrid,
                    driver_id: str = "") -> Dgpt:
    """Materialize the constant-headway line as a table the online adaptation
    can edit; gaps cap at the grid ceiling."""
    v = grid.v_centers()
    gaps = np.minimum(tau * v + standstill_gap, grid.g_max)
    return Dgpt(v, gaps, version=0, driver_id=driver_id)


def pid_step(state: ControllerState, e: float, dt: float,
             gains: PidGains) -> tuple[float, ControllerState]:
    """One PID evaluation; returns (accel command, next state).

    Integral is trapezoidal and clamped; while the output saturates the
    accumulator is frozen at its previous value (anti-windup).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    prev = state.prev_error
    derivative = 0.0 if prev is None else (e - prev) / dt
    candidate = state.integral + 0.5 * (e + (prev if prev is not None else e)) * dt
    candidate = float(np.clip(candidate, -gains.integral_limit, gains.integral_limit))
    a_raw = gains.kp * e + gains.ki * candidate + gains.kd * derivative
    if a_raw > gains.a_max or a_raw < gains.a_min:
        a = float(np.clip(a_raw, gains.a_min, gains.a_max))
        # frozen while the error keeps pushing into saturation; errors in the
        # unwinding direction still drain the accumulator
        pushing = (a_raw > gains.a_max and e > 0) or (a_raw < gains.a_min and e < 0)
        integral = state.integral if pushing else candidate
    else:
        a = a_raw
        integral = candidate
    return a, ControllerState(integral=integral, prev_error=e)
