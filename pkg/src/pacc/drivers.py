"""Synthetic drivers with known gap preferences.

A linear car-following law whose closed-loop equilibrium sits exactly on the
preference line generates demonstrations, and a banded monitor decides when
an unsatisfying ACC reference triggers a pedal takeover. Because the ground
truth is analytic, recovery and adaptation can be tested without humans.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .irl import Demonstration
from .mdp import CfState, step_deterministic
from .scenarios import SpeedProfile
from .seeding import substream
from .trajectory import Trajectory

ACTION_CLAMP = 3.0  # m/s^2


@dataclass(frozen=True)
class DriverProfile:
    driver_id: str
    tau_pref: float  # preferred time headway [s]
    standstill_gap: float = 2.0  # preferred gap at rest [m]
    k_gap: float = 0.08  # gap feedback gain [1/s^2]
    k_speed: float = 0.6  # relative speed gain [1/s]
    discomfort_band: float = 0.25  # relative gap error that feels wrong
    satisfy_band: float = 0.08  # relative error at which a takeover releases
    reaction_delay: float = 0.7  # s of sustained discomfort before acting
    action_noise: float = 0.1  # m/s^2
    takeover_gain: float = 6.0  # gap-gain multiplier while overriding: pedal
    # corrections are short and decisive, unlike steady manual following
    drift: float = 1.0  # headway multiplier while supervising ACC; models the
    # mood/scenario preference shift between demonstration and deployment

    def __post_init__(self):
        if self.tau_pref <= 0 or self.drift <= 0:
            raise ValueError("headway and drift must be positive")
        if not (0 < self.satisfy_band < self.discomfort_band):
            raise ValueError("need 0 < satisfy_band < discomfort_band")
        if self.reaction_delay < 0:
            raise ValueError("reaction delay must be >= 0")


@dataclass(frozen=True)
class MonitorState:
    dwell: float = 0.0
    active: bool = False
    pedal: str = "none"


def preferred_gap(profile: DriverProfile, v: float, drifted: bool = False) -> float:
    """The driver's preference line; `drifted` applies the deployment shift."""
    if v < 0:
        raise ValueError("speed must be >= 0")
    tau = profile.tau_pref * (profile.drift if drifted else 1.0)
    return tau * v + profile.standstill_gap


def manual_drive(profile: DriverProfile, s: CfState, rng: np.random.Generator,
                 drifted: bool = False, gain_scale: float = 1.0) -> float:
    """Linear car-following command; equilibrium is the preference line."""
    a = (gain_scale * profile.k_gap * (s.g - preferred_gap(profile, s.v, drifted))
         + profile.k_speed * (s.v_f - s.v))
    if profile.action_noise > 0:
        a += profile.action_noise * rng.standard_normal()
    return float(np.clip(a, -ACTION_CLAMP, ACTION_CLAMP))


def monitor(profile: DriverProfile, state: MonitorState, s: CfState, dt: float,
            rng: np.random.Generator) -> tuple[MonitorState, float | None]:
    """One supervision tick while ACC drives.

    Sustained relative gap error beyond the discomfort band starts a takeover
    after the reaction delay; the driver then drives manually until the error
    falls inside the satisfy band. Returns (state, accel command or None).
    The comparison happens against the drifted preference: this is the
    deployed driver, not the demonstrator.
    """
    want = preferred_gap(profile, s.v, drifted=True)
    eps = (s.g - want) / want
    if state.active:
        if abs(eps) <= profile.satisfy_band:
            return MonitorState(), None  # release; control returns this tick
        return state, manual_drive(profile, s, rng, drifted=True,
                                   gain_scale=profile.takeover_gain)
    if abs(eps) > profile.discomfort_band:
        if state.dwell >= profile.reaction_delay:
            pedal = "accel" if eps > 0 else "brake"
            nxt = MonitorState(dwell=state.dwell, active=True, pedal=pedal)
            return nxt, manual_drive(profile, s, rng, drifted=True,
                                     gain_scale=profile.takeover_gain)
        return replace(state, dwell=state.dwell + dt), None
    return MonitorState(), None


def _pedal_of(a: float, threshold: float = 0.05) -> str:
    if a > threshold:
        return "accel"
    if a < -threshold:
        return "brake"
    return "none"


def generate_demos(profile: DriverProfile, scenarios, seed: int,
                   dt: float = 0.1) -> list:
    """Closed-loop manual driving over each scenario profile.

    Raises on collision (a sign of unstable profile parameters), reporting
    the scenario and tick.
    """
    if not scenarios:
        raise ValueError("need at least one scenario")
    demos = []
    for scenario in scenarios:
        rng = substream(seed, "demo", profile.driver_id, scenario.scenario_id)
        v0 = float(scenario.samples[0])
        s = CfState(v0, preferred_gap(profile, v0), v0)
        rows = []
        for k in range(len(scenario)):
            s = CfState(s.v, s.g, float(scenario.samples[k]))
            a = manual_drive(profile, s, rng)
            rows.append((k * dt, s.v, s.g, s.v_f, a, _pedal_of(a), "manual"))
            s, collided = step_deterministic(s, a, dt)
            if collided:
                raise RuntimeError(
                    f"collision in demo generation: {scenario.scenario_id} tick {k}"
                )
        demos.append(Demonstration(Trajectory.from_rows(rows),
                                   driver_id=profile.driver_id,
                                   scenario_id=scenario.scenario_id))
    return demos


def default_roster() -> list:
    """Five drivers spanning low to high headway styles.

    Bands, delays and drifts vary per driver; drifts point away from the
    nearest production headway level so a mismatched predefined reference
    stays mismatched at deployment time.
    """
    return [
        DriverProfile("driver1", tau_pref=1.2, discomfort_band=0.20,
                      satisfy_band=0.08, reaction_delay=0.5, drift=1.45),
        DriverProfile("driver2", tau_pref=1.6, discomfort_band=0.22,
                      satisfy_band=0.07, reaction_delay=0.7, drift=1.45),
        DriverProfile("driver3", tau_pref=2.0, discomfort_band=0.24,
                      satisfy_band=0.08, reaction_delay=0.9, drift=0.70),
        DriverProfile("driver4", tau_pref=2.6, discomfort_band=0.20,
                      satisfy_band=0.06, reaction_delay=0.6, drift=0.70),
        DriverProfile("driver5", tau_pref=3.2, discomfort_band=0.18,
                      satisfy_band=0.08, reaction_delay=0.8, drift=1.40),
    ]
