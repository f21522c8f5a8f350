"""Closed-loop trip engine.

One tick path shared by the batch harness and the realtime session service,
so a headless service run reproduces a harness run bit for bit. Each tick:
lead speed comes from the scenario, the ego acceleration comes from the
pedal override when one is active (synthetic monitor or external client)
and from the gap PID otherwise, and the adaptation pipeline runs at every
takeover release.

Note the loop feeds the PID the negated table error: the table convention
e = desired - g is positive when the ego sits closer than desired, where the
physical response is to brake, while the PID combines positive gains.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adaptation import AdaptParams, TakeoverSegment, on_takeover_end
from .controller import (ControllerState, HeadwayReference, PidGains,
                         gap_error, headway_to_dgpt, pid_step, reference_gap)
from .dgpt import Dgpt
from .drivers import DriverProfile, MonitorState, manual_drive, monitor, preferred_gap
from .mdp import CfState, NoiseSpec, StateGrid, step_deterministic, step_stochastic
from .scenarios import SpeedProfile
from .trajectory import Trajectory

PEDAL_ACCEL = 1.5  # m/s^2 commanded by a held (binary) accelerator
PEDAL_BRAKE = -2.5


@dataclass
class TickOutput:
    tick: int
    state: CfState
    a: float
    pedal: str
    override: bool
    events: list = field(default_factory=list)


@dataclass
class TripResult:
    trajectory: Trajectory
    log: "TakeoverLog"
    final_table: Dgpt | None
    segments: list
    accepted_takeovers: int
    collided: bool
    scenario_id: str
    config: str


@dataclass(frozen=True)
class TakeoverLog:
    """Ordered, disjoint override intervals in ticks, plus the trip extent."""

    intervals: tuple
    total_ticks: int
    dt: float

    def __post_init__(self):
        prev_end = 0
        for start, end, pedal in self.intervals:
            if not (0 <= start < end <= self.total_ticks):
                raise ValueError(f"interval ({start}, {end}) outside trip")
            if start < prev_end:
                raise ValueError("intervals overlap or are unordered")
            prev_end = end


class TripEngine:
    def __init__(
        self,
        scenario: SpeedProfile,
        reference: Dgpt | HeadwayReference | None,
        grid: StateGrid,
        profile: DriverProfile | None = None,
        rng: np.random.Generator | None = None,
        adapt: bool = False,
        params: AdaptParams | None = None,
        gains: PidGains | None = None,
        noise: NoiseSpec | None = None,
        mode: str = "acc",
        config_label: str = "",
        pedal_accel: float = PEDAL_ACCEL,
        pedal_brake: float = PEDAL_BRAKE,
    ):
        if mode not in ("acc", "manual"):
            raise ValueError(f"bad mode {mode!r}")
        if mode == "acc" and reference is None:
            raise ValueError("acc mode needs a gap reference")
        self.scenario = scenario
        self.grid = grid
        self.profile = profile
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.adapt = adapt
        self.params = params or AdaptParams()
        self.gains = gains or PidGains()
        self.noise = noise
        self.mode = mode
        self.dt = scenario.dt
        self.config_label = config_label
        self.pedal_cmd = {"accel": pedal_accel, "brake": pedal_brake}

        if adapt and isinstance(reference, HeadwayReference):
            reference = headway_to_dgpt(reference.tau, reference.standstill_gap, grid)
        self.reference = reference

        v0 = float(scenario.samples[0])
        if mode == "manual":
            g0 = preferred_gap(profile, v0)
        else:
            g0 = reference_gap(self.reference, v0)
        self.v = v0
        self.g = g0
        self.k = 0
        self.collided = False

        self.cstate = ControllerState()
        self.mstate = MonitorState()
        self.rows = []
        self.intervals = []
        self.segments = []
        self.accepted = 0
        self._in_takeover = False
        self._start_tick = 0
        self._pedal_id = "none"

    @property
    def finished(self) -> bool:
        return self.collided or self.k >= len(self.scenario)

    @property
    def table(self) -> Dgpt | None:
        return self.reference if isinstance(self.reference, Dgpt) else None

    def tick(self, external_pedal: str | None = None) -> TickOutput:
        """Advance one dt. `external_pedal` is the held pedal reported by a
        client ("none"/"accel"/"brake"); None selects the synthetic monitor."""
        if self.finished:
            raise RuntimeError("trip already finished")
        k = self.k
        s = CfState(self.v, self.g, float(self.scenario.samples[k]))
        events = []

        if self.mode == "manual":
            if external_pedal is not None:  # binary-pedal human driving
                a = self.pedal_cmd.get(external_pedal, 0.0)
                pedal = external_pedal if external_pedal in ("accel", "brake") else "none"
            else:
                if self.profile is None:
                    raise RuntimeError("manual mode without a driver profile or client input")
                a = manual_drive(self.profile, s, self.rng)
                pedal = "accel" if a > 0.05 else ("brake" if a < -0.05 else "none")
            override = False
        else:
            if external_pedal is not None:
                override = external_pedal in ("accel", "brake")
                pedal = external_pedal if override else "none"
                a_cmd = self.pedal_cmd.get(external_pedal, 0.0)
            else:
                self.mstate, cmd = monitor(self.profile, self.mstate, s, self.dt, self.rng)
                override = cmd is not None
                pedal = self.mstate.pedal if override else "none"
                a_cmd = cmd if override else 0.0
            if override:
                a = a_cmd
            else:
                e = gap_error(reference_gap(self.reference, s.v), s.g)
                a, self.cstate = pid_step(self.cstate, -e, self.dt, self.gains)
            events.extend(self._takeover_edges(k, s, override, pedal))

        self.rows.append((k * self.dt, s.v, s.g, s.v_f, a, pedal, self.mode))

        if self.noise is not None:
            nxt, collided = step_stochastic(s, a, self.dt, self.noise, self.rng)
        else:
            nxt, collided = step_deterministic(s, a, self.dt)
        self.v, self.g = nxt.v, nxt.g
        self.k = k + 1
        if collided:
            self.collided = True
            if self._in_takeover:
                self.intervals.append((self._start_tick, self.k, self._pedal_id))
                self._in_takeover = False
            events.append(("collision",))
        elif self.k >= len(self.scenario) and self._in_takeover:
            self.intervals.append((self._start_tick, self.k, self._pedal_id))
            self._in_takeover = False
        return TickOutput(tick=k, state=s, a=a, pedal=pedal, override=override,
                          events=events)

    def _takeover_edges(self, k: int, s: CfState, override: bool, pedal: str) -> list:
        events = []
        if override and not self._in_takeover:
            self._in_takeover = True
            self._start_tick = k
            self._pedal_id = pedal
            events.append(("takeover_start", pedal))
        elif not override and self._in_takeover:
            self._in_takeover = False
            self.intervals.append((self._start_tick, k, self._pedal_id))
            seg = TakeoverSegment(
                traj=Trajectory.from_rows(self.rows[self._start_tick:k]),
                duration=(k - self._start_tick) * self.dt,
                release_state=s,
                pedal=self._pedal_id,
                start_tick=self._start_tick,
                end_tick=k,
            )
            self.segments.append(seg)
            accepted = False
            if self.adapt:
                self.reference, accepted = on_takeover_end(
                    self.reference, seg, self.params, self.grid)
                if accepted:
                    self.accepted += 1
            events.append(("takeover_end", accepted))
            self.cstate = ControllerState()  # clean hand-back, no stale windup
        return events

    def run(self) -> TripResult:
        while not self.finished:
            self.tick()
        return self.result()

    def result(self) -> TripResult:
        return TripResult(
            trajectory=Trajectory.from_rows(self.rows),
            log=TakeoverLog(tuple(self.intervals), self.k, self.dt),
            final_table=self.table,
            segments=list(self.segments),
            accepted_takeovers=self.accepted,
            collided=self.collided,
            scenario_id=self.scenario.scenario_id,
            config=self.config_label,
        )
