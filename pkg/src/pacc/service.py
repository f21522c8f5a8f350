"""Realtime session host for human-in-the-loop trips.

A Session wraps the trip engine and turns ticks into wire messages; the
SessionService adds the fixed-rate loop, client transport (WebSocket, one
JSON object per text frame) and trip archival. Simulation never depends on
transport: a headless session with a synthetic driver replays a harness trip
bit for bit, and broadcasts are fire-and-forget.

Outbound kinds: state, dgpt_snapshot, takeover_event, session_control, error.
Inbound kinds: pedal_input {pedal, pressed}, mode_toggle {mode},
session_control {action}. Every outbound message carries the session tick.
Keyboard pedals are binary; a held accelerator commands +1.5 m/s^2 and the
brake -2.5 m/s^2 (configurable), which is enough to express shorten vs
lengthen intent.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import time
from dataclasses import dataclass, field

from .adaptation import AdaptParams
from .controller import HeadwayReference
from .drivers import DriverProfile
from .experiments import ExperimentConfig, make_engine
from .scenarios import scenario_by_id
from .store import ModelStore, StoreError

log = logging.getLogger(__name__)


class SessionError(RuntimeError):
    pass


@dataclass(frozen=True)
class SessionSpec:
    driver_id: str
    scenario_id: str
    config: str = "irl+adapt"  # controller config, or "manual" for demos
    seed: int = 0
    predefined_tau: float = 3.0
    auto_retrain: bool = False


def start_session(spec: SessionSpec, store: ModelStore | None,
                  cfg: ExperimentConfig | None = None,
                  profile: DriverProfile | None = None) -> "Session":
    """Build a live session; IRL configs load the stored table for the driver.

    Raises SessionError (surfaced as an error message by the transport) when
    the driver has no stored model or the scenario is unknown.
    """
    cfg = cfg or ExperimentConfig()
    try:
        scenario = scenario_by_id(spec.scenario_id, cfg.scenario_cfg)
    except KeyError as exc:
        raise SessionError(str(exc)) from None
    mode = "manual" if spec.config == "manual" else "acc"
    reference = None
    if mode == "acc":
        if spec.config.startswith("predefined"):
            reference = HeadwayReference(spec.predefined_tau,
                                         cfg.adapt_params.standstill_gap)
        else:
            if store is None:
                raise SessionError("IRL configs need a model store")
            try:
                reference = store.load_model(spec.driver_id).table
            except StoreError as exc:
                raise SessionError(str(exc)) from None
    engine = make_engine(profile, spec.config, scenario, reference, spec.seed,
                         cfg, mode=mode)
    return Session(spec, engine, cfg, store)


class Session:
    """Tick-level session logic, independent of any transport."""

    def __init__(self, spec: SessionSpec, engine, cfg: ExperimentConfig,
                 store: ModelStore | None):
        self.spec = spec
        self.engine = engine
        self.cfg = cfg
        self.store = store
        self.paused = False
        self.ended = False
        self.trip_id = None

    @property
    def tick_count(self) -> int:
        return self.engine.k

    @property
    def dt(self) -> float:
        return self.engine.dt

    @property
    def finished(self) -> bool:
        return self.ended or self.engine.finished

    def hello_messages(self) -> list:
        params: AdaptParams = self.engine.params
        msgs = [{
            "kind": "session_control", "tick": self.engine.k, "event": "started",
            "driver": self.spec.driver_id, "scenario": self.spec.scenario_id,
            "config": self.spec.config, "mode": self.engine.mode,
            "dt": self.engine.dt, "ticks_total": len(self.engine.scenario),
            "params": {
                "safe_tg_min": params.safe_tg_min,
                "safe_tg_max": params.safe_tg_max,
                "standstill_gap": params.standstill_gap,
                "window_size": params.window_size,
            },
            "grid": {"v_max": self.engine.grid.v_max, "g_max": self.engine.grid.g_max},
        }]
        snap = self._snapshot()
        if snap:
            msgs.append(snap)
        return msgs

    def _snapshot(self) -> dict | None:
        table = self.engine.table
        if table is None:
            return None
        return {
            "kind": "dgpt_snapshot", "tick": self.engine.k,
            "version": table.version,
            "speeds": [float(x) for x in table.speeds],
            "gaps": [float(x) for x in table.gaps],
        }

    def tick(self, external_pedal: str | None = None) -> list:
        """Advance one dt and return the broadcast messages."""
        if self.finished:
            return []
        out = self.engine.tick(external_pedal)
        msgs = []
        for event in out.events:
            if event[0] == "takeover_start":
                msgs.append({"kind": "takeover_event", "tick": out.tick,
                             "phase": "start", "pedal": event[1]})
            elif event[0] == "takeover_end":
                msgs.append({"kind": "takeover_event", "tick": out.tick,
                             "phase": "end", "accepted": bool(event[1])})
                if event[1]:
                    msgs.append(self._snapshot())
            elif event[0] == "collision":
                msgs.append({"kind": "session_control", "tick": out.tick,
                             "event": "collision"})
        msgs.append({
            "kind": "state", "tick": out.tick, "t": out.tick * self.engine.dt,
            "v": out.state.v, "g": out.state.g, "v_f": out.state.v_f,
            "a": out.a, "pedal": out.pedal, "mode": self.engine.mode,
            "override": out.override,
        })
        return msgs

    def set_mode(self, mode: str) -> None:
        if mode not in ("manual", "acc"):
            raise SessionError(f"bad mode {mode!r}")
        if mode == "acc" and self.engine.reference is None:
            raise SessionError("no gap reference loaded; cannot engage ACC")
        self.engine.mode = mode

    def end(self) -> str | None:
        """Archive the trip (and optionally retrain); returns the trip id."""
        if self.ended:
            return self.trip_id
        self.ended = True
        if self.store is not None and self.engine.k > 0:
            result = self.engine.result()
            self.trip_id = self.store.archive_trip(
                self.spec.driver_id, result.trajectory, result.segments,
                scenario_id=self.spec.scenario_id, config=self.spec.config)
            if self.spec.auto_retrain and result.segments:
                try:
                    self.store.retrain_after_trip(self.spec.driver_id)
                except StoreError as exc:
                    log.warning("auto-retrain skipped: %s", exc)
        return self.trip_id


class _ClientBuffer:
    """Outbound buffer; under pressure, stale state frames coalesce while
    event frames are always kept."""

    LIMIT = 512

    def __init__(self):
        self.cond = threading.Condition()
        self.items = []
        self.closed = False

    def put(self, msgs) -> None:
        with self.cond:
            self.items.extend(msgs)
            if len(self.items) > self.LIMIT:
                keep = [m for m in self.items if m["kind"] != "state"]
                states = [m for m in self.items if m["kind"] == "state"]
                self.items = keep + states[-1:]
            self.cond.notify()

    def drain(self, timeout: float = 0.5) -> list:
        with self.cond:
            if not self.items and not self.closed:
                self.cond.wait(timeout)
            out, self.items = self.items, []
            return out

    def close(self) -> None:
        with self.cond:
            self.closed = True
            self.cond.notify()


class SessionService:
    """Fixed-rate loop plus broadcast fan-out and inbound input handling.

    `synthetic=True` drives the trip with the session's monitor model
    (headless or demo playback); otherwise held-pedal state from clients
    commands the vehicle, brake taking precedence when both are held.
    """

    def __init__(self, session: Session, synthetic: bool = False,
                 realtime: bool = True, event_log=None):
        self.session = session
        self.synthetic = synthetic
        self.realtime = realtime
        self.inbound = queue.Queue()
        self.clients = {}
        self._clients_lock = threading.Lock()
        self._held = {"accel": False, "brake": False}
        self._stop = threading.Event()
        self._log_fh = open(event_log, "a", encoding="utf-8") if event_log else None
        self._log_lock = threading.Lock()

    # -- client fan-out ----------------------------------------------------

    def attach(self, name: str) -> _ClientBuffer:
        buf = _ClientBuffer()
        with self._clients_lock:
            self.clients[name] = buf
        buf.put(self.session.hello_messages())
        return buf

    def detach(self, name: str) -> None:
        with self._clients_lock:
            buf = self.clients.pop(name, None)
        if buf:
            buf.close()

    def broadcast(self, msgs) -> None:
        if not msgs:
            return
        with self._clients_lock:
            buffers = list(self.clients.values())
        for buf in buffers:
            buf.put(msgs)

    # -- inbound -----------------------------------------------------------

    def submit(self, msg: dict) -> None:
        """Queue one inbound client message; applied before the next tick."""
        self.inbound.put(msg)

    def _apply_inbound(self) -> None:
        while True:
            try:
                msg = self.inbound.get_nowait()
            except queue.Empty:
                return
            kind = msg.get("kind")
            if kind == "pedal_input":
                pedal = msg.get("pedal")
                if pedal in self._held:
                    self._held[pedal] = bool(msg.get("pressed"))
                    self._log({"event": "pedal_input", "pedal": pedal,
                               "pressed": bool(msg.get("pressed")),
                               "recv_tick": self.session.tick_count})
            elif kind == "mode_toggle":
                try:
                    self.session.set_mode(msg.get("mode", ""))
                except SessionError as exc:
                    self.broadcast([{"kind": "error", "tick": self.session.tick_count,
                                     "message": str(exc)}])
            elif kind == "session_control":
                action = msg.get("action")
                if action == "pause":
                    self.session.paused = True
                elif action == "resume":
                    self.session.paused = False
                elif action == "end":
                    self._stop.set()

    def held_pedal(self) -> str:
        if self._held["brake"]:
            return "brake"
        if self._held["accel"]:
            return "accel"
        return "none"

    def _log(self, entry: dict) -> None:
        if self._log_fh:
            with self._log_lock:
                self._log_fh.write(json.dumps(entry) + "\n")
                self._log_fh.flush()

    # -- loop ----------------------------------------------------------------

    def step(self) -> list:
        """One loop iteration: drain inputs, advance, broadcast."""
        self._apply_inbound()
        if self.session.paused or self.session.finished:
            return []
        pedal = None if self.synthetic else self.held_pedal()
        msgs = self.session.tick(pedal)
        for m in msgs:
            if m["kind"] == "takeover_event":
                self._log({"event": f"takeover_{m['phase']}", "tick": m["tick"],
                           "accepted": m.get("accepted")})
        self.broadcast(msgs)
        return msgs

    def run(self) -> str | None:
        """Run to completion; paced at dt unless realtime=False. Simulation
        ticks are never skipped when the loop falls behind."""
        deadline = time.monotonic()
        while not self._stop.is_set() and not self.session.finished:
            self.step()
            if self.realtime:
                deadline += self.session.dt
                delay = deadline - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
        trip_id = self.session.end()
        self.broadcast([{"kind": "session_control", "tick": self.session.tick_count,
                         "event": "ended", "trip_id": trip_id}])
        if self._log_fh:
            self._log_fh.close()
            self._log_fh = None
        return trip_id

    def stop(self) -> None:
        self._stop.set()


def serve(service: SessionService, host: str = "127.0.0.1", port: int = 8765):
    """Blocking WebSocket host around a service; returns the trip id."""
    from websockets.sync.server import serve as ws_serve

    counter = {"n": 0}

    def handler(ws):
        counter["n"] += 1
        name = f"client-{counter['n']}"
        buf = service.attach(name)
        sender = threading.Thread(target=_sender, args=(ws, buf), daemon=True)
        sender.start()
        try:
            for raw in ws:
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    buf.put([{"kind": "error", "tick": service.session.tick_count,
                              "message": "malformed message"}])
                    continue
                service.submit(msg)
        except Exception:
            pass
        finally:
            service.detach(name)

    def _sender(ws, buf: _ClientBuffer):
        try:
            while not buf.closed or buf.items:
                for msg in buf.drain():
                    ws.send(json.dumps(msg))
        except Exception:
            pass

    with ws_serve(handler, host, port) as server:
        acceptor = threading.Thread(target=server.serve_forever, daemon=True)
        acceptor.start()
        loop = threading.Thread(target=service.run, daemon=True)
        loop.start()
        try:
            while loop.is_alive():
                loop.join(timeout=0.2)
        finally:
            service.stop()
            loop.join(timeout=2.0)
            server.shutdown()
    return service.session.trip_id
