import json
import threading
import time

import numpy as np
import pytest

from pacc.controller import HeadwayReference
from pacc.drivers import default_roster
from pacc.experiments import ExperimentConfig, run_trip
from pacc.scenarios import SynthesisConfig, scenario_by_id
from pacc.service import (Session, SessionError, SessionService, SessionSpec,
                          serve, start_session)
from pacc.store import ModelStore


@pytest.fixture(scope="module")
def cfg():
    return ExperimentConfig(scenario_cfg=SynthesisConfig(duration=60.0))


@pytest.fixture
def store(tmp_path):
    return ModelStore(tmp_path / "store")


def synthetic_session(cfg, store=None, config="predefined+adapt", seed=3,
                      driver_idx=0):
    profile = default_roster()[driver_idx]
    spec = SessionSpec(driver_id=profile.driver_id, scenario_id="scenario-a",
                       config=config, seed=seed, predefined_tau=4.0)
    return start_session(spec, store, cfg, profile=profile)


class TestStartSession:
    def test_unknown_scenario_rejected(self, cfg):
        spec = SessionSpec(driver_id="driver1", scenario_id="nope")
        with pytest.raises(SessionError):
            start_session(spec, None, cfg)

    def test_irl_without_model_rejected(self, cfg, store):
        spec = SessionSpec(driver_id="driver1", scenario_id="scenario-a",
                           config="irl")
        with pytest.raises(SessionError):
            start_session(spec, store, cfg)

    def test_hello_carries_params_and_snapshot(self, cfg):
        session = synthetic_session(cfg)
        msgs = session.hello_messages()
        kinds = [m["kind"] for m in msgs]
        assert kinds[0] == "session_control"
        assert "dgpt_snapshot" in kinds
        hello = msgs[0]
        assert hello["params"]["safe_tg_max"] == cfg.adapt_params.safe_tg_max
        assert hello["dt"] == pytest.approx(0.1)

    def test_manual_session_has_no_reference(self, cfg):
        profile = default_roster()[0]
        spec = SessionSpec(driver_id=profile.driver_id,
                           scenario_id="scenario-a", config="manual")
        session = start_session(spec, None, cfg, profile=profile)
        assert session.engine.reference is None
        with pytest.raises(SessionError):
            session.set_mode("acc")


class TestHeadlessEquivalence:
    def test_service_reproduces_run_trip_bit_for_bit(self, cfg):
        profile = default_roster()[0]
        scenario = scenario_by_id("scenario-a", cfg.scenario_cfg)
        ref = HeadwayReference(4.0, cfg.adapt_params.standstill_gap)
        want = run_trip(profile, "predefined+adapt", scenario, ref, 3, cfg)

        session = synthetic_session(cfg, config="predefined+adapt", seed=3)
        service = SessionService(session, synthetic=True, realtime=False)
        service.run()
        got = session.engine.result()
        np.testing.assert_array_equal(got.trajectory.v, want.trajectory.v)
        np.testing.assert_array_equal(got.trajectory.g, want.trajectory.g)
        np.testing.assert_array_equal(got.trajectory.a, want.trajectory.a)
        assert got.log.intervals == want.log.intervals
        np.testing.assert_array_equal(got.final_table.gaps,
                                      want.final_table.gaps)

    def test_broadcast_decoupling(self, cfg):
        # trajectory identical whether 0 or 3 clients are attached
        base = synthetic_session(cfg, seed=5)
        SessionService(base, synthetic=True, realtime=False).run()

        session = synthetic_session(cfg, seed=5)
        service = SessionService(session, synthetic=True, realtime=False)
        for i in range(3):
            service.attach(f"watcher-{i}")
        service.run()
        np.testing.assert_array_equal(session.engine.result().trajectory.v,
                                      base.engine.result().trajectory.v)


class TestInputLatency:
    def test_pedal_applies_next_tick(self, cfg):
        session = synthetic_session(cfg, config="predefined")
        service = SessionService(session, synthetic=False, realtime=False)
        for _ in range(5):
            service.step()
        service.submit({"kind": "pedal_input", "pedal": "brake", "pressed": True})
        msgs = service.step()  # the very next tick must show the override
        state = [m for m in msgs if m["kind"] == "state"][0]
        assert state["override"] is True
        assert state["pedal"] == "brake"
        events = [m for m in msgs if m["kind"] == "takeover_event"]
        assert events and events[0]["phase"] == "start"

    def test_release_closes_segment(self, cfg):
        session = synthetic_session(cfg, config="predefined+adapt")
        service = SessionService(session, synthetic=False, realtime=False)
        service.step()
        service.submit({"kind": "pedal_input", "pedal": "brake", "pressed": True})
        for _ in range(30):
            service.step()
        service.submit({"kind": "pedal_input", "pedal": "brake", "pressed": False})
        msgs = service.step()
        ends = [m for m in msgs if m["kind"] == "takeover_event"
                and m["phase"] == "end"]
        assert len(ends) == 1

    def test_brake_precedence_when_both_held(self, cfg):
        session = synthetic_session(cfg, config="predefined")
        service = SessionService(session, synthetic=False, realtime=False)
        service.submit({"kind": "pedal_input", "pedal": "accel", "pressed": True})
        service.submit({"kind": "pedal_input", "pedal": "brake", "pressed": True})
        msgs = service.step()
        state = [m for m in msgs if m["kind"] == "state"][0]
        assert state["pedal"] == "brake"


class TestSnapshots:
    def test_snapshot_version_matches_live_table(self, cfg):
        session = synthetic_session(cfg, config="predefined+adapt", seed=7)
        service = SessionService(session, synthetic=True, realtime=False)
        seen = []
        while not session.finished:
            for m in service.step():
                if m["kind"] == "dgpt_snapshot":
                    seen.append((m["version"], session.engine.table.version))
        assert seen, "expected at least one accepted edit on this seed"
        for wire_version, live_version in seen:
            assert wire_version == live_version

    def test_every_outbound_carries_tick(self, cfg):
        session = synthetic_session(cfg)
        for m in session.hello_messages():
            assert "tick" in m
        service = SessionService(session, synthetic=True, realtime=False)
        for _ in range(50):
            for m in service.step():
                assert "tick" in m


class TestEndSession:
    def test_archive_counts_match(self, cfg, store):
        session = synthetic_session(cfg, store=store, config="predefined+adapt",
                                    seed=9)
        service = SessionService(session, synthetic=True, realtime=False)
        trip_id = service.run()
        assert trip_id is not None
        profile_id = session.spec.driver_id
        segs = store.load_segments(profile_id, trip_id)
        assert len(segs) == len(session.engine.segments)
        from pacc.trajectory import read_trajectory
        import os
        path = os.path.join(store.root, profile_id, "trips", trip_id,
                            "trajectory.csv")
        assert len(read_trajectory(path)) == session.engine.k

    def test_zero_takeover_trip_archives_empty_index(self, cfg, store):
        profile = default_roster()[0]
        from dataclasses import replace
        calm = replace(profile, drift=1.0, discomfort_band=5.0)
        spec = SessionSpec(driver_id=calm.driver_id, scenario_id="scenario-a",
                           config="predefined", seed=1, predefined_tau=1.0)
        session = start_session(spec, store, cfg, profile=calm)
        service = SessionService(session, synthetic=True, realtime=False)
        trip_id = service.run()
        assert store.load_segments(calm.driver_id, trip_id) == []


class TestPauseAndStop:
    def test_pause_blocks_ticks(self, cfg):
        session = synthetic_session(cfg)
        service = SessionService(session, synthetic=True, realtime=False)
        service.step()
        k = session.tick_count
        service.submit({"kind": "session_control", "action": "pause"})
        assert service.step() == []
        assert session.tick_count == k
        service.submit({"kind": "session_control", "action": "resume"})
        service.step()
        assert session.tick_count == k + 1


class TestWireTransport:
    def test_ws_roundtrip_against_live_service(self, cfg, tmp_path):
        from websockets.sync.client import connect

        session = synthetic_session(cfg, config="predefined+adapt", seed=11)
        service = SessionService(session, synthetic=False, realtime=True,
                                 event_log=tmp_path / "events.jsonl")
        port = 18771
        result = {}
        host_thread = threading.Thread(
            target=lambda: result.update(trip=serve(service, port=port)),
            daemon=True)
        host_thread.start()
        time.sleep(0.4)

        with connect(f"ws://127.0.0.1:{port}") as ws:
            hello = json.loads(ws.recv(timeout=5))
            assert hello["kind"] == "session_control"
            ws.send(json.dumps({"kind": "pedal_input", "pedal": "accel",
                                "pressed": True}))
            saw_override = False
            for _ in range(200):
                msg = json.loads(ws.recv(timeout=5))
                if msg["kind"] == "state" and msg["override"]:
                    saw_override = True
                    break
            assert saw_override
            ws.send(json.dumps({"kind": "pedal_input", "pedal": "accel",
                                "pressed": False}))
            ws.send(json.dumps({"kind": "session_control", "action": "end"}))
        host_thread.join(timeout=10)
        assert not host_thread.is_alive()
        log_lines = [json.loads(l) for l in
                     open(tmp_path / "events.jsonl", encoding="utf-8")]
        presses = [e for e in log_lines if e["event"] == "pedal_input"
                   and e["pressed"]]
        starts = [e for e in log_lines if e["event"] == "takeover_start"]
        assert presses and starts
        # received before tick k's deadline -> applied by tick k+1
        assert starts[0]["tick"] - presses[0]["recv_tick"] <= 1
