"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line. The slow fixtures (model training, full matrix) are session
scoped and shared."""

import time

import numpy as np
import pytest

from pacc.adaptation import AdaptParams, safety_clamp
from pacc.controller import HeadwayReference
from pacc.drivers import default_roster, generate_demos, preferred_gap
from pacc.experiments import (ExperimentConfig, interruption_count, nim, poi,
                              predefined_tau, run_adaptation_sequence,
                              run_experiment, run_trip, train_roster_model)
from pacc.irl import extract_dgpt
from pacc.mdp import CfState, StateGrid, step_deterministic
from pacc.scenarios import (builtin_segment_source, canonical_scenarios,
                            demo_scenarios, scenario_a, scenario_b, scenario_by_id)
from pacc.seeding import substream
from pacc.service import SessionService, SessionSpec, start_session
from pacc.store import ModelStore
from pacc.trip import TripEngine


def report(name: str, ok: bool, detail: str = ""):
    print(f"\n[acceptance] {name}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="session")
def cfg():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def roster():
    return default_roster()


@pytest.fixture(scope="session")
def demo_sets(cfg, roster):
    lib = builtin_segment_source(cfg.scenario_cfg.seed, dt=cfg.scenario_cfg.dt)
    scens = demo_scenarios(cfg.scenario_cfg, lib)
    out = {}
    from pacc.seeding import derive_seed
    for profile in roster:
        out[profile.driver_id] = generate_demos(
            profile, scens, seed=derive_seed(cfg.master_seed, "demos",
                                             profile.driver_id))
    return out


@pytest.fixture(scope="session")
def trained(cfg, roster):
    models = {}
    times = {}
    for profile in roster:
        t0 = time.time()
        models[profile.driver_id] = train_roster_model(profile, cfg)
        times[profile.driver_id] = time.time() - t0
    return models, times


@pytest.fixture(scope="session")
def matrix(cfg, roster, trained):
    models, _ = trained
    t0 = time.time()
    rep = run_experiment(cfg, roster=roster, models=models)
    return rep, time.time() - t0


class TestIrlRecovery:
    def test_recovery_within_one_gap_bin(self, cfg, roster, trained, demo_sets):
        models, times = trained
        grid = cfg.grid
        worst = {}
        for profile in roster:
            table = extract_dgpt(models[profile.driver_id])
            visits = np.zeros(grid.n_v, dtype=int)
            for demo in demo_sets[profile.driver_id]:
                np.add.at(visits, grid.v_bin(demo.traj.v), 1)
            checked = np.flatnonzero(visits >= 50)
            want = np.array([preferred_gap(profile, v) for v in table.speeds])
            err = np.abs(table.gaps - want)[checked]
            worst[profile.driver_id] = float(err.max())
        ok = all(e <= 2.0 + 1e-9 for e in worst.values())
        report("IRL recovery (±1 gap bin on bins visited >= 50 ticks)", ok,
               f"max|err| per driver: { {k: round(v, 2) for k, v in worst.items()} }")

    def test_training_runtime_under_two_minutes(self, trained):
        _, times = trained
        worst = max(times.values())
        report("IRL recovery runtime (< 2 min per driver)", worst < 120.0,
               f"slowest driver {worst:.0f}s")


class TestGradientCorrectness:
    def test_finite_difference_match(self):
        from pacc.features import FeatureBasis, feature_matrix
        from pacc.irl import maxent_gradient, maxent_objective
        from pacc.mdp import ActionSet, NoiseSpec, build_transition_model

        grid = StateGrid(v_min=0, v_max=3, v_step=1, g_min=0, g_max=8, g_step=2)
        basis = FeatureBasis(centers_v=(0.0, 1.5, 3.0),
                             centers_g=(0.0, 4.0, 8.0), sigma_v=1.2, sigma_g=3.0)
        acts = ActionSet(values=(-1.0, 0.0, 1.0), a_min=-1, a_max=1)
        tm = build_transition_model(grid, acts, 1.0, NoiseSpec(0.3, 1.2), 1)
        phi = feature_matrix(basis, grid)
        rng = np.random.default_rng(1)
        alpha = rng.normal(scale=0.5, size=basis.n_features)
        fe = rng.random(basis.n_features) * 3.0
        rho0 = rng.random(grid.n_cells)
        rho0 /= rho0.sum()
        grad, _ = maxent_gradient(alpha, fe, phi, tm, 0.9, rho0, 400,
                                  sweeps=5000, vi_tol=1e-13)
        eps = 1e-5
        fd = np.empty_like(grad)
        for i in range(len(alpha)):
            up, dn = alpha.copy(), alpha.copy()
            up[i] += eps
            dn[i] -= eps
            fd[i] = (maxent_objective(up, fe, phi, tm, 0.9, rho0, 5000, 1e-13)
                     - maxent_objective(dn, fe, phi, tm, 0.9, rho0, 5000, 1e-13)
                     ) / (2 * eps)
        rel = float((np.abs(grad - fd) / np.maximum(1e-8, np.abs(fd))).max())
        report("MaxEnt gradient vs central finite differences (< 1e-4)",
               rel < 1e-4, f"max rel err {rel:.2e}")


class TestExperimentMatrix:
    def test_orderings_and_reduction_band(self, matrix):
        rep, elapsed = matrix
        agg = rep.aggregates
        poi_order = (agg["predefined"]["poi"] > agg["irl"]["poi"]
                     > agg["irl+adapt"]["poi"])
        red = rep.reductions["irl+adapt"]
        reductions_ok = red["poi_pct"] >= 40.0 and red["nim_pct"] >= 40.0
        adapt_helps = (agg["predefined+adapt"]["nim"] <= agg["predefined"]["nim"]
                       and agg["irl+adapt"]["nim"] <= agg["irl"]["nim"])
        detail = (f"PoI means pred={agg['predefined']['poi']:.1f} "
                  f"irl={agg['irl']['poi']:.1f} "
                  f"irl+adapt={agg['irl+adapt']['poi']:.1f}; "
                  f"reductions PoI {red['poi_pct']:.1f}% NIM {red['nim_pct']:.1f}%")
        report("Experiment matrix ordering + >= 40% reduction band",
               poi_order and reductions_ok and adapt_helps, detail)

    def test_matrix_shape_matches_published_layout(self, matrix, roster):
        rep, _ = matrix
        cells = {(r.driver_id, r.scenario_class, r.config) for r in rep.rows}
        want = {(p.driver_id, k, c) for p in roster for k in ("seen", "unseen")
                for c in ("predefined", "predefined+adapt", "irl", "irl+adapt")}
        report("Matrix shape (5 drivers x seen/unseen x 4 configs)",
               cells == want, f"{len(cells)} cells")

    def test_aggregate_equals_recomputation(self, matrix):
        rep, _ = matrix
        ok = True
        for config, agg in rep.aggregates.items():
            sub = [r.poi for r in rep.rows if r.config == config]
            ok = ok and abs(np.mean(sub) - agg["poi"]) < 1e-9
        report("Report aggregates equal independent recomputation", ok)

    def test_matrix_runtime(self, matrix, trained):
        _, elapsed = matrix
        _, times = trained
        total = elapsed + sum(times.values())
        report("Full matrix runtime (< 10 min incl. training)", total < 600.0,
               f"{total:.0f}s")


class TestAdaptationConvergence:
    def test_three_trip_convergence(self, cfg):
        driver = default_roster()[0]  # tau_pref 1.2 vs a 4 s reference
        scenario = scenario_by_id("scenario-a", cfg.scenario_cfg)
        ref = HeadwayReference(4.0, cfg.adapt_params.standstill_gap)
        results = run_adaptation_sequence(driver, scenario, ref, 3, 17, cfg)
        counts = [r.accepted_takeovers for r in results]
        pois = [poi(r.log) for r in results]
        non_increasing = all(b <= a for a, b in zip(counts, counts[1:]))
        final_drop = pois[2] < 0.4 * pois[0]
        report("Adaptation convergence (counts non-increasing, trip3 PoI < 40% trip1)",
               non_increasing and final_drop,
               f"accepted={counts} PoI={[round(p, 1) for p in pois]}")


class TestSafetyFuzz:
    def test_ten_thousand_random_sequences(self, cfg):
        from pacc.adaptation import TakeoverSegment, on_takeover_end
        from pacc.dgpt import Dgpt
        from pacc.trajectory import Trajectory

        grid = cfg.grid
        params = cfg.adapt_params
        rng = np.random.default_rng(99)
        v = grid.v_centers()
        table = safety_clamp(
            Dgpt(v, np.full(grid.n_v, 40.0)), grid, params)
        violations = 0
        checked = 0
        for _ in range(10_000):
            n = int(rng.integers(2, 60))
            release = CfState(float(rng.uniform(0, grid.v_max)),
                              float(rng.uniform(0, grid.g_max)),
                              float(rng.uniform(0, grid.v_max)))
            rows = [(i * 0.1, release.v, release.g, release.v_f,
                     float(rng.uniform(-3, 3)), "accel", "acc")
                    for i in range(n)]
            seg = TakeoverSegment(traj=Trajectory.from_rows(rows),
                                  duration=n * 0.1, release_state=release,
                                  pedal="accel" if rng.random() < 0.5 else "brake",
                                  start_tick=0, end_tick=n)
            table, accepted = on_takeover_end(table, seg, params, grid)
            if accepted:
                checked += 1
                tg = (table.gaps - params.standstill_gap) / np.where(v > 0, v, np.inf)
                pos = v > 0
                if (np.any(tg[pos] < params.safe_tg_min - 1e-9)
                        or np.any(tg[pos] > params.safe_tg_max + 1e-9)):
                    violations += 1
        report("Safety fuzz (10^4 sequences, zero violations)",
               violations == 0 and checked > 100,
               f"{checked} accepted updates, {violations} violations")


class TestControllerTracking:
    def test_constant_lead_tracking(self):
        from pacc.controller import (ControllerState, PidGains, gap_error,
                                     pid_step, reference_gap)
        gains = PidGains()
        worst = {}
        for v_lead in (5.0, 10.0, 20.0, 30.0):
            ref = HeadwayReference(2.0, 2.0)
            s = CfState(v_lead, reference_gap(ref, v_lead) + 10.0, v_lead)
            state = ControllerState()
            errs = []
            for k in range(1200):
                e = gap_error(reference_gap(ref, s.v), s.g)
                a, state = pid_step(state, -e, 0.1, gains)
                s, collided = step_deterministic(s, a, 0.1)
                assert not collided
                errs.append(abs(e))
            worst[v_lead] = max(errs[600:])
        ok = all(e < 0.5 for e in worst.values())
        report("Controller tracking (|e| < 0.5 m after 60 s)", ok,
               f"worst per speed: { {k: round(v, 3) for k, v in worst.items()} }")

    def test_no_collision_across_scenario_suite(self, cfg, trained):
        models, _ = trained
        lib = builtin_segment_source(cfg.scenario_cfg.seed,
                                     dt=cfg.scenario_cfg.dt)
        scenarios = [scenario_a(cfg.scenario_cfg, lib),
                     scenario_b(cfg.scenario_cfg, lib)]
        scenarios += list(canonical_scenarios(cfg.scenario_cfg, lib).values())
        references = [HeadwayReference(tau, 2.0) for tau in (1.0, 3.0, 4.0)]
        references.append(extract_dgpt(models["driver3"]))
        collisions = 0
        trips = 0
        for scenario in scenarios:
            for ref in references:
                engine = TripEngine(scenario=scenario, reference=ref,
                                    grid=cfg.grid, profile=None,
                                    rng=substream(1, "acc-only"),
                                    mode="acc", config_label="pure-acc")
                # no driver attached: pure ACC
                while not engine.finished:
                    engine.tick(external_pedal="none")
                result = engine.result()
                trips += 1
                collisions += int(result.collided)
                assert np.all(result.trajectory.g > 0) or result.collided
        report("No collision across the scenario suite (pure ACC)",
               collisions == 0, f"{trips} trips")


class TestDynamicsAndScenarios:
    def test_kinematic_identity_and_scans(self, cfg):
        s = CfState(7.0, 50.0, 9.0)
        expect = s.g
        ok = True
        for _ in range(400):
            expect = expect + (s.v_f - s.v) * 0.1
            s, _ = step_deterministic(s, 0.0, 0.1)
            ok = ok and s.g == expect
        syn = cfg.scenario_cfg
        lib = builtin_segment_source(syn.seed, dt=syn.dt)
        profiles = [scenario_a(syn, lib), scenario_b(syn, lib)]
        profiles += list(canonical_scenarios(syn, lib).values())
        for profile in profiles:
            ok = ok and len(profile) == int(round(syn.duration / syn.dt))
            ok = ok and profile.samples.min() >= 0
            ok = ok and profile.samples.max() <= syn.speed_cap + 1e-9
            accel = np.abs(np.diff(profile.samples)) / syn.dt
            ok = ok and accel.max() <= syn.accel_bound + 1e-9
        a = scenario_a(syn, lib)
        endpoints = (abs(a.samples[0] - 30.0) <= 1.0
                     and abs(a.samples[-1] - 5.0) <= 1.0)
        report("Dynamics identities + scenario scans + sweep endpoints",
               ok and endpoints,
               f"A starts {a.samples[0]:.2f} ends {a.samples[-1]:.2f}")


class TestHeadlessServiceEquivalence:
    def test_bit_identical_trajectories(self, cfg):
        profile = default_roster()[1]
        scenario = scenario_by_id("scenario-a", cfg.scenario_cfg)
        ref = HeadwayReference(predefined_tau(profile.tau_pref),
                               cfg.adapt_params.standstill_gap)
        want = run_trip(profile, "predefined+adapt", scenario, ref, 23, cfg)
        spec = SessionSpec(driver_id=profile.driver_id,
                           scenario_id="scenario-a", config="predefined+adapt",
                           seed=23, predefined_tau=predefined_tau(profile.tau_pref))
        session = start_session(spec, None, cfg, profile=profile)
        SessionService(session, synthetic=True, realtime=False).run()
        got = session.engine.result()
        identical = (np.array_equal(got.trajectory.v, want.trajectory.v)
                     and np.array_equal(got.trajectory.g, want.trajectory.g)
                     and np.array_equal(got.trajectory.a, want.trajectory.a)
                     and got.log.intervals == want.log.intervals)
        report("Headless service reproduces run_trip bit-identically", identical,
               f"{len(got.trajectory)} ticks compared")


class TestStoreCrashConsistency:
    def test_fault_injection_and_interleavings(self, tmp_path):
        import os
        from tests.test_store import sample_trajectory, tiny_model, tiny_table

        store = ModelStore(tmp_path / "store")
        rng = np.random.default_rng(5)
        store.save_model("alice", tiny_model(0), tiny_table(0))
        version = 1
        ok = True
        for i in range(1000):
            op = rng.integers(0, 4)
            if op == 0:
                version = store.save_model("alice", tiny_model(i), tiny_table(i))
            elif op == 1:
                rec = store.load_model("alice")
                ok = ok and rec.version == version
            elif op == 2:
                store.archive_trip("alice", sample_trajectory(20), [])
            else:
                # crash injection: truncate the newest record mid-write
                newest = os.path.join(store.root, "alice", "models",
                                      f"model_v{version}.json")
                text = open(newest).read()
                open(newest, "w").write(text[: int(rng.integers(0, len(text)))])
                rec = store.load_model("alice")  # falls back, never raises
                ok = ok and rec.version <= version
                version = rec.version
        report("Store crash consistency (10^3 interleavings + truncation)", ok)
