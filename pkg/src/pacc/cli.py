"""Command-line entry points.

    pacc train --driver driver3 --store store/
    pacc experiment --reps 3 --out results/
    pacc scenario --kind b --seed 9 --out profile.csv
    pacc store list / pacc store retrain driver3
    pacc serve --driver driver3 --scenario scenario-a --config irl+adapt

PACC_STORE and PACC_PORT environment variables override the store path and
service port.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import LabConfig, dump_default_config, load_config
from .experiments import (default_roster, extract_dgpt, run_experiment,
                          train_roster_model)
from .scenarios import (builtin_segment_source, export_profile, scenario_by_id,
                        synth_profile)
from .store import ModelStore, StoreError


def _lab(args) -> LabConfig:
    return load_config(args.config)


def _store(args, lab: LabConfig) -> ModelStore:
    path = args.store or os.environ.get("PACC_STORE") or lab.service.store_path
    return ModelStore(path)


def _roster_map(lab):
    return {p.driver_id: p for p in lab.roster}


def cmd_train(args):
    lab = _lab(args)
    store = _store(args, lab)
    roster = _roster_map(lab)
    targets = [args.driver] if args.driver else sorted(roster)
    cfg = lab.experiment_config()
    for driver_id in targets:
        if driver_id not in roster:
            sys.exit(f"unknown driver {driver_id!r}")
        print(f"training {driver_id} ...", flush=True)
        model = train_roster_model(roster[driver_id], cfg)
        version = store.save_model(driver_id, model, extract_dgpt(model),
                                   provenance={"demo_ids": ["demo-" + driver_id],
                                               "trip_ids": []})
        meta = model.metadata
        print(f"  saved v{version} (iterations={meta['iterations']}, "
              f"grad={meta['final_gradient_norm']:.4f})")


def cmd_experiment(args):
    lab = _lab(args)
    if args.reps:
        lab.repetitions = args.reps
    if args.seed is not None:
        lab.master_seed = args.seed
    cfg = lab.experiment_config(args.configs)
    roster = lab.roster
    if args.drivers:
        wanted = set(args.drivers)
        roster = [p for p in roster if p.driver_id in wanted]
    models = {}
    store = _store(args, lab) if args.store or os.environ.get("PACC_STORE") else None
    if store is not None:
        for profile in roster:
            try:
                models[profile.driver_id] = store.load_model(profile.driver_id).model
            except StoreError:
                pass
    report = run_experiment(cfg, roster=roster, models=models,
                            progress=lambda msg: print(f"  {msg}", flush=True))
    print(report.render())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.csv"), "w") as fh:
            report.write_csv(fh)
        with open(os.path.join(args.out, "report.json"), "w") as fh:
            report.write_json(fh)
        print(f"report written to {args.out}/report.{{csv,json}}")


def cmd_scenario(args):
    lab = _lab(args)
    syn = lab.scenario
    if args.duration:
        import dataclasses
        syn = dataclasses.replace(syn, duration=args.duration)
    if args.range:
        import dataclasses
        lo, hi = (float(x) for x in args.range.split(":"))
        syn = dataclasses.replace(syn, speed_min=lo, speed_max=hi)
    if args.kind in ("a", "b"):
        profile = scenario_by_id(f"scenario-{args.kind}", syn)
    elif args.kind == "synth":
        lib = builtin_segment_source(syn.seed, dt=syn.dt)
        profile = synth_profile(lib, syn, rng_seed=args.seed)
    else:
        profile = scenario_by_id(args.kind, syn)
    out = args.out or f"{profile.scenario_id}.csv"
    with open(out, "w") as fh:
        export_profile(fh, profile)
    print(f"{profile.scenario_id}: {len(profile)} samples "
          f"(mean {profile.mean_speed:.1f} m/s) -> {out}")


def cmd_store_list(args):
    lab = _lab(args)
    store = _store(args, lab)
    drivers = store.list_drivers()
    if not drivers:
        print("store is empty")
        return
    for driver_id in drivers:
        versions = store.versions(driver_id)
        trips = store.list_trips(driver_id)
        print(f"{driver_id}: model versions {versions or '-'}; "
              f"{len(trips)} archived trip(s)")


def cmd_store_retrain(args):
    lab = _lab(args)
    store = _store(args, lab)
    version = store.retrain_after_trip(args.driver)
    print(f"{args.driver}: now at version {version}")


def cmd_serve(args):
    from .service import SessionService, SessionSpec, serve, start_session

    lab = _lab(args)
    store = _store(args, lab)
    roster = _roster_map(lab)
    profile = roster.get(args.driver)
    if args.synthetic and profile is None:
        sys.exit(f"synthetic mode needs a roster driver, got {args.driver!r}")
    spec = SessionSpec(driver_id=args.driver, scenario_id=args.scenario,
                       config=args.acc_config, seed=args.seed,
                       predefined_tau=args.tau, auto_retrain=args.auto_retrain)
    session = start_session(spec, store, lab.experiment_config(),
                            profile=profile)
    service = SessionService(session, synthetic=args.synthetic,
                             realtime=not args.fast, event_log=args.log_file)
    port = int(os.environ.get("PACC_PORT", args.port))
    print(f"serving {args.driver} on {args.scenario} [{args.acc_config}] "
          f"at ws://{lab.service.host}:{port}", flush=True)
    trip_id = serve(service, host=lab.service.host, port=port)
    print(f"session ended; trip {trip_id}")


def cmd_config_init(args):
    with open(args.out, "w") as fh:
        dump_default_config(fh)
    print(f"default configuration written to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pacc",
                                     description="personalized ACC lab")
    parser.add_argument("--config", help="path to the lab configuration JSON")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="generate demos and train driver models")
    p.add_argument("--driver", help="single driver id (default: whole roster)")
    p.add_argument("--store", help="model store directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("experiment", help="run the evaluation matrix")
    p.add_argument("--reps", type=int, help="repetitions per cell")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--configs", nargs="+",
                   choices=["predefined", "predefined+adapt", "irl", "irl+adapt"])
    p.add_argument("--drivers", nargs="+", help="subset of roster ids")
    p.add_argument("--store", help="reuse/populate models in this store")
    p.add_argument("--out", help="directory for report.csv / report.json")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("scenario", help="export a lead-speed profile")
    p.add_argument("--kind", default="b",
                   help="a, b, synth, or a canonical id like scn-12")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float)
    p.add_argument("--range", help="speed range as lo:hi [m/s]")
    p.add_argument("--out")
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("store", help="inspect or retrain the model store")
    store_sub = p.add_subparsers(dest="store_command", required=True)
    q = store_sub.add_parser("list")
    q.add_argument("--store")
    q.set_defaults(func=cmd_store_list)
    q = store_sub.add_parser("retrain")
    q.add_argument("driver")
    q.add_argument("--store")
    q.set_defaults(func=cmd_store_retrain)

    p = sub.add_parser("serve", help="host a live cockpit session")
    p.add_argument("--driver", required=True)
    p.add_argument("--scenario", default="scenario-a")
    p.add_argument("--acc-config", default="irl+adapt",
                   choices=["manual", "predefined", "predefined+adapt",
                            "irl", "irl+adapt"])
    p.add_argument("--tau", type=float, default=3.0,
                   help="headway for predefined configs [s]")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--store")
    p.add_argument("--synthetic", action="store_true",
                   help="drive with the roster monitor instead of a client")
    p.add_argument("--fast", action="store_true",
                   help="no wall-clock pacing (headless runs)")
    p.add_argument("--auto-retrain", action="store_true")
    p.add_argument("--log-file", help="jsonl event log (inputs, takeovers)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("config", help="configuration helpers")
    cfg_sub = p.add_subparsers(dest="config_command", required=True)
    q = cfg_sub.add_parser("init", help="write the default config file")
    q.add_argument("--out", default="pacc.json")
    q.set_defaults(func=cmd_config_init)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
