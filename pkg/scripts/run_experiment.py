#!/usr/bin/env python3
"""Run the four-configuration evaluation matrix and write the report.

Equivalent to `pacc experiment --out results/`, kept as a script so the whole
study is reproducible with one command. Trained models are cached in the
store directory; delete it to retrain from scratch.
"""

import argparse
import os
import time

from pacc.config import load_config
from pacc.experiments import run_experiment, train_roster_model, extract_dgpt
from pacc.store import ModelStore, StoreError


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=None)
    ap.add_argument("--store", default="store")
    ap.add_argument("--out", default="results")
    ap.add_argument("--reps", type=int, default=None)
    args = ap.parse_args()

    lab = load_config(args.config)
    if args.reps:
        lab.repetitions = args.reps
    cfg = lab.experiment_config()
    store = ModelStore(args.store)

    models = {}
    for profile in lab.roster:
        try:
            models[profile.driver_id] = store.load_model(profile.driver_id).model
            print(f"{profile.driver_id}: reusing stored model")
        except StoreError:
            t0 = time.time()
            model = train_roster_model(profile, cfg)
            store.save_model(profile.driver_id, model, extract_dgpt(model),
                             provenance={"demo_ids": [profile.driver_id], "trip_ids": []})
            models[profile.driver_id] = model
            print(f"{profile.driver_id}: trained in {time.time() - t0:.0f}s")

    t0 = time.time()
    report = run_experiment(cfg, roster=lab.roster, models=models,
                            progress=lambda m: print(f"  {m}"))
    print(f"matrix done in {time.time() - t0:.0f}s\n")
    print(report.render())
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.csv"), "w") as fh:
        report.write_csv(fh)
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        report.write_json(fh)
    print(f"\nwrote {args.out}/report.csv and {args.out}/report.json")


if __name__ == "__main__":
    main()
