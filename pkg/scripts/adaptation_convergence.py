#!/usr/bin/env python3
"""Trip-over-trip adaptation study: a mismatched constant-headway reference
against one driver, carrying the adapted table between trips.

Prints accepted takeovers and PoI per trip; with persistence the counts
should fall as the table converges on the driver's preference.
"""

import argparse

from pacc.config import load_config
from pacc.controller import HeadwayReference
from pacc.experiments import poi, run_adaptation_sequence
from pacc.scenarios import scenario_by_id


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=None)
    ap.add_argument("--driver", default="driver1")
    ap.add_argument("--tau", type=float, default=4.0)
    ap.add_argument("--scenario", default="scenario-a")
    ap.add_argument("--trips", type=int, default=3)
    ap.add_argument("--seed", type=int, default=21)
    args = ap.parse_args()

    lab = load_config(args.config)
    profile = {p.driver_id: p for p in lab.roster}[args.driver]
    cfg = lab.experiment_config()
    scenario = scenario_by_id(args.scenario, cfg.scenario_cfg)
    ref = HeadwayReference(args.tau, cfg.adapt_params.standstill_gap)
    results = run_adaptation_sequence(profile, scenario, ref, args.trips,
                                      args.seed, cfg)
    print(f"{args.driver} (tau_pref={profile.tau_pref}s) vs {args.tau}s reference")
    for i, result in enumerate(results, 1):
        print(f"  trip {i}: accepted takeovers={result.accepted_takeovers:3d}  "
              f"PoI={poi(result.log):5.1f}%  table v{result.final_table.version}")


if __name__ == "__main__":
    main()
