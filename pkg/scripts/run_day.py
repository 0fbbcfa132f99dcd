#!/usr/bin/env python3
"""Run the stock 24-hour scenario and summarize the outputs.

Usage: python3 scripts/run_day.py [--scenario scenarios/day.cfg] [--seed N] [--out out/day]
"""

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from parksim import sim
from parksim.scenario import load_scenario


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--scenario", default=str(Path(__file__).parent.parent / "scenarios/day.cfg"))
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default="out/day")
    args = parser.parse_args()

    cfg = load_scenario(args.scenario)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)

    started = time.time()
    report = sim.run_scenario(cfg)
    elapsed = time.time() - started
    paths = report.write(args.out)

    state = report.final_state
    series = sim.occupancy_timeseries(report.records)
    mean_occupancy = sim.time_weighted_mean(series, cfg.duration_s) if series else 0.0
    print(f"simulated {cfg.duration_s / 3600:.0f} h in {elapsed:.2f} s (seed {cfg.seed})")
    print(f"arrivals {report.counters['arrivals']}, admitted {report.counters['admitted']}, "
          f"rejected {report.counters['rejected']}, departures {report.counters['departures']}")
    print(f"mean parked occupancy {mean_occupancy:.2f} of {state.total_slots} slots; "
          f"final vacancy {state.total_vacant}/{state.total_slots}")
    print("wrote:", ", ".join(str(p) for p in paths.values()))


if __name__ == "__main__":
    main()
