#!/usr/bin/env python3
"""Sweep arrival rates and print the queueing figures as CSV.

Columns mirror `parksim analyze`: lambda, n, p_full, L, t_response.

Usage: python3 scripts/queueing_table.py [--slots 8] [--t-avg 0.25] [--delta-g 8.4] [--rate 2]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from parksim import stochastic


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--slots", type=int, default=8)
    parser.add_argument("--t-avg", type=float, default=0.25, help="mean dwell, hours")
    parser.add_argument("--delta-g", type=float, default=8.4, help="gas excess, ppm")
    parser.add_argument("--rate", type=float, default=2.0, help="extraction rate, ppm/s")
    parser.add_argument("--lambdas", default="5,10,20,40,60,80,100",
                        help="comma-separated arrival rates, cars/hour")
    args = parser.parse_args()

    print("lambda,n,p_full,L,t_response")
    for lam in (float(x) for x in args.lambdas.split(",")):
        report = stochastic.analyze(
            lam, args.slots, args.t_avg, args.delta_g, args.rate, lam_is_per_hour=True
        )
        print(f"{lam:g},{args.slots},{report.p_full:.6g},"
              f"{report.expected_occupancy:.6g},{report.vent_response_s:.6g}")


if __name__ == "__main__":
    main()
