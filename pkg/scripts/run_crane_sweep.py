#!/usr/bin/env python3
"""Run the crane transport benchmark over a grid of suboptimality bounds.

Writes per-run trace CSVs, a summary table, and the two figure-ready files
(accumulated cost vs bound, horizon vs time) into the output directory.

    python3 scripts/run_crane_sweep.py --out runs/crane --alphas 0.2,0.4,0.6,0.8
"""

import argparse
import os
import sys

from ahmpc.cli import main as cli_main

CONFIG_TEMPLATE = """\
# Crane transport benchmark: adaptive-horizon sweep.
model = crane
mode = adaptive
alpha_bar = {alphas}
horizon.min = 2
horizon.max = 28
horizon.start = 8
estimate.kind = a-posteriori
adapt.shortening = certified
solver.tol = 1e-6
solver.penalty = 1e3
ode.tol = 1e-9
stop.cost_threshold = 1e-3
stop.step_limit = 500
jobs = {jobs}
"""


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/crane")
    parser.add_argument("--alphas", default="0.2,0.4,0.6,0.8",
                        help="comma-separated suboptimality bounds in (0,1)")
    parser.add_argument("--jobs", type=int, default=2)
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)

    text = CONFIG_TEMPLATE.format(alphas=args.alphas, jobs=args.jobs)
    os.makedirs(args.out, exist_ok=True)
    config_path = os.path.join(args.out, "crane_sweep.config")
    with open(config_path, "w", encoding="utf-8") as fh:
        fh.write(text)
    cli_args = ["run", config_path, "--out", args.out]
    if args.quiet:
        cli_args.append("--quiet")
    return cli_main(cli_args)


if __name__ == "__main__":
    sys.exit(main())
