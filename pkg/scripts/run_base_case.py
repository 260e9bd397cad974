#!/usr/bin/env python3
"""Solve the base-case equilibrium, dump the fairness density, and write the
limit-object trajectories. Outputs land in out/base_case (override with
RATEGAME_OUTDIR or --out)."""

import sys

from rategame.cli import main

if __name__ == "__main__":
    args = sys.argv[1:]
    out = ["--config", "configs/base_case.cfg", "--out", "out/base_case"]
    rc = main(out + args + ["equilibrium"])
    rc = rc or main(out + args + ["fairness", "--policy", "hrandom"])
    rc = rc or main(out + args + ["limits"])
    raise SystemExit(rc)
