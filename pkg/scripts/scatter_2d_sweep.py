"""Box obstacle in an absorbing square: residual reduction and mesh independence.

Runs the bundled 2D scattering configuration at several uniform refinements
(spacing halved, steps doubled) and prints CG iterations to a 1e-5 reduction
of sqrt(rho).

    python3 scripts/scatter_2d_sweep.py [--levels 3] [--jobs 3] [--out runs/scatter_2d]
"""
import argparse

from tpwave.cli import format_summary, run_sweep
from tpwave.config import bundled_config, load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--levels", type=int, default=3)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="runs/scatter_2d")
    args = ap.parse_args()
    cfg = load_config(bundled_config("scatter_2d.yaml"))
    code, summary = run_sweep(cfg, args.levels, args.out, args.jobs)
    print(format_summary(summary))
    raise SystemExit(code)


if __name__ == "__main__":
    main()
