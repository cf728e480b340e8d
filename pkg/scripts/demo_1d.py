"""Driven 1D wave with an absorbing right end: periodic control vs the traveling wave.

    python3 scripts/demo_1d.py [--cells 100 200 400] [--out runs/demo_1d]
"""
import argparse
import math
from dataclasses import replace
from pathlib import Path

from tpwave.cli import execute_run
from tpwave.config import bundled_config, load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cells", type=int, nargs="+", default=[50, 100, 200, 400])
    ap.add_argument("--out", default="runs/demo_1d")
    args = ap.parse_args()

    base = load_config(bundled_config("demo_1d.yaml"))
    prev = None
    print(f"{'cells':>6} {'steps':>6} {'iters':>6} {'to 1e-5':>8} {'L2 rel':>10} {'order':>6}")
    for n in args.cells:
        cfg = replace(base, grid=replace(base.grid, cells=[n], spacing=[1.0 / n]))
        code, man = execute_run(cfg, Path(args.out) / f"cells_{n}")
        err = man["analytic"]["l2_rel"]
        order = "" if prev is None else f"{math.log2(prev / err):.2f}"
        print(f"{n:>6} {man['steps_per_period']:>6} {man['iterations']:>6} "
              f"{man['iterations_to_reduction']!s:>8} {err:>10.3e} {order:>6}")
        prev = err


if __name__ == "__main__":
    main()
