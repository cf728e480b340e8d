"""How the mesh-independence spread depends on the coarsest grid and step count.

For each (cells, steps) base, runs three uniform refinements of the 2D
scattering problem and reports iterations to a 1e-5 reduction.

    python3 scripts/base_grid_sensitivity.py [--bases 48/40 52/44 56/44 60/52 64/52]
"""
import argparse
import tempfile
from dataclasses import replace

from tpwave.cli import run_sweep
from tpwave.config import bundled_config, load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--bases", nargs="+", default=["48/40", "52/44", "56/44", "60/52", "64/52"])
    ap.add_argument("--levels", type=int, default=3)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    base = load_config(bundled_config("scatter_2d.yaml"))
    print(f"{'base':>8} {'iterations per level':>24} {'spread':>7}")
    for spec in args.bases:
        n, steps = (int(v) for v in spec.split("/"))
        cfg = replace(base, grid=replace(base.grid, cells=[n, n], spacing=[6.0 / n, 6.0 / n]),
                      control=replace(base.control, steps_per_period=steps))
        with tempfile.TemporaryDirectory() as tmp:
            _, summary = run_sweep(cfg, args.levels, tmp, args.jobs)
        its = [r["iterations_to_reduction"] for r in summary["levels"]]
        spread = summary["iteration_spread"]
        print(f"{spec:>8} {str(its):>24} {spread if spread is None else round(spread, 3)!s:>7}")


if __name__ == "__main__":
    main()
