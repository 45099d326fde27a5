#!/usr/bin/env python3
"""Prediction-error table over fleet sizes (500 / 5,000 / 10,000 by default).

Usage: python scripts/run_sweep.py [outdir] [size ...]
"""

import sys
from pathlib import Path

from evflex import SimulationConfig, sweep_prediction, write_errors_csv


def main() -> None:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("out/sweep")
    sizes = [int(s) for s in sys.argv[2:]] or [500, 5000, 10000]
    out.mkdir(parents=True, exist_ok=True)

    rows = sweep_prediction(SimulationConfig(), sizes)
    write_errors_csv(rows, out / "errors.csv")

    print(f"{'n_ev':>7} {'variant':>8} {'upper %':>10} {'lower %':>10} {'power %':>10}")
    for row in rows:
        print(f"{row['n_ev']:>7} {row['variant']:>8} {row['upper_err_pct']:>10.4g} "
              f"{row['lower_err_pct']:>10.4g} {row['power_err_pct']:>10.4g}")
    print(f"wrote {out}/errors.csv")


if __name__ == "__main__":
    main()
