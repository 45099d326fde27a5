#!/usr/bin/env python3
"""Uncontrolled 24 h flexibility-prediction experiment.

Runs the default fleet (10,000 vehicles unless overridden), prints the
per-variant error table and writes the time-series / state CSVs.

Usage: python scripts/run_prediction.py [n_ev] [seed] [outdir]
"""

import sys
from pathlib import Path

from evflex import (
    SimulationConfig,
    run_prediction_experiment,
    write_errors_csv,
    write_states_csv,
    write_timeseries_csv,
)


def main() -> None:
    n_ev = int(sys.argv[1]) if len(sys.argv) > 1 else 10_000
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 1
    out = Path(sys.argv[3]) if len(sys.argv) > 3 else Path("out/prediction")
    out.mkdir(parents=True, exist_ok=True)

    config = SimulationConfig(n_ev=n_ev, seed=seed)
    result = run_prediction_experiment(config)

    rows = result.prediction_errors()
    write_timeseries_csv(result, out / "timeseries.csv")
    write_errors_csv(rows, out / "errors.csv")
    for name in config.variants:
        write_states_csv(result, name, out / f"states_{name}.csv")

    print(f"n_ev={n_ev} seed={seed}, 24 h at {config.dt_seconds:.0f} s steps, "
          f"resync every {config.resync_minutes:.0f} min")
    print(f"{'variant':>8} {'upper %':>10} {'lower %':>10} {'power %':>10}")
    for row in rows:
        print(f"{row['variant']:>8} {row['upper_err_pct']:>10.4g} "
              f"{row['lower_err_pct']:>10.4g} {row['power_err_pct']:>10.4g}")
    print(f"outputs in {out}/")


if __name__ == "__main__":
    main()
