"""Command-line interface: predict / track / sweep experiment runners."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import SimulationConfig, load_config
from .scenario import (
    run_prediction_experiment,
    run_tracking_experiment,
    sweep_prediction,
    write_errors_csv,
    write_states_csv,
    write_timeseries_csv,
    write_tracking_csv,
)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON config file (defaults apply when omitted)")
    parser.add_argument("--seed", type=int, default=None, help="override the seed")
    parser.add_argument("--n-ev", type=int, default=None, help="override the fleet size")
    parser.add_argument("--out", type=Path, default=Path("out"),
                        help="output directory (created if missing)")
    parser.add_argument("--variants", nargs="+", choices=["ssm", "essm"], default=None,
                        help="model variants to run")


def _load(args) -> SimulationConfig:
    config = load_config(args.config) if args.config else SimulationConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.n_ev is not None:
        overrides["n_ev"] = args.n_ev
    if args.variants is not None:
        overrides["variants"] = tuple(args.variants)
    return config.with_overrides(**overrides) if overrides else config


def _write_run(result, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_timeseries_csv(result, out / "timeseries.csv")
    for name in result.config.variants:
        write_states_csv(result, name, out / f"states_{name}.csv")


def _cmd_predict(args) -> int:
    config = _load(args)
    result = run_prediction_experiment(config)
    _write_run(result, args.out)
    rows = result.prediction_errors()
    write_errors_csv(rows, args.out / "errors.csv")
    for row in rows:
        print(f"n_ev={row['n_ev']} {row['variant']}: "
              f"upper={row['upper_err_pct']:.4g}% lower={row['lower_err_pct']:.4g}% "
              f"power={row['power_err_pct']:.4g}%")
    print(f"wrote {args.out}/timeseries.csv, errors.csv, states_*.csv")
    return 0


def _cmd_track(args) -> int:
    config = _load(args)
    reference = None
    if args.reference:
        data = np.genfromtxt(args.reference, delimiter=",", names=True)
        reference = np.asarray(data["reference_kw"], dtype=float)
    result = run_tracking_experiment(config, reference)
    _write_run(result, args.out)
    for name in result.config.variants:
        write_tracking_csv(result, name, args.out / f"tracking_{name}.csv")
        print(f"{name}: rms tracking error {result.tracking_rms_kw(name):.1f} kW")
    print(f"wrote {args.out}/timeseries.csv, tracking_*.csv, states_*.csv")
    return 0


def _cmd_sweep(args) -> int:
    config = _load(args)
    rows = sweep_prediction(config, args.sizes)
    args.out.mkdir(parents=True, exist_ok=True)
    write_errors_csv(rows, args.out / "errors.csv")
    for row in rows:
        print(f"n_ev={row['n_ev']} {row['variant']}: "
              f"upper={row['upper_err_pct']:.4g}% lower={row['lower_err_pct']:.4g}% "
              f"power={row['power_err_pct']:.4g}%")
    print(f"wrote {args.out}/errors.csv")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="evflex",
        description="EV-fleet flexibility simulation: prediction and tracking experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("predict", help="uncontrolled 24 h prediction experiment")
    _add_common(p)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("track", help="closed-loop power tracking experiment")
    _add_common(p)
    p.add_argument("--reference", type=Path, default=None,
                   help="CSV with a reference_kw column to replay (default: online)")
    p.set_defaults(func=_cmd_track)

    p = sub.add_parser("sweep", help="prediction-error table over fleet sizes")
    _add_common(p)
    p.add_argument("--sizes", nargs="+", type=int, default=[500, 5000, 10000],
                   help="fleet sizes to sweep")
    p.set_defaults(func=_cmd_sweep)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
