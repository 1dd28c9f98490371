"""Command-line entry point: single runs, parameter sweeps, correlation and
consistency analyses, all emitting CSV files.

Settings resolve in three layers: dataclass defaults, then a flat key=value
config file (--config), then explicit command-line flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .experiments import (
    ExperimentConfig,
    bias_analysis,
    correlation_experiment,
    emit_report,
    run_tracking,
    sweep,
)

__all__ = ["main", "build_parser", "load_config_file"]

_CONFIG_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _coerce(name: str, raw: str):
    kind = _CONFIG_TYPES.get(name)
    if kind is None:
        raise ValueError(f"unknown config key {name!r}")
    raw = raw.strip()
    if name in ("out_dir", "controller"):
        return raw
    if name in ("measure_timing",):
        return raw.lower() in ("1", "true", "yes", "on")
    if name in ("nbar", "p", "f", "steps", "realizations", "seed", "workers"):
        return int(raw)
    return float(raw)


def load_config_file(path) -> dict:
    """Parse a flat ``key = value`` config file; '#' starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        values[key] = _coerce(key, raw)
    return values


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None, help="flat key=value settings file")
    parser.add_argument("--controller", choices=("cl-deepc", "deepc", "oracle"), default=None)
    parser.add_argument("--nbar", type=int, default=None, help="data window length")
    parser.add_argument("--p", type=int, default=None, help="past window length")
    parser.add_argument("--f", type=int, default=None, help="prediction horizon")
    parser.add_argument("--noise-var", type=float, default=None, help="innovation variance")
    parser.add_argument("--input-var", type=float, default=None, help="open-loop input variance")
    parser.add_argument("--seed", type=int, default=None, help="base seed")
    parser.add_argument("--realizations", type=int, default=None)
    parser.add_argument("--steps", type=int, default=None, help="closed-loop steps")
    parser.add_argument("--workers", type=int, default=None, help="parallel realization workers")
    parser.add_argument("--timing", action="store_true", default=None,
                        help="measure QP solve time (makes CSV output nondeterministic)")
    parser.add_argument("--out", type=str, default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cldeepc",
        description="Adaptive data-driven predictive control experiments on the benchmark plant",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="single tracking run, signals to CSV")
    _add_common(p_sim)
    p_sim.add_argument("--realization", type=int, default=0, help="realization index for seeding")

    p_sweep = sub.add_parser("sweep", help="tracking performance over a parameter grid")
    _add_common(p_sweep)
    p_sweep.add_argument("--axis", choices=("nbar", "noise", "pf"), required=True)
    p_sweep.add_argument("--values", type=str, required=True, help="comma-separated grid values")

    p_corr = sub.add_parser("correlation", help="closed-loop noise-input correlation matrices")
    _add_common(p_corr)

    p_bias = sub.add_parser("bias", help="predictor bias versus window length")
    _add_common(p_bias)
    p_bias.add_argument("--values", type=str, default="200,400,800,1600",
                        help="comma-separated window lengths")

    return parser


_FLAG_TO_FIELD = {
    "controller": "controller",
    "nbar": "nbar",
    "p": "p",
    "f": "f",
    "noise_var": "noise_var",
    "input_var": "input_var",
    "seed": "seed",
    "realizations": "realizations",
    "steps": "steps",
    "workers": "workers",
    "timing": "measure_timing",
    "out": "out_dir",
}


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    values = {}
    if args.config:
        values.update(load_config_file(args.config))
    for flag, fieldname in _FLAG_TO_FIELD.items():
        arg = getattr(args, flag, None)
        if arg is not None:
            values[fieldname] = arg
    return ExperimentConfig(**values)


def _out_dir(config: ExperimentConfig) -> Path:
    out = Path(config.out_dir) if config.out_dir else Path("results")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_values(raw: str):
    try:
        return [float(v) for v in raw.split(",") if v.strip()]
    except ValueError as exc:
        raise ValueError(f"--values must be comma-separated numbers, got {raw!r}") from exc


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = resolve_config(args)
    out = _out_dir(config)

    if args.command == "simulate":
        log, report = run_tracking(config, realization=args.realization)
        log.to_csv(out / "signals.csv")
        emit_report(report, out)
        rec = report.runs[0]
        print(f"{rec.controller}: j_rms={rec.j_rms:.6g} solve_failures={rec.solve_failures}")
        print(f"wrote {out / 'signals.csv'}")
        return 0

    if args.command == "sweep":
        report = sweep(config, args.axis, _parse_values(args.values))
        emit_report(report, out)
        for row in report.percentiles:
            print(
                f"{args.axis}={row['axis_value']:g} {row['controller']}: "
                f"median j_rms={row['p50']:.6g} (n={row['n']})"
            )
        if report.failures:
            print(f"{len(report.failures)} cells failed; see failures.csv", file=sys.stderr)
        return 0

    if args.command == "correlation":
        report = correlation_experiment(config)
        emit_report(report, out)
        for kind, (mean, se) in sorted(report.correlations.items()):
            denom = se.copy()
            denom[denom == 0] = 1.0
            print(f"{kind}: max |corr|/se = {float(abs(mean / denom).max()):.3g}")
        return 0

    if args.command == "bias":
        report = bias_analysis(config, [int(v) for v in _parse_values(args.values)])
        emit_report(report, out)
        for row in report.bias_percentiles:
            print(
                f"nbar={row['axis_value']:g} {row['controller']}: "
                f"median error={row['p50']:.6g} (n={row['n']})"
            )
        return 0

    raise AssertionError(f"unhandled command {args.command!r}")


def main(argv=None) -> int:
    try:
        return run(argv)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
