"""Benchmark experiments: adaptive tracking runs, the scaled RMS tracking
metric, noise-input correlation and predictor-bias analyses, parameter sweeps
with shared seeds, and deterministic CSV reporting.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .controllers import make_controller
from .matrices import block_hankel, block_toeplitz
from .plant import (
    NoiseProcess,
    SignalLog,
    StateSpaceModel,
    benchmark_system,
    run_closed_loop,
    simulate_open_loop,
    step_innovation,
)
from .predictors import (
    assemble_tilde,
    build_dataset,
    deepc_iv_matrices,
    fit_one_step,
    solve_final,
)
from .qp import BoxConstraints, ControllerWeights

__all__ = [
    "ExperimentConfig",
    "RunRecord",
    "MetricsReport",
    "square_wave_reference",
    "j_rms",
    "run_tracking",
    "correlation_analysis",
    "bias_analysis",
    "estimate_future_input_map",
    "sweep",
    "emit_report",
    "CONTROLLER_KINDS",
]

CONTROLLER_KINDS = ("cl-deepc", "deepc", "oracle")

#: seed offset separating the open-loop input stream from the noise stream
INPUT_SEED_OFFSET = 1_000_000

PERCENTILE_LEVELS = (10, 30, 50, 70, 90)


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings for one adaptive tracking experiment.

    The seed is a base: realization i draws its noise stream from
    ``seed + i`` and its open-loop input stream from ``seed + 1_000_000 + i``,
    so controllers under comparison share seeds exactly.
    """

    controller: str = "cl-deepc"
    nbar: int = 500
    p: int = 20
    f: int = 20
    q_weight: float = 100.0
    r_weight: float = 0.0
    r_delta_weight: float = 10.0
    lambda_slack: float = 1e15
    du_max: float = 3.75
    u_max: float = 15.0
    y_max: float = 1000.0
    noise_var: float = 1.0
    input_var: float = 1.0
    steps: int = 1800
    realizations: int = 20
    seed: int = 0
    out_dir: str | None = None
    cond_limit: float = 1e12
    measure_timing: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.controller not in CONTROLLER_KINDS:
            raise ValueError(f"controller must be one of {CONTROLLER_KINDS}")
        if self.nbar < self.p + self.f + 1:
            raise ValueError("nbar must be at least p + f + 1")
        if self.steps <= 0:
            raise ValueError("steps must be positive")
        if self.noise_var < 0 or self.input_var < 0:
            raise ValueError("variances must be nonnegative")
        if self.realizations < 1:
            raise ValueError("realizations must be positive")

    @property
    def weights(self) -> ControllerWeights:
        return ControllerWeights(
            q=self.q_weight,
            r=self.r_weight,
            r_delta=self.r_delta_weight,
            lambda_slack=self.lambda_slack,
        )

    @property
    def constraints(self) -> BoxConstraints:
        return BoxConstraints(du_max=self.du_max, u_max=self.u_max, y_max=self.y_max)


@dataclass
class RunRecord:
    """Per-realization tracking outcome."""

    axis_value: float | None
    seed: int
    controller: str
    j_rms: float
    solve_failures: int
    fit_fallbacks: int = 0
    mean_solve_ms: float | None = None


@dataclass
class MetricsReport:
    """Aggregated experiment results; every field is optional content."""

    runs: list = field(default_factory=list)
    percentiles: list = field(default_factory=list)
    bias_runs: list = field(default_factory=list)
    bias_percentiles: list = field(default_factory=list)
    correlations: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)


def square_wave_reference(steps: int) -> np.ndarray:
    """Square wave between 0 and 100 with a 200-step period, starting high."""
    if steps <= 0:
        raise ValueError("steps must be positive")
    k = np.arange(steps)
    return np.where((k // 100) % 2 == 0, 100.0, 0.0)


def j_rms(y, r, skip: int = 0) -> float:
    """Reference-energy-normalized RMS tracking error after ``skip`` samples."""
    y = np.asarray(y, dtype=float)
    r = np.asarray(r, dtype=float)
    if y.shape != r.shape:
        raise ValueError("y and r must have equal shapes")
    if not 0 <= skip < y.shape[0]:
        raise ValueError("skip must be smaller than the signal length")
    err = y[skip:] - r[skip:]
    ref_energy = float(np.sum(r[skip:] ** 2))
    if ref_energy <= 0:
        raise ValueError("reference energy is zero after skipping")
    return float(np.sqrt(np.sum(err**2) / ref_energy))


def _simulate_tracking(
    config: ExperimentConfig,
    kind: str,
    realization: int,
    model: StateSpaceModel | None = None,
):
    """Open-loop initialization followed by adaptive closed-loop tracking."""
    if model is None:
        model = benchmark_system()
    noise = NoiseProcess(config.seed + realization, config.noise_var, model.l)
    input_rng = np.random.default_rng(config.seed + INPUT_SEED_OFFSET + realization)
    u_open = np.sqrt(config.input_var) * input_rng.standard_normal((config.nbar, model.r))
    log = simulate_open_loop(model, u_open, noise)
    x_cl, _ = step_innovation(model, log.x[-1], log.u[-1], log.e[-1])
    controller = make_controller(
        kind,
        model,
        config.nbar,
        config.p,
        config.f,
        config.weights,
        config.constraints,
        cond_limit=config.cond_limit,
        measure_timing=config.measure_timing,
    )
    reference = np.repeat(
        square_wave_reference(config.steps + config.f)[:, None], model.l, axis=1
    )
    run_closed_loop(model, controller, reference, config.steps, noise, x_cl, log=log)
    return log, controller


def _run_record(config, kind, realization, log, controller, axis_value=None) -> RunRecord:
    closed_y = log.y[config.nbar :]
    closed_r = log.r_ref[config.nbar :]
    skip = min(config.nbar, config.steps - 1)
    return RunRecord(
        axis_value=axis_value,
        seed=realization,
        controller=kind,
        j_rms=j_rms(closed_y, closed_r, skip=skip),
        solve_failures=controller.solve_failures,
        fit_fallbacks=getattr(controller, "fit_fallbacks", 0),
        mean_solve_ms=controller.mean_solve_ms,
    )


def run_tracking(config: ExperimentConfig, realization: int = 0):
    """Run one adaptive tracking experiment; returns the log and a one-run report.

    Phase 1 excites the plant in open loop for ``nbar`` steps with seeded
    Gaussian input; phase 2 runs ``steps`` closed-loop steps in which the
    controller refits from the latest ``nbar`` samples at every step.  The
    tracking metric excludes the first ``nbar`` closed-loop steps.
    """
    log, controller = _simulate_tracking(config, config.controller, realization)
    record = _run_record(config, config.controller, realization, log, controller)
    report = MetricsReport(runs=[record])
    return log, report


def correlation_analysis(logs, p: int, f_id: int, start: int = 0, with_se: bool = False):
    """Average noise-input correlation over realizations, closed-loop data only.

    For each log, forms the sample correlation of the f_id-deep future noise
    window with the stacked past and future input windows, using samples from
    ``start`` onward.  Returns the element-wise mean over realizations, and
    with ``with_se=True`` also the standard error of that mean.
    """
    mats = []
    for log in logs:
        n_avail = len(log) - start
        n_cols = n_avail - p - f_id + 1
        if n_cols < 1:
            raise ValueError("insufficient closed-loop samples for the correlation window")
        e_future = block_hankel(log.e[start:], p, f_id, n_cols).matrix
        u_past = block_hankel(log.u[start:], 0, p, n_cols).matrix
        u_future = block_hankel(log.u[start:], p, f_id, n_cols).matrix
        mats.append(e_future @ np.vstack([u_past, u_future]).T)
    stack = np.stack(mats)
    mean = stack.mean(axis=0)
    if not with_se:
        return mean
    if stack.shape[0] < 2:
        raise ValueError("standard errors require at least two realizations")
    se = stack.std(axis=0, ddof=1) / np.sqrt(stack.shape[0])
    return mean, se


def estimate_future_input_map(log: SignalLog, end_index: int, nbar: int, p: int, f: int, kind: str) -> np.ndarray:
    """Future-input block of the predictor a controller would fit on this window.

    For the sequential method this is the causal map from the horizon
    assembly; for DeePC it is the future-input partition of the multi-step IV
    regression.  Uses the minimum-norm solve so degenerate windows still
    produce the matrix the controller would fall back to.
    """
    if kind == "cl-deepc":
        data = build_dataset(log, end_index, nbar, p, 1)
        coeffs = fit_one_step(data, cond_limit=None)
        return solve_final(assemble_tilde(coeffs, f)).gu
    if kind == "deepc":
        data = build_dataset(log, end_index, nbar, p, f)
        return deepc_iv_matrices(data, cond_limit=None).gu
    raise ValueError(f"no implied future-input map for controller kind {kind!r}")


def _bias_cell(payload):
    config, kind, nbar, realization = payload
    cell_config = replace(config, nbar=nbar, steps=nbar, controller=kind)
    model = benchmark_system()
    log, _ = _simulate_tracking(cell_config, kind, realization, model=model)
    gu_hat = estimate_future_input_map(log, len(log), nbar, cell_config.p, cell_config.f, kind)
    t_u_true = block_toeplitz(model.a, model.b, model.c, model.d, cell_config.f)
    return {
        "nbar": nbar,
        "seed": realization,
        "controller": kind,
        "t_u_error": float(np.linalg.norm(gu_hat - t_u_true)),
    }


def _tracking_cell(payload):
    config, axis, value, kind, realization = payload
    cell_config = _apply_axis(config, axis, value) if axis is not None else config
    try:
        log, controller = _simulate_tracking(cell_config, kind, realization)
        record = _run_record(cell_config, kind, realization, log, controller, axis_value=value)
        return {"ok": True, "record": record}
    except Exception as exc:  # noqa: BLE001 - a failed cell must not kill the sweep
        return {
            "ok": False,
            "failure": {
                "axis_value": value,
                "controller": kind,
                "seed": realization,
                "error": f"{type(exc).__name__}: {exc}",
            },
        }


def _map_cells(fn, payloads, workers: int):
    if workers <= 1:
        return [fn(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, payloads))


def _apply_axis(config: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "nbar":
        return replace(config, nbar=int(value))
    if axis in ("noise", "noise_var"):
        return replace(config, noise_var=float(value))
    if axis == "pf":
        return replace(config, p=int(value), f=int(value))
    raise ValueError(f"unknown sweep axis {axis!r}")


def _percentile_rows(records, key_fn):
    grouped = {}
    for rec in records:
        grouped.setdefault(key_fn(rec), []).append(rec)
    rows = []
    for key in sorted(grouped, key=lambda k: (float(k[0]), str(k[1]))):
        values = np.array([r.j_rms if isinstance(r, RunRecord) else r["t_u_error"] for r in grouped[key]])
        pct = np.percentile(values, PERCENTILE_LEVELS)
        rows.append(
            {
                "axis_value": key[0],
                "controller": key[1],
                **{f"p{lvl}": float(v) for lvl, v in zip(PERCENTILE_LEVELS, pct)},
                "n": len(values),
            }
        )
    return rows


def bias_analysis(
    config: ExperimentConfig,
    nbar_values,
    controllers=("cl-deepc", "deepc"),
) -> MetricsReport:
    """Closed-loop consistency curves: future-input-map error versus window length.

    Every cell runs ``nbar`` open-loop plus ``nbar`` closed-loop steps so the
    final window contains adaptive closed-loop data only, then measures the
    Frobenius error of the implied future-input map against the true operator.
    """
    payloads = [
        (config, kind, int(nbar), i)
        for kind in controllers
        for nbar in nbar_values
        for i in range(config.realizations)
    ]
    rows = _map_cells(_bias_cell, payloads, config.workers)
    rows.sort(key=lambda r: (r["nbar"], r["controller"], r["seed"]))
    report = MetricsReport(bias_runs=rows)
    report.bias_percentiles = _percentile_rows(rows, key_fn=lambda r: (r["nbar"], r["controller"]))
    return report


def _correlation_cell(payload):
    config, kind, realization = payload
    cell_config = replace(config, controller=kind)
    log, controller = _simulate_tracking(cell_config, kind, realization)
    record = _run_record(cell_config, kind, realization, log, controller)
    f_id = 1 if kind == "cl-deepc" else cell_config.f
    n_cols = cell_config.steps - cell_config.p - f_id + 1
    e_future = block_hankel(log.e[cell_config.nbar :], cell_config.p, f_id, n_cols).matrix
    u_past = block_hankel(log.u[cell_config.nbar :], 0, cell_config.p, n_cols).matrix
    u_future = block_hankel(log.u[cell_config.nbar :], cell_config.p, f_id, n_cols).matrix
    corr = e_future @ np.vstack([u_past, u_future]).T
    return {"kind": kind, "seed": realization, "record": record, "corr": corr}


def correlation_experiment(config: ExperimentConfig, controllers=("cl-deepc", "deepc")) -> MetricsReport:
    """Noise-input correlation matrices of adaptive closed-loop operation.

    Runs the tracking experiment per controller and realization, correlates
    the future noise window against past and future inputs over the
    closed-loop data, and aggregates the element-wise mean and standard error
    across realizations.
    """
    payloads = [
        (config, kind, i) for kind in controllers for i in range(config.realizations)
    ]
    results = _map_cells(_correlation_cell, payloads, config.workers)
    results.sort(key=lambda r: (r["kind"], r["seed"]))
    report = MetricsReport(runs=[r["record"] for r in results])
    for kind in controllers:
        stack = np.stack([r["corr"] for r in results if r["kind"] == kind])
        mean = stack.mean(axis=0)
        se = stack.std(axis=0, ddof=1) / np.sqrt(stack.shape[0]) if stack.shape[0] > 1 else np.zeros_like(mean)
        report.correlations[kind] = (mean, se)
    return report


def sweep(config: ExperimentConfig, axis: str, values, realizations: int | None = None) -> MetricsReport:
    """Run the tracking experiment over an axis grid for all three controllers.

    Controllers share seeds cell by cell; a failed cell is recorded in the
    report instead of aborting the sweep.  ``axis="pf"`` varies p and f
    jointly.
    """
    if realizations is not None:
        config = replace(config, realizations=realizations)
    payloads = [
        (config, axis, value, kind, i)
        for value in values
        for kind in CONTROLLER_KINDS
        for i in range(config.realizations)
    ]
    results = _map_cells(_tracking_cell, payloads, config.workers)
    report = MetricsReport()
    for res in results:
        if res["ok"]:
            report.runs.append(res["record"])
        else:
            report.failures.append(res["failure"])
    report.runs.sort(key=lambda r: (float(r.axis_value), r.controller, r.seed))
    report.failures.sort(key=lambda r: (float(r["axis_value"]), r["controller"], r["seed"]))
    report.percentiles = _percentile_rows(report.runs, key_fn=lambda r: (r.axis_value, r.controller))
    return report


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if value.is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(value)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def emit_report(report: MetricsReport, out_dir) -> list:
    """Write the report as CSV files with stable column order.

    Emits per-realization runs, percentile summaries, bias curves and any
    correlation matrices.  Content is deterministic given the report, so
    reruns with identical seeds reproduce the files byte for byte.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    written.append(
        _write_csv(
            out / "runs.csv",
            ["axis_value", "seed", "controller", "j_rms", "solve_failures", "mean_solve_ms"],
            [
                [r.axis_value, r.seed, r.controller, r.j_rms, r.solve_failures, r.mean_solve_ms]
                for r in report.runs
            ],
        )
    )
    pct_header = ["axis_value", "controller"] + [f"p{lvl}" for lvl in PERCENTILE_LEVELS] + ["n"]
    written.append(
        _write_csv(
            out / "percentiles.csv",
            pct_header,
            [[row[c] for c in pct_header] for row in report.percentiles],
        )
    )
    written.append(
        _write_csv(
            out / "bias_runs.csv",
            ["nbar", "seed", "controller", "t_u_error"],
            [[r["nbar"], r["seed"], r["controller"], r["t_u_error"]] for r in report.bias_runs],
        )
    )
    bias_pct_header = ["axis_value", "controller"] + [f"p{lvl}" for lvl in PERCENTILE_LEVELS] + ["n"]
    written.append(
        _write_csv(
            out / "bias_percentiles.csv",
            bias_pct_header,
            [[row[c] for c in bias_pct_header] for row in report.bias_percentiles],
        )
    )
    for kind, summary in sorted(report.correlations.items()):
        mean, se = summary
        written.append(
            _write_csv(
                out / f"correlation_mean_{kind}.csv",
                [f"c{j}" for j in range(mean.shape[1])],
                mean.tolist(),
            )
        )
        written.append(
            _write_csv(
                out / f"correlation_se_{kind}.csv",
                [f"c{j}" for j in range(se.shape[1])],
                se.tolist(),
            )
        )
    if report.failures:
        written.append(
            _write_csv(
                out / "failures.csv",
                ["axis_value", "controller", "seed", "error"],
                [[r["axis_value"], r["controller"], r["seed"], r["error"]] for r in report.failures],
            )
        )
    return written
