"""Adaptive controller callbacks for the closed-loop simulator.

Each controller is a callable ``(log, reference_preview) -> u`` suitable for
:func:`cldeepc.plant.run_closed_loop`.  The data-driven variants rebuild
their dataset from the latest window and refit the predictor at every step;
on an ill-conditioned window they fall back to the previous predictor (or to
a minimum-norm fit when none exists yet) and flag the step.
"""

from __future__ import annotations

import time

import numpy as np

from .matrices import block_toeplitz, extended_observability
from .plant import StateSpaceModel, step_innovation
from .predictors import (
    IllConditionedWindow,
    PredictorMatrices,
    assemble_tilde,
    build_dataset,
    deepc_iv_matrices,
    fit_one_step,
    solve_final,
)
from .qp import (
    BoxConstraints,
    ControllerWeights,
    _assemble,
    _QpContext,
    soften_and_resolve,
    solve_qp,
)

__all__ = [
    "OracleMpc",
    "CLDeePCController",
    "DeePCIvController",
    "make_controller",
]


class _TrackingControllerBase:
    """Shared receding-horizon machinery and per-run statistics."""

    def __init__(self, f: int, r: int, l: int, weights: ControllerWeights,
                 constraints: BoxConstraints, measure_timing: bool = False):
        self.f = f
        self.r = r
        self.l = l
        self.weights = weights
        self.constraints = constraints
        self.measure_timing = measure_timing
        self.steps = 0
        self.solve_failures = 0  # hard problem infeasible, slacks engaged
        self.fit_fallbacks = 0
        self.solve_seconds = 0.0

    def _reference_vector(self, reference_preview) -> np.ndarray:
        ref = np.atleast_2d(np.asarray(reference_preview, dtype=float))
        if ref.shape[0] == 1 and self.l == 1 and ref.shape[1] != 1:
            ref = ref.T
        out = np.empty((self.f, self.l))
        n_avail = min(self.f, ref.shape[0])
        out[:n_avail] = ref[:n_avail]
        if n_avail == 0:
            out[:] = 0.0
        elif n_avail < self.f:
            out[n_avail:] = ref[n_avail - 1]
        return out.reshape(self.f * self.l)

    def _u_prev(self, log) -> np.ndarray:
        return log.u[-1] if len(log) else np.zeros(self.r)

    def _solve(self, gu, y_free, reference, u_prev):
        context = _QpContext(
            gu=gu,
            y_free=y_free,
            reference=reference,
            weights=self.weights,
            constraints=self.constraints,
            u_prev=u_prev,
            f=self.f,
            r=self.r,
            l=self.l,
        )
        problem = _assemble(context, 0, 0)
        t0 = time.perf_counter() if self.measure_timing else 0.0
        decision = solve_qp(problem)
        if decision.status == "infeasible":
            self.solve_failures += 1
            decision = soften_and_resolve(problem)
        if self.measure_timing:
            self.solve_seconds += time.perf_counter() - t0
        self.steps += 1
        return decision

    @property
    def mean_solve_ms(self) -> float | None:
        if not self.measure_timing or self.steps == 0:
            return None
        return 1e3 * self.solve_seconds / self.steps


class OracleMpc(_TrackingControllerBase):
    """Receding-horizon controller with exact model matrices and true state.

    The state is reconstructed exactly from the logged ground truth via the
    innovation update; no noise compensation is applied.
    """

    def __init__(self, model: StateSpaceModel, f: int, weights: ControllerWeights,
                 constraints: BoxConstraints, x0=None, measure_timing: bool = False):
        super().__init__(f, model.r, model.l, weights, constraints, measure_timing)
        self.model = model
        self.x0 = np.zeros(model.n) if x0 is None else np.asarray(x0, dtype=float).reshape(model.n)
        self._gamma_f = extended_observability(model.a, model.c, f)
        self._t_u = block_toeplitz(model.a, model.b, model.c, model.d, f)

    def __call__(self, log, reference_preview) -> np.ndarray:
        if len(log):
            x_hat, _ = step_innovation(self.model, log.x[-1], log.u[-1], log.e[-1])
        else:
            x_hat = self.x0
        reference = self._reference_vector(reference_preview)
        decision = self._solve(self._t_u, self._gamma_f @ x_hat, reference, self._u_prev(log))
        return decision.u_next


class _AdaptiveDataDrivenBase(_TrackingControllerBase):
    """Sliding-window refit shared by the data-driven controllers."""

    #: identification block length; 1 for the sequential method, f for DeePC
    f_id = None

    def __init__(self, nbar: int, p: int, f: int, r: int, l: int,
                 weights: ControllerWeights, constraints: BoxConstraints,
                 cond_limit: float | None = 1e12, measure_timing: bool = False):
        super().__init__(f, r, l, weights, constraints, measure_timing)
        self.nbar = nbar
        self.p = p
        self.cond_limit = cond_limit
        self.predictor: PredictorMatrices | None = None

    def _fit(self, log) -> PredictorMatrices:
        raise NotImplementedError

    def _fit_min_norm(self, log) -> PredictorMatrices:
        raise NotImplementedError

    def _dataset(self, log, s: int):
        data = build_dataset(log, len(log), self.nbar, self.p, s)
        # fully adaptive alignment: the window ends strictly before the
        # predicted interval, which starts at the next (unlogged) sample
        assert data.start + self.nbar == len(log)
        return data

    def __call__(self, log, reference_preview) -> np.ndarray:
        if len(log) < max(self.nbar, self.p):
            raise ValueError(
                f"need at least {max(self.nbar, self.p)} logged samples, have {len(log)}"
            )
        try:
            self.predictor = self._fit(log)
        except IllConditionedWindow:
            self.fit_fallbacks += 1
            if self.predictor is None:
                self.predictor = self._fit_min_norm(log)
        u_past = log.u[-self.p :].reshape(self.p * self.r)
        y_past = log.y[-self.p :].reshape(self.p * self.l)
        reference = self._reference_vector(reference_preview)
        y_free = self.predictor.lu @ u_past + self.predictor.ly @ y_past
        decision = self._solve(self.predictor.gu, y_free, reference, self._u_prev(log))
        return decision.u_next


class CLDeePCController(_AdaptiveDataDrivenBase):
    """Sequential one-step-ahead predictor, refit at every step.

    Fits the one-step coefficients by the square instrumental-variable
    regression on the latest window, assembles the banded horizon stack and
    solves it by the forward recursion; the resulting future-input map is
    causal by construction.
    """

    f_id = 1

    def _fit(self, log) -> PredictorMatrices:
        coeffs = fit_one_step(self._dataset(log, 1), cond_limit=self.cond_limit)
        return solve_final(assemble_tilde(coeffs, self.f))

    def _fit_min_norm(self, log) -> PredictorMatrices:
        coeffs = fit_one_step(self._dataset(log, 1), cond_limit=None)
        return solve_final(assemble_tilde(coeffs, self.f))


class DeePCIvController(_AdaptiveDataDrivenBase):
    """f-step-ahead instrumental-variable predictor, refit at every step.

    The implied future-input map is not constrained to be causal; its bias
    under closed-loop data is what the comparison experiments measure.
    """

    @property
    def f_id(self) -> int:
        return self.f

    def _fit(self, log) -> PredictorMatrices:
        return deepc_iv_matrices(self._dataset(log, self.f), cond_limit=self.cond_limit)

    def _fit_min_norm(self, log) -> PredictorMatrices:
        return deepc_iv_matrices(self._dataset(log, self.f), cond_limit=None)


def make_controller(
    kind: str,
    model: StateSpaceModel,
    nbar: int,
    p: int,
    f: int,
    weights: ControllerWeights,
    constraints: BoxConstraints,
    cond_limit: float | None = 1e12,
    measure_timing: bool = False,
):
    """Instantiate a controller by name: "oracle", "cl-deepc" or "deepc"."""
    if kind == "oracle":
        return OracleMpc(model, f, weights, constraints, measure_timing=measure_timing)
    if kind == "cl-deepc":
        return CLDeePCController(nbar, p, f, model.r, model.l, weights, constraints,
                                 cond_limit=cond_limit, measure_timing=measure_timing)
    if kind == "deepc":
        return DeePCIvController(nbar, p, f, model.r, model.l, weights, constraints,
                                 cond_limit=cond_limit, measure_timing=measure_timing)
    raise ValueError(f"unknown controller kind: {kind!r}")
