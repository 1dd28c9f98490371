"""Receding-horizon tracking QP: condensed formulation, dense active-set
solver, slack-based softening, and the oracle controller built on the true
model matrices.

The solver is a dual active-set method for strictly convex problems: it walks
from the unconstrained optimum, adding the most violated constraint at a time,
so it terminates on an exact active set and is deterministic for fixed inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .matrices import block_toeplitz, extended_observability
from .plant import StateSpaceModel
from .predictors import PredictorMatrices

__all__ = [
    "ControllerWeights",
    "BoxConstraints",
    "QpProblem",
    "ControlDecision",
    "QpSolveError",
    "build_tracking_qp",
    "solve_qp",
    "soften_and_resolve",
    "oracle_mpc_step",
    "kkt_residual",
]


class QpSolveError(RuntimeError):
    """The active-set iteration failed to terminate (degenerate problem)."""

    def __init__(self, message: str, iterations: int, x: np.ndarray):
        super().__init__(message)
        self.iterations = iterations
        self.x = x


def _check_weight(mat, name: str, positive_definite: bool = False):
    arr = np.asarray(mat, dtype=float)
    if arr.ndim == 0:
        val = float(arr)
        if positive_definite and val <= 0:
            raise ValueError(f"{name} must be positive definite")
        if not positive_definite and val < 0:
            raise ValueError(f"{name} must be positive semi-definite")
        return val
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be a scalar or square matrix")
    if not np.allclose(arr, arr.T):
        raise ValueError(f"{name} must be symmetric")
    eig_min = float(np.linalg.eigvalsh(arr).min())
    if positive_definite and eig_min <= 0:
        raise ValueError(f"{name} must be positive definite")
    if not positive_definite and eig_min < -1e-12 * max(1.0, float(np.abs(arr).max())):
        raise ValueError(f"{name} must be positive semi-definite")
    return arr


@dataclass(frozen=True)
class ControllerWeights:
    """Tracking cost weights: output error, input, input rate, slack penalty.

    Scalars stand for scaled identities of the appropriate horizon dimension.
    """

    q: object = 100.0
    r: object = 0.0
    r_delta: object = 10.0
    lambda_slack: float = 1e15

    def __post_init__(self):
        object.__setattr__(self, "q", _check_weight(self.q, "q"))
        object.__setattr__(self, "r", _check_weight(self.r, "r"))
        object.__setattr__(self, "r_delta", _check_weight(self.r_delta, "r_delta", positive_definite=True))
        if not self.lambda_slack > 0:
            raise ValueError("lambda_slack must be positive")


@dataclass(frozen=True)
class BoxConstraints:
    """Symmetric bounds on input rate, input magnitude and predicted outputs.

    Entries are scalars or per-channel vectors; ``np.inf`` disables a bound.
    """

    du_max: object = 3.75
    u_max: object = 15.0
    y_max: object = 1000.0

    def __post_init__(self):
        for name in ("du_max", "u_max", "y_max"):
            val = np.asarray(getattr(self, name), dtype=float)
            if np.any(val <= 0):
                raise ValueError(f"{name} must be strictly positive")


@dataclass
class _QpContext:
    """Everything needed to rebuild the problem with slack variables."""

    gu: np.ndarray
    y_free: np.ndarray
    reference: np.ndarray
    weights: ControllerWeights
    constraints: BoxConstraints
    u_prev: np.ndarray
    f: int
    r: int
    l: int


@dataclass
class QpProblem:
    """Condensed tracking QP: min 0.5 x'Hx + g'x subject to A x <= b.

    The decision vector starts with the f*r input moves; slack-augmented
    variants append nonnegative output and input-rate slacks.
    """

    hessian: np.ndarray
    gradient: np.ndarray
    a_ineq: np.ndarray
    b_ineq: np.ndarray
    n_inputs: int
    n_slack_output: int = 0
    n_slack_rate: int = 0
    context: _QpContext = field(default=None, repr=False)


@dataclass
class ControlDecision:
    """Solved receding-horizon step."""

    u_next: np.ndarray
    u_plan: np.ndarray
    y_pred: np.ndarray
    status: str
    slack_norm_output: float = 0.0
    slack_norm_rate: float = 0.0
    iterations: int = 0
    kkt: float = np.nan
    objective: float = np.nan


@lru_cache(maxsize=64)
def _scaled_eye(value: float, dim: int) -> np.ndarray:
    out = value * np.eye(dim)
    out.flags.writeable = False
    return out


def _expand(mat_or_scalar, dim: int) -> np.ndarray:
    arr = np.asarray(mat_or_scalar, dtype=float)
    if arr.ndim == 0:
        return _scaled_eye(float(arr), dim)
    if arr.shape != (dim, dim):
        raise ValueError(f"weight matrix must have shape ({dim}, {dim}), got {arr.shape}")
    return arr


def _bound_vector(value, channels: int, horizon: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.size == 1:
        arr = np.full(channels, arr[0])
    if arr.size != channels:
        raise ValueError(f"bound must be scalar or have {channels} entries")
    return np.tile(arr, horizon)


@lru_cache(maxsize=32)
def _difference_operator(f: int, r: int) -> np.ndarray:
    d = np.eye(f * r)
    for i in range(1, f):
        d[i * r : (i + 1) * r, (i - 1) * r : i * r] -= np.eye(r)
    d.flags.writeable = False
    return d


def _assemble(context: _QpContext, n_slack_output: int, n_slack_rate: int) -> QpProblem:
    f, r, l = context.f, context.r, context.l
    n_u = f * r
    gu, y_free = context.gu, context.y_free
    q_mat = _expand(context.weights.q, f * l)
    r_mat = _expand(context.weights.r, n_u)
    rd_mat = _expand(context.weights.r_delta, n_u)
    lam = context.weights.lambda_slack

    diff = _difference_operator(f, r)
    d0 = np.zeros(n_u)
    d0[:r] = context.u_prev

    h_u = 2.0 * (gu.T @ q_mat @ gu + r_mat + diff.T @ rd_mat @ diff)
    g_u = 2.0 * (gu.T @ q_mat @ (y_free - context.reference) - diff.T @ rd_mat @ d0)

    n_dec = n_u + n_slack_output + n_slack_rate
    hess = np.zeros((n_dec, n_dec))
    hess[:n_u, :n_u] = h_u
    grad = np.zeros(n_dec)
    grad[:n_u] = g_u
    if n_slack_output:
        sl = slice(n_u, n_u + n_slack_output)
        hess[sl, sl] = 2.0 * lam * np.eye(n_slack_output)
    if n_slack_rate:
        sl = slice(n_u + n_slack_output, n_dec)
        hess[sl, sl] = 2.0 * lam * np.eye(n_slack_rate)

    du_bound = _bound_vector(context.constraints.du_max, r, f)
    u_bound = _bound_vector(context.constraints.u_max, r, f)
    y_bound = _bound_vector(context.constraints.y_max, l, f)

    rows = []
    bounds = []

    def add(block_u, rhs, slack_cols=None):
        block = np.zeros((block_u.shape[0], n_dec))
        block[:, :n_u] = block_u
        if slack_cols is not None:
            col0, width = slack_cols
            block[:, col0 : col0 + width] = -np.eye(block_u.shape[0])
        rows.append(block)
        bounds.append(rhs)

    # input-rate bounds, optionally softened by the rate slacks
    rate_slack0 = n_u + n_slack_output
    add(diff, du_bound + d0, (rate_slack0, f * r) if n_slack_rate else None)
    add(-diff, du_bound - d0, (rate_slack0 + f * r, f * r) if n_slack_rate else None)
    # input magnitude bounds stay hard
    add(np.eye(n_u), u_bound)
    add(-np.eye(n_u), u_bound)
    # predicted-output bounds, optionally softened by the output slacks
    add(gu, y_bound - y_free, (n_u, f * l) if n_slack_output else None)
    add(-gu, y_bound + y_free, (n_u + f * l, f * l) if n_slack_output else None)
    # slack nonnegativity
    for j in range(n_slack_output + n_slack_rate):
        row = np.zeros((1, n_dec))
        row[0, n_u + j] = -1.0
        rows.append(row)
        bounds.append(np.zeros(1))

    a_ineq = np.vstack(rows)
    b_ineq = np.concatenate(bounds)
    finite = np.isfinite(b_ineq)
    return QpProblem(
        hessian=hess,
        gradient=grad,
        a_ineq=a_ineq[finite],
        b_ineq=b_ineq[finite],
        n_inputs=n_u,
        n_slack_output=n_slack_output,
        n_slack_rate=n_slack_rate,
        context=context,
    )


def build_tracking_qp(
    final: PredictorMatrices,
    u_past,
    y_past,
    reference,
    weights: ControllerWeights,
    constraints: BoxConstraints,
    u_prev,
) -> QpProblem:
    """Condense the tracking problem over a fitted horizon predictor.

    The predictor is substituted into the cost, leaving the f*r future input
    moves as decision variables; rate, magnitude and output box bounds become
    linear inequalities.  The first input-rate difference is taken against the
    previously applied input.
    """
    f, r, l = final.f, final.r, final.l
    u_past = np.asarray(u_past, dtype=float).reshape(final.p * r)
    y_past = np.asarray(y_past, dtype=float).reshape(final.p * l)
    reference = np.asarray(reference, dtype=float).reshape(f * l)
    u_prev = np.asarray(u_prev, dtype=float).reshape(r)
    y_free = final.lu @ u_past + final.ly @ y_past
    context = _QpContext(
        gu=final.gu,
        y_free=y_free,
        reference=reference,
        weights=weights,
        constraints=constraints,
        u_prev=u_prev,
        f=f,
        r=r,
        l=l,
    )
    return _assemble(context, 0, 0)


def _dual_active_set(hess, grad, a_ineq, b_ineq, tol: float, max_iter: int, anchor: bool = False):
    """Dual active-set iteration for min 0.5 x'Hx + g'x s.t. Ax <= b, H PD.

    Returns (x, lam, status, iterations) with status "optimal" or
    "infeasible"; multipliers satisfy H x + g + A' lam = 0 at the optimum.

    Whether an incoming constraint normal is dependent on the active set is
    decided geometrically (unweighted least squares), not from the curvature
    along the step direction: slack-penalized problems put 15 orders of
    magnitude between curvatures, which would defeat any curvature threshold.
    With ``anchor=True`` the iterate is re-anchored by an exact
    equality-constrained solve after every active-set addition, so long steps
    along nearly-flat slack directions do not accumulate rounding drift;
    well-scaled problems skip this and use the plain incremental updates.
    """
    h_inv = np.linalg.inv(hess)
    x = -h_inv @ grad
    m = a_ineq.shape[0]
    lam_full = np.zeros(m)
    if m == 0:
        return x, lam_full, "optimal", 0

    def anchored(active_idx):
        # equality-QP solve on the active set by the null-space method: the
        # active-normal geometry is well conditioned even when penalty terms
        # spread the Hessian curvatures over many orders of magnitude
        n_active = a_ineq[active_idx]
        x_part, *_ = np.linalg.lstsq(n_active, b_ineq[active_idx], rcond=None)
        _, svals, vt_svd = np.linalg.svd(n_active)
        rank = int(np.sum(svals > svals[0] * max(n_active.shape) * np.finfo(float).eps))
        null_basis = vt_svd[rank:].T
        if null_basis.shape[1]:
            reduced_h = null_basis.T @ hess @ null_basis
            reduced_g = null_basis.T @ (grad + hess @ x_part)
            x_new = x_part - null_basis @ np.linalg.solve(reduced_h, reduced_g)
        else:
            x_new = x_part
        lam_act, *_ = np.linalg.lstsq(n_active.T, -(grad + hess @ x_new), rcond=None)
        return x_new, list(lam_act)

    active: list[int] = []
    lam: list[float] = []
    iters = 0
    while True:
        slack = a_ineq @ x - b_ineq
        j = int(np.argmax(slack - tol * (1.0 + np.abs(b_ineq))))
        if slack[j] <= tol * (1.0 + abs(b_ineq[j])):
            for idx, val in zip(active, lam):
                lam_full[idx] = val
            return x, lam_full, "optimal", iters
        n_j = a_ineq[j]
        lam_j = 0.0
        hin = h_inv @ n_j
        while True:
            iters += 1
            if iters > max_iter:
                raise QpSolveError(
                    f"active-set solver exceeded {max_iter} iterations "
                    f"(|active|={len(active)}, worst violation {slack[j]:.3g})",
                    iterations=iters,
                    x=x,
                )
            if active:
                n_active = a_ineq[active]
                hi_na = h_inv @ n_active.T
                s_mat = n_active @ hi_na
                r_dir = np.linalg.solve(s_mat, n_active @ hin)
                z = hin - hi_na @ r_dir
                # geometric test: is n_j in the row span of the active normals?
                w, *_ = np.linalg.lstsq(n_active.T, n_j, rcond=None)
                dependent = (
                    np.linalg.norm(n_j - n_active.T @ w) <= 1e-7 * np.linalg.norm(n_j)
                )
            else:
                r_dir = np.zeros(0)
                z = hin
                dependent = False

            t_dual = np.inf
            blocker = -1
            for idx in range(len(active)):
                if r_dir[idx] > 1e-12:
                    ratio = lam[idx] / r_dir[idx]
                    if ratio < t_dual:
                        t_dual = ratio
                        blocker = idx
            if dependent:
                # no primal progress possible toward this constraint: only a
                # dual step can make room; none available means the active
                # constraints are inconsistent with it
                if not np.isfinite(t_dual):
                    return x, lam_full, "infeasible", iters
                for idx in range(len(active)):
                    lam[idx] -= t_dual * r_dir[idx]
                lam_j += t_dual
                del active[blocker], lam[blocker]
                continue
            # curvature along the step: n'z equals z'Hz exactly, but the
            # latter is a sum of nonnegative terms and keeps its sign when
            # the slack penalty spreads curvatures over 15 orders of
            # magnitude; slack-restoring steps are legitimately enormous
            denom = float(z @ hess @ z)
            t_full = np.inf if denom <= 0.0 else (float(n_j @ x) - b_ineq[j]) / denom
            if not np.isfinite(t_full) and not np.isfinite(t_dual):
                return x, lam_full, "infeasible", iters
            if t_full <= t_dual:
                lam_j += t_full
                active.append(j)
                if anchor:
                    lam.append(lam_j)
                    x, lam = anchored(active)
                else:
                    x = x - t_full * z
                    for idx in range(len(lam)):
                        lam[idx] -= t_full * r_dir[idx]
                    lam.append(lam_j)
                break
            x = x - t_dual * z
            for idx in range(len(active)):
                lam[idx] -= t_dual * r_dir[idx]
            lam_j += t_dual
            del active[blocker], lam[blocker]


def kkt_residual(hess, grad, a_ineq, b_ineq, x, lam) -> float:
    """Scaled max KKT residual: stationarity, feasibility, complementarity.

    Each component is normalized by the magnitude of the terms entering it,
    so the result reads as a relative accuracy even when slack penalties put
    multipliers many orders of magnitude above the data.
    """
    multiplier_term = a_ineq.T @ lam if a_ineq.size else np.zeros_like(grad)
    stat = hess @ x + grad + multiplier_term
    stat_scale = (
        1.0
        + float(np.abs(grad).max(initial=0.0))
        + float(np.abs(hess @ x).max(initial=0.0))
        + float(np.abs(multiplier_term).max(initial=0.0))
    )
    res = float(np.abs(stat).max(initial=0.0)) / stat_scale
    if a_ineq.size:
        viol = a_ineq @ x - b_ineq
        res = max(res, float(np.max(viol / (1.0 + np.abs(b_ineq)), initial=0.0)))
        comp = np.abs(lam * viol) / ((1.0 + np.abs(b_ineq)) * (1.0 + np.abs(lam)))
        res = max(res, float(comp.max(initial=0.0)))
    return res


def _decision_from(problem: QpProblem, x, lam, status, iters) -> ControlDecision:
    ctx = problem.context
    n_u = problem.n_inputs
    u_plan = x[:n_u].reshape(ctx.f, ctx.r) if ctx is not None else x[:n_u].reshape(-1, 1)
    if ctx is not None:
        y_pred = (ctx.y_free + ctx.gu @ x[:n_u]).reshape(ctx.f, ctx.l)
    else:
        y_pred = np.zeros((0, 0))
    s_out = x[n_u : n_u + problem.n_slack_output]
    s_rate = x[n_u + problem.n_slack_output :]
    return ControlDecision(
        u_next=u_plan[0].copy(),
        u_plan=u_plan,
        y_pred=y_pred,
        status=status,
        slack_norm_output=float(np.linalg.norm(s_out)) if s_out.size else 0.0,
        slack_norm_rate=float(np.linalg.norm(s_rate)) if s_rate.size else 0.0,
        iterations=iters,
        kkt=kkt_residual(problem.hessian, problem.gradient, problem.a_ineq, problem.b_ineq, x, lam),
        objective=float(0.5 * x @ problem.hessian @ x + problem.gradient @ x),
    )


def solve_qp(problem: QpProblem, tol: float = 1e-9) -> ControlDecision:
    """Solve the condensed QP to a KKT point.

    Returns a decision with status "infeasible" (and no usable plan) when the
    hard constraint set is empty, which signals the caller to soften.
    """
    max_iter = 100 + 10 * problem.a_ineq.shape[0]
    x, lam, status, iters = _dual_active_set(
        problem.hessian,
        problem.gradient,
        problem.a_ineq,
        problem.b_ineq,
        tol,
        max_iter,
        anchor=problem.n_slack_output + problem.n_slack_rate > 0,
    )
    if status != "optimal":
        return ControlDecision(
            u_next=np.full(problem.context.r if problem.context else 1, np.nan),
            u_plan=np.zeros((0, 0)),
            y_pred=np.zeros((0, 0)),
            status="infeasible",
            iterations=iters,
        )
    label = "optimal"
    if problem.n_slack_rate:
        label = "softened-input-rate"
    elif problem.n_slack_output:
        label = "softened-output"
    return _decision_from(problem, x, lam, label, iters)


def soften_and_resolve(problem: QpProblem, lambda_slack: float | None = None, tol: float = 1e-9) -> ControlDecision:
    """Relax an infeasible problem with quadratically penalized slacks.

    Output bounds are softened first; if the problem remains infeasible the
    input-rate bounds are softened as well.  Input magnitude bounds stay hard.
    """
    ctx = problem.context
    if ctx is None:
        raise ValueError("problem carries no build context to soften")
    if lambda_slack is not None and lambda_slack != ctx.weights.lambda_slack:
        ctx = _QpContext(**{**ctx.__dict__, "weights": ControllerWeights(
            q=ctx.weights.q, r=ctx.weights.r, r_delta=ctx.weights.r_delta, lambda_slack=lambda_slack
        )})
    soft = _assemble(ctx, 2 * ctx.f * ctx.l, 0)
    decision = solve_qp(soft, tol)
    if decision.status != "infeasible":
        return decision
    soft = _assemble(ctx, 2 * ctx.f * ctx.l, 2 * ctx.f * ctx.r)
    decision = solve_qp(soft, tol)
    if decision.status == "infeasible":
        raise RuntimeError("QP infeasible even with output and input-rate slacks")
    return decision


def oracle_mpc_step(
    model: StateSpaceModel,
    x_hat,
    reference,
    weights: ControllerWeights,
    constraints: BoxConstraints,
    u_prev,
    tol: float = 1e-9,
) -> ControlDecision:
    """One receding-horizon step with perfect model knowledge and true state.

    Predicts with the extended observability and input Toeplitz operators of
    the true matrices; no disturbance compensation.  Solves the hard problem
    first and softens only on infeasibility, like the data-driven controllers.
    """
    reference = np.asarray(reference, dtype=float).reshape(-1)
    if reference.size % model.l:
        raise ValueError("reference length must be a multiple of the output dimension")
    f = reference.size // model.l
    x_hat = np.asarray(x_hat, dtype=float).reshape(model.n)
    u_prev = np.asarray(u_prev, dtype=float).reshape(model.r)
    gamma_f = extended_observability(model.a, model.c, f)
    t_u = block_toeplitz(model.a, model.b, model.c, model.d, f)
    context = _QpContext(
        gu=t_u,
        y_free=gamma_f @ x_hat,
        reference=reference,
        weights=weights,
        constraints=constraints,
        u_prev=u_prev,
        f=f,
        r=model.r,
        l=model.l,
    )
    problem = _assemble(context, 0, 0)
    decision = solve_qp(problem, tol)
    if decision.status == "infeasible":
        decision = soften_and_resolve(problem, tol=tol)
    return decision
