"""Output-predictor synthesis from sliding data windows.

Implements the instrumental-variable regression behind closed-loop DeePC, the
banded one-step-ahead stacking and its sequential horizon assembly, the
unified multi-step formulation, DeePC with instrumental variables, and the
CL-SPC construction that is algebraically equivalent to the sequential path.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .matrices import BlockHankel, PsiMatrix, block_hankel, psi
from .plant import SignalLog

__all__ = [
    "IvDataset",
    "IvCorrelations",
    "OneStepCoeffs",
    "PredictorTilde",
    "PredictorMatrices",
    "IllConditionedWindow",
    "build_dataset",
    "correlations",
    "fit_one_step",
    "assemble_tilde",
    "solve_final",
    "predict",
    "unified_cl_deepc",
    "deepc_iv_predict",
    "deepc_iv_matrices",
    "clspc_fit",
    "clspc_assemble",
    "min_norm_g",
]

DEFAULT_COND_LIMIT = 1e12


class IllConditionedWindow(RuntimeError):
    """The instrument correlation of a data window is singular or too ill-conditioned."""

    def __init__(self, message: str, start: int, nbar: int | None = None, cond: float | None = None):
        super().__init__(message)
        self.start = start
        self.nbar = nbar
        self.cond = cond


@dataclass(frozen=True)
class IvDataset:
    """Regressors, future outputs and instruments built from one data window.

    ``psi`` and ``y_future`` share the column count and 1/sqrt(N) scaling of
    the window; ``z`` holds one instrument row per optimization variable and
    defaults to the regressor matrix itself.
    """

    psi: PsiMatrix
    y_future: BlockHankel
    z: np.ndarray
    start: int
    p: int
    s: int
    n_cols: int

    @property
    def r(self) -> int:
        return self.psi.r

    @property
    def l(self) -> int:
        return self.psi.l


@dataclass(frozen=True)
class IvCorrelations:
    """Sample correlations of regressors and future outputs with the instruments."""

    sigma_psi_z: np.ndarray
    sigma_yz: np.ndarray


def _write_matrix_csv(path, named_matrices, meta):
    """Tidy CSV serialization: one row per entry, columns matrix,row,col,value."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["matrix", "row", "col", "value"])
        for key, val in meta.items():
            writer.writerow([key, "", "", val])
        for name, mat in named_matrices:
            mat = np.atleast_2d(mat)
            for i in range(mat.shape[0]):
                for j in range(mat.shape[1]):
                    writer.writerow([name, i, j, repr(float(mat[i, j]))])


@dataclass(frozen=True)
class OneStepCoeffs:
    """One-step-ahead predictor coefficients.

    ``beta`` stacks p+1 blocks of shape (l, r), oldest input first with the
    direct feedthrough last; ``theta`` stacks p blocks of shape (l, l), oldest
    output first.
    """

    beta: np.ndarray
    theta: np.ndarray

    @property
    def p(self) -> int:
        return self.theta.shape[0]

    @property
    def l(self) -> int:
        return self.beta.shape[1]

    @property
    def r(self) -> int:
        return self.beta.shape[2]

    def to_json(self, path) -> None:
        payload = {
            "p": self.p,
            "l": self.l,
            "r": self.r,
            "beta": self.beta.tolist(),
            "theta": self.theta.tolist(),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)

    def to_csv(self, path) -> None:
        blocks = [(f"beta_{j + 1}", self.beta[j]) for j in range(self.p + 1)]
        blocks += [(f"theta_{j + 1}", self.theta[j]) for j in range(self.p)]
        _write_matrix_csv(path, blocks, {"p": self.p, "l": self.l, "r": self.r})


@dataclass(frozen=True)
class PredictorTilde:
    """Banded stack of the one-step predictor over an f-step horizon.

    ``gu`` and ``gy`` are block-lower-triangular; ``gy`` has zero diagonal
    blocks, so predicted outputs appear strictly below the step they feed.
    """

    lu: np.ndarray
    gu: np.ndarray
    ly: np.ndarray
    gy: np.ndarray
    p: int
    f: int
    r: int
    l: int


@dataclass(frozen=True)
class PredictorMatrices:
    """Solved horizon predictor: y_hat = lu @ u_past + ly @ y_past + gu @ u_future."""

    lu: np.ndarray
    gu: np.ndarray
    ly: np.ndarray
    p: int
    f: int
    r: int
    l: int

    def to_json(self, path) -> None:
        payload = {
            "p": self.p,
            "f": self.f,
            "r": self.r,
            "l": self.l,
            "lu": self.lu.tolist(),
            "gu": self.gu.tolist(),
            "ly": self.ly.tolist(),
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)

    def to_csv(self, path) -> None:
        _write_matrix_csv(
            path,
            [("lu", self.lu), ("gu", self.gu), ("ly", self.ly)],
            {"p": self.p, "f": self.f, "r": self.r, "l": self.l},
        )


def build_dataset(log: SignalLog, end_index: int, nbar: int, p: int, s: int, z=None) -> IvDataset:
    """Window the last ``nbar`` samples before ``end_index`` into an IV dataset.

    The window yields ``N = nbar - p - s + 1`` columns; the instrument matrix
    defaults to the regressor stack itself, which keeps the correlation square.
    """
    if nbar < p + s:
        raise ValueError(f"window of {nbar} samples is too short for p={p}, s={s}")
    if end_index > len(log) or end_index - nbar < 0:
        raise ValueError(
            f"log of length {len(log)} does not cover window [{end_index - nbar}, {end_index})"
        )
    start = end_index - nbar
    n_cols = nbar - p - s + 1
    psi_mat = psi(log.u, log.y, start, s, n_cols, p)
    y_future = block_hankel(log.y, start + p, s, n_cols)
    if z is None:
        z_mat = psi_mat.matrix
    else:
        z_mat = np.asarray(z, dtype=float)
        if z_mat.ndim != 2 or z_mat.shape[1] != n_cols:
            raise ValueError(f"z must have {n_cols} columns")
    return IvDataset(psi=psi_mat, y_future=y_future, z=z_mat, start=start, p=p, s=s, n_cols=n_cols)


def correlations(data: IvDataset) -> IvCorrelations:
    """Sample correlations sigma_psi_z and sigma_yz of a dataset."""
    return IvCorrelations(
        sigma_psi_z=data.psi.matrix @ data.z.T,
        sigma_yz=data.y_future.matrix @ data.z.T,
    )


def _pinv_factors(sigma_psi_z: np.ndarray):
    """SVD pseudo-inverse of the instrument correlation, with rank and condition."""
    u_svd, svals, vt_svd = np.linalg.svd(sigma_psi_z, full_matrices=False)
    cutoff = svals[0] * max(sigma_psi_z.shape) * np.finfo(float).eps if svals[0] > 0 else 0.0
    rank = int(np.sum(svals > cutoff))
    cond = (
        np.inf
        if rank < min(sigma_psi_z.shape) or svals[-1] == 0
        else float(svals[0] / svals[-1])
    )
    inv_s = np.zeros_like(svals)
    inv_s[:rank] = 1.0 / svals[:rank]
    pinv = (vt_svd.T * inv_s) @ u_svd.T
    return pinv, rank, cond


def _solve_iv_map(data: IvDataset, cond_limit: float | None, what: str) -> np.ndarray:
    """Rank-revealing solve of M @ sigma_psi_z = sigma_yz.

    With a finite ``cond_limit`` an over-threshold condition number raises
    :class:`IllConditionedWindow`; with ``cond_limit=None`` the minimum-norm
    solution is returned regardless of rank, which adaptive controllers use as
    a fallback on degenerate (e.g. noise-free) windows.
    """
    corr = correlations(data)
    n_rows = corr.sigma_psi_z.shape[0]
    pinv, rank, cond = _pinv_factors(corr.sigma_psi_z)
    if cond_limit is not None and (rank < n_rows or cond > cond_limit):
        raise IllConditionedWindow(
            f"{what}: instrument correlation of window [{data.start}, {data.start + data.p + data.s + data.n_cols - 1}] "
            f"is singular or ill-conditioned (rank {rank}/{n_rows}, cond {cond:.3g})",
            start=data.start,
            nbar=data.p + data.s + data.n_cols - 1,
            cond=cond,
        )
    # min-norm solution of M @ sigma_psi_z = sigma_yz (exact inverse at full rank)
    return corr.sigma_yz @ pinv


def _unpack_one_step(m: np.ndarray, p: int, r: int, l: int) -> OneStepCoeffs:
    beta = np.stack([m[:, j * r : (j + 1) * r] for j in range(p + 1)])
    off = (p + 1) * r
    theta = np.stack([m[:, off + j * l : off + (j + 1) * l] for j in range(p)])
    return OneStepCoeffs(beta=beta, theta=theta)


def fit_one_step(data: IvDataset, cond_limit: float | None = DEFAULT_COND_LIMIT) -> OneStepCoeffs:
    """Fit the one-step-ahead predictor from a dataset with block length 1.

    Solves sigma_yz @ sigma_psi_z^-1 and unpacks the row into input
    coefficients (oldest to feedthrough) and output coefficients (oldest to
    most recent).  Identical to the CL-SPC Markov-parameter regression.
    """
    if data.s != 1:
        raise ValueError(f"one-step fit requires block length s=1, got s={data.s}")
    m = _solve_iv_map(data, cond_limit, "one-step fit")
    return _unpack_one_step(m, data.p, data.r, data.l)


def assemble_tilde(coeffs: OneStepCoeffs, f: int) -> PredictorTilde:
    """Stack the one-step predictor into banded horizon matrices.

    Row block i places the input coefficients at block columns i..i+p of the
    concatenated [past, future] input window, and the output coefficients at
    block columns i..i+p-1 of the concatenated output window.
    """
    if f < 1:
        raise ValueError("f must be positive")
    p, l, r = coeffs.p, coeffs.l, coeffs.r

    def banded(blocks: np.ndarray, n_blocks: int, width: int) -> np.ndarray:
        # row block i carries `blocks` at block columns i..i+n_blocks-1 of a
        # (p+f)-block window; one fancy assignment per in-block component
        bl = blocks.shape[1]
        bw = blocks.shape[2]
        out = np.zeros((f * bl, (p + f) * bw))
        row_base = np.arange(f) * bl
        col_block = np.arange(f)[:, None] + np.arange(n_blocks)[None, :]
        for a in range(bl):
            for b in range(bw):
                out[row_base[:, None] + a, col_block * bw + b] = blocks[:, a, b][None, :]
        return out

    input_band = banded(coeffs.beta, p + 1, r)
    output_band = banded(coeffs.theta, p, l)
    return PredictorTilde(
        lu=input_band[:, : p * r],
        gu=input_band[:, p * r :],
        ly=output_band[:, : p * l],
        gy=output_band[:, p * l :],
        p=p,
        f=f,
        r=r,
        l=l,
    )


def solve_final(tilde: PredictorTilde) -> PredictorMatrices:
    """Eliminate predicted outputs from the banded stack by the forward recursion.

    Row blocks of [lu, gu, ly] are accumulated bottom-up from the banded
    matrices; since the resulting future-input map is block-Toeplitz, only its
    leftmost block column is carried through the recursion and the remaining
    columns are replicated along the block diagonals afterwards.
    """
    p, f, r, l = tilde.p, tilde.f, tilde.r, tilde.l
    theta = np.stack([tilde.ly[0:l, j * l : (j + 1) * l] for j in range(p)])
    width = p * r + r + p * l
    rhs = np.concatenate(
        [
            tilde.lu.reshape(f, l, p * r),
            tilde.gu[:, 0:r].reshape(f, l, r),
            tilde.ly.reshape(f, l, p * l),
        ],
        axis=2,
    )
    alpha = np.empty((f, l, width))
    for j in range(f):
        acc = rhs[j]
        lo = max(0, j - p)  # row indices j-p..j-1 join with coefficients theta_{p+idx-j+1}
        if lo < j:
            sel = slice(p - j + lo, p)
            acc = acc + np.einsum("mab,mbw->aw", theta[sel], alpha[lo:j])
        alpha[j] = acc
    lu = alpha[:, :, : p * r].reshape(f * l, p * r)
    ly = alpha[:, :, p * r + r :].reshape(f * l, p * l)
    gu_first = alpha[:, :, p * r : p * r + r]
    gu = np.zeros((f * l, f * r))
    row_blk, col_blk = np.tril_indices(f)
    for a in range(l):
        for b in range(r):
            gu[row_blk * l + a, col_blk * r + b] = gu_first[row_blk - col_blk, a, b]
    return PredictorMatrices(lu=lu, gu=gu, ly=ly, p=p, f=f, r=r, l=l)


def predict(final: PredictorMatrices, u_past, y_past, u_future) -> np.ndarray:
    """Evaluate the horizon predictor on stacked window vectors."""
    u_past = np.asarray(u_past, dtype=float).reshape(final.p * final.r)
    y_past = np.asarray(y_past, dtype=float).reshape(final.p * final.l)
    u_future = np.asarray(u_future, dtype=float).reshape(final.f * final.r)
    return final.lu @ u_past + final.ly @ y_past + final.gu @ u_future


def unified_cl_deepc(
    data: IvDataset,
    q: int,
    u_past,
    y_past,
    u_future,
    cond_limit: float | None = None,
) -> np.ndarray:
    """Sequentially apply an s-step-ahead IV predictor q times (horizon f = s*q).

    Each repetition forms one column of the partially known regressor stack
    from the current p-sample past, maps it through
    sigma_yz @ pinv(sigma_psi_z) (the minimum-norm representative of the IV
    solution set), and shifts the past by s samples, feeding predictions back
    as known outputs.  Requires a full-row-rank instrument correlation.
    """
    p, s, r, l = data.p, data.s, data.r, data.l
    corr = correlations(data)
    n_rows = corr.sigma_psi_z.shape[0]
    if corr.sigma_psi_z.shape[1] < n_rows:
        raise IllConditionedWindow(
            f"unified predictor needs at least {n_rows} instruments, got {corr.sigma_psi_z.shape[1]}",
            start=data.start,
        )
    pinv, rank, cond = _pinv_factors(corr.sigma_psi_z)
    if rank < n_rows or (cond_limit is not None and cond > cond_limit):
        raise IllConditionedWindow(
            f"instrument correlation is rank deficient ({rank}/{n_rows}) or ill-conditioned (cond {cond:.3g})",
            start=data.start,
            cond=cond,
        )
    iv_map = corr.sigma_yz @ pinv
    u_hist = list(np.asarray(u_past, dtype=float).reshape(p, r))
    y_hist = list(np.asarray(y_past, dtype=float).reshape(p, l))
    u_future = np.asarray(u_future, dtype=float).reshape(q * s, r)
    y_hat = np.empty((q * s, l))
    for rep in range(q):
        u_block = u_future[rep * s : (rep + 1) * s]
        col = np.concatenate(
            [np.concatenate(u_hist[-p:]), u_block.reshape(s * r), np.concatenate(y_hist[-p:])]
        )
        pred = (iv_map @ col).reshape(s, l)
        y_hat[rep * s : (rep + 1) * s] = pred
        u_hist.extend(u_block)
        y_hist.extend(pred)
    return y_hat.reshape(q * s * l)


def deepc_iv_predict(
    data: IvDataset,
    u_past,
    y_past,
    u_future,
    cond_limit: float | None = DEFAULT_COND_LIMIT,
) -> np.ndarray:
    """Single application of the f-step-ahead IV predictor (block length s = f).

    The implied predictor matrix is not constrained to be causal: future
    inputs may influence earlier predicted outputs through the regression.
    """
    p, s, r, l = data.p, data.s, data.r, data.l
    m = _solve_iv_map(data, cond_limit, "multi-step IV fit")
    col = np.concatenate(
        [
            np.asarray(u_past, dtype=float).reshape(p * r),
            np.asarray(u_future, dtype=float).reshape(s * r),
            np.asarray(y_past, dtype=float).reshape(p * l),
        ]
    )
    return m @ col


def deepc_iv_matrices(data: IvDataset, cond_limit: float | None = DEFAULT_COND_LIMIT) -> PredictorMatrices:
    """Partition the multi-step IV regression into (lu, gu, ly) predictor blocks.

    Unlike :func:`solve_final` output, the ``gu`` block is generally dense:
    no causality structure is imposed.
    """
    m = _solve_iv_map(data, cond_limit, "multi-step IV fit")
    p, s, r, l = data.p, data.s, data.r, data.l
    return PredictorMatrices(
        lu=m[:, : p * r],
        gu=m[:, p * r : (p + s) * r],
        ly=m[:, (p + s) * r :],
        p=p,
        f=s,
        r=r,
        l=l,
    )


def clspc_fit(data: IvDataset, cond_limit: float | None = DEFAULT_COND_LIMIT) -> OneStepCoeffs:
    """CL-SPC Markov-parameter regression; the identical one-step fit."""
    return fit_one_step(data, cond_limit=cond_limit)


def clspc_assemble(coeffs: OneStepCoeffs, f: int) -> PredictorMatrices:
    """Assemble the horizon predictor the CL-SPC way.

    Treats the fitted coefficients as predictor-form Markov parameters
    (truncating state powers at the past window length), builds the
    predictor-form horizon operators from those parameters directly, and
    converts to the final predictor through a dense solve with the
    unit-diagonal output operator.
    """
    if f < 1:
        raise ValueError("f must be positive")
    p, l, r = coeffs.p, coeffs.l, coeffs.r
    # Markov parameter estimates: power j of the predictor-form state matrix
    markov_u = {j: coeffs.beta[p - 1 - j] for j in range(p)}  # C A_pred^j B_pred
    markov_y = {j: coeffs.theta[p - 1 - j] for j in range(p)}  # C A_pred^j K
    d_hat = coeffs.beta[p]
    zero_u = np.zeros((l, r))
    zero_y = np.zeros((l, l))

    gamma_ku = np.zeros((f * l, p * r))
    gamma_ky = np.zeros((f * l, p * l))
    t_u_pred = np.zeros((f * l, f * r))
    h_pred = np.zeros((f * l, f * l))
    for i in range(f):
        rows = slice(i * l, (i + 1) * l)
        for c in range(p):
            # column c of the reversed controllability stack carries power p-1-c
            power = i + p - 1 - c
            gamma_ku[rows, c * r : (c + 1) * r] = markov_u.get(power, zero_u)
            gamma_ky[rows, c * l : (c + 1) * l] = markov_y.get(power, zero_y)
        for c in range(i + 1):
            if c == i:
                t_u_pred[rows, c * r : (c + 1) * r] = d_hat
                h_pred[rows, c * l : (c + 1) * l] = np.eye(l)
            else:
                t_u_pred[rows, c * r : (c + 1) * r] = markov_u.get(i - c - 1, zero_u)
                h_pred[rows, c * l : (c + 1) * l] = -markov_y.get(i - c - 1, zero_y)
    stacked = np.linalg.solve(h_pred, np.hstack([gamma_ku, t_u_pred, gamma_ky]))
    return PredictorMatrices(
        lu=stacked[:, : p * r],
        gu=stacked[:, p * r : p * r + f * r],
        ly=stacked[:, p * r + f * r :],
        p=p,
        f=f,
        r=r,
        l=l,
    )


def min_norm_g(data: IvDataset, psi_bar_column) -> np.ndarray:
    """Minimum-norm weight vector reproducing one regressor column.

    Returns ``g = z.T @ pinv(sigma_psi_z) @ psi_bar_column``; with the default
    instruments this is the minimum-Euclidean-norm solution of
    ``psi @ g = psi_bar_column``.
    """
    corr = correlations(data)
    n_rows = corr.sigma_psi_z.shape[0]
    pinv, rank, _ = _pinv_factors(corr.sigma_psi_z)
    if rank < n_rows:
        raise IllConditionedWindow("instrument correlation is not full row rank", start=data.start)
    col = np.asarray(psi_bar_column, dtype=float).reshape(n_rows)
    return data.z.T @ (pinv @ col)
