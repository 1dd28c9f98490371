"""Structured data matrices: block-Hankel windows, block-Toeplitz operators,
extended observability/controllability, and the data-equation residuals that
serve as the master correctness check for all of them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .plant import SignalLog, StateSpaceModel

__all__ = [
    "BlockHankel",
    "PsiMatrix",
    "ToeplitzSet",
    "block_hankel",
    "psi",
    "block_toeplitz",
    "extended_observability",
    "extended_controllability",
    "toeplitz_set",
    "pe_order_check",
    "data_equation_residual",
]


def _signal_2d(signal) -> np.ndarray:
    sig = np.asarray(signal, dtype=float)
    if sig.ndim == 1:
        sig = sig[:, None]
    if sig.ndim != 2:
        raise ValueError(f"signal must be 1-D or 2-D, got shape {sig.shape}")
    return sig


@dataclass(frozen=True)
class BlockHankel:
    """Block-Hankel window of a signal, scaled by 1/sqrt(cols).

    Column j stacks ``block_rows`` consecutive samples starting at
    ``start + j``.  The scaling is applied here, in the constructor, and
    nowhere else.
    """

    matrix: np.ndarray
    start: int
    block_rows: int
    cols: int
    dim: int


@dataclass(frozen=True)
class PsiMatrix:
    """Stack [U_past; U_future; Y_past] over a shared data window.

    Row blocks have exactly p*r, s*r and p*l rows; column j corresponds to a
    prediction instant ``start + p + j``.
    """

    matrix: np.ndarray
    start: int
    p: int
    s: int
    cols: int
    r: int
    l: int

    @property
    def rows_u_past(self) -> slice:
        return slice(0, self.p * self.r)

    @property
    def rows_u_future(self) -> slice:
        return slice(self.p * self.r, (self.p + self.s) * self.r)

    @property
    def rows_y_past(self) -> slice:
        return slice((self.p + self.s) * self.r, (self.p + self.s) * self.r + self.p * self.l)


@dataclass(frozen=True)
class ToeplitzSet:
    """True-model operators for a horizon of s block rows and past window p.

    ``t_u``/``h`` act on inputs/innovations in the innovation form, the
    ``*_pred`` variants in the predictor form; ``l_mat``/``l_mat_pred`` map a
    Psi window to future outputs in the corresponding data equation.
    """

    t_u: np.ndarray
    t_u_pred: np.ndarray
    h: np.ndarray
    h_pred: np.ndarray
    gamma: np.ndarray
    gamma_pred: np.ndarray
    k_u: np.ndarray
    k_y: np.ndarray
    l_mat: np.ndarray
    l_mat_pred: np.ndarray


def block_hankel(signal, start: int, block_rows: int, cols: int) -> BlockHankel:
    """Build the (block_rows*dim, cols) Hankel window starting at ``start``.

    Requires the signal to cover indices ``[start, start + block_rows + cols - 2]``.
    """
    sig = _signal_2d(signal)
    if block_rows < 1 or cols < 1:
        raise ValueError("block_rows and cols must be positive")
    if start < 0 or start + block_rows + cols - 1 > sig.shape[0]:
        raise ValueError(
            f"signal of length {sig.shape[0]} does not cover window "
            f"[{start}, {start + block_rows + cols - 2}]"
        )
    dim = sig.shape[1]
    mat = np.empty((block_rows * dim, cols))
    for i in range(block_rows):
        mat[i * dim : (i + 1) * dim, :] = sig[start + i : start + i + cols].T
    mat /= np.sqrt(cols)
    return BlockHankel(matrix=mat, start=start, block_rows=block_rows, cols=cols, dim=dim)


def psi(u_log, y_log, start: int, s: int, cols: int, p: int) -> PsiMatrix:
    """Stack U_{k,p,q}, U_{k+p,s,q} and Y_{k,p,q} into one regressor matrix."""
    u = _signal_2d(u_log)
    y = _signal_2d(y_log)
    u_past = block_hankel(u, start, p, cols)
    u_future = block_hankel(u, start + p, s, cols)
    y_past = block_hankel(y, start, p, cols)
    mat = np.vstack([u_past.matrix, u_future.matrix, y_past.matrix])
    return PsiMatrix(matrix=mat, start=start, p=p, s=s, cols=cols, r=u.shape[1], l=y.shape[1])


def block_toeplitz(a, b, c, d, s: int) -> np.ndarray:
    """Lower block-triangular Toeplitz operator with d on the diagonal.

    Block (i, j) equals d for i == j, ``c @ a^(i-j-1) @ b`` for i > j, and
    zero above the diagonal.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    d = np.atleast_2d(np.asarray(d, dtype=float))
    if s < 1:
        raise ValueError("s must be positive")
    if a.shape[0] != a.shape[1] or b.shape[0] != a.shape[0] or c.shape[1] != a.shape[0]:
        raise ValueError("a, b, c have incompatible shapes")
    if d.shape != (c.shape[0], b.shape[1]):
        raise ValueError("d shape must be (rows(c), cols(b))")
    l, m = d.shape
    blocks = [d]
    power = b
    for _ in range(1, s):
        blocks.append(c @ power)
        power = a @ power
    out = np.zeros((s * l, s * m))
    for i in range(s):
        for j in range(i + 1):
            out[i * l : (i + 1) * l, j * m : (j + 1) * m] = blocks[i - j]
    return out


def extended_observability(a, c, s: int) -> np.ndarray:
    """Rows C, CA, ..., CA^(s-1)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    if c.shape[1] != a.shape[0]:
        raise ValueError("c and a have incompatible shapes")
    rows = [c]
    for _ in range(1, s):
        rows.append(rows[-1] @ a)
    return np.vstack(rows)


def extended_controllability(a, b, p: int) -> np.ndarray:
    """Reversed-order columns A^(p-1) B, ..., A B, B."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if b.shape[0] != a.shape[0]:
        raise ValueError("a and b have incompatible shapes")
    cols = [b]
    for _ in range(1, p):
        cols.append(a @ cols[-1])
    return np.hstack(cols[::-1])


def toeplitz_set(model: StateSpaceModel, s: int, p: int) -> ToeplitzSet:
    """All true-model structured operators needed by the data equations."""
    eye_l = np.eye(model.l)
    gamma = extended_observability(model.a, model.c, s)
    gamma_pred = extended_observability(model.a_pred, model.c, s)
    k_u = extended_controllability(model.a_pred, model.b_pred, p)
    k_y = extended_controllability(model.a_pred, model.k, p)
    t_u = block_toeplitz(model.a, model.b, model.c, model.d, s)
    t_u_pred = block_toeplitz(model.a_pred, model.b_pred, model.c, model.d, s)
    h = block_toeplitz(model.a, model.k, model.c, eye_l, s)
    h_pred = block_toeplitz(model.a_pred, model.k, -model.c, eye_l, s)
    l_mat = np.hstack([gamma @ k_u, t_u, gamma @ k_y])
    l_mat_pred = np.hstack([gamma_pred @ k_u, t_u_pred, gamma_pred @ k_y])
    return ToeplitzSet(
        t_u=t_u,
        t_u_pred=t_u_pred,
        h=h,
        h_pred=h_pred,
        gamma=gamma,
        gamma_pred=gamma_pred,
        k_u=k_u,
        k_y=k_y,
        l_mat=l_mat,
        l_mat_pred=l_mat_pred,
    )


def pe_order_check(signal, s: int, n_cols: int, rel_tol: float | None = None) -> bool:
    """Persistency of excitation of order ``s``: full row rank of the depth-s window.

    Rank is counted from singular values above
    ``sigma_max * max(rows, cols) * eps`` (or ``sigma_max * rel_tol``).
    """
    sig = _signal_2d(signal)
    hank = block_hankel(sig, 0, s, n_cols)
    svals = np.linalg.svd(hank.matrix, compute_uv=False)
    if svals[0] == 0.0:
        return False
    if rel_tol is None:
        rel_tol = max(hank.matrix.shape) * np.finfo(float).eps
    rank = int(np.sum(svals > svals[0] * rel_tol))
    return rank == hank.matrix.shape[0]


def data_equation_residual(
    model: StateSpaceModel, log: SignalLog, start: int, s: int, cols: int, p: int
):
    """Residuals of both data equations evaluated with the true model matrices.

    The first equation expands future outputs in the innovation form, the
    second in the predictor form; on simulated data both residuals vanish to
    machine precision, which is the master oracle for this module.
    """
    ops = toeplitz_set(model, s, p)
    psi_mat = psi(log.u, log.y, start, s, cols, p).matrix
    y_future = block_hankel(log.y, start + p, s, cols).matrix
    e_future = block_hankel(log.e, start + p, s, cols).matrix
    x_start = block_hankel(log.x, start, 1, cols).matrix
    a_pred_p = np.linalg.matrix_power(model.a_pred, p)
    res1 = y_future - ops.l_mat @ psi_mat - ops.h @ e_future - ops.gamma @ a_pred_p @ x_start
    res2 = (
        y_future
        - ops.l_mat_pred @ psi_mat
        - e_future
        - (np.eye(s * model.l) - ops.h_pred) @ y_future
        - ops.gamma_pred @ a_pred_p @ x_start
    )
    return res1, res2
