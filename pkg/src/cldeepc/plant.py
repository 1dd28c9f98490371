"""Discrete LTI plants in innovation and predictor form, with seeded simulation.

The innovation form drives the state with white innovation noise through a
Kalman gain; the predictor form is the algebraic rearrangement that feeds the
measured output back instead.  Both forms describe the same trajectories, which
the simulation helpers here exploit (and the tests assert).
"""

from __future__ import annotations

import csv

import numpy as np

__all__ = [
    "StateSpaceModel",
    "NoiseProcess",
    "SignalLog",
    "ControlLoopError",
    "step_innovation",
    "step_predictor",
    "simulate_open_loop",
    "run_closed_loop",
    "benchmark_system",
]


class ControlLoopError(RuntimeError):
    """A controller callback failed during a closed-loop run."""

    def __init__(self, step: int, message: str):
        super().__init__(f"controller failed at step {step}: {message}")
        self.step = step


def _as_matrix(value, rows: int | None = None, cols: int | None = None, name: str = "matrix") -> np.ndarray:
    mat = np.atleast_2d(np.asarray(value, dtype=float))
    if mat.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {mat.shape}")
    if rows is not None and mat.shape[0] != rows:
        raise ValueError(f"{name} must have {rows} rows, got {mat.shape[0]}")
    if cols is not None and mat.shape[1] != cols:
        raise ValueError(f"{name} must have {cols} columns, got {mat.shape[1]}")
    return mat


def _freeze(mat: np.ndarray) -> np.ndarray:
    out = np.array(mat, dtype=float)
    out.flags.writeable = False
    return out


def spectral_radius(mat: np.ndarray) -> float:
    """Largest eigenvalue magnitude of a square matrix."""
    return float(np.max(np.abs(np.linalg.eigvals(mat))))


class StateSpaceModel:
    """Quintuple {A, B, C, D, K} plus the derived predictor-form matrices.

    Parameters
    ----------
    a, b, c, d, k
        System matrices with shapes (n, n), (n, r), (l, n), (l, r) and (n, l).
        Scalars and 1-D arrays are promoted where unambiguous.
    stability_tol
        The predictor-form state matrix ``a_pred = a - k @ c`` must satisfy
        ``rho(a_pred) < 1 - stability_tol``; violating models are rejected.

    Attributes
    ----------
    a_pred, b_pred : np.ndarray
        ``a - k @ c`` and ``b - k @ d``; the predictor-form dynamics.
    """

    def __init__(self, a, b, c, d, k, *, stability_tol: float = 1e-9):
        a = _as_matrix(a, name="a")
        n = a.shape[0]
        if a.shape[1] != n:
            raise ValueError(f"a must be square, got {a.shape}")
        b = _as_matrix(b, rows=n, name="b")
        r = b.shape[1]
        c = _as_matrix(c, cols=n, name="c")
        l = c.shape[0]
        d = _as_matrix(d, rows=l, cols=r, name="d")
        k = _as_matrix(k, rows=n, cols=l, name="k")

        a_pred = a - k @ c
        rho = spectral_radius(a_pred)
        if not rho < 1.0 - stability_tol:
            raise ValueError(
                f"predictor-form state matrix is not asymptotically stable: "
                f"spectral radius {rho:.6g} >= {1.0 - stability_tol}"
            )

        self.a = _freeze(a)
        self.b = _freeze(b)
        self.c = _freeze(c)
        self.d = _freeze(d)
        self.k = _freeze(k)
        self.a_pred = _freeze(a_pred)
        self.b_pred = _freeze(b - k @ d)
        self.n = n
        self.r = r
        self.l = l
        self.rho_pred = rho

    def __repr__(self):
        return f"StateSpaceModel(n={self.n}, r={self.r}, l={self.l}, rho_pred={self.rho_pred:.4f})"


class NoiseProcess:
    """Seeded stream of zero-mean Gaussian vectors with fixed covariance.

    The same (seed, variance) pair always reproduces the identical sample
    stream.  ``variance`` may be a scalar (univariate), or an (l, l) positive
    semi-definite matrix; a zero variance yields an all-zero stream, which the
    noise-free experiments rely on.
    """

    def __init__(self, seed: int, variance, dim: int | None = None):
        variance = np.asarray(variance, dtype=float)
        if variance.ndim == 0:
            if dim is None:
                dim = 1
            if variance < 0:
                raise ValueError("variance must be nonnegative")
            factor = np.eye(dim) * np.sqrt(float(variance))
        else:
            variance = _as_matrix(variance, name="variance")
            if variance.shape[0] != variance.shape[1]:
                raise ValueError("variance matrix must be square")
            if dim is not None and variance.shape[0] != dim:
                raise ValueError("variance matrix does not match dim")
            dim = variance.shape[0]
            if not np.allclose(variance, variance.T):
                raise ValueError("variance matrix must be symmetric")
            try:
                factor = np.linalg.cholesky(variance)
            except np.linalg.LinAlgError:
                # positive semi-definite fallback (zero or rank-deficient variance)
                w, v = np.linalg.eigh(variance)
                if w.min() < -1e-12 * max(1.0, w.max()):
                    raise ValueError("variance matrix must be positive semi-definite")
                factor = v @ np.diag(np.sqrt(np.clip(w, 0.0, None)))
        self.seed = int(seed)
        self.variance = variance
        self.dim = dim
        self._factor = factor
        self._rng = np.random.default_rng(self.seed)

    def sample(self) -> np.ndarray:
        """Draw the next vector of the stream."""
        return self._factor @ self._rng.standard_normal(self.dim)

    def reset(self) -> None:
        """Rewind the stream to its first sample."""
        self._rng = np.random.default_rng(self.seed)


class SignalLog:
    """Append-only, equal-length record of u, y, e, r and x per time step.

    Columns are exposed as (T, dim) array views; storage grows geometrically
    so the views are O(1) to obtain, which the per-step refitting controllers
    depend on.
    """

    def __init__(self, r_dim: int, l_dim: int, n_dim: int, capacity: int = 256):
        self.r_dim = r_dim
        self.l_dim = l_dim
        self.n_dim = n_dim
        self._len = 0
        self._u = np.empty((capacity, r_dim))
        self._y = np.empty((capacity, l_dim))
        self._e = np.empty((capacity, l_dim))
        self._r = np.empty((capacity, l_dim))
        self._x = np.empty((capacity, n_dim))

    def __len__(self) -> int:
        return self._len

    def _grow(self) -> None:
        cap = max(2 * self._u.shape[0], 1)
        for name in ("_u", "_y", "_e", "_r", "_x"):
            old = getattr(self, name)
            new = np.empty((cap, old.shape[1]))
            new[: self._len] = old[: self._len]
            setattr(self, name, new)

    def append(self, u, y, e, r_ref, x) -> None:
        if self._len == self._u.shape[0]:
            self._grow()
        i = self._len
        self._u[i] = np.asarray(u, dtype=float).reshape(self.r_dim)
        self._y[i] = np.asarray(y, dtype=float).reshape(self.l_dim)
        self._e[i] = np.asarray(e, dtype=float).reshape(self.l_dim)
        self._r[i] = np.asarray(r_ref, dtype=float).reshape(self.l_dim)
        self._x[i] = np.asarray(x, dtype=float).reshape(self.n_dim)
        self._len = i + 1

    @property
    def u(self) -> np.ndarray:
        return self._u[: self._len]

    @property
    def y(self) -> np.ndarray:
        return self._y[: self._len]

    @property
    def e(self) -> np.ndarray:
        return self._e[: self._len]

    @property
    def r_ref(self) -> np.ndarray:
        return self._r[: self._len]

    @property
    def x(self) -> np.ndarray:
        return self._x[: self._len]

    def to_csv(self, path) -> None:
        """Write columns k, u, y, e, r, x1..xn (u1..ur etc. for multivariate I/O)."""

        def names(prefix, dim):
            return [prefix] if dim == 1 else [f"{prefix}{i + 1}" for i in range(dim)]

        header = (
            ["k"]
            + names("u", self.r_dim)
            + names("y", self.l_dim)
            + names("e", self.l_dim)
            + names("r", self.l_dim)
            + [f"x{i + 1}" for i in range(self.n_dim)]
        )
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(self._len):
                row = [i]
                for arr in (self._u, self._y, self._e, self._r, self._x):
                    row.extend(repr(float(v)) for v in arr[i])
                writer.writerow(row)


def step_innovation(model: StateSpaceModel, x, u, e):
    """One step of the innovation form.

    Returns ``(x_next, y)`` with ``y = C x + D u + e`` and
    ``x_next = A x + B u + K e``.
    """
    x = np.asarray(x, dtype=float).reshape(model.n)
    u = np.asarray(u, dtype=float).reshape(model.r)
    e = np.asarray(e, dtype=float).reshape(model.l)
    y = model.c @ x + model.d @ u + e
    x_next = model.a @ x + model.b @ u + model.k @ e
    return x_next, y


def step_predictor(model: StateSpaceModel, x, u, y) -> np.ndarray:
    """One state update of the predictor form: ``A_pred x + B_pred u + K y``."""
    x = np.asarray(x, dtype=float).reshape(model.n)
    u = np.asarray(u, dtype=float).reshape(model.r)
    y = np.asarray(y, dtype=float).reshape(model.l)
    return model.a_pred @ x + model.b_pred @ u + model.k @ y


def simulate_open_loop(
    model: StateSpaceModel,
    u_seq,
    noise: NoiseProcess,
    x0=None,
    log: SignalLog | None = None,
) -> SignalLog:
    """Drive the plant with a prescribed input sequence.

    Every step applies the innovation form and logs (u, y, e, r=0, x).  With a
    given log the run is appended in place, so an open-loop phase can seed the
    history of a subsequent closed-loop phase.
    """
    u_seq = np.atleast_2d(np.asarray(u_seq, dtype=float))
    if u_seq.shape[0] == 1 and model.r == 1 and u_seq.shape[1] != 1:
        u_seq = u_seq.T
    if u_seq.shape[0] == 0:
        raise ValueError("u_seq must be nonempty")
    if u_seq.shape[1] != model.r:
        raise ValueError(f"u_seq must have {model.r} columns, got {u_seq.shape[1]}")
    if log is None:
        log = SignalLog(model.r, model.l, model.n)
    x = np.zeros(model.n) if x0 is None else np.asarray(x0, dtype=float).reshape(model.n)
    zero_ref = np.zeros(model.l)
    for u in u_seq:
        e = noise.sample()
        x_next, y = step_innovation(model, x, u, e)
        log.append(u, y, e, zero_ref, x)
        x = x_next
    return log


def run_closed_loop(
    model: StateSpaceModel,
    controller,
    reference,
    steps: int,
    noise: NoiseProcess,
    x0=None,
    log: SignalLog | None = None,
) -> SignalLog:
    """Run ``steps`` of feedback with a strictly causal controller callback.

    At step k the controller receives the log so far (outputs up to y_{k-1})
    and the remaining reference ``reference[k:]`` as preview, and returns u_k;
    only then is y_k realized.  ``reference`` must cover at least ``steps``
    samples; supply extra samples to give the controller preview past the end.
    Controller exceptions are re-raised as :class:`ControlLoopError` with the
    failing step attached.
    """
    reference = np.atleast_2d(np.asarray(reference, dtype=float))
    if reference.shape[0] == 1 and model.l == 1 and reference.shape[1] != 1:
        reference = reference.T
    if reference.shape[1] != model.l:
        raise ValueError(f"reference must have {model.l} columns, got {reference.shape[1]}")
    if reference.shape[0] < steps:
        raise ValueError("reference must cover at least `steps` samples")
    if log is None:
        log = SignalLog(model.r, model.l, model.n)
    x = np.zeros(model.n) if x0 is None else np.asarray(x0, dtype=float).reshape(model.n)
    for k in range(steps):
        try:
            u = controller(log, reference[k:])
        except Exception as exc:  # noqa: BLE001 - step index must be attached
            raise ControlLoopError(k, str(exc)) from exc
        u = np.asarray(u, dtype=float).reshape(model.r)
        e = noise.sample()
        x_next, y = step_innovation(model, x, u, e)
        log.append(u, y, e, reference[k], x)
        x = x_next
    return log


def benchmark_system() -> StateSpaceModel:
    """Fifth-order benchmark plant: two motor-driven circular plates on non-rigid shafts.

    Marginally stable (the open-loop state matrix has an eigenvalue at 1);
    the predictor form is asymptotically stable with spectral radius 0.8.
    """
    a = np.array(
        [
            [4.40, 1.0, 0.0, 0.0, 0.0],
            [-8.09, 0.0, 1.0, 0.0, 0.0],
            [7.83, 0.0, 0.0, 1.0, 0.0],
            [-4.00, 0.0, 0.0, 0.0, 1.0],
            [0.86, 0.0, 0.0, 0.0, 0.0],
        ]
    )
    b = np.array([[0.00098], [0.01299], [0.01859], [0.0033], [-0.00002]])
    c = np.array([[1.0, 0.0, 0.0, 0.0, 0.0]])
    d = np.zeros((1, 1))
    k = np.array([[2.3], [-6.64], [7.515], [-4.0146], [0.86336]])
    return StateSpaceModel(a, b, c, d, k)
