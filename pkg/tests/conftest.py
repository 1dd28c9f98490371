"""Shared helpers: randomized stable systems, seeded simulations, and the
innovation-free-target datasets used for coefficient-recovery checks.
"""

import numpy as np
import pytest

from cldeepc.matrices import block_hankel, psi
from cldeepc.plant import NoiseProcess, StateSpaceModel, simulate_open_loop
from cldeepc.predictors import IvDataset


def random_stable_model(
    rng: np.random.Generator,
    n: int,
    r: int = 1,
    l: int = 1,
    rho_pred: float = 0.7,
    rho_open_max: float = 0.98,
) -> StateSpaceModel:
    """Random model with prescribed predictor-form spectral radius.

    The predictor-form state matrix is drawn directly and rescaled, so the
    requested radius is exact; the gain is shrunk until the open-loop state
    matrix stays stable too, keeping simulated signals bounded.
    """
    a_pred = rng.standard_normal((n, n))
    a_pred *= rho_pred / max(abs(np.linalg.eigvals(a_pred)))
    c = rng.standard_normal((l, n))
    b_pred = rng.standard_normal((n, r))
    d = rng.standard_normal((l, r)) * 0.5
    k = rng.standard_normal((n, l)) * 0.5
    for _ in range(60):
        a = a_pred + k @ c
        if max(abs(np.linalg.eigvals(a))) <= rho_open_max:
            return StateSpaceModel(a, b_pred + k @ d, c, d, k)
        k *= 0.7
    raise AssertionError("could not stabilize the open-loop matrix")


def simulate_random(
    model: StateSpaceModel,
    steps: int,
    seed: int,
    input_var: float = 1.0,
    noise_var: float = 1.0,
):
    """Seeded open-loop run with white Gaussian input and innovation noise."""
    rng = np.random.default_rng(seed + 77_000)
    u = np.sqrt(input_var) * rng.standard_normal((steps, model.r))
    noise = NoiseProcess(seed, noise_var * np.eye(model.l))
    return simulate_open_loop(model, u, noise)


def clean_target_dataset(model: StateSpaceModel, nbar: int, p: int, seed: int, s: int = 1) -> IvDataset:
    """Dataset with noisy persistently exciting regressors but noise-free targets.

    The future-output block is rebuilt from y - e (the innovation-free part of
    the output), so the regression residual reduces to the state-truncation
    term and the fitted coefficients can be compared against the analytic
    predictor Markov parameters directly.
    """
    log = simulate_random(model, nbar + 5, seed)
    end = len(log)
    start = end - nbar
    n_cols = nbar - p - s + 1
    psi_mat = psi(log.u, log.y, start, s, n_cols, p)
    y_clean = log.y - log.e
    y_future = block_hankel(y_clean, start + p, s, n_cols)
    return IvDataset(
        psi=psi_mat,
        y_future=y_future,
        z=psi_mat.matrix,
        start=start,
        p=p,
        s=s,
        n_cols=n_cols,
    )


def brute_force_box_qp(h: np.ndarray, g: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Exact box-QP solution by enumerating every active-set pattern.

    Each variable is free, at its lower bound, or at its upper bound; for
    every pattern the reduced equality system is solved and the KKT sign
    conditions checked.  Independent of the production solver.
    """
    import itertools

    n = len(g)
    best_val, best_x = np.inf, None
    all_idx = np.arange(n)
    for pattern in itertools.product((-1, 0, 1), repeat=n):
        pattern = np.array(pattern)
        free = all_idx[pattern == 0]
        x = np.where(pattern < 0, lo, hi).astype(float)
        if free.size:
            fixed = all_idx[pattern != 0]
            rhs = -g[free]
            if fixed.size:
                rhs = rhs - h[np.ix_(free, fixed)] @ x[fixed]
            x[free] = np.linalg.solve(h[np.ix_(free, free)], rhs)
        if not (np.all(x >= lo - 1e-9) and np.all(x <= hi + 1e-9)):
            continue
        grad = h @ x + g
        # multipliers must push inward at active bounds, vanish at free ones
        if np.any(grad[pattern == -1] < -1e-8) or np.any(grad[pattern == 1] > 1e-8):
            continue
        if np.any(np.abs(grad[pattern == 0]) > 1e-7 * (1 + np.abs(g).max())):
            continue
        val = 0.5 * x @ h @ x + g @ x
        if val < best_val:
            best_val, best_x = val, x
    return best_val, best_x


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
