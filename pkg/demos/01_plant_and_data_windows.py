#!/usr/bin/env python3
"""Walkthrough: the benchmark plant, its two state-space forms, and the
structured data matrices that everything else is built from.
"""

import numpy as np

from cldeepc import (
    NoiseProcess,
    benchmark_system,
    block_hankel,
    data_equation_residual,
    pe_order_check,
    psi,
    simulate_open_loop,
    step_innovation,
    step_predictor,
    toeplitz_set,
)
from cldeepc.plant import spectral_radius

# ----------------------------------------------------------------------
# The benchmark plant: fifth order, single input, single output.  The
# open-loop state matrix is marginally stable (an eigenvalue sits at 1),
# while the predictor form A - K C is a comfortable 0.8.
# ----------------------------------------------------------------------
model = benchmark_system()
print("benchmark plant:", model)
print("open-loop spectral radius:   ", spectral_radius(model.a))
print("predictor-form spectral radius:", model.rho_pred)

# ----------------------------------------------------------------------
# Innovation form and predictor form describe the same trajectories: step
# the innovation form, then reconstruct the state by feeding the realized
# output back through the predictor form.
# ----------------------------------------------------------------------
rng = np.random.default_rng(0)
x = np.zeros(model.n)
x_rebuilt = np.zeros(model.n)
drift = 0.0
for _ in range(200):
    u, e = rng.standard_normal(1), rng.standard_normal(1)
    x_next, y = step_innovation(model, x, u, e)
    x_rebuilt = step_predictor(model, x_rebuilt, u, y)
    drift = max(drift, abs(x_next - x_rebuilt).max())
    x = x_next
print(f"\nstate drift between the two forms over 200 steps: {drift:.2e}")

# ----------------------------------------------------------------------
# Simulate an open-loop record and window it into the scaled block-Hankel
# matrices used by every identification step.
# ----------------------------------------------------------------------
noise = NoiseProcess(seed=1, variance=1.0)
u_sequence = rng.standard_normal((500, 1))
log = simulate_open_loop(model, u_sequence, noise)
print(f"\nlogged {len(log)} samples; innovation sample variance {np.var(log.e):.3f}")

window = block_hankel(log.y, start=0, block_rows=4, cols=200)
print("depth-4 output window:", window.matrix.shape, "scaled by 1/sqrt(cols)")
print("input persistently exciting of order 10:", pe_order_check(log.u, 10, 400))

regressors = psi(log.u, log.y, start=0, s=1, cols=480, p=20)
print("stacked regressor window [U_past; U_future; Y_past]:", regressors.matrix.shape)

# ----------------------------------------------------------------------
# The master correctness check of the algebra layer: with the true model
# matrices, both data equations hold exactly on simulated data.
# ----------------------------------------------------------------------
res1, res2 = data_equation_residual(model, log, start=10, s=5, cols=300, p=20)
print(f"\ndata-equation residuals: innovation form {abs(res1).max():.2e}, "
      f"predictor form {abs(res2).max():.2e}")

ops = toeplitz_set(model, s=5, p=20)
relation = ops.l_mat - np.linalg.solve(ops.h_pred, ops.l_mat_pred)
print(f"operator conversion identity residual: {abs(relation).max():.2e}")
