import numpy as np
import pytest

from cldeepc.plant import (
    ControlLoopError,
    NoiseProcess,
    SignalLog,
    StateSpaceModel,
    benchmark_system,
    run_closed_loop,
    simulate_open_loop,
    step_innovation,
    step_predictor,
    spectral_radius,
)

from conftest import random_stable_model


def scalar_model(a=0.5, b=1.0, c=1.0, d=0.0, k=0.2):
    return StateSpaceModel([[a]], [[b]], [[c]], [[d]], [[k]])


class TestStateSpaceModel:
    def test_derived_matrices(self):
        m = scalar_model()
        assert m.a_pred[0, 0] == pytest.approx(0.5 - 0.2)
        assert m.b_pred[0, 0] == pytest.approx(1.0)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            StateSpaceModel(np.eye(2), np.ones((3, 1)), np.ones((1, 2)), [[0.0]], np.ones((2, 1)))
        with pytest.raises(ValueError):
            StateSpaceModel(np.ones((2, 3)), np.ones((2, 1)), np.ones((1, 2)), [[0.0]], np.ones((2, 1)))

    def test_unstable_predictor_form_rejected(self):
        with pytest.raises(ValueError, match="spectral radius"):
            StateSpaceModel([[1.5]], [[1.0]], [[1.0]], [[0.0]], [[0.0]])

    def test_marginal_radius_rejected(self):
        with pytest.raises(ValueError):
            StateSpaceModel([[1.0]], [[1.0]], [[1.0]], [[0.0]], [[0.0]])


class TestStepInnovation:
    def test_zero_dynamics(self):
        m = scalar_model()
        x_next, y = step_innovation(m, [0.0], [0.0], [0.0])
        assert x_next == pytest.approx(0.0)
        assert y == pytest.approx(0.0)

    def test_direct_substitution(self):
        m = scalar_model()
        x_next, y = step_innovation(m, [1.0], [1.0], [0.0])
        assert x_next[0] == pytest.approx(1.5)
        assert y[0] == pytest.approx(1.0)

    def test_benchmark_zero_state_no_feedthrough(self):
        m = benchmark_system()
        _, y = step_innovation(m, np.zeros(5), [1.0], [0.0])
        assert y[0] == pytest.approx(0.0)


class TestStepPredictor:
    def test_zero_case(self):
        m = scalar_model()
        assert step_predictor(m, [0.0], [0.0], [0.0])[0] == pytest.approx(0.0)

    def test_direct_substitution(self):
        m = scalar_model(a=0.5, b=1.0, c=1.0, d=0.0, k=0.2)
        # a_pred = 0.3; x_next = 0.3*1 + 0 + 0.2*1
        assert step_predictor(m, [1.0], [0.0], [1.0])[0] == pytest.approx(0.5)

    def test_matches_innovation_form(self, rng):
        m = random_stable_model(rng, n=4, r=2, l=2)
        x = rng.standard_normal(4)
        u = rng.standard_normal(2)
        e = rng.standard_normal(2)
        x_next, y = step_innovation(m, x, u, e)
        np.testing.assert_allclose(step_predictor(m, x, u, y), x_next, atol=1e-12)


class TestInnovationPredictorEquivalence:
    def test_state_reconstruction_along_trajectories(self, rng):
        for trial in range(10):
            m = random_stable_model(rng, n=int(rng.integers(1, 6)), r=1, l=1)
            noise = NoiseProcess(trial, 1.0)
            u = rng.standard_normal((60, 1))
            log = simulate_open_loop(m, u, noise)
            x = np.zeros(m.n)
            for k in range(len(log)):
                np.testing.assert_allclose(x, log.x[k], atol=1e-9 * (1 + abs(log.x).max()))
                x = step_predictor(m, x, log.u[k], log.y[k])


class TestNoiseProcess:
    def test_identical_seed_bit_identical(self):
        a = NoiseProcess(42, 2.0)
        b = NoiseProcess(42, 2.0)
        sa = np.array([a.sample() for _ in range(50)])
        sb = np.array([b.sample() for _ in range(50)])
        assert (sa == sb).all()

    def test_reset_rewinds(self):
        a = NoiseProcess(7, 1.0)
        first = [a.sample() for _ in range(5)]
        a.reset()
        again = [a.sample() for _ in range(5)]
        assert (np.array(first) == np.array(again)).all()

    def test_zero_variance(self):
        a = NoiseProcess(1, 0.0)
        assert all(a.sample() == 0.0 for _ in range(5))

    def test_matrix_variance_psd(self):
        cov = np.array([[2.0, 1.0], [1.0, 2.0]])
        a = NoiseProcess(3, cov)
        samples = np.array([a.sample() for _ in range(20000)])
        np.testing.assert_allclose(np.cov(samples.T), cov, atol=0.15)

    def test_negative_variance_rejected(self):
        with pytest.raises(ValueError):
            NoiseProcess(0, -1.0)


class TestSimulateOpenLoop:
    def test_all_zero(self):
        m = scalar_model()
        log = simulate_open_loop(m, np.zeros((10, 1)), NoiseProcess(0, 0.0))
        assert len(log) == 10
        assert not log.y.any() and not log.x.any() and not log.e.any()

    def test_empty_input_rejected(self):
        m = scalar_model()
        with pytest.raises(ValueError):
            simulate_open_loop(m, np.zeros((0, 1)), NoiseProcess(0, 1.0))

    def test_determinism(self):
        m = benchmark_system()
        u = np.random.default_rng(5).standard_normal((100, 1))
        log1 = simulate_open_loop(m, u, NoiseProcess(9, 1.0))
        log2 = simulate_open_loop(m, u, NoiseProcess(9, 1.0))
        assert (log1.y == log2.y).all() and (log1.x == log2.x).all()

    def test_noise_sample_variance(self):
        # 500 steps of unit-variance innovations: sample variance within 20%
        m = benchmark_system()
        u = np.random.default_rng(11).standard_normal((500, 1))
        log = simulate_open_loop(m, u, NoiseProcess(123, 1.0))
        assert abs(np.var(log.e) - 1.0) < 0.2


class TestRunClosedLoop:
    def test_zero_controller_zero_noise(self):
        m = scalar_model()
        log = run_closed_loop(m, lambda log, ref: 0.0, np.zeros(20), 20, NoiseProcess(0, 0.0))
        assert not log.y.any() and not log.u.any()

    def test_determinism(self):
        m = benchmark_system()
        ref = np.ones(30)
        ctrl = lambda log, r: 0.1 * (r[0] - (log.y[-1] if len(log) else [0.0])[0])
        log1 = run_closed_loop(m, ctrl, ref, 30, NoiseProcess(2, 1.0))
        log2 = run_closed_loop(m, ctrl, ref, 30, NoiseProcess(2, 1.0))
        assert (log1.y == log2.y).all() and (log1.u == log2.u).all()

    def test_controller_error_carries_step_index(self):
        m = scalar_model()

        def failing(log, ref):
            if len(log) == 3:
                raise RuntimeError("boom")
            return 0.0

        with pytest.raises(ControlLoopError, match="step 3") as excinfo:
            run_closed_loop(m, failing, np.zeros(10), 10, NoiseProcess(0, 0.0))
        assert excinfo.value.step == 3

    def test_causality_one_sample_delay(self):
        # the controller never sees the output of the step it is deciding
        m = scalar_model()
        seen = []

        def probe(log, ref):
            seen.append(len(log))
            return 1.0

        run_closed_loop(m, probe, np.zeros(5), 5, NoiseProcess(0, 1.0))
        assert seen == [0, 1, 2, 3, 4]


class TestBenchmarkSystem:
    def test_printed_entries(self):
        m = benchmark_system()
        assert m.a[0, 0] == 4.40
        assert m.a[1, 0] == -8.09
        assert (m.d == 0).all()
        assert m.b[1, 0] == 0.01299
        assert m.k[4, 0] == 0.86336

    def test_shapes(self):
        m = benchmark_system()
        assert (m.n, m.r, m.l) == (5, 1, 1)

    def test_predictor_form_stable(self):
        m = benchmark_system()
        assert spectral_radius(m.a_pred) < 1.0
        assert m.rho_pred == pytest.approx(0.8, abs=1e-12)


class TestSignalLog:
    def test_csv_columns_scalar(self, tmp_path):
        m = scalar_model()
        log = simulate_open_loop(m, np.ones((3, 1)), NoiseProcess(0, 0.0))
        path = tmp_path / "signals.csv"
        log.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "k,u,y,e,r,x1"
        assert len(lines) == 4

    def test_csv_columns_multivariate(self, tmp_path, rng):
        m = random_stable_model(rng, n=3, r=2, l=2)
        log = simulate_open_loop(m, rng.standard_normal((2, 2)), NoiseProcess(0, np.eye(2)))
        path = tmp_path / "signals.csv"
        log.to_csv(path)
        header = path.read_text().splitlines()[0]
        assert header == "k,u1,u2,y1,y2,e1,e2,r1,r2,x1,x2,x3"

    def test_equal_lengths(self):
        log = SignalLog(1, 1, 2)
        log.append([1.0], [2.0], [0.0], [0.0], [0.0, 0.0])
        assert len(log) == 1
        assert log.u.shape == (1, 1) and log.x.shape == (1, 2)

    def test_growth_preserves_data(self):
        log = SignalLog(1, 1, 1, capacity=2)
        for i in range(40):
            log.append([float(i)], [0.0], [0.0], [0.0], [0.0])
        assert log.u[:, 0].tolist() == [float(i) for i in range(40)]
