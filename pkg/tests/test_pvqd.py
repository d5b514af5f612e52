import numpy as np
import pytest
from scipy.linalg import expm
from scipy.stats import unitary_group

from eaet.bath import SpectralDensityParams, discretize
from eaet.ehrenfest import SIGMA_X, SIGMA_Z, TrajectoryState, pauli_exponential, propagate_rk4
from eaet.pvqd import (
    AdamState,
    OptimizerSettings,
    adam_step,
    evolve_trajectory,
    gradient,
    loss,
    project_step,
)
from eaet.vqc import ansatz_state, ansatz_unitary, zxz_decompose
from eaet.wigner import BathPhasePoint, ThermalState, sample_many

OPT = OptimizerSettings()


def _exact_minimizer(theta, u):
    """Angles whose circuit reproduces u C(theta) exactly."""
    return zxz_decompose(u @ ansatz_unitary(theta))


class TestLoss:
    def test_identity_step(self):
        theta = np.array([0.3, -0.2, 1.0, 0.5])
        assert loss(theta, np.zeros(4), np.eye(2), 0.05) == pytest.approx(0.0, abs=1e-15)

    def test_small_dt_limit_is_variance(self):
        dt = 1e-3
        u = expm(-1j * SIGMA_X * dt)
        direct = (1 - abs(u[0, 0]) ** 2) / dt**2
        value = loss(np.zeros(4), np.zeros(4), u, dt)
        assert value == pytest.approx(direct, rel=1e-9)
        assert value == pytest.approx(1.0, abs=1e-4)

    def test_global_phase_invariant(self):
        rng = np.random.default_rng(0)
        u = unitary_group.rvs(2, random_state=rng)
        theta, d = rng.normal(size=4), rng.normal(size=4)
        base = loss(theta, d, u, 0.05)
        for shift in (0.3, -2.0, 17.0):
            d2 = d.copy()
            d2[0] += shift
            assert loss(theta, d2, u, 0.05) == pytest.approx(base, abs=1e-12)

    def test_non_negative(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            u = unitary_group.rvs(2, random_state=rng)
            assert loss(rng.normal(size=4), rng.normal(size=4), u, 0.1) >= 0.0

    def test_zero_iff_unit_fidelity(self):
        theta = np.array([0.0, 0.4, 0.7, -0.2])
        u = pauli_exponential(1.0, 0.0, -0.6, 0.05)
        d_star = _exact_minimizer(theta, u) - theta
        assert loss(theta, d_star, u, 0.05) < 1e-25

    def test_step_size_independence(self):
        theta = np.array([0.0, 0.4, 0.9, 0.0])
        values = [loss(theta, np.zeros(4), pauli_exponential(1.0, 0.0, -0.7, dt), dt) for dt in (0.01, 0.05)]
        assert abs(values[0] - values[1]) / values[0] < 0.05

    @pytest.mark.parametrize("dt", [0.0, -0.01])
    def test_bad_dt(self, dt):
        with pytest.raises(ValueError):
            loss(np.zeros(4), np.zeros(4), np.eye(2), dt)

    def test_shot_estimate_centered(self):
        theta = np.array([0.0, 0.4, 0.9, 0.0])
        u = pauli_exponential(1.0, 0.0, -0.7, 0.05)
        exact = loss(theta, np.zeros(4), u, 0.05)
        rng = np.random.default_rng(2)
        est = np.array([loss(theta, np.zeros(4), u, 0.05, shots=50000, rng=rng) for _ in range(2000)])
        sigma = np.std(est) / np.sqrt(est.size)
        assert abs(est.mean() - exact) < 4 * sigma


class TestGradient:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        h = 1e-5
        for _ in range(100):
            theta, d = rng.uniform(-np.pi, np.pi, 4), rng.uniform(-0.5, 0.5, 4)
            dt = rng.uniform(0.01, 0.1)
            u = pauli_exponential(rng.normal(), 0.0, rng.normal(), dt)
            g = gradient(theta, d, u, dt)
            assert g[0] == 0.0
            for i in (1, 2, 3):
                e = np.zeros(4)
                e[i] = h
                fd = (loss(theta, d + e, u, dt) - loss(theta, d - e, u, dt)) / (2 * h)
                assert abs(g[i] - fd) < 1e-5

    def test_stationary_at_exact_minimum(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            theta = rng.normal(size=4)
            u = pauli_exponential(rng.normal(), 0.0, rng.normal(), 0.05)
            d_star = _exact_minimizer(theta, u) - theta
            assert np.linalg.norm(gradient(theta, d_star, u, 0.05)) < 1e-8

    def test_batched_rows_match(self):
        rng = np.random.default_rng(5)
        theta, d = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
        u = unitary_group.rvs(2, size=6, random_state=rng)
        g = gradient(theta, d, u, 0.05)
        for k in range(6):
            np.testing.assert_allclose(g[k], gradient(theta[k], d[k], u[k], 0.05), atol=1e-14)


class TestAdam:
    def test_zero_gradient(self):
        adam = AdamState.zeros(4)
        d = np.array([0.1, -0.2, 0.3, 0.0])
        _, out = adam_step(adam, np.zeros(4), d, OPT)
        np.testing.assert_array_equal(out, d)

    def test_first_step(self):
        _, out = adam_step(AdamState.zeros(3), np.array([1.0, 0.0, 0.0]), np.zeros(3), OPT)
        np.testing.assert_allclose(out, [-OPT.learning_rate, 0.0, 0.0], rtol=1e-7)

    def test_moments(self):
        adam, _ = adam_step(AdamState.zeros(2), np.array([2.0, -1.0]), np.zeros(2), OPT)
        np.testing.assert_allclose(adam.m, [0.2, -0.1])
        np.testing.assert_allclose(adam.v, [0.004, 0.001])
        assert adam.t == 1

    def test_step_bounded_for_constant_magnitude(self):
        rng = np.random.default_rng(6)
        adam, d = AdamState.zeros(3), np.zeros(3)
        for _ in range(300):
            g = 0.7 * rng.choice([-1.0, 1.0], size=3)
            adam, new = adam_step(adam, g, d, OPT)
            assert np.all(np.abs(new - d) <= OPT.learning_rate * (1 + 1e-9))
            d = new

    def test_step_bounded_in_general(self):
        # sparse gradients can exceed alpha, never alpha (1 - b1) / sqrt(1 - b2)
        bound = OPT.learning_rate * (1 - OPT.beta1) / np.sqrt(1 - OPT.beta2)
        rng = np.random.default_rng(7)
        adam, d = AdamState.zeros(4), np.zeros(4)
        for t in range(2000):
            g = rng.normal(size=4) * (10.0 ** rng.integers(-6, 3, size=4)) * (rng.random(4) < 0.2)
            adam, new = adam_step(adam, g, d, OPT)
            assert np.all(np.abs(new - d) <= bound * (1 + 1e-9))
            d = new


class TestProjectStep:
    def test_identity(self):
        theta = np.array([0.0, 0.3, 0.8, 0.1])
        new, rep = project_step(theta, np.eye(2), 0.05)
        np.testing.assert_array_equal(new, theta)
        assert rep.iterations <= 1
        assert rep.converged

    def test_rabi_step_fidelity(self):
        u = expm(-1j * SIGMA_X * 0.05)
        new, rep = project_step(np.zeros(4), u, 0.05)
        target = u[:, 0]
        assert abs(np.vdot(target, ansatz_state(new))) ** 2 >= 1 - 1e-8
        assert rep.converged
        assert rep.loss < OPT.tol_loss

    def test_composed_rabi(self):
        theta = np.zeros(4)
        u = expm(-1j * SIGMA_X * 0.05)
        for _ in range(100):
            theta, _ = project_step(theta, u, 0.05)
        amp = ansatz_state(theta)
        assert abs(abs(amp[0]) ** 2 - abs(amp[1]) ** 2 - np.cos(10.0)) < 2e-3

    def test_batch_rows_independent(self):
        rng = np.random.default_rng(8)
        theta = rng.normal(size=(5, 4))
        u = np.stack([pauli_exponential(1.0, 0.0, h, 0.05) for h in rng.normal(size=5)])
        batch, rep = project_step(theta, u, 0.05)
        for k in range(5):
            single, _ = project_step(theta[k], u[k], 0.05)
            np.testing.assert_array_equal(batch[k], single)
        assert rep.converged.all()

    def test_iteration_cap_flags_non_convergence(self):
        u = pauli_exponential(1.0, 0.0, 3.0, 0.05)
        _, rep = project_step(np.zeros(4), u, 0.05, OptimizerSettings(max_iters=3))
        assert not rep.converged
        assert rep.iterations == 3

    def test_shot_mode_runs_fixed_budget(self):
        u = pauli_exponential(1.0, 0.0, -0.5, 0.05)
        settings = OptimizerSettings(shot_iters=40)
        a, rep = project_step(np.zeros(4), u, 0.05, settings, shots=50000, rng=np.random.default_rng(1))
        b, _ = project_step(np.zeros(4), u, 0.05, settings, shots=50000, rng=np.random.default_rng(1))
        np.testing.assert_array_equal(a, b)
        assert rep.iterations == 40

    def test_shot_mode_needs_rng(self):
        with pytest.raises(ValueError):
            project_step(np.zeros(4), np.eye(2), 0.05, shots=100)


class TestSettings:
    @pytest.mark.parametrize("kwargs", [dict(learning_rate=0.0), dict(beta1=1.0), dict(beta2=-0.1),
                                        dict(epsilon=0.0), dict(tol_loss=0.0), dict(max_iters=0),
                                        dict(shot_iters=2.5), dict(shot_lr_schedule="cosine")])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            OptimizerSettings(**kwargs)


class TestEvolveTrajectory:
    def test_rabi(self):
        bath = discretize(SpectralDensityParams(0.0, 2.5), 60)
        res = evolve_trajectory(BathPhasePoint.zeros(60), bath, 1.0, 0.05, 300, substeps=8)
        np.testing.assert_allclose(res.sigma_z, np.cos(2 * res.times), atol=2e-3)
        np.testing.assert_allclose(res.p_reactant, np.cos(res.times) ** 2, atol=1e-3)
        assert res.unconverged_steps == 0

    def test_matches_rk4_per_trajectory(self):
        bath = discretize(SpectralDensityParams(1.2, 2.5), 60)
        pts = sample_many(bath, ThermalState(0.2), np.random.default_rng(21), 12)
        res = evolve_trajectory(pts, bath, 1.0, 0.05, 300, substeps=8)
        _, p_rk4, _ = propagate_rk4(TrajectoryState.initial(bath, pts), 0.05, 300, 8)
        assert np.max(np.abs(res.p_reactant - p_rk4)) <= 5e-3
        assert res.unconverged_steps.sum() == 0

    @pytest.mark.parametrize("xi, wc, beta", [(1.2, 2.5, 0.2), (0.3, 5.0, 5.0)])
    def test_no_convergence_failures(self, xi, wc, beta):
        bath = discretize(SpectralDensityParams(xi, wc), 60)
        pts = sample_many(bath, ThermalState(beta), np.random.default_rng(22), 8)
        res = evolve_trajectory(pts, bath, 1.0, 0.05, 300, substeps=8)
        assert res.unconverged_steps.sum() == 0

    def test_initial_point(self):
        bath = discretize(SpectralDensityParams(1.2, 2.5), 10)
        res = evolve_trajectory(BathPhasePoint.zeros(10), bath, 1.0, 0.05, 3, substeps=8)
        assert res.p_reactant[0] == 1.0
        assert res.sigma_z[0] == 1.0
        np.testing.assert_allclose(res.times, [0, 0.05, 0.1, 0.15])
