import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from qsa import linalg, lqr

K = np.array([[-1.0, 0.0]])
K0 = np.array([[-1.0, -2.0]])


@pytest.fixture(scope="module")
def plant():
    return lqr.friction_double_integrator()


@pytest.fixture(scope="module")
def basis():
    return lqr.QuadraticBasis(2, 1)


class TestBasis:
    def test_order_and_names(self, basis):
        assert basis.size == 6
        assert basis.names() == ["x1^2", "x2^2", "x1*x2", "x1*u", "x2*u", "u^2"]
        np.testing.assert_array_equal(basis([[2.0, 3.0]], [[5.0]]), [[4.0, 9.0, 6.0, 10.0, 15.0, 25.0]])

    @settings(max_examples=40, deadline=None)
    @given(arrays(float, 6, elements=st.floats(-5, 5)), arrays(float, 3, elements=st.floats(-3, 3)))
    def test_matrix_form(self, theta, z):
        basis = lqr.QuadraticBasis(2, 1)
        w = basis.to_matrix(theta)
        assert z @ w @ z == pytest.approx((basis(z[:2], z[2:]) @ theta).item(), abs=1e-9)
        np.testing.assert_allclose(basis.from_matrix(w), theta, atol=1e-12)


class TestModel:
    def test_controllable(self, plant):
        model, _ = plant
        assert model.is_controllable()
        assert not lqr.LtiModel(np.eye(2), np.array([[1.0], [1.0]])).is_controllable()

    def test_nonstabilizing_simulation_gain(self, plant):
        model, _ = plant
        with pytest.raises(linalg.NotHurwitzError):
            lqr.simulate_closed_loop(model, [[1.0, 0.0]], None, [1.0, 0.0], 0.01, 1.0)


class TestQFunction:
    def test_exact_q_has_zero_bellman_error(self, plant, basis):
        model, cost = plant
        _, theta = lqr.q_true(model, cost, K, basis)
        rng = np.random.default_rng(0)
        x, u = rng.normal(size=(50, 2)), rng.normal(size=(50, 1))
        np.testing.assert_allclose(lqr.model_based_bellman_error(theta, model, K, basis, cost, x, u), 0, atol=1e-10)

    def test_q_on_policy_equals_value(self, plant, basis):
        model, cost = plant
        P, theta = lqr.q_true(model, cost, K, basis)
        H = cost.matrix() + basis.to_matrix(theta)
        T = np.vstack([np.eye(2), K])
        np.testing.assert_allclose(T.T @ H @ T, T.T @ cost.matrix() @ T + (model.closed_loop(K).T @ P + P @ model.closed_loop(K)) + P, atol=1e-10)

    def test_sampled_bellman_error_is_first_order(self, plant, basis):
        model, cost = plant
        _, theta = lqr.q_true(model, cost, K, basis)
        gaps = []
        for dt in (2e-3, 1e-3):
            rec = lqr.simulate_closed_loop(model, K0, lqr.lqr_probe(0), [1.0, 0.0], dt, 5.0)
            reg = lqr.regressors(rec, K, basis, cost)
            sampled = lqr.bellman_error(theta, reg)
            exact = lqr.model_based_bellman_error(theta, model, K, basis, cost, rec.x[:-1], rec.u[:-1])
            gaps.append(np.sqrt(np.mean((sampled - exact) ** 2)))
        assert gaps[0] / gaps[1] == pytest.approx(2.0, rel=0.1)

    def test_greedy_update_of_optimal_q_is_fixed_point(self, plant, basis):
        model, cost = plant
        P = scipy.linalg.solve_continuous_are(model.A, model.B, cost.M, cost.R)
        k_star = -np.linalg.solve(cost.R, model.B.T @ P)
        _, theta = lqr.q_true(model, cost, k_star, basis)
        np.testing.assert_allclose(lqr.policy_update(theta, basis, cost), k_star, rtol=1e-9)

    def test_policy_update_rejects_indefinite(self, basis):
        cost = lqr.QuadCost(np.eye(2), np.array([[1.0]]))
        with pytest.raises(lqr.PolicyUpdateError):
            lqr.policy_update(np.array([0, 0, 0, 0, 0, -2.0]), basis, cost)


class TestEvaluation:
    def test_two_phase_estimate_close_to_exact(self, plant, basis):
        model, cost = plant
        _, theta = lqr.q_true(model, cost, K, basis)
        rec = lqr.simulate_closed_loop(model, K0, lqr.lqr_probe(0), np.zeros(2), 1e-3, 60.0)
        res = lqr.policy_evaluation(lqr.regressors(rec, K, basis, cost), 20.0)
        assert np.linalg.norm(res.theta - theta) / np.linalg.norm(theta) < 0.05
        assert res.condition_number < 1e8

    def test_insufficient_excitation(self, plant, basis):
        model, cost = plant
        rec = lqr.simulate_closed_loop(model, K0, None, [1.0, 0.0], 1e-2, 10.0)
        with pytest.raises(lqr.InsufficientExcitation):
            lqr.estimate_gain_matrix(lqr.regressors(rec, K, basis, cost), 5.0)

    def test_white_noise_is_seeded(self):
        a = lqr.white_noise_input(3, 1000, 4.0)
        np.testing.assert_array_equal(a, lqr.white_noise_input(3, 1000, 4.0))
        assert np.var(a) == pytest.approx(4.0, rel=0.15)

    def test_csv(self, plant, basis, tmp_path):
        model, cost = plant
        rec = lqr.simulate_closed_loop(model, K0, lqr.lqr_probe(1), np.zeros(2), 1e-2, 30.0)
        rec.to_csv(tmp_path / "x.csv")
        res = lqr.policy_evaluation(lqr.regressors(rec, K, basis, cost), 10.0, stride=10)
        res.to_csv(tmp_path / "theta.csv", basis.names())
        head = (tmp_path / "theta.csv").read_text().splitlines()[0]
        assert head == "t,x1^2,x2^2,x1*x2,x1*u,x2*u,u^2,bellman_error"


class TestPolicyIteration:
    def test_exact_mode_is_kleinman(self, plant):
        model, cost = plant
        res = lqr.pia_loop(model, cost, K, K0, None, 6, mode="exact")
        ref = linalg.riccati_oracle(model.A, model.B, cost.M, cost.R, K)
        for k_pia, (_, k_ref) in zip(res.gains, ref.history):
            np.testing.assert_allclose(k_pia, k_ref, rtol=1e-10)

    def test_k_star_matches_care(self, plant):
        model, cost = plant
        res = lqr.pia_loop(model, cost, K, K0, None, 1, mode="exact")
        P = scipy.linalg.solve_continuous_are(model.A, model.B, cost.M, cost.R)
        np.testing.assert_allclose(res.k_star, -np.linalg.solve(cost.R, model.B.T @ P), rtol=1e-9)

    def test_bad_mode_and_gain(self, plant):
        model, cost = plant
        with pytest.raises(ValueError):
            lqr.pia_loop(model, cost, K, K0, None, 1, mode="magic")
        with pytest.raises(linalg.NotHurwitzError):
            lqr.pia_loop(model, cost, [[1.0, 0.0]], K0, None, 1, mode="exact")


class TestWorkedExamples:
    def test_no_probe_no_motion(self, plant):
        model, _ = plant
        rec = lqr.simulate_closed_loop(model, K0, None, np.zeros(2), 1e-2, 5.0)
        assert not rec.x.any()

    def test_state_linear_in_probe_amplitude(self, plant):
        model, _ = plant
        a = lqr.simulate_closed_loop(model, K0, lqr.lqr_probe(2, amplitude=0.01), np.zeros(2), 1e-2, 20.0)
        b = lqr.simulate_closed_loop(model, K0, lqr.lqr_probe(2, amplitude=0.02), np.zeros(2), 1e-2, 20.0)
        np.testing.assert_allclose(b.x, 2 * a.x, rtol=1e-12, atol=1e-15)
        assert np.max(np.abs(a.x)) < 1.0

    def test_on_policy_regressors(self, plant, basis):
        model, cost = plant
        k = np.array([[-1.0, -2.0]])
        rec = lqr.simulate_closed_loop(model, k, None, [1.0, -0.5], 1e-3, 2.0)
        reg = lqr.regressors(rec, k, basis, cost)
        psi = basis(rec.x, rec.x @ k.T)
        np.testing.assert_allclose(reg.zeta, np.diff(psi, axis=0) / 1e-3, atol=1e-9)
        c = cost(rec.x, rec.x @ k.T)
        np.testing.assert_allclose(reg.b, c[:-1] + np.diff(c) / 1e-3, atol=1e-9)
        # theta = 0 leaves b; zeta = 0 leaves b
        assert lqr.bellman_error(np.zeros(6), reg[5]) == pytest.approx(reg.b[5])
        assert lqr.bellman_error(np.ones(6), lqr.RegressorSample(0.0, np.zeros(6), 1.25)) == 1.25

    def test_constant_regressor_is_singular(self):
        v = np.arange(1.0, 7.0)
        reg = lqr.Regressors(np.arange(100) * 0.1, np.tile(v, (100, 1)), np.zeros(100), 0.1)
        with pytest.raises(lqr.InsufficientExcitation):
            lqr.estimate_gain_matrix(reg, 5.0)

    def test_unprobed_on_policy_data_is_unidentifiable(self, plant, basis):
        model, cost = plant
        k = np.array([[-1.0, -2.0]])
        rec = lqr.simulate_closed_loop(model, k, None, [1.0, 0.0], 1e-2, 20.0)
        with pytest.raises(lqr.InsufficientExcitation):
            lqr.policy_evaluation(lqr.regressors(rec, k, basis, cost), 10.0)

    def test_zero_state_cost_gives_zero_q(self):
        model = lqr.LtiModel(np.diag([-1.0, -2.0]), np.array([[0.0], [1.0]]))
        cost = lqr.QuadCost(np.zeros((2, 2)), np.array([[1.0]]))
        P, theta = lqr.q_true(model, cost, np.zeros((1, 2)))
        np.testing.assert_allclose(P, 0, atol=1e-15)
        np.testing.assert_allclose(theta, 0, atol=1e-15)

    def test_scalar_q_by_hand(self):
        model = lqr.LtiModel(np.array([[-1.0]]), np.array([[1.0]]))
        cost = lqr.QuadCost(np.array([[1.0]]), np.array([[1.0]]))
        P, theta = lqr.q_true(model, cost, np.array([[0.0]]))
        assert P[0, 0] == pytest.approx(0.5)
        # W = [[A'P + PA + P, PB], [B'P, 0]] = [[-0.5, 0.5], [0.5, 0]] -> (x^2, x*u, u^2)
        np.testing.assert_allclose(theta, [-0.5, 1.0, 0.0])

    def test_update_examples(self, plant, basis):
        model, cost = plant
        assert np.all(lqr.policy_update(np.array([1.0, 2.0, 0.5, 0.0, 0.0, 3.0]), basis, cost) == 0)
        theta = np.array([0.3, 0.1, 0.2, 1.0, -2.0, 0.0])
        k1 = lqr.policy_update(theta, basis, cost)
        k10 = lqr.policy_update(theta, basis, lqr.QuadCost(cost.M, 10 * cost.R))
        np.testing.assert_allclose(k10, k1 / 10)
        P, th = lqr.q_true(model, cost, K, basis)
        np.testing.assert_allclose(lqr.policy_update(th, basis, cost), -np.linalg.solve(cost.R, model.B.T @ P), rtol=1e-12)

    def test_exact_q_solves_fixed_point_on_grid(self, plant, basis):
        model, cost = plant
        _, theta = lqr.q_true(model, cost, K, basis)
        g = np.linspace(-2, 2, 5)
        x = np.array([[a, b] for a in g for b in g for _ in g])
        u = np.array([[c] for _ in g for _ in g for c in g])
        assert np.abs(lqr.model_based_bellman_error(theta, model, K, basis, cost, x, u)).max() < 1e-8

    def test_pia_from_optimum_stays(self, plant):
        model, cost = plant
        k_star = lqr.pia_loop(model, cost, K, K0, None, 1, mode="exact").k_star
        res = lqr.pia_loop(model, cost, k_star, K0, None, 3, mode="exact")
        assert max(res.distances) < 1e-9


@pytest.fixture(scope="module")
def seed0_run(plant, basis):
    model, cost = plant
    rec = lqr.simulate_closed_loop(model, K0, lqr.lqr_probe(0), np.zeros(2), 1e-3, 200.0)
    reg = lqr.regressors(rec, K, basis, cost)
    return reg, lqr.policy_evaluation(reg, 20.0)


class TestTwoPhaseProperties:
    def test_gain_matrix_symmetric_psd(self, seed0_run):
        _, res = seed0_run
        np.testing.assert_array_equal(res.G, res.G.T)
        assert np.linalg.eigvalsh(res.G).min() > 0

    def test_linearisation_close_to_minus_identity(self, seed0_run):
        reg, res = seed0_run
        late = reg.zeta[reg.times >= 20.0]
        G_late = late.T @ late / len(late)
        lam = np.linalg.eigvals(np.linalg.solve(res.G, G_late))
        assert np.all(lam.real > 0.5) and np.all(lam.real < 2.0)
        # with g = 2 the scaled linearisation -g G^-1 G_late is below -1
        assert np.all(-2.0 * lam.real < -1.0)

    def test_near_regression_solution(self, seed0_run):
        reg, res = seed0_run
        z, b = reg.zeta[reg.times >= 20.0], reg.b[reg.times >= 20.0]
        theta_ls = -np.linalg.solve(z.T @ z, z.T @ b)
        assert np.linalg.norm(res.theta - theta_ls) / np.linalg.norm(theta_ls) < 0.01
