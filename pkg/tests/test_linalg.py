import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from qsa import linalg


class TestEigenvalues:
    def test_upper_triangular_friction_example(self):
        spec = linalg.eigenvalues([[0.0, -1.0], [0.0, -0.1]])
        np.testing.assert_allclose(np.sort(spec.eigenvalues.real), [-0.1, 0.0], atol=1e-12)
        assert spec.max_real_part == pytest.approx(0.0, abs=1e-12)

    def test_rotation_gives_conjugate_pair(self):
        spec = linalg.eigenvalues([[0.0, 1.0], [-1.0, 0.0]])
        np.testing.assert_allclose(np.sort(spec.eigenvalues.imag), [-1.0, 1.0], atol=1e-12)

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            linalg.eigenvalues(np.zeros((2, 3)))

    def test_hurwitz_with_margin(self):
        ok, _ = linalg.is_hurwitz(-2 * np.eye(3))
        assert ok
        ok1, _ = linalg.is_hurwitz(-0.5 * np.eye(3), margin=1.0)
        assert not ok1


class TestMatrixExp:
    def test_nilpotent(self):
        np.testing.assert_allclose(linalg.matrix_exp([[0.0, 1.0], [0.0, 0.0]]), [[1.0, 1.0], [0.0, 1.0]])

    @settings(max_examples=30, deadline=None)
    @given(arrays(float, (3, 3), elements=st.floats(-2, 2)), st.floats(-1, 1), st.floats(-1, 1))
    def test_group_law(self, a, s, t):
        lhs = linalg.matrix_exp((s + t) * a)
        rhs = linalg.matrix_exp(s * a) @ linalg.matrix_exp(t * a)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9)


class TestLyapunov:
    def test_scalar(self):
        np.testing.assert_allclose(linalg.solve_lyapunov([[-1.0]], [[2.0]]), [[1.0]])

    def test_matches_scipy(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(4, 4)) - 4 * np.eye(4)
        q = np.eye(4)
        p = linalg.solve_lyapunov(a, q)
        ref = scipy.linalg.solve_continuous_lyapunov(a.T, -q)
        np.testing.assert_allclose(p, ref, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(a.T @ p + p @ a + q, 0, atol=1e-10)

    def test_warm_start_same_answer(self):
        a = np.array([[-1.0, 2.0], [0.0, -3.0]])
        q = np.eye(2)
        p = linalg.solve_lyapunov(a, q)
        np.testing.assert_allclose(linalg.solve_lyapunov(a, q, initial=p + 0.3), p, atol=1e-12)

    def test_not_hurwitz(self):
        with pytest.raises(linalg.NotHurwitzError):
            linalg.solve_lyapunov([[0.0, 1.0], [0.0, -0.1]], np.eye(2))

    def test_asymmetric_q_rejected(self):
        with pytest.raises(ValueError):
            linalg.solve_lyapunov(-np.eye(2), [[1.0, 1.0], [0.0, 1.0]])


class TestRiccati:
    A = np.array([[0.0, 1.0], [0.0, -0.1]])
    B = np.array([[0.0], [1.0]])
    M = np.eye(2)
    R = np.array([[10.0]])

    def test_matches_scipy_care(self):
        res = linalg.riccati_oracle(self.A, self.B, self.M, self.R, [[-1.0, -2.0]])
        ref = scipy.linalg.solve_continuous_are(self.A, self.B, self.M, self.R)
        np.testing.assert_allclose(res.p, ref, rtol=1e-9)
        np.testing.assert_allclose(res.k, -np.linalg.solve(self.R, self.B.T @ ref), rtol=1e-9)
        assert linalg.riccati_residual(self.A, self.B, self.M, self.R, res.p) < 1e-8

    def test_value_matrices_decrease(self):
        res = linalg.riccati_oracle(self.A, self.B, self.M, self.R, [[-1.0, 0.0]])
        ps = [p for p, _ in res.history]
        for p_prev, p_next in zip(ps[1:], ps[2:]):
            assert np.min(np.linalg.eigvalsh(p_prev - p_next)) > -1e-9

    def test_destabilizing_initial_gain(self):
        with pytest.raises(linalg.LinalgError):
            linalg.riccati_oracle(self.A, self.B, self.M, self.R, [[1.0, 0.0]])


class TestWorkedExamples:
    def test_eigenvalues_simple(self):
        np.testing.assert_allclose(linalg.eigenvalues(np.eye(2)).eigenvalues, [1.0, 1.0])
        np.testing.assert_allclose(np.sort(linalg.eigenvalues(np.diag([-1.0, -3.0])).eigenvalues.real), [-3.0, -1.0])

    @pytest.mark.parametrize(
        "m, margin, expected",
        [(np.diag([-2.0, -3.0]), 1.0, True), (np.diag([-0.5, -3.0]), 1.0, False), ([[-1.5]], 1.0, True), ([[-1.5]], 0.0, True)],
    )
    def test_hurwitz_table(self, m, margin, expected):
        assert linalg.is_hurwitz(m, margin)[0] is expected

    def test_matrix_exp_simple(self):
        np.testing.assert_allclose(linalg.matrix_exp(np.zeros((3, 3))), np.eye(3))
        np.testing.assert_allclose(linalg.matrix_exp([[-np.log(2.0)]]), [[0.5]])

    def test_lyapunov_simple(self):
        np.testing.assert_allclose(linalg.solve_lyapunov(-np.eye(2), np.eye(2)), np.eye(2) / 2)
        np.testing.assert_allclose(linalg.solve_lyapunov(np.diag([-1.0, -2.0]), np.eye(2)), np.diag([0.5, 0.25]))

    def test_lyapunov_friction_closed_loop(self):
        k = np.array([[-1.0, -2.0]])
        b = np.array([[0.0], [1.0]])
        q = np.eye(2) + 10 * k.T @ k
        a = np.array([[0.0, 1.0], [0.0, -0.1]]) + b @ k
        p = linalg.solve_lyapunov(a, q)
        assert np.linalg.norm(a.T @ p + p @ a + q) < 1e-9
        # with the opposite sign on the coupling term this gain does not stabilize
        with pytest.raises(linalg.NotHurwitzError):
            linalg.solve_lyapunov(np.array([[0.0, -1.0], [0.0, -0.1]]) + b @ k, q)

    def test_scalar_riccati(self):
        res = linalg.riccati_oracle([[-1.0]], [[1.0]], [[1.0]], [[1.0]], [[0.0]])
        assert res.p[0, 0] == pytest.approx(np.sqrt(2) - 1, abs=1e-12)
        assert res.k[0, 0] == pytest.approx(-(np.sqrt(2) - 1), abs=1e-12)

    def test_zero_state_cost(self):
        res = linalg.riccati_oracle(np.diag([-1.0, -2.0]), [[0.0], [1.0]], np.zeros((2, 2)), [[1.0]], [[0.0, 0.0]])
        np.testing.assert_allclose(res.p, 0, atol=1e-14)
        np.testing.assert_allclose(res.k, 0, atol=1e-14)
