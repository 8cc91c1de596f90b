import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from qsa.signals import ProbingSignal, SawtoothSignal, a3_defect, first_primes


def test_first_primes():
    assert first_primes(6) == [2, 3, 5, 7, 11, 13]


class TestProbingSignal:
    def test_standard_moments(self):
        sig = ProbingSignal.standard(3)
        mom = sig.ergodic_moments(1e6)
        np.testing.assert_allclose(mom.mean, 0, atol=1e-5)
        np.testing.assert_allclose(mom.covariance, np.eye(3), atol=1e-5)

    def test_closed_form_moments_match_quadrature(self):
        sig = ProbingSignal.random_sum(3, seed=4, dim=2, max_frequency=7.0)
        T = 3.3
        mom = sig.ergodic_moments(T)
        num = np.array([[quad(lambda t: sig(t)[i] * sig(t)[j], 0, T, limit=200)[0] / T for j in range(2)] for i in range(2)])
        np.testing.assert_allclose(mom.covariance, num, atol=1e-10)
        dnum = quad(lambda t: sig.derivative(t)[0] ** 2, 0, T, limit=200)[0] / T
        assert mom.derivative_covariance[0, 0] == pytest.approx(dnum, rel=1e-9)

    def test_derivative_and_integrals(self):
        sig = ProbingSignal.random_sum(5, seed=1, dim=2)
        t, h = 1.7, 1e-6
        np.testing.assert_allclose((sig(t + h) - sig(t - h)) / (2 * h), sig.derivative(t), rtol=1e-6, atol=1e-6)
        np.testing.assert_allclose(sig.integral_1(t), [quad(lambda s: sig(s)[i], 0, t)[0] for i in range(2)], atol=1e-10)
        np.testing.assert_allclose(sig.integral_2(t), [quad(lambda s: sig.integral_1(s)[i], 0, t)[0] for i in range(2)], atol=1e-10)

    def test_xi_I_mean_limits(self):
        sig = ProbingSignal.random_sum(4, seed=2)
        np.testing.assert_allclose(sig.xi_I_mean(1e7), sig.xi_I_mean(), atol=1e-6)
        np.testing.assert_allclose(sig.xi_I_covariance(1e7), sig.xi_I_covariance(), atol=1e-6)

    def test_json_roundtrip(self):
        sig = ProbingSignal.random_sum(6, seed=3, dim=2)
        back = ProbingSignal.from_json(sig.to_json())
        np.testing.assert_array_equal(back(np.linspace(0, 5, 11)), sig(np.linspace(0, 5, 11)))

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0, 100), st.integers(0, 2**32 - 1))
    def test_amplitude_bound(self, t, seed):
        sig = ProbingSignal.random_sum(5, seed=seed, dim=2)
        assert np.linalg.norm(sig(t)) <= sig.amplitude_bound() + 1e-12

    def test_average_power_of_standard(self):
        assert ProbingSignal.standard(4).average_power() == pytest.approx(4.0)

    def test_random_sum_is_seeded(self):
        a = ProbingSignal.random_sum(8, seed=11)
        b = ProbingSignal.random_sum(8, seed=11)
        np.testing.assert_array_equal(a.frequencies, b.frequencies)
        assert np.all(a.frequencies > 0) and np.all(a.frequencies <= 50)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            ProbingSignal(())
        with pytest.raises(ValueError):
            ProbingSignal.standard(2, frequencies=[1.0, 1.0])
        with pytest.raises(ValueError):
            ProbingSignal.from_json([{"amplitude": [1.0], "phase": 0.0, "frequency": -1.0}])


def test_sawtooth():
    s = SawtoothSignal()
    np.testing.assert_allclose(s([0.25, 1.25, 7.75]), [0.25, 0.25, 0.75])
    with pytest.raises(ValueError):
        SawtoothSignal(0.0)


def test_a3_defect_bounded_for_sinusoidal_field():
    sig = ProbingSignal.standard(1)

    def f(theta, t):
        return -theta + sig(t)

    b0, table = a3_defect(f, lambda th: -np.asarray(th), [np.zeros(1), np.ones(1)], [10.0, 30.0, 100.0], dt=1e-3)
    # T * |average defect| <= 2 * amplitude / omega = 1 / pi
    assert b0 <= 1 / math.pi + 1e-3
    assert b0 > 0.1


class TestWorkedExamples:
    def test_single_term_values(self):
        sig = ProbingSignal.from_json([{"amplitude": [1.0], "phase": 0.0, "frequency": 1.0}])
        np.testing.assert_allclose(sig(math.pi / 2), [1.0])
        np.testing.assert_allclose(ProbingSignal.standard(3)(0.0), 0.0)
        two = ProbingSignal.from_json(
            [{"amplitude": [1.0, 2.0], "phase": math.pi / 2, "frequency": 1.0}, {"amplitude": [3.0, -1.0], "phase": math.pi / 2, "frequency": 5.0}]
        )
        np.testing.assert_allclose(two(0.0), [4.0, 1.0])

    def test_first_integral_closed_form(self):
        w = 3.0
        sig = ProbingSignal.standard(1, frequencies=[w])
        t = np.linspace(0, 4, 9)
        np.testing.assert_allclose(sig.integral_1(t)[:, 0], math.sqrt(2) * (1 - np.cos(w * t)) / w, atol=1e-14)
        np.testing.assert_allclose(sig.integral_1(2 * math.pi / w), 0.0, atol=1e-14)
        np.testing.assert_allclose(sig.integral_1(0.0), 0.0)

    def test_trapezoid_agrees_with_first_integral(self):
        sig = ProbingSignal.random_sum(4, seed=9, dim=2)
        errs = []
        for dt in (1e-2, 5e-3):
            t = np.arange(0, 3 + dt / 2, dt)
            num = np.concatenate([[np.zeros(2)], np.cumsum(0.5 * dt * (sig(t[1:]) + sig(t[:-1])), axis=0)])
            errs.append(np.abs(num - sig.integral_1(t)).max())
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)

    def test_derivative_covariance_single(self):
        w = 2.5
        assert ProbingSignal.standard(1, frequencies=[w]).ergodic_moments(1e6).derivative_covariance[0, 0] == pytest.approx(w**2, rel=1e-5)

    def test_exact_over_common_period(self):
        freqs = [2 * math.pi, 4 * math.pi, 10 * math.pi]
        mom = ProbingSignal.standard(3, frequencies=freqs).ergodic_moments(1.0)
        np.testing.assert_allclose(mom.mean, 0, atol=1e-12)
        np.testing.assert_allclose(mom.covariance, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(mom.derivative_covariance, np.diag(np.square(freqs)), rtol=1e-12, atol=1e-9)

    def test_xi_I_covariance_single(self):
        w = 1.7
        cov = ProbingSignal.standard(1, frequencies=[w]).xi_I_covariance()
        assert cov[0, 0] == pytest.approx(3 / w**2)
        assert ProbingSignal.standard(1, frequencies=[2 * w]).xi_I_covariance()[0, 0] == pytest.approx(cov[0, 0] / 4)
        zero = ProbingSignal.from_json([{"amplitude": [0.0], "phase": 0.0, "frequency": 1.0}])
        assert zero.xi_I_covariance(10.0)[0, 0] == 0.0

    def test_first_integral_bound(self):
        sig = ProbingSignal.random_sum(6, seed=5, dim=2)
        t = np.linspace(0, 200, 20001)
        bound = 2 * sig.amplitude_bound() / sig.frequencies.min()
        assert np.linalg.norm(sig.integral_1(t), axis=1).max() <= bound

    def test_a3_defect_vanishes_over_full_periods(self):
        sig = ProbingSignal.standard(1, frequencies=[2 * math.pi])
        b0, _ = a3_defect(lambda th, t: -th + sig(t), lambda th: -np.asarray(th), [np.zeros(1), 2 * np.ones(1)], [1.0, 3.0, 10.0], dt=1e-3)
        assert b0 < 1e-9

    def test_a3_defect_of_pure_probe(self):
        w = 5.0
        sig = ProbingSignal.standard(1, frequencies=[w])
        b0, table = a3_defect(lambda th, t: sig(t), lambda th: np.zeros(1), [np.zeros(1)], [3.0, 10.0, 30.0], dt=1e-3)
        assert b0 <= 2 * math.sqrt(2) / w + 1e-6
        lo, _ = a3_defect(lambda th, t: sig(t), lambda th: np.zeros(1), [np.zeros(1)], np.linspace(3.0, 30.0, 40), dt=2e-3)
        hi, _ = a3_defect(lambda th, t: sig(t), lambda th: np.zeros(1), [np.zeros(1)], np.linspace(30.0, 300.0, 40), dt=2e-3)
        assert hi == pytest.approx(lo, rel=0.2)
