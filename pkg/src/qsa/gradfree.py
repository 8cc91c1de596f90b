"""Gradient-free minimisation by sinusoidal probing (extremum seeking).

The objective is only ever evaluated at the probed point
``x(t) = theta(t) + eps * xi(t)``:

* variant 1:  ``theta' = -a(t) xi(t) J(x(t))``
* variant 2:  ``theta' = -a(t) G xi_dot(t) (d/dt) J(x(t))``

For a zero-mean, unit-covariance probe the averaged right-hand side of
variant 1 is ``-eps grad J(theta) + O(eps^2)``; for variant 2 it is
``-eps G Sigma_dot grad J(theta) + O(eps^2)`` with ``Sigma_dot`` the
covariance of ``xi_dot``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import DivergenceError, GainSchedule, Trajectory, simulate
from .signals import ProbingSignal

__all__ = [
    "Objective",
    "EscConfig",
    "quadratic",
    "rosenbrock",
    "finite_difference_gradient",
    "esc1",
    "esc2",
    "esc1_average",
    "esc2_average",
    "moment_residual_esc1",
    "moment_residual_esc2",
    "objective_trace",
    "write_trace_csv",
]


@dataclass(frozen=True)
class Objective:
    """``J: R^d -> R``.  ``grad`` and ``minimizer`` are test oracles; the
    algorithms never call them."""

    fn: Callable
    dim: int
    name: str = "J"
    grad: Optional[Callable] = None
    hessian: Optional[np.ndarray] = None
    minimizer: Optional[np.ndarray] = None

    def __call__(self, theta):
        return self.fn(np.asarray(theta, dtype=float))


def quadratic(hessian, minimizer, offset=0.0) -> Objective:
    """``J(theta) = offset + (theta - theta*)' H (theta - theta*) / 2`` with SPD ``H``."""
    H = np.atleast_2d(np.asarray(hessian, dtype=float))
    ts = np.atleast_1d(np.asarray(minimizer, dtype=float))
    if not np.allclose(H, H.T) or np.min(np.linalg.eigvalsh(H)) <= 0:
        raise ValueError("Hessian must be symmetric positive definite")

    def fn(theta):
        e = theta - ts
        return offset + 0.5 * np.einsum("...i,ij,...j->...", e, H, e)

    return Objective(fn, len(ts), "quadratic", grad=lambda th: H @ (np.asarray(th, dtype=float) - ts), hessian=H, minimizer=ts)


def rosenbrock(a=1.0, b=100.0) -> Objective:
    """Two-dimensional Rosenbrock function.  Not convex, so outside what the
    averaging argument covers; shipped for exploratory runs only."""

    def fn(theta):
        x, y = theta[..., 0], theta[..., 1]
        return (a - x) ** 2 + b * (y - x * x) ** 2

    def grad(theta):
        x, y = theta
        return np.array([-2 * (a - x) - 4 * b * x * (y - x * x), 2 * b * (y - x * x)])

    return Objective(fn, 2, "rosenbrock", grad=grad, minimizer=np.array([a, a * a]))


def finite_difference_gradient(obj: Objective, theta, h=1e-5):
    theta = np.asarray(theta, dtype=float)
    out = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        out[i] = (obj(theta + e) - obj(theta - e)) / (2 * h)
    return out


@dataclass(frozen=True)
class EscConfig:
    epsilon: float = 0.1
    gain: GainSchedule = field(default_factory=GainSchedule)
    signal: Optional[ProbingSignal] = None  # default: standard probe of the objective's dimension
    G: Optional[np.ndarray] = None  # variant 2 only; default Sigma_dot^-1

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    def probe(self, dim):
        sig = self.signal or ProbingSignal.standard(dim)
        if sig.dim != dim:
            raise ValueError(f"probe dimension {sig.dim} does not match objective dimension {dim}")
        return sig

    def matrix_gain(self, sig: ProbingSignal):
        if self.G is not None:
            return np.atleast_2d(np.asarray(self.G, dtype=float))
        # long-run Sigma_dot for distinct frequencies is 0.5 * sum w^2 v v'
        v = sig.directions * sig.frequencies[:, None]
        return np.linalg.inv(0.5 * v.T @ v)


def esc1(obj: Objective, cfg: EscConfig, theta0, T, dt=1e-3, stride=None) -> Trajectory:
    """Variant 1, integrated by :func:`qsa.core.simulate`."""
    sig = cfg.probe(obj.dim)
    eps = cfg.epsilon

    def f(theta, t):
        xi = sig(t)
        return -xi * obj(theta + eps * xi)

    traj = simulate(f, cfg.gain, theta0, dt, T, stride=stride)
    traj.aux["J"] = objective_trace(obj, sig, eps, traj)
    return traj


def esc2(obj: Objective, cfg: EscConfig, theta0, T, dt=1e-3, stride=None, divergence_threshold=1e12) -> Trajectory:
    """Variant 2.  ``(d/dt) J(x(t))`` is the backward difference of the
    two most recent objective samples (zero on the first step), so only
    evaluations of ``J`` are used."""
    sig = cfg.probe(obj.dim)
    eps = cfg.epsilon
    G = cfg.matrix_gain(sig)
    if not dt > 0 or not T >= dt:
        raise ValueError("need dt > 0 and T >= dt")
    theta = np.array(theta0, dtype=float, ndmin=1)
    n = int(round(T / dt))
    if stride is None:
        stride = max(1, -(-n // 1_000_000))
    tk = np.arange(n) * dt
    xi_all = sig(tk)
    gxd = sig.derivative(tk) @ G.T
    step = dt * np.asarray(cfg.gain(tk), dtype=float)
    times, states = [0.0], [theta.copy()]
    j_prev = None
    for k in range(n):
        j_now = obj(theta + eps * xi_all[k])
        dj = 0.0 if j_prev is None else (j_now - j_prev) / dt
        j_prev = j_now
        theta = theta - step[k] * dj * gxd[k]
        if not np.max(np.abs(theta)) <= divergence_threshold:
            raise DivergenceError(f"esc2 diverged at t={(k + 1) * dt:.6g}", (k + 1) * dt)
        if (k + 1) % stride == 0 or k + 1 == n:
            times.append((k + 1) * dt)
            states.append(theta.copy())
    traj = Trajectory(np.array(times), np.array(states), {}, dt, stride)
    traj.aux["J"] = objective_trace(obj, sig, eps, traj)
    return traj


def objective_trace(obj: Objective, sig: ProbingSignal, eps, traj: Trajectory):
    """``J(x(t))`` at the stored times."""
    x = traj.states + eps * sig(traj.times)
    return np.array([obj(row) for row in x])


def _grid(T, n):
    return np.arange(n) * (T / n)


def esc1_average(obj: Objective, sig: ProbingSignal, theta, eps, T=1.0, n=4096):
    """Mean of ``-xi(t) J(theta + eps xi(t))`` on a uniform grid over ``[0, T)``.

    For trigonometric-polynomial probes and ``T`` a common period this is
    the exact time average once ``n`` exceeds the highest harmonic.
    """
    t = _grid(T, n)
    xi = sig(t)
    vals = np.array([obj(np.asarray(theta) + eps * row) for row in xi])
    return -(xi * vals[:, None]).mean(axis=0)


def esc2_average(obj: Objective, sig: ProbingSignal, theta, eps, T=1.0, n=4096, h=1e-6):
    """Mean of ``xi_dot(t) (d/dt) J(theta + eps xi(t))``; the time derivative
    is a central difference of ``J`` along the probed path."""
    t = _grid(T, n)
    theta = np.asarray(theta, dtype=float)
    jp = np.array([obj(theta + eps * row) for row in sig(t + h)])
    jm = np.array([obj(theta + eps * row) for row in sig(t - h)])
    dj = (jp - jm) / (2 * h)
    return (sig.derivative(t) * dj[:, None]).mean(axis=0)


def moment_residual_esc1(obj: Objective, sig: ProbingSignal, theta, eps, T=1.0, n=4096):
    """``avg[-xi J(theta + eps xi)] + eps grad J(theta)`` against the analytic gradient."""
    if obj.grad is None:
        raise ValueError("objective has no analytic gradient")
    return esc1_average(obj, sig, theta, eps, T, n) + eps * obj.grad(theta)


def moment_residual_esc2(obj: Objective, sig: ProbingSignal, theta, eps, T=1.0, n=4096, h=1e-6):
    """``avg[xi_dot dJ/dt] - eps Sigma_dot grad J(theta)``, ``Sigma_dot`` averaged over the same window."""
    if obj.grad is None:
        raise ValueError("objective has no analytic gradient")
    sd = sig.ergodic_moments(T).derivative_covariance
    return esc2_average(obj, sig, theta, eps, T, n, h) - eps * sd @ obj.grad(theta)


def write_trace_csv(traj: Trajectory, path):
    """Columns ``t, theta_1..theta_d, J``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *[f"theta_{i + 1}" for i in range(traj.dim)], "J"])
        for k, t in enumerate(traj.times):
            w.writerow([repr(float(t)), *map(repr, map(float, traj.states[k])), repr(float(traj.aux["J"][k]))])
