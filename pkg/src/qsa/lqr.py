"""Off-policy Q-function evaluation and policy improvement for LTI systems.

The system is ``x' = A x + B u`` with cost ``c(x, u) = x'Mx + u'Ru``.  Data
is collected once under the excited input ``u = K0 x + xi(t)``; the
Q-function of a different linear policy ``u = K x`` is then fitted by
driving the Bellman error to zero with a matrix-gain QSA recursion.  Only
the sampled ``(x, u)`` record is used by the learner: derivatives along the
trajectory are forward differences of sampled compositions.

Q-functions are parameterised as ``Q(x, u) = d(x, u) + theta' psi(x, u)``
with ``psi`` all degree-two monomials of ``z = (x, u)`` and ``d = c``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import linalg
from .core import DivergenceError
from .signals import ProbingSignal

__all__ = [
    "LtiModel",
    "QuadCost",
    "LinearPolicy",
    "QuadraticBasis",
    "RegressorSample",
    "Regressors",
    "InsufficientExcitation",
    "PolicyUpdateError",
    "ClosedLoopRecord",
    "EvaluationResult",
    "PiaResult",
    "simulate_closed_loop",
    "regressors",
    "bellman_error",
    "model_based_bellman_error",
    "estimate_gain_matrix",
    "policy_evaluation",
    "q_true",
    "policy_update",
    "pia_loop",
    "white_noise_input",
    "friction_double_integrator",
    "lqr_probe",
]


class InsufficientExcitation(RuntimeError):
    """The regressor covariance is singular: the probe does not excite every
    direction of the Q-function basis."""

    def __init__(self, message, condition_number=math.inf):
        super().__init__(message)
        self.condition_number = condition_number


class PolicyUpdateError(RuntimeError):
    pass


def _mat(a, name):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


@dataclass(frozen=True)
class LtiModel:
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        a = linalg.as_square(self.A, "A")
        b = _mat(self.B, "B")
        if b.shape[0] != a.shape[0]:
            if b.shape[1] == a.shape[0]:
                b = b.T
            else:
                raise ValueError(f"B has shape {b.shape}, incompatible with A {a.shape}")
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "B", b)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    def controllability_matrix(self):
        blocks, blk = [], self.B
        for _ in range(self.n):
            blocks.append(blk)
            blk = self.A @ blk
        return np.hstack(blocks)

    def is_controllable(self):
        return np.linalg.matrix_rank(self.controllability_matrix()) == self.n

    def closed_loop(self, k):
        return self.A + self.B @ np.atleast_2d(k)


@dataclass(frozen=True)
class QuadCost:
    M: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        m = linalg.as_square(self.M, "M")
        r = linalg.as_square(self.R, "R")
        for name, x in (("M", m), ("R", r)):
            if not np.allclose(x, x.T):
                raise ValueError(f"{name} must be symmetric")
        if np.min(np.linalg.eigvalsh(m)) < -1e-12 * max(1.0, np.abs(m).max()):
            raise ValueError("M must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(r)) <= 0:
            raise ValueError("R must be positive definite")
        object.__setattr__(self, "M", m)
        object.__setattr__(self, "R", r)

    def __call__(self, x, u):
        """``x'Mx + u'Ru`` row-wise for stacked ``x`` (N, n) and ``u`` (N, m)."""
        x = np.atleast_2d(x)
        u = np.atleast_2d(u)
        return np.einsum("ki,ij,kj->k", x, self.M, x) + np.einsum("ki,ij,kj->k", u, self.R, u)

    def matrix(self):
        n, m = self.M.shape[0], self.R.shape[0]
        out = np.zeros((n + m, n + m))
        out[:n, :n] = self.M
        out[n:, n:] = self.R
        return out


@dataclass(frozen=True)
class LinearPolicy:
    K: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "K", _mat(self.K, "K"))

    def __call__(self, x):
        return np.atleast_2d(x) @ self.K.T


class QuadraticBasis:
    """All degree-two monomials of ``z = (x, u)``.

    Order: ``x_i^2``, then ``x_i x_j`` (i < j), then ``x_i u_k``, then
    ``u_k^2``, then ``u_k u_l`` (k < l).  For ``n=2, m=1`` this is
    ``x1^2, x2^2, x1 x2, x1 u, x2 u, u^2``.
    """

    def __init__(self, n, m):
        if n < 1 or m < 1:
            raise ValueError("need n, m >= 1")
        self.n, self.m = n, m
        xs = list(range(n))
        us = list(range(n, n + m))
        pairs = [(i, i) for i in xs]
        pairs += [(i, j) for i in xs for j in xs if i < j]
        pairs += [(i, k) for i in xs for k in us]
        pairs += [(k, k) for k in us]
        pairs += [(k, l) for k in us for l in us if k < l]
        self.pairs = tuple(pairs)
        self._i = np.array([p[0] for p in pairs])
        self._j = np.array([p[1] for p in pairs])

    @property
    def size(self):
        return len(self.pairs)

    def names(self):
        label = [f"x{i + 1}" for i in range(self.n)] + (["u"] if self.m == 1 else [f"u{k + 1}" for k in range(self.m)])
        return [f"{label[i]}^2" if i == j else f"{label[i]}*{label[j]}" for i, j in self.pairs]

    def __call__(self, x, u):
        """Row-wise ``psi(x, u)``, shape (N, d)."""
        z = np.hstack([np.atleast_2d(x), np.atleast_2d(u)])
        return z[:, self._i] * z[:, self._j]

    def to_matrix(self, theta):
        """Symmetric ``W`` with ``z' W z = theta' psi(z)``."""
        theta = np.asarray(theta, dtype=float)
        w = np.zeros((self.n + self.m,) * 2)
        for t, (i, j) in zip(theta, self.pairs):
            if i == j:
                w[i, i] += t
            else:
                w[i, j] += 0.5 * t
                w[j, i] += 0.5 * t
        return w

    def from_matrix(self, w):
        w = np.asarray(w, dtype=float)
        return np.array([w[i, i] if i == j else w[i, j] + w[j, i] for i, j in self.pairs])


@dataclass(frozen=True)
class RegressorSample:
    t: float
    zeta: np.ndarray
    b: float


@dataclass
class Regressors:
    """Stacked regressor samples: ``times`` (N,), ``zeta`` (N, d), ``b`` (N,)."""

    times: np.ndarray
    zeta: np.ndarray
    b: np.ndarray
    dt: float

    def __len__(self):
        return len(self.times)

    def __getitem__(self, k):
        return RegressorSample(float(self.times[k]), self.zeta[k], float(self.b[k]))

    def window(self, t_lo, t_hi):
        mask = (self.times >= t_lo) & (self.times < t_hi)
        return Regressors(self.times[mask], self.zeta[mask], self.b[mask], self.dt)


@dataclass
class ClosedLoopRecord:
    times: np.ndarray
    x: np.ndarray
    u: np.ndarray
    dt: float

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", *[f"x_{i + 1}" for i in range(self.x.shape[1])], *[f"u_{k + 1}" for k in range(self.u.shape[1])]])
            for k, t in enumerate(self.times):
                w.writerow([repr(float(t)), *map(repr, map(float, self.x[k])), *map(repr, map(float, self.u[k]))])


def _probe_values(probe, n_steps, dt, m):
    if probe is None:
        return np.zeros((n_steps, m))
    if isinstance(probe, ProbingSignal) or callable(probe):
        vals = np.asarray(probe(np.arange(n_steps) * dt), dtype=float)
    else:
        vals = np.asarray(probe, dtype=float)
        if vals.shape[0] < n_steps:
            raise ValueError(f"exploration array has {vals.shape[0]} samples, need {n_steps}")
        vals = vals[:n_steps]
    return vals.reshape(n_steps, m)


def simulate_closed_loop(model: LtiModel, k0, probe, x0, dt, T, divergence_threshold=1e12) -> ClosedLoopRecord:
    """Forward-Euler run of ``x' = A x + B (K0 x + xi(t))``.

    ``probe`` is a :class:`ProbingSignal`, any callable of an array of times,
    a precomputed array of exploration samples (one row per step) or ``None``.
    Records ``x_k`` and ``u_k`` for ``k = 0..T/dt``.
    """
    k0 = LinearPolicy(k0).K if not isinstance(k0, LinearPolicy) else k0.K
    acl = model.closed_loop(k0)
    stable, spec = linalg.is_hurwitz(acl)
    if not stable:
        raise linalg.NotHurwitzError(f"K0 is not stabilizing: closed-loop eigenvalues {spec.eigenvalues}", spec.eigenvalues)
    if not dt > 0 or not T >= dt:
        raise ValueError("need dt > 0 and T >= dt")
    n = int(round(T / dt))
    xi = _probe_values(probe, n + 1, dt, model.m)
    # x+ = x + dt (A x + B (K0 x + xi)) = Phi x + dt B xi
    phi = np.eye(model.n) + dt * acl
    drive = dt * xi @ model.B.T
    x = np.empty((n + 1, model.n))
    x[0] = np.asarray(x0, dtype=float).reshape(model.n)
    block = 10_000
    for start in range(0, n, block):
        stop = min(n, start + block)
        for k in range(start, stop):
            x[k + 1] = phi @ x[k] + drive[k]
        if not np.max(np.abs(x[start + 1 : stop + 1])) <= divergence_threshold:
            bad = start + 1 + int(np.argmax(~(np.abs(x[start + 1 : stop + 1]) <= divergence_threshold).all(axis=1)))
            raise DivergenceError(f"closed loop diverged at t={bad * dt:.6g}", bad * dt)
    u = x @ k0.T + xi
    return ClosedLoopRecord(np.arange(n + 1) * dt, x, u, dt)


def regressors(record: ClosedLoopRecord, K, basis: QuadraticBasis, cost: QuadCost, d=None) -> Regressors:
    """Eligibility vector ``zeta`` and offset ``b`` of the linear Bellman error.

    With ``phi(x) = K x``::

        zeta = psi(x, phi x) - psi(x, u) + D psi(x, phi x)
        b    = c(x, u) - d(x, u) + d(x, phi x) + D d(x, phi x)

    where ``D`` is the forward difference along the recorded trajectory.
    One sample per step ``k = 0..N-2``.
    """
    if len(record.times) < 2:
        raise ValueError("need at least two samples")
    d = cost if d is None else d
    policy = LinearPolicy(K)
    x, u, dt = record.x, record.u, record.dt
    ux = policy(x)
    psi_pol = basis(x, ux)
    psi_u = basis(x, u)
    d_pol = d(x, ux)
    zeta = psi_pol[:-1] - psi_u[:-1] + np.diff(psi_pol, axis=0) / dt
    b = cost(x[:-1], u[:-1]) - d(x[:-1], u[:-1]) + d_pol[:-1] + np.diff(d_pol) / dt
    return Regressors(record.times[:-1].copy(), zeta, b, dt)


def model_based_bellman_error(theta, model: LtiModel, K, basis: QuadraticBasis, cost: QuadCost, x, u):
    """The same Bellman error with ``d/dt`` replaced by the chain rule
    ``grad Q(x, phi x) . (A x + B u)``; uses the model, so it is a test oracle."""
    x = np.atleast_2d(x)
    u = np.atleast_2d(u)
    K = np.atleast_2d(K)
    n = model.n
    H = cost.matrix() + basis.to_matrix(theta)
    T = np.vstack([np.eye(n), K])  # z = T x along the policy
    Hpol = T.T @ H @ T  # Q(x, Kx) = x' Hpol x
    xdot = x @ model.A.T + u @ model.B.T
    z = np.hstack([x, u])
    q_xu = np.einsum("ki,ij,kj->k", z, H, z)
    q_pol = np.einsum("ki,ij,kj->k", x, Hpol, x)
    dq_pol = 2.0 * np.einsum("ki,ij,kj->k", x, Hpol, xdot)
    return -q_xu + cost(x, u) + q_pol + dq_pol


def bellman_error(theta, sample) -> float:
    """``b + zeta' theta``; also accepts a :class:`Regressors` batch."""
    return sample.b + sample.zeta @ np.asarray(theta, dtype=float)


def estimate_gain_matrix(samples: Regressors, T1, max_condition=1e12):
    """Average of ``zeta zeta'`` over samples with ``t < T1``.

    Returns ``(G, condition_number)``; raises :class:`InsufficientExcitation`
    when the condition number exceeds ``max_condition``.
    """
    if not T1 > 0:
        raise ValueError("T1 must be positive")
    z = samples.zeta[samples.times < T1]
    if len(z) == 0:
        raise ValueError("no samples in the estimation window")
    G = z.T @ z / len(z)
    G = 0.5 * (G + G.T)
    ev = np.linalg.eigvalsh(G)
    cond = math.inf if ev[0] <= 0 else float(ev[-1] / ev[0])
    if not cond <= max_condition:
        raise InsufficientExcitation(
            f"regressor covariance is singular or ill conditioned (cond={cond:.3g}); "
            "use a richer probing signal (more frequencies or larger amplitude)",
            cond,
        )
    return G, cond


@dataclass
class EvaluationResult:
    theta: np.ndarray
    G: np.ndarray
    condition_number: float
    msbe: float  # mean-square Bellman error of theta over the phase-2 window
    trace_times: np.ndarray = field(repr=False, default=None)
    trace: np.ndarray = field(repr=False, default=None)
    bellman_trace: np.ndarray = field(repr=False, default=None)

    def to_csv(self, path, names=None):
        names = names or [f"theta_{i + 1}" for i in range(len(self.theta))]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", *names, "bellman_error"])
            for k, t in enumerate(self.trace_times):
                w.writerow([repr(float(t)), *map(repr, map(float, self.trace[k])), repr(float(self.bellman_trace[k]))])


def policy_evaluation(samples: Regressors, T1, T=None, gain=2.0, theta0=None, stride=100, divergence_threshold=1e12) -> EvaluationResult:
    """Two-phase matrix-gain estimate of the Q-function parameter.

    Phase 1 averages ``zeta zeta'`` over ``[0, T1)``.  Phase 2 runs

        theta' = -a(t - T1) G^-1 (zeta' theta + b) zeta,   a(s) = g/(1+s),

    by forward Euler over the samples in ``[T1, T)``.  Because ``G^-1``
    cancels the regressor covariance the linearisation is close to
    ``-g I``, and ``g > 1`` gives the ``1/t`` rate.
    """
    G, cond = estimate_gain_matrix(samples, T1)
    Ginv = np.linalg.inv(G)
    T = samples.times[-1] + samples.dt if T is None else T
    mask = (samples.times >= T1) & (samples.times < T - 1e-12)
    times, zeta, b = samples.times[mask], samples.zeta[mask], samples.b[mask]
    if len(times) == 0:
        raise ValueError("phase-2 window is empty")
    dt = samples.dt
    theta = np.zeros(zeta.shape[1]) if theta0 is None else np.array(theta0, dtype=float)
    step = dt * gain / (1.0 + (times - T1))
    gz = zeta @ Ginv.T  # rows G^-1 zeta_k
    keep_t, keep_th, keep_be = [], [], []
    for k in range(len(times)):
        err = zeta[k] @ theta + b[k]
        if k % stride == 0:
            keep_t.append(times[k])
            keep_th.append(theta.copy())
            keep_be.append(err)
        theta = theta - step[k] * err * gz[k]
        if not np.max(np.abs(theta)) <= divergence_threshold:
            raise DivergenceError(f"policy evaluation diverged at t={times[k]:.6g}", float(times[k]))
    keep_t.append(times[-1] + dt)
    keep_th.append(theta.copy())
    keep_be.append(np.nan)
    msbe = float(np.mean((zeta @ theta + b) ** 2))
    return EvaluationResult(theta, G, cond, msbe, np.array(keep_t), np.array(keep_th), np.array(keep_be))


def q_true(model: LtiModel, cost: QuadCost, K, basis: Optional[QuadraticBasis] = None):
    """Exact Q-function of ``u = K x``.

    ``P`` solves ``(A+BK)'P + P(A+BK) + M + K'RK = 0`` and the
    Q-function is ``z' (diag(M, R) + W) z`` with
    ``W = [[A'P + PA + P, PB], [B'P, 0]]``.  Returns ``(P, theta)`` where
    ``theta`` are the coefficients of ``W`` in the basis.
    """
    basis = basis or QuadraticBasis(model.n, model.m)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    P = linalg.solve_lyapunov(model.closed_loop(K), cost.M + K.T @ cost.R @ K)
    A, B = model.A, model.B
    W = np.block([[A.T @ P + P @ A + P, P @ B], [B.T @ P, np.zeros((model.m, model.m))]])
    return P, basis.from_matrix(W)


def policy_update(theta, basis: QuadraticBasis, cost: QuadCost):
    """Greedy gain ``K+ = -H_uu^-1 H_ux`` for ``Q(x, u) = z' H z``,
    ``H = diag(M, R) + W(theta)``."""
    H = cost.matrix() + basis.to_matrix(theta)
    n = basis.n
    Huu, Hux = H[n:, n:], H[n:, :n]
    ev = np.linalg.eigvalsh(0.5 * (Huu + Huu.T))
    if ev[0] <= 0:
        raise PolicyUpdateError(f"Q_uu is not positive definite (min eigenvalue {ev[0]:.3g}); improvement undefined")
    return -np.linalg.solve(Huu, Hux)


@dataclass
class PiaResult:
    gains: list  # K_0 .. K_rounds (K_0 = initial policy)
    distances: list  # ||K_n - K*|| / ||K*||
    k_star: np.ndarray
    evaluations: list
    stopped: Optional[str] = None

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            m, n = self.k_star.shape
            w.writerow(["round", *[f"K_{i + 1}{j + 1}" for i in range(m) for j in range(n)], "relative_distance"])
            for r, (k, dist) in enumerate(zip(self.gains, self.distances)):
                w.writerow([r, *map(repr, map(float, k.ravel())), repr(float(dist))])


def pia_loop(model: LtiModel, cost: QuadCost, K_init, K0_sim, probe, rounds, dt=1e-3, T=200.0, T1=20.0, gain=2.0, x0=None, mode="qsa", basis=None) -> PiaResult:
    """Policy improvement: evaluate the current gain, then act greedily.

    ``mode="qsa"`` evaluates from data collected once under ``K0_sim`` plus
    the probe (off-policy, so one record serves every round);
    ``mode="exact"`` uses :func:`q_true` and reproduces Kleinman's
    iteration.  Distances are measured against the Kleinman fixed point.
    Stops early if an update is not stabilizing.
    """
    if mode not in ("qsa", "exact"):
        raise ValueError(f"unknown mode {mode!r}")
    basis = basis or QuadraticBasis(model.n, model.m)
    K = np.atleast_2d(np.asarray(K_init, dtype=float))
    if not linalg.is_hurwitz(model.closed_loop(K))[0]:
        raise linalg.NotHurwitzError("K_init is not stabilizing")
    k_star = linalg.riccati_oracle(model.A, model.B, cost.M, cost.R, K).k
    dist = lambda k: float(np.linalg.norm(k - k_star) / np.linalg.norm(k_star))

    record = None
    if mode == "qsa":
        x0 = np.zeros(model.n) if x0 is None else x0
        record = simulate_closed_loop(model, K0_sim, probe, x0, dt, T)
    gains, dists, evals = [K], [dist(K)], []
    stopped = None
    for _ in range(rounds):
        if mode == "exact":
            theta = q_true(model, cost, K, basis)[1]
            evals.append(theta)
        else:
            res = policy_evaluation(regressors(record, K, basis, cost), T1, gain=gain)
            theta = res.theta
            evals.append(res)
        K = policy_update(theta, basis, cost)
        gains.append(K)
        dists.append(dist(K))
        if not linalg.is_hurwitz(model.closed_loop(K))[0]:
            stopped = f"round {len(gains) - 1}: updated gain is not stabilizing"
            break
    return PiaResult(gains, dists, k_star, evals, stopped)


def white_noise_input(seed, n_steps, power, m=1):
    """Seeded i.i.d. Gaussian exploration, one sample per Euler step, with
    per-channel variance ``power`` (matched to a probe's average power)."""
    rng = np.random.default_rng(seed)
    return math.sqrt(power) * rng.standard_normal((n_steps, m))


def friction_double_integrator():
    """``x1' = x2, x2' = -0.1 x2 + u`` with ``M = I``, ``R = 10``."""
    model = LtiModel(np.array([[0.0, 1.0], [0.0, -0.1]]), np.array([[0.0], [1.0]]))
    cost = QuadCost(np.eye(2), np.array([[10.0]]))
    return model, cost


def lqr_probe(seed, n_terms=24, max_frequency=50.0, amplitude=1.0):
    """Sum of ``n_terms`` sinusoids, frequencies uniform on ``(0, max_frequency]``
    and uniform random phases."""
    return ProbingSignal.random_sum(n_terms, seed, dim=1, max_frequency=max_frequency, amplitude=amplitude)
