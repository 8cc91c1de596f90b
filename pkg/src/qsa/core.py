"""Quasi-stochastic approximation ODE ``d/dt theta = a(t) f(theta, t)``.

``f(theta, t)`` stands for ``f(theta, xi(t))`` with the probing signal
``xi`` held inside the field.  The integrator is forward Euler on a uniform
grid, which is all the experiments in this package use.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import linalg

__all__ = [
    "GainSchedule",
    "Field",
    "Trajectory",
    "DivergenceError",
    "simulate",
    "time_rescale",
    "inverse_time_rescale",
    "averaged_field",
    "AssumptionReport",
    "check_assumptions",
]

MAX_STORED_POINTS = 1_000_000
DIVERGENCE_THRESHOLD = 1e12


class DivergenceError(RuntimeError):
    """The state left every bounded region; carries the partial trajectory."""

    def __init__(self, message, time, trajectory=None):
        super().__init__(message)
        self.time = time
        self.trajectory = trajectory


@dataclass(frozen=True)
class GainSchedule:
    """Step size ``a(t) = g / (1 + t)`` ("decaying") or ``a(t) = g`` ("constant")."""

    gain: float = 1.0
    kind: str = "decaying"

    def __post_init__(self):
        if self.kind not in ("decaying", "constant"):
            raise ValueError(f"unknown gain schedule kind {self.kind!r}")
        if not self.gain > 0:
            raise ValueError("gain must be positive")

    def __call__(self, t):
        if self.kind == "constant":
            return self.gain + 0.0 * np.asarray(t, dtype=float)
        return self.gain / (1.0 + np.asarray(t, dtype=float))

    def integral(self, t):
        """``int_0^t a(r) dr``."""
        if self.kind == "constant":
            return self.gain * np.asarray(t, dtype=float)
        return self.gain * np.log1p(t)

    def inverse_integral(self, u):
        if self.kind == "constant":
            return np.asarray(u, dtype=float) / self.gain
        return np.expm1(np.asarray(u, dtype=float) / self.gain)


def time_rescale(t, gain: GainSchedule):
    """New time ``u = int_0^t a``; with ``a = 1/(1+t)`` this is ``log(1+t)``."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("t must be non-negative")
    return gain.integral(t)


def inverse_time_rescale(u, gain: GainSchedule):
    if np.any(np.asarray(u) < 0):
        raise ValueError("u must be non-negative")
    return gain.inverse_integral(u)


@dataclass
class Field:
    """A vector field ``f(theta, t)`` of dimension ``dim``.

    ``fn`` must accept a float array ``theta`` of shape ``(dim,)`` and a
    float ``t``; fields whose components act elementwise (such as the
    quasi-Monte-Carlo field) also work on a stacked batch.
    """

    fn: Callable
    dim: int
    name: str = "field"

    def __call__(self, theta, t):
        return self.fn(theta, t)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    aux: dict = field(default_factory=dict)
    dt: float = 0.0
    stride: int = 1

    @property
    def dim(self):
        return self.states.shape[1]

    @property
    def final(self):
        return self.states[-1]

    def rescaled(self, gain: GainSchedule):
        """Times mapped through ``u = int_0^t a``; states unchanged."""
        return time_rescale(self.times, gain), self.states

    def window(self, t_lo, t_hi):
        mask = (self.times >= t_lo - 1e-12) & (self.times <= t_hi + 1e-12)
        return self.times[mask], self.states[mask]

    def to_csv(self, path, state_names=None):
        """Write ``t, theta_1..theta_d, aux...`` with round-trip float formatting."""
        names = state_names or [f"theta_{i + 1}" for i in range(self.dim)]
        aux_cols = []
        for key, arr in self.aux.items():
            arr = np.asarray(arr)
            if arr.shape[0] != len(self.times):
                continue
            if arr.ndim == 1:
                aux_cols.append((key, arr[:, None]))
            else:
                aux_cols.append(([f"{key}_{j + 1}" for j in range(arr.shape[1])], arr))
        header = ["t", *names]
        for key, arr in aux_cols:
            header += [key] if isinstance(key, str) else key
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k, t in enumerate(self.times):
                row = [repr(float(t))] + [repr(float(x)) for x in self.states[k]]
                for _, arr in aux_cols:
                    row += [repr(float(x)) for x in arr[k]]
                w.writerow(row)


def simulate(
    field: Callable,
    gain: GainSchedule,
    theta0,
    dt: float,
    T: float,
    stride: Optional[int] = None,
    signal_offset: float = 0.0,
    divergence_threshold: float = DIVERGENCE_THRESHOLD,
    raise_on_divergence: bool = True,
) -> Trajectory:
    """Forward-Euler integration of ``d/dt theta = a(t) f(theta, t)``.

    ``theta[k+1] = theta[k] + dt * a(t_k) * f(theta[k], t_k + signal_offset*dt)``

    with ``t_k = k*dt``.  ``signal_offset`` only moves the time argument
    handed to the field, i.e. where the exogenous probe is sampled inside
    each step; the state and the gain stay explicit.  ``0`` is textbook
    Euler, ``0.5`` samples the probe at the step midpoint, which removes
    the O(dt) quadrature bias of the averaged field.

    States are stored every ``stride`` steps (default: every step, thinned
    to at most ``MAX_STORED_POINTS``); the final state is always stored.
    If ``||theta|| > divergence_threshold`` or becomes non-finite the run
    stops and :class:`DivergenceError` is raised (or, with
    ``raise_on_divergence=False``, the truncated trajectory is returned with
    ``aux["diverged_at"]`` set).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not T >= dt:
        raise ValueError("T must be at least dt")
    theta = np.array(theta0, dtype=float, ndmin=1)
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta0 must be finite")

    n = int(round(T / dt))
    if stride is None:
        stride = max(1, math.ceil(n / MAX_STORED_POINTS))
    n_keep = n // stride + 1 + (1 if n % stride else 0)
    times = np.empty(n_keep)
    states = np.empty((n_keep, theta.size))
    times[0], states[0] = 0.0, theta
    j = 1

    step = dt * np.asarray(gain(np.arange(n) * dt), dtype=float)
    off = signal_offset * dt
    for k in range(n):
        theta = theta + step[k] * np.asarray(field(theta, k * dt + off), dtype=float)
        if not np.max(np.abs(theta)) <= divergence_threshold:
            t_bad = (k + 1) * dt
            times[j], states[j] = t_bad, theta
            traj = Trajectory(times[: j + 1], states[: j + 1], {"diverged_at": t_bad}, dt, stride)
            if raise_on_divergence:
                raise DivergenceError(f"state diverged at t={t_bad:.6g} (step {k + 1})", t_bad, traj)
            return traj
        if (k + 1) % stride == 0 or k + 1 == n:
            times[j], states[j] = (k + 1) * dt, theta
            j += 1
    return Trajectory(times[:j], states[:j], {}, dt, stride)


def averaged_field(field: Callable, theta, T: float, dt: float = 1e-3, signal_offset: float = 0.0):
    """Trapezoid estimate of ``(1/T) int_0^T f(theta, t) dt`` on the ``dt`` grid."""
    if not T > 0:
        raise ValueError("T must be positive")
    theta = np.array(theta, dtype=float, ndmin=1)
    n = int(round(T / dt))
    vals = np.array([np.atleast_1d(field(theta, k * dt + signal_offset * dt)) for k in range(n + 1)])
    w = np.full(n + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    return w @ vals / (n * dt)


@dataclass
class AssumptionReport:
    """Outcome of the convergence/variance assumption checks.

    ``None`` in a boolean slot means "not checked".
    """

    linear: bool
    a1_globally_stable: Optional[bool] = None
    a2_lyapunov_exists: Optional[bool] = None
    a3_defect: Optional[float] = None
    a5_gain_ok: Optional[bool] = None
    a6_theorem_condition: Optional[bool] = None
    hurwitz_margin: Optional[float] = None
    shifted_margin: Optional[float] = None
    lyapunov_p: Optional[np.ndarray] = None
    notes: list = field(default_factory=list)

    @property
    def ok(self):
        flags = [self.a1_globally_stable, self.a2_lyapunov_exists, self.a5_gain_ok]
        return all(f is not False for f in flags)

    def as_dict(self):
        out = {k: v for k, v in self.__dict__.items() if k != "lyapunov_p"}
        if self.lyapunov_p is not None:
            out["lyapunov_p"] = self.lyapunov_p.tolist()
        return out


def check_assumptions(field=None, gain: GainSchedule = GainSchedule(), A=None, f_bar=None, thetas=None, T_grid=(10.0, 30.0, 100.0), dt=1e-2):
    """Check the convergence assumptions, constructively where possible.

    For a linear averaged field ``f_bar(theta) = A theta`` the gain is folded
    in (``g A``) and the report gives the Hurwitz margin, whether ``I + gA``
    is Hurwitz (the rate condition) and the Lyapunov matrix ``P`` of
    ``P M + M' P = -I`` whose square-root quadratic form is the drift
    function.  For a general field only the empirical A3 defect is computed,
    and only when ``f_bar`` is supplied.
    """
    rep = AssumptionReport(linear=A is not None)
    rep.a5_gain_ok = gain.kind == "decaying"
    if gain.kind != "decaying":
        rep.notes.append("constant gain: a(t) does not decay to zero")

    if A is not None:
        m = gain.gain * linalg.as_square(A, "A")
        stable, spec = linalg.is_hurwitz(m, 0.0)
        rep.hurwitz_margin = -spec.max_real_part
        rep.a1_globally_stable = bool(stable)
        shifted, _ = linalg.is_hurwitz(m, 1.0)
        rep.shifted_margin = -(spec.max_real_part + 1.0)
        rep.a6_theorem_condition = bool(shifted)
        if stable:
            rep.lyapunov_p = linalg.solve_lyapunov(m, np.eye(m.shape[0]))
            rep.a2_lyapunov_exists = bool(np.all(np.linalg.eigvalsh(rep.lyapunov_p) > 0))
        else:
            rep.a2_lyapunov_exists = False
            rep.notes.append(f"not Hurwitz: max Re(lambda) = {spec.max_real_part:.6g}")
        if not shifted:
            rep.notes.append("I + gA is not Hurwitz: 1/t coupling rate not guaranteed")
    else:
        rep.notes.append("A2 drift condition not checked for nonlinear fields")

    if field is not None and f_bar is not None:
        from .signals import a3_defect

        if thetas is None:
            dim = getattr(field, "dim", 1)
            thetas = [np.zeros(dim), np.ones(dim), -2 * np.ones(dim)]
        rep.a3_defect, _ = a3_defect(field, f_bar, thetas, T_grid, dt=dt)
    return rep
