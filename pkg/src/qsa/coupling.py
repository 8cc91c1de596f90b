"""Scaled error ``nu(t) = (1+t)(theta(t) - theta*)`` and its coupling to the
integrated probe.

For a linear model ``theta' = (1+t)^-1 (A (theta - theta*) + xi(t))`` the
scaled error obeys ``nu' = A_bar nu / (1+t) + xi`` with ``A_bar = I + A``.
When ``A_bar`` is Hurwitz, ``nu(t) - xi^I(t)`` vanishes like
``(1+t)^-delta`` and ``nu`` inherits the covariance of ``xi^I``.  The
functions here measure all of that on simulated trajectories.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from . import linalg

__all__ = [
    "nu_process",
    "StateTransition",
    "state_transition",
    "CouplingReport",
    "coupling_check",
    "envelope_slope",
    "asymptotic_covariance",
    "relative_frobenius",
    "lemma4_identity_check",
    "nu_bound_fit",
    "qmc_xi_I",
    "EPS_FRACTION",
]

EPS_FRACTION = 0.9


def nu_process(times, states, theta_star):
    """``(1+t)(theta(t) - theta*)`` row-wise."""
    times = np.asarray(times, dtype=float)
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[0] != len(times):
        states = states.T
    return (1.0 + times)[:, None] * (states - np.atleast_1d(theta_star))


class StateTransition:
    """``S(t; r) = exp(log((1+t)/(1+r)) A_bar)``.

    Evaluated through an eigendecomposition of ``A_bar`` when it is well
    conditioned, otherwise through the matrix exponential.
    """

    def __init__(self, a_bar):
        self.a_bar = linalg.as_square(a_bar, "a_bar")
        spec = linalg.eigenvalues(self.a_bar)
        self.spectrum = spec
        self.eps_S = EPS_FRACTION * abs(spec.max_real_part) if spec.max_real_part < 0 else 0.0
        self.delta_S = min(self.eps_S, 1.0)
        lam, vec = np.linalg.eig(self.a_bar)
        self._diag = np.linalg.cond(vec) < 1e8
        if self._diag:
            self._lam, self._vec, self._inv = lam, vec, np.linalg.inv(vec)

    @property
    def hurwitz(self):
        return self.spectrum.max_real_part < 0

    def __call__(self, t, r):
        if t < 0 or r < 0:
            raise ValueError("t and r must be non-negative")
        return linalg.matrix_exp(math.log((1.0 + t) / (1.0 + r)) * self.a_bar)

    def batch(self, t, r):
        """``S(t; r_k)`` for an array of ``r``; shape (len(r), d, d)."""
        r = np.asarray(r, dtype=float)
        s = np.log((1.0 + t) / (1.0 + r))
        if self._diag:
            scale = np.exp(s[:, None] * self._lam[None, :])
            out = np.einsum("ij,kj,jl->kil", self._vec, scale, self._inv)
            return out.real
        return np.stack([linalg.matrix_exp(sk * self.a_bar) for sk in s])

    def bound_constant(self, t_grid):
        """Smallest ``b_S`` with ``||S(t;r)|| <= b_S ((1+t)/(1+r))^-eps_S`` on the grid."""
        worst = 0.0
        for t in t_grid:
            for r in t_grid:
                if r <= t:
                    ratio = (1.0 + t) / (1.0 + r)
                    worst = max(worst, np.linalg.norm(self(t, r), 2) * ratio ** self.eps_S)
        return worst

    def ode_residual(self, t, r, h=1e-4):
        """``||dS/dt - A_bar S / (1+t)||`` by central differences."""
        ds = (self(t + h, r) - self(t - h, r)) / (2 * h)
        return float(np.linalg.norm(ds - self.a_bar @ self(t, r) / (1.0 + t)))


def state_transition(a_bar, t, r):
    return StateTransition(a_bar)(t, r)


def envelope_slope(times, values, t_lo, t_hi, n_bins=20):
    """Least-squares slope of ``log max|values|`` against ``log(1+t)`` over
    ``n_bins`` log-spaced bins of ``[t_lo, t_hi]``.

    Taking the bin maximum removes the zero crossings of oscillating
    signals, which would otherwise dominate a pointwise fit.
    """
    if not (0 <= t_lo < t_hi):
        raise ValueError("need 0 <= t_lo < t_hi")
    times = np.asarray(times, dtype=float)
    values = np.abs(np.asarray(values, dtype=float))
    edges = np.geomspace(1.0 + t_lo, 1.0 + t_hi, n_bins + 1) - 1.0
    xs, ys = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mask = (times >= lo) & (times <= hi)
        if mask.any():
            k = np.argmax(values[mask])
            v = values[mask][k]
            if v > 0:
                xs.append(math.log(1.0 + times[mask][k]))
                ys.append(math.log(v))
    if len(xs) < 3:
        raise ValueError("not enough populated bins for a slope fit")
    return float(np.polyfit(xs, ys, 1)[0])


@dataclass
class CouplingReport:
    window: tuple
    sup_deviation: float
    sup_xi_I: float
    relative_deviation: float
    fitted_decay_slope: float
    fit_range: tuple
    eps_S: float
    delta_S: float
    max_real_part: float
    sigma_bar: float  # sup ||nu|| over the window
    nu_tilde_residual: float
    verdict: str
    centered: bool = False
    notes: list = field(default_factory=list)

    def to_json(self, path=None):
        text = json.dumps(asdict(self), indent=2, default=float)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


# verdict thresholds: see coupling_check
RELATIVE_DEVIATION_LIMIT = 0.05
SLOPE_SLACK = 0.2


def coupling_check(
    times,
    states,
    xi_I: Callable,
    A,
    theta_star,
    window=(95.0, 100.0),
    fit_range=None,
    scale=1.0,
    xi_I_mean=None,
    min_samples=10,
) -> CouplingReport:
    """Compare ``nu / scale`` with ``xi_I`` on a trajectory.

    ``A`` is the linearisation including the gain, so ``A_bar = I + A``;
    ``xi_I(t)`` is the integrated probe in the units of ``nu / scale``
    (for the quasi-Monte-Carlo estimator with gain ``g`` use ``scale=g`` and
    ``xi_I = int_0^t (y - theta*)``).  With ``xi_I_mean`` given the
    comparison is against the centred ``xi_I - xi_I_mean``, the limit of
    ``nu / scale`` when ``xi^I`` is not zero mean.

    Verdict: "coupled" if the fitted decay slope of the deviation is at most
    ``-(delta_S - 0.2)`` and the windowed deviation is below 5% of the
    windowed ``sup ||xi_I||``; "marginal" if exactly one holds;
    "not-coupled" otherwise.
    """
    times = np.asarray(times, dtype=float)
    nu = nu_process(times, states, theta_star) / scale
    xi = np.atleast_2d(np.asarray(xi_I(times), dtype=float))
    if xi.shape[0] != len(times):
        xi = xi.T
    centered = xi_I_mean is not None
    target = xi - (np.atleast_1d(xi_I_mean) if centered else 0.0)
    dev = np.linalg.norm(nu - target, axis=1)

    lo, hi = window
    in_win = (times >= lo - 1e-9) & (times <= hi + 1e-9)
    if in_win.sum() < min_samples:
        raise ValueError(f"window [{lo}, {hi}] holds {in_win.sum()} samples, need at least {min_samples}")
    sup_dev = float(dev[in_win].max())
    sup_xi = float(np.linalg.norm(xi[in_win], axis=1).max())
    rel = sup_dev / sup_xi if sup_xi > 0 else math.inf

    fit_range = fit_range or (min(10.0, 0.1 * float(times[-1])), float(times[-1]))
    slope = envelope_slope(times, dev, *fit_range)

    m = np.atleast_2d(np.asarray(A, dtype=float))
    st = StateTransition(np.eye(m.shape[0]) + m)

    # nu_tilde' = A_bar (nu_tilde + xi_I) / (1+t), in the units of nu
    nt = scale * (nu - xi)
    dt = np.diff(times)
    mid = 0.5 * (times[1:] + times[:-1])
    lhs = np.diff(nt, axis=0) / dt[:, None]
    rhs = 0.5 * ((scale * nu[1:]) @ st.a_bar.T + (scale * nu[:-1]) @ st.a_bar.T) / (1.0 + mid)[:, None]
    resid = float(np.sqrt(np.mean(np.sum((lhs - rhs) ** 2, axis=1))) / max(1e-300, np.sqrt(np.mean(np.sum(rhs ** 2, axis=1)))))

    slope_ok = slope <= -(st.delta_S - SLOPE_SLACK) and st.hurwitz
    dev_ok = rel < RELATIVE_DEVIATION_LIMIT
    verdict = "coupled" if slope_ok and dev_ok else ("marginal" if slope_ok or dev_ok else "not-coupled")
    notes = []
    if not st.hurwitz:
        notes.append(f"I + A is not Hurwitz (max Re = {st.spectrum.max_real_part:.4g}): nu is not expected to stay bounded")
    return CouplingReport(
        window=(float(lo), float(hi)),
        sup_deviation=sup_dev,
        sup_xi_I=sup_xi,
        relative_deviation=float(rel),
        fitted_decay_slope=slope,
        fit_range=tuple(map(float, fit_range)),
        eps_S=st.eps_S,
        delta_S=st.delta_S,
        max_real_part=st.spectrum.max_real_part,
        sigma_bar=float(np.linalg.norm(scale * nu[in_win], axis=1).max()),
        nu_tilde_residual=resid,
        verdict=verdict,
        centered=centered,
        notes=notes,
    )


def asymptotic_covariance(times, nu, T=None):
    """Trapezoid average of ``nu nu'`` over ``[0, T]``."""
    times = np.asarray(times, dtype=float)
    nu = np.atleast_2d(np.asarray(nu, dtype=float))
    if nu.shape[0] != len(times):
        nu = nu.T
    if T is not None:
        if not T > 0:
            raise ValueError("T must be positive")
        keep = times <= T + 1e-12
        times, nu = times[keep], nu[keep]
    outer = nu[:, :, None] * nu[:, None, :]
    span = times[-1] - times[0]
    if span <= 0:
        return outer[0]
    return integrate.trapezoid(outer, times, axis=0) / span


def relative_frobenius(a, b):
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def _simpson(vals, r):
    return integrate.simpson(vals, x=r, axis=0)


def lemma4_identity_check(a_bar, signal, t, dt=1e-4):
    """Both sides of the integration-by-parts identity

        int_0^t (1+r)^-1 S(t;r) A_bar xi^I(r) dr
          = (1+t)^-1 A_bar xi^II(t) - S(t;0) A_bar xi^II(0)
            + int_0^t (1+r)^-2 S(t;r) (I + A_bar) A_bar xi^II(r) dr

    each integral by Simpson's rule on a ``dt`` grid, ``xi^I`` and
    ``xi^II`` from their closed forms.  Returns ``(residual, lhs, rhs)``.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    st = StateTransition(a_bar)
    ab = st.a_bar
    d = ab.shape[0]
    n = max(2, int(math.ceil(t / dt)))
    n += n % 2  # Simpson wants an even number of panels
    r = np.linspace(0.0, t, n + 1)
    S = st.batch(t, r)
    xi1 = np.asarray(signal.integral_1(r), dtype=float).reshape(len(r), d)
    xi2 = np.asarray(signal.integral_2(r), dtype=float).reshape(len(r), d)
    lhs_int = np.einsum("kij,kj->ki", S, xi1 @ ab.T) / (1.0 + r)[:, None]
    rhs_int = np.einsum("kij,kj->ki", S, xi2 @ (ab @ (np.eye(d) + ab)).T) / ((1.0 + r) ** 2)[:, None]
    lhs = _simpson(lhs_int, r)
    rhs = ab @ xi2[-1] / (1.0 + t) - S[0] @ ab @ xi2[0] + _simpson(rhs_int, r)
    return float(np.linalg.norm(lhs - rhs)), lhs, rhs


def nu_bound_fit(a_bar, t_grid, dt=1e-3):
    """``b_nu(t) = (1+t)^delta_S int_0^t (1+r)^-2 ||S(t;r)|| dr`` on ``t_grid``.

    A bounded, roughly constant sequence supports the bound
    ``int (1+r)^-2 ||S|| dr <= b_nu (1+t)^-delta_S``.
    """
    st = StateTransition(a_bar)
    out = []
    for t in t_grid:
        n = max(2, int(math.ceil(t / dt)))
        n += n % 2
        r = np.linspace(0.0, t, n + 1)
        norms = np.linalg.norm(st.batch(t, r), ord=2, axis=(1, 2))
        out.append(float((1.0 + t) ** st.delta_S * _simpson(norms / (1.0 + r) ** 2, r)))
    return np.array(out), st.delta_S


def qmc_xi_I(y, theta_star, period=1.0):
    """``int_0^t (y(s mod period) - theta*) ds`` in closed form from the
    integrand's running integral, with its long-run mean.

    Returns ``(fn, mean)``.
    """
    full = float(y.running_integral(np.array(1.0)))

    def fn(t):
        t = np.asarray(t, dtype=float)
        k = np.floor(t / period)
        s = (t - k * period) / period
        return period * (np.asarray(y.running_integral(s), dtype=float) - theta_star * s + k * (full - theta_star))

    mean = period * integrate.quad(lambda s: float(y.running_integral(np.array(s))) - theta_star * s, 0.0, 1.0, limit=500)[0]
    if abs(full - theta_star) > 1e-9:
        mean = math.nan  # drifts linearly: no long-run mean
    return fn, mean
