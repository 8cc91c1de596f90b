"""Deterministic probing signals.

A :class:`ProbingSignal` is a finite sum of sinusoids

    xi(t) = sum_i v_i sin(phi_i + omega_i t)

with vector directions ``v_i``.  Its first and second running integrals,
its time derivative and all finite-horizon time averages of products are
available in closed form, so nothing in the acceptance checks depends on
quadrature of the probe itself.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "SinusoidTerm",
    "ProbingSignal",
    "SawtoothSignal",
    "ErgodicMoments",
    "a3_defect",
    "first_primes",
]

SQRT2 = math.sqrt(2.0)


def first_primes(n):
    primes = []
    k = 2
    while len(primes) < n:
        if all(k % p for p in primes if p * p <= k):
            primes.append(k)
        k += 1
    return primes


@dataclass(frozen=True)
class SinusoidTerm:
    direction: np.ndarray
    phase: float
    frequency: float

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.direction, dtype=float))
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValueError("direction must be a finite vector")
        if not self.frequency > 0:
            raise ValueError(f"frequency must be positive, got {self.frequency}")
        object.__setattr__(self, "direction", v)
        object.__setattr__(self, "phase", float(self.phase))
        object.__setattr__(self, "frequency", float(self.frequency))


# --- trigonometric series helpers -------------------------------------------
# A series is (is_sin[K], freq[K], coef[K, dim]); a constant is a cosine of
# frequency zero.


def _avg_cos(w, T):
    return np.sinc(w * T / np.pi)


def _avg_sin(w, T):
    x = w * T
    with np.errstate(invalid="ignore", divide="ignore"):
        out = 2.0 * np.sin(0.5 * x) ** 2 / x
    return np.where(x == 0.0, 0.0, out)


def _series_mean(series, T):
    is_sin, freq, coef = series
    w = np.where(is_sin, _avg_sin(freq, T), _avg_cos(freq, T))
    return w @ coef


def _series_outer_mean(s1, s2, T):
    """Exact average over [0, T] of the outer product of two series."""
    sin1, w1, c1 = s1
    sin2, w2, c2 = s2
    si, sj = sin1[:, None], sin2[None, :]
    d = w1[:, None] - w2[None, :]
    s = w1[:, None] + w2[None, :]
    cd, cs = _avg_cos(d, T), _avg_cos(s, T)
    sd, ss = _avg_sin(d, T), _avg_sin(s, T)
    weight = np.where(
        ~si & ~sj, 0.5 * (cd + cs),
        np.where(si & sj, 0.5 * (cd - cs),
                 np.where(si & ~sj, 0.5 * (ss + sd), 0.5 * (ss - sd))),
    )
    return c1.T @ weight @ c2


@dataclass(frozen=True)
class ErgodicMoments:
    mean: np.ndarray
    covariance: np.ndarray
    derivative_covariance: np.ndarray


@dataclass(frozen=True)
class ProbingSignal:
    """Sum of vector-valued sinusoids; immutable once built."""

    terms: tuple
    dim: int = field(default=0)

    def __post_init__(self):
        terms = tuple(self.terms)
        if not terms:
            raise ValueError("a probing signal needs at least one term")
        dims = {t.direction.shape[0] for t in terms}
        if len(dims) != 1:
            raise ValueError(f"inconsistent direction dimensions {sorted(dims)}")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "dim", dims.pop())

    # -- constructors --------------------------------------------------------
    @classmethod
    def standard(cls, dim, frequencies=None, amplitude=SQRT2, phases=None):
        """Coordinate-wise probe ``xi_i(t) = amplitude * sin(omega_i t + phi_i)``.

        With the default amplitude sqrt(2), zero phases and distinct
        frequencies the long-run mean is 0 and the long-run covariance is I.
        Default frequencies are ``2*pi*sqrt(p_i)`` for the first ``dim``
        primes, so no two are rationally related.
        """
        if frequencies is None:
            frequencies = [2 * math.pi * math.sqrt(p) for p in first_primes(dim)]
        frequencies = [float(w) for w in frequencies]
        if len(frequencies) != dim:
            raise ValueError("need one frequency per coordinate")
        if len(set(frequencies)) != dim:
            raise ValueError("frequencies must be distinct")
        phases = [0.0] * dim if phases is None else list(phases)
        eye = np.eye(dim)
        return cls(tuple(SinusoidTerm(amplitude * eye[i], phases[i], frequencies[i]) for i in range(dim)))

    @classmethod
    def random_sum(cls, n_terms, seed, dim=1, max_frequency=50.0, amplitude=1.0):
        """Sum of ``n_terms`` sinusoids with frequencies uniform on
        ``(0, max_frequency]`` and phases uniform on ``[0, 2*pi)``."""
        rng = np.random.default_rng(seed)
        terms = []
        for k in range(n_terms):
            w = 0.0
            while w <= 0.0:
                w = max_frequency - rng.uniform(0.0, max_frequency)
            phi = rng.uniform(0.0, 2 * math.pi)
            v = np.zeros(dim)
            v[k % dim] = amplitude
            terms.append(SinusoidTerm(v, phi, w))
        return cls(tuple(terms))

    @classmethod
    def from_json(cls, spec):
        if isinstance(spec, str):
            spec = json.loads(spec)
        return cls(tuple(SinusoidTerm(np.asarray(t["amplitude"], dtype=float), t["phase"], t["frequency"]) for t in spec))

    def to_json(self):
        return [{"amplitude": t.direction.tolist(), "phase": t.phase, "frequency": t.frequency} for t in self.terms]

    # -- arrays ----------------------------------------------------------------
    @property
    def directions(self):
        return np.stack([t.direction for t in self.terms])

    @property
    def phases(self):
        return np.array([t.phase for t in self.terms])

    @property
    def frequencies(self):
        return np.array([t.frequency for t in self.terms])

    def amplitude_bound(self):
        """``sum_i ||v_i||``: a bound on ``sup_t ||xi(t)||``."""
        return float(np.linalg.norm(self.directions, axis=1).sum())

    def average_power(self):
        """Long-run average of ``||xi(t)||^2`` for distinct frequencies."""
        return float(0.5 * np.sum(self.directions ** 2))

    def scaled(self, factor):
        return ProbingSignal(tuple(SinusoidTerm(factor * t.direction, t.phase, t.frequency) for t in self.terms))

    # -- evaluation ------------------------------------------------------------
    def _apply(self, t, fn):
        tt = np.asarray(t, dtype=float)
        arg = self.phases + self.frequencies * tt[..., None]
        return fn(arg) @ self.directions

    def eval(self, t):
        """``xi(t)``; ``t`` may be a scalar or an array of times."""
        return self._apply(t, np.sin)

    __call__ = eval

    def derivative(self, t):
        w = self.frequencies
        return self._apply(t, lambda arg: w * np.cos(arg))

    def integral_1(self, t):
        """``int_0^t xi``."""
        w, phi = self.frequencies, self.phases
        return self._apply(t, lambda arg: (np.cos(phi) - np.cos(arg)) / w)

    def integral_2(self, t):
        """``int_0^t int_0^s xi``; grows linearly unless ``xi^I`` has zero mean."""
        w, phi = self.frequencies, self.phases
        tt = np.asarray(t, dtype=float)[..., None]
        return self._apply(t, lambda arg: tt * np.cos(phi) / w - (np.sin(arg) - np.sin(phi)) / w ** 2)

    # -- closed-form averages --------------------------------------------------
    def _series(self):
        phi, w, v = self.phases, self.frequencies, self.directions
        is_sin = np.r_[np.zeros(len(w), bool), np.ones(len(w), bool)]
        freq = np.r_[w, w]
        coef = np.r_[np.sin(phi)[:, None] * v, np.cos(phi)[:, None] * v]
        return is_sin, freq, coef

    def _derivative_series(self):
        is_sin, freq, coef = self._series()
        # d/dt (a cos + b sin) = b w cos - a w sin
        return ~is_sin, freq, coef * freq[:, None] * np.where(is_sin, 1.0, -1.0)[:, None]

    def _integral_series(self):
        is_sin, freq, coef = self._series()
        # int_0^t a cos = a sin/w ; int_0^t b sin = b/w - b cos/w
        const = (coef[is_sin] / freq[is_sin, None]).sum(axis=0)
        new_coef = np.where(is_sin[:, None], -coef, coef) / freq[:, None]
        return (np.r_[False, ~is_sin], np.r_[0.0, freq], np.vstack([const, new_coef]))

    def ergodic_moments(self, T) -> ErgodicMoments:
        """Exact averages over ``[0, T]`` of xi, xi xi' and xi_dot xi_dot'."""
        if not T > 0:
            raise ValueError("T must be positive")
        s, ds = self._series(), self._derivative_series()
        return ErgodicMoments(
            mean=_series_mean(s, T),
            covariance=_series_outer_mean(s, s, T),
            derivative_covariance=_series_outer_mean(ds, ds, T),
        )

    def xi_I_mean(self, T=None):
        """Average of ``xi^I`` over ``[0, T]``; ``T=None`` gives the long-run
        value ``sum_i v_i cos(phi_i) / omega_i``."""
        if T is None:
            return (np.cos(self.phases) / self.frequencies) @ self.directions
        return _series_mean(self._integral_series(), T)

    def xi_I_covariance(self, T=None):
        """Average of ``xi^I (xi^I)'`` over ``[0, T]`` (uncentred).

        ``T=None`` returns the long-run limit, assuming distinct frequencies.
        """
        if T is None:
            m = self.xi_I_mean()
            v = self.directions / self.frequencies[:, None]
            # oscillating part has amplitude v_i / omega_i per term
            return np.outer(m, m) + 0.5 * v.T @ v
        if not T > 0:
            raise ValueError("T must be positive")
        s = self._integral_series()
        return _series_outer_mean(s, s, T)


@dataclass(frozen=True)
class SawtoothSignal:
    """``t mod period``: sweeps ``[0, period)`` uniformly."""

    period: float = 1.0

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError("period must be positive")

    def eval(self, t):
        return np.mod(t, self.period)

    __call__ = eval


def a3_defect(f: Callable, f_bar: Callable, thetas: Sequence, T_grid: Sequence, dt=1e-3):
    """Empirical constant in ``||avg_T f(theta, .) - f_bar(theta)|| <= b0 (1+||theta||) / T``.

    ``f(theta, t)`` is evaluated on a uniform grid of step ``dt`` and
    averaged with the trapezoid rule.  Returns ``(b0, table)`` where
    ``table[i, j]`` is ``T_j * ||avg - f_bar|| / (1 + ||theta_i||)``.
    """
    T_grid = np.asarray(T_grid, dtype=float)
    if np.any(T_grid <= 0) or np.any(np.diff(T_grid) <= 0):
        raise ValueError("T_grid must be positive and increasing")
    n = int(round(T_grid[-1] / dt))
    times = np.arange(n + 1) * dt
    idx = np.rint(T_grid / dt).astype(int)
    table = np.empty((len(thetas), len(T_grid)))
    for i, theta in enumerate(thetas):
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        vals = np.array([np.atleast_1d(f(theta, t)) for t in times])
        cum = np.concatenate([np.zeros((1, vals.shape[1])), np.cumsum(0.5 * dt * (vals[1:] + vals[:-1]), axis=0)])
        fb = np.atleast_1d(f_bar(theta))
        for j, (T, k) in enumerate(zip(T_grid, idx)):
            avg = cum[k] / (k * dt)
            table[i, j] = T * np.linalg.norm(avg - fb) / (1.0 + np.linalg.norm(theta))
    return float(table.max()), table
