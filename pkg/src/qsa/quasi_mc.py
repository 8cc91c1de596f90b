"""Quasi-Monte-Carlo estimation of ``int_0^1 y`` with the QSA ODE.

The probe is the sawtooth ``xi0(t) = t mod 1`` and the field is
``f(theta, t) = y(xi0(t)) - theta``; with gain ``g/(1+t)`` the solution
approaches the integral.  A plain Monte-Carlo sample mean is provided as
the baseline.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .core import Field, GainSchedule, Trajectory, simulate
from .seeding import derive_seed

__all__ = [
    "Integrand",
    "chirp_integrand",
    "oracle_mean",
    "grid_mean",
    "qmc_field",
    "qmc_estimate",
    "qmc_path",
    "mc_baseline",
    "VarianceRow",
    "VarianceTable",
    "histogram_experiment",
    "MIDPOINT",
]

# where the sawtooth is sampled inside an Euler step; see core.simulate
MIDPOINT = 0.5


@dataclass(frozen=True)
class Integrand:
    """``y: [0, 1] -> R``; ``fn`` must accept numpy arrays.

    ``antiderivative``, if given, is ``s -> int_0^s y`` and is used for the
    exact running integral of the periodic probe.
    """

    fn: Callable
    name: str = "y"
    antiderivative: Optional[Callable] = None

    def __call__(self, s):
        return self.fn(s)

    def running_integral(self, s):
        """``int_0^s y`` for ``s`` in ``[0, 1]``."""
        if self.antiderivative is not None:
            return self.antiderivative(s)
        grid = np.linspace(0.0, 1.0, 200_001)
        cum = integrate.cumulative_simpson(self.fn(grid), x=grid, initial=0.0)
        return np.interp(s, grid, cum)


def _chirp_y(s):
    return np.exp(4.0 * s) * np.sin(100.0 * s)


def _chirp_Y(s):
    prim = lambda x: np.exp(4.0 * x) * (4.0 * np.sin(100.0 * x) - 100.0 * np.cos(100.0 * x)) / 10016.0
    return prim(s) - prim(0.0)


chirp_integrand = Integrand(_chirp_y, "exp(4t)sin(100t)", _chirp_Y)


def oracle_mean(y: Integrand, tol=1e-10):
    """Adaptive Gauss-Kronrod quadrature of ``int_0^1 y``."""
    val, err = integrate.quad(lambda s: float(y(s)), 0.0, 1.0, limit=2000, epsabs=tol * 1e-2, epsrel=tol * 1e-2)
    if err > tol:
        raise RuntimeError(f"quadrature error estimate {err:.2e} above {tol:.0e}")
    return val


def grid_mean(y: Integrand, dt, signal_offset=MIDPOINT):
    """Mean of ``y`` over one period of the Euler sampling grid: the point
    the discretised recursion actually converges to."""
    n = int(round(1.0 / dt))
    s = np.mod((np.arange(n) + signal_offset) * dt, 1.0)
    return float(np.mean(y(s)))


def qmc_field(y: Integrand, period=1.0):
    def f(theta, t):
        return y(math.fmod(t, period)) - theta

    return Field(f, 1, f"qmc[{y.name}]")


def qmc_path(y: Integrand, g, theta0, T, dt=1e-3, stride=None, signal_offset=MIDPOINT) -> Trajectory:
    return simulate(qmc_field(y), GainSchedule(g), theta0, dt, T, stride=stride, signal_offset=signal_offset)


def qmc_estimate(y: Integrand, g, theta0, T, dt=1e-3, signal_offset=MIDPOINT):
    """``theta(T)`` of the QSA estimator with gain ``g/(1+t)``."""
    traj = qmc_path(y, g, theta0, T, dt, stride=int(round(T / dt)), signal_offset=signal_offset)
    return float(traj.final[0])


def mc_baseline(y: Integrand, n_samples, seed, chunk=1 << 16):
    """Sample mean of ``y(U)``, ``U`` uniform on [0, 1), from a seeded generator."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    total = 0.0
    left = int(n_samples)
    while left:
        k = min(chunk, left)
        total += float(np.sum(y(rng.random(k))))
        left -= k
    return total / n_samples


@dataclass(frozen=True)
class VarianceRow:
    label: str
    gain: Optional[float]
    mean: float
    variance: float
    n_runs: int
    horizon: float


@dataclass
class VarianceTable:
    rows: list
    runs: list  # (label, run index, seed, theta0, estimate)

    def row(self, label):
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)

    def summary_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["label", "gain", "mean", "variance", "n_runs", "T"])
            for r in self.rows:
                w.writerow([r.label, "" if r.gain is None else repr(r.gain), repr(r.mean), repr(r.variance), r.n_runs, repr(r.horizon)])

    def runs_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["label", "run", "seed", "theta0", "estimate"])
            for label, i, seed, th0, est in self.runs:
                w.writerow([label, i, seed, repr(th0), repr(est)])


KIND = "qmc-histogram"


def initial_conditions(seed, indices, variance):
    sd = math.sqrt(variance)
    return np.array([sd * np.random.default_rng(derive_seed(seed, KIND, i)).standard_normal() for i in indices])


def _qsa_chunk(args):
    y, g, theta0, T, dt, offset = args
    traj = simulate(qmc_field(y), GainSchedule(g), theta0, dt, T, stride=int(round(T / dt)), signal_offset=offset)
    return traj.final


def _mc_chunk(args):
    y, seeds, n_samples = args
    return np.array([mc_baseline(y, n_samples, s) for s in seeds])


def _chunks(n, jobs):
    size = math.ceil(n / max(1, jobs))
    return [range(i, min(n, i + size)) for i in range(0, n, size)]


def histogram_experiment(
    y: Integrand,
    gains,
    n_runs,
    T=100.0,
    dt=1e-3,
    seed=0,
    init_variance=10.0,
    mc_samples=None,
    include_mc=True,
    jobs=1,
    signal_offset=MIDPOINT,
) -> VarianceTable:
    """Repeat the estimator ``n_runs`` times per gain from Gaussian initial
    conditions and tabulate the spread of ``theta(T)``.

    Run ``i`` draws its initial condition from a generator seeded by
    ``derive_seed(seed, "qmc-histogram", i)`` and uses it for every gain.
    The probe is the same for every run, so runs are integrated together as
    one elementwise batch; the batch is split into ``jobs`` chunks that may
    run in separate processes without changing any result.  The Monte-Carlo
    baseline draws ``mc_samples`` points per run (default ``T/dt``, the
    number of integrand evaluations a QSA run makes).
    """
    if n_runs < 2:
        raise ValueError("n_runs must be >= 2")
    idx = range(n_runs)
    seeds = [derive_seed(seed, KIND + ":mc", i) for i in idx]
    theta0 = initial_conditions(seed, idx, init_variance)
    mc_samples = int(round(T / dt)) if mc_samples is None else int(mc_samples)
    chunks = _chunks(n_runs, jobs)

    tasks = [("qsa", g, c) for g in gains for c in chunks]
    if include_mc:
        tasks += [("mc", None, c) for c in chunks]

    def payload(kind, g, c):
        if kind == "qsa":
            return _qsa_chunk, (y, g, theta0[c.start:c.stop], T, dt, signal_offset)
        return _mc_chunk, (y, [seeds[i] for i in c], mc_samples)

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            futs = [ex.submit(*payload(*t)) for t in tasks]
            results = [f.result() for f in futs]
    else:
        results = [fn(arg) for fn, arg in (payload(*t) for t in tasks)]

    estimates = {}
    for (kind, g, c), res in zip(tasks, results):
        label = "MC" if kind == "mc" else f"g={g:g}"
        estimates.setdefault((label, g), []).append(np.asarray(res, dtype=float))

    rows, runs = [], []
    for (label, g), parts in estimates.items():
        est = np.concatenate(parts)
        rows.append(VarianceRow(label, None if g is None else float(g), float(est.mean()), float(est.var(ddof=1)), n_runs, float(T)))
        runs += [(label, i, seeds[i], float(theta0[i]), float(est[i])) for i in idx]
    return VarianceTable(rows, runs)
