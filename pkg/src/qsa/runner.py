"""Execute a validated experiment config and write CSV artifacts plus a
``manifest.json``.

CSV bodies depend only on the config (never on ``jobs`` or wall time);
timings live in the manifest.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, coupling, gradfree, lqr, quasi_mc
from .config import ExperimentConfig, config_hash
from .core import GainSchedule, check_assumptions
from .seeding import MIXING_FUNCTION, derive_seed
from .signals import ProbingSignal

__all__ = ["run_experiment", "default_output_dir", "OUT_DIR_ENV"]

OUT_DIR_ENV = "QSA_OUT_DIR"


def default_output_dir():
    return os.environ.get(OUT_DIR_ENV, "qsa-out")


def _r(x):
    return repr(float(x))


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


class _Outputs:
    def __init__(self, root: Path):
        self.root = root
        self.files = []
        root.mkdir(parents=True, exist_ok=True)

    def path(self, name):
        self.files.append(name)
        return self.root / name


def _probe(spec, seed, dim=1):
    if spec.terms is not None:
        return ProbingSignal.from_json([t.model_dump() for t in spec.terms])
    r = spec.random
    return ProbingSignal.random_sum(r.n_terms, seed, dim=dim, max_frequency=r.max_frequency, amplitude=r.amplitude)


# --- experiment kinds ----------------------------------------------------------


def _qmc_paths(cfg, p, out, jobs, seeds):
    y = quasi_mc.chirp_integrand
    oracle = quasi_mc.oracle_mean(y)
    rows = []
    for g in p.gains:
        traj = quasi_mc.qmc_path(y, g, p.theta0, p.T, p.dt, stride=p.stride, signal_offset=p.signal_offset)
        traj.to_csv(out.path(f"paths_g{g:g}.csv"))
        rows.append([_r(g), _r(p.theta0), _r(traj.final[0]), _r(traj.final[0] - oracle)])
    _write_rows(out.path("estimates.csv"), ["gain", "theta0", "estimate", "error_vs_oracle"], rows)
    return {"oracle": oracle}


def _qmc_histogram(cfg, p, out, jobs, seeds):
    tab = quasi_mc.histogram_experiment(
        quasi_mc.chirp_integrand,
        p.gains,
        p.n_runs,
        T=p.T,
        dt=p.dt,
        seed=cfg.seed,
        init_variance=p.init_variance,
        mc_samples=p.mc_samples,
        include_mc=p.include_mc,
        jobs=jobs,
        signal_offset=p.signal_offset,
    )
    tab.summary_csv(out.path("summary.csv"))
    tab.runs_csv(out.path("runs.csv"))
    seeds.update({"initial_condition": [derive_seed(cfg.seed, quasi_mc.KIND, i) for i in range(p.n_runs)]})
    if p.include_mc:
        seeds["monte_carlo"] = [derive_seed(cfg.seed, quasi_mc.KIND + ":mc", i) for i in range(p.n_runs)]
    return {r.label: {"mean": r.mean, "variance": r.variance} for r in tab.rows}


def _coupling_one(args):
    g, p = args
    y = quasi_mc.chirp_integrand
    ts = quasi_mc.oracle_mean(y)
    traj = quasi_mc.qmc_path(y, g, p["theta0"], p["T"], p["dt"], stride=p["stride"])
    xi_I, mean = coupling.qmc_xi_I(y, ts)
    rep = coupling.coupling_check(
        traj.times, traj.states, xi_I, [[-g]], ts, window=tuple(p["window"]), scale=g, xi_I_mean=mean if p["centered"] else None
    )
    nu = coupling.nu_process(traj.times, traj.states, ts)[:, 0] / g
    return g, traj.times, nu, np.asarray(xi_I(traj.times)), rep


def _coupling_sweep(cfg, p, out, jobs, seeds):
    tasks = [(g, p.model_dump()) for g in p.gains]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_coupling_one, tasks))
    else:
        results = [_coupling_one(t) for t in tasks]
    summary = []
    for g, times, nu, xi, rep in results:
        _write_rows(
            out.path(f"nu_g{g:g}.csv"),
            ["t", "nu_over_g", "xi_I", "deviation"],
            [[_r(t), _r(a), _r(b), _r(abs(a - b))] for t, a, b in zip(times, nu, xi)],
        )
        rep.to_json(out.path(f"coupling_g{g:g}.json"))
        summary.append([_r(g), _r(rep.sup_deviation), _r(rep.sup_xi_I), _r(rep.relative_deviation), _r(rep.fitted_decay_slope), _r(rep.delta_S), rep.verdict])
    _write_rows(out.path("summary.csv"), ["gain", "sup_deviation", "sup_xi_I", "relative_deviation", "decay_slope", "delta_S", "verdict"], summary)
    return {"verdicts": {str(r[0]): r[-1] for r in summary}}


def _gradfree(cfg, p, out, jobs, seeds):
    if p.objective == "rosenbrock":
        obj = gradfree.rosenbrock()
    else:
        obj = gradfree.quadratic(p.objective.hessian, p.objective.minimizer)
    if len(p.theta0) != obj.dim:
        raise ValueError(f"theta0 has {len(p.theta0)} entries, objective dimension is {obj.dim}")
    sig = _probe(p.probe, derive_seed(cfg.seed, cfg.kind, 0), dim=obj.dim) if p.probe else None
    esc = gradfree.EscConfig(p.epsilon, GainSchedule(p.gain), signal=sig, G=p.G)
    res = {}
    for v in p.variants:
        fn = gradfree.esc1 if v == 1 else gradfree.esc2
        traj = fn(obj, esc, p.theta0, p.T, p.dt, stride=p.stride)
        gradfree.write_trace_csv(traj, out.path(f"esc{v}.csv"))
        res[f"esc{v}_final"] = traj.final.tolist()
        if obj.minimizer is not None:
            res[f"esc{v}_error"] = float(np.linalg.norm(traj.final - obj.minimizer))
    rows = [[k, json.dumps(v)] for k, v in res.items()]
    _write_rows(out.path("summary.csv"), ["quantity", "value"], rows)
    return res


def _lqr_common(p):
    model = lqr.LtiModel(np.array(p.model.A), np.array(p.model.B))
    cost = lqr.QuadCost(np.array(p.model.M), np.array(p.model.R))
    return model, cost, lqr.QuadraticBasis(model.n, model.m)


def _lqr_eval(cfg, p, out, jobs, seeds):
    model, cost, basis = _lqr_common(p)
    probe_seed = derive_seed(cfg.seed, cfg.kind, 0)
    seeds["probe"] = probe_seed
    probe = _probe(p.probe, probe_seed, dim=model.m)
    x0 = np.zeros(model.n) if p.x0 is None else np.array(p.x0)
    K = np.array(p.K)
    _, theta_exact = lqr.q_true(model, cost, K, basis)
    runs = [("qsa", probe)]
    if p.white_noise_baseline:
        noise_seed = derive_seed(cfg.seed, cfg.kind, 1)
        seeds["white_noise"] = noise_seed
        n = int(round(p.T / p.dt)) + 1
        runs.append(("white_noise", lqr.white_noise_input(noise_seed, n, probe.average_power() / model.m, model.m)))
    rows, res = [], {}
    for label, exc in runs:
        rec = lqr.simulate_closed_loop(model, np.array(p.K0), exc, x0, p.dt, p.T)
        ev = lqr.policy_evaluation(lqr.regressors(rec, K, basis, cost), p.T1, gain=p.gain, stride=p.stride)
        ev.to_csv(out.path(f"theta_{label}.csv"), basis.names())
        err = float(np.linalg.norm(ev.theta - theta_exact) / np.linalg.norm(theta_exact))
        rows.append([label, *map(_r, ev.theta), _r(err), _r(ev.condition_number), _r(ev.msbe)])
        res[label] = {"relative_error": err, "condition_number": ev.condition_number}
    rows.append(["exact", *map(_r, theta_exact), _r(0.0), "", ""])
    _write_rows(out.path("summary.csv"), ["method", *basis.names(), "relative_error", "gain_matrix_condition", "msbe"], rows)
    return res


def _lqr_pia(cfg, p, out, jobs, seeds):
    model, cost, basis = _lqr_common(p)
    probe = None
    if p.mode == "qsa":
        seeds["probe"] = derive_seed(cfg.seed, cfg.kind, 0)
        probe = _probe(p.probe, seeds["probe"], dim=model.m)
    res = lqr.pia_loop(model, cost, np.array(p.K_init), np.array(p.K0), probe, p.rounds, dt=p.dt, T=p.T, T1=p.T1, gain=p.gain, x0=p.x0, mode=p.mode, basis=basis)
    res.to_csv(out.path("pia.csv"))
    return {"distances": res.distances, "k_star": res.k_star.tolist(), "stopped": res.stopped}


def _assumption_check(cfg, p, out, jobs, seeds):
    rep = check_assumptions(gain=GainSchedule(p.gain, p.schedule), A=np.array(p.A))
    d = rep.as_dict()
    with open(out.path("report.json"), "w") as fh:
        json.dump(d, fh, indent=2, default=str)
        fh.write("\n")
    rows = [[k, json.dumps(v, default=str)] for k, v in d.items()]
    _write_rows(out.path("summary.csv"), ["check", "value"], rows)
    return {"ok": rep.ok}


RUNNERS = {
    "qmc-paths": _qmc_paths,
    "qmc-histogram": _qmc_histogram,
    "coupling-sweep": _coupling_sweep,
    "gradfree": _gradfree,
    "lqr-eval": _lqr_eval,
    "lqr-pia": _lqr_pia,
    "assumption-check": _assumption_check,
}


def run_experiment(cfg: ExperimentConfig, out_dir=None, jobs=1):
    """Run ``cfg`` and return the manifest dict (also written to ``manifest.json``)."""
    root = Path(out_dir or cfg.output_dir or default_output_dir())
    out = _Outputs(root)
    seeds = {}
    t0 = time.perf_counter()
    result = RUNNERS[cfg.kind](cfg, cfg.parsed, out, max(1, int(jobs)), seeds)
    wall = time.perf_counter() - t0
    manifest = {
        "tool": "qsa",
        "version": __version__,
        "kind": cfg.kind,
        "config_hash": config_hash(cfg),
        "master_seed": cfg.seed,
        "seed_derivation": MIXING_FUNCTION,
        "seeds": seeds,
        "files": list(out.files),
        "wall_time_s": wall,
        "jobs": jobs,
        "result": result,
    }
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=_json_default)
        fh.write("\n")
    return manifest


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    return str(o)
