"""Experiment configuration files (JSON), validated before anything runs.

A config names one experiment ``kind``, a master ``seed`` and a
kind-specific ``params`` block; unknown keys anywhere are rejected.
"""

from __future__ import annotations

import hashlib
import json
from typing import Annotated, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import linalg

__all__ = ["ExperimentConfig", "ConfigError", "load_config", "parse_config", "config_hash", "KINDS"]

KINDS = ("qmc-paths", "qmc-histogram", "coupling-sweep", "gradfree", "lqr-eval", "lqr-pia", "assumption-check")


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


Matrix = List[List[float]]
Positive = Annotated[float, Field(gt=0)]


def _square(m, name):
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.size == 0:
        raise ValueError(f"{name} must be a non-empty square matrix")
    return a


class SinusoidSpec(_Strict):
    amplitude: List[float]
    phase: float = 0.0
    frequency: Positive


class RandomProbeSpec(_Strict):
    n_terms: Annotated[int, Field(ge=1)] = 24
    max_frequency: Positive = 50.0
    amplitude: Positive = 1.0


class ProbeSpec(_Strict):
    """Either an explicit list of sinusoids or a seeded random sum."""

    terms: Optional[List[SinusoidSpec]] = None
    random: Optional[RandomProbeSpec] = None

    @model_validator(mode="after")
    def _one_of(self):
        if (self.terms is None) == (self.random is None):
            raise ValueError("probe needs exactly one of 'terms' or 'random'")
        if self.terms is not None:
            dims = {len(t.amplitude) for t in self.terms}
            if len(dims) != 1:
                raise ValueError("all probe amplitudes must have the same length")
        return self


class QmcPathsParams(_Strict):
    gains: List[Positive] = [0.5, 1.0, 1.5, 2.0, 5.0]
    theta0: float = 10.0
    T: Positive = 100.0
    dt: Positive = 1e-3
    stride: Annotated[int, Field(ge=1)] = 100
    signal_offset: Annotated[float, Field(ge=0, le=1)] = 0.5


class QmcHistogramParams(_Strict):
    gains: List[Positive] = [1.0, 2.0]
    include_mc: bool = True
    n_runs: Annotated[int, Field(ge=2)] = 10_000
    T: Positive = 100.0
    dt: Positive = 1e-3
    init_variance: Annotated[float, Field(ge=0)] = 10.0
    mc_samples: Optional[Annotated[int, Field(ge=1)]] = None
    signal_offset: Annotated[float, Field(ge=0, le=1)] = 0.5


class CouplingSweepParams(_Strict):
    gains: List[Positive] = Field(default_factory=lambda: [float(x) for x in np.round(np.geomspace(1.5, 20.0, 10), 3)])
    theta0: float = 10.0
    T: Positive = 100.0
    dt: Positive = 1e-3
    stride: Annotated[int, Field(ge=1)] = 10
    window: List[float] = [95.0, 100.0]
    centered: bool = False

    @field_validator("window")
    @classmethod
    def _window(cls, w):
        if len(w) != 2 or not 0 <= w[0] < w[1]:
            raise ValueError("window must be [t_lo, t_hi] with 0 <= t_lo < t_hi")
        return w

    @model_validator(mode="after")
    def _inside(self):
        if self.window[1] > self.T:
            raise ValueError("window must end before T")
        return self


class QuadraticObjective(_Strict):
    hessian: Matrix
    minimizer: List[float]

    @model_validator(mode="after")
    def _spd(self):
        h = _square(self.hessian, "hessian")
        if h.shape[0] != len(self.minimizer):
            raise ValueError("hessian and minimizer dimensions differ")
        if not np.allclose(h, h.T) or np.min(np.linalg.eigvalsh(h)) <= 0:
            raise ValueError("hessian must be symmetric positive definite")
        return self


class GradfreeParams(_Strict):
    objective: Union[Literal["rosenbrock"], QuadraticObjective]
    variants: List[Literal[1, 2]] = [1, 2]
    epsilon: Positive = 0.1
    gain: Positive = 20.0
    probe: Optional[ProbeSpec] = None
    G: Optional[Matrix] = None
    theta0: List[float]
    T: Positive = 30.0
    dt: Positive = 1e-3
    stride: Annotated[int, Field(ge=1)] = 100


class LqrModelSpec(_Strict):
    A: Matrix = [[0.0, 1.0], [0.0, -0.1]]
    B: Matrix = [[0.0], [1.0]]
    M: Matrix = [[1.0, 0.0], [0.0, 1.0]]
    R: Matrix = [[10.0]]

    @model_validator(mode="after")
    def _dims(self):
        a = _square(self.A, "A")
        b = np.asarray(self.B, dtype=float)
        if b.ndim != 2 or b.shape[0] != a.shape[0]:
            raise ValueError("B must have one row per state")
        if _square(self.M, "M").shape != a.shape:
            raise ValueError("M must match A")
        if _square(self.R, "R").shape[0] != b.shape[1]:
            raise ValueError("R must match the number of inputs")
        ctrb = np.hstack([np.linalg.matrix_power(a, k) @ b for k in range(a.shape[0])])
        if np.linalg.matrix_rank(ctrb) < a.shape[0]:
            raise ValueError("(A, B) is not controllable")
        return self


def _check_gain(model: LqrModelSpec, k, name):
    k = np.asarray(k, dtype=float)
    a, b = np.asarray(model.A), np.asarray(model.B)
    if k.shape != (b.shape[1], a.shape[0]):
        raise ValueError(f"{name} must have shape {(b.shape[1], a.shape[0])}")
    return k


def _check_stabilizing(model, k, name):
    ok, spec = linalg.is_hurwitz(np.asarray(model.A) + np.asarray(model.B) @ k)
    if not ok:
        raise ValueError(f"{name} is not stabilizing (closed-loop eigenvalues {np.round(spec.eigenvalues, 6).tolist()})")


class LqrEvalParams(_Strict):
    model: LqrModelSpec = LqrModelSpec()
    K: Matrix = [[-1.0, 0.0]]
    K0: Matrix = [[-1.0, -2.0]]
    probe: ProbeSpec = ProbeSpec(random=RandomProbeSpec())
    x0: Optional[List[float]] = None
    dt: Positive = 1e-3
    T: Positive = 200.0
    T1: Positive = 20.0
    gain: Positive = 2.0
    white_noise_baseline: bool = True
    stride: Annotated[int, Field(ge=1)] = 100

    @model_validator(mode="after")
    def _check(self):
        _check_gain(self.model, self.K, "K")
        _check_stabilizing(self.model, _check_gain(self.model, self.K0, "K0"), "K0")
        _check_stabilizing(self.model, np.asarray(self.K), "K")
        if not self.T1 < self.T:
            raise ValueError("T1 must be smaller than T")
        return self


class LqrPiaParams(_Strict):
    model: LqrModelSpec = LqrModelSpec()
    K_init: Matrix = [[-1.0, 0.0]]
    K0: Matrix = [[-1.0, -2.0]]
    probe: ProbeSpec = ProbeSpec(random=RandomProbeSpec())
    rounds: Annotated[int, Field(ge=1)] = 6
    mode: Literal["qsa", "exact"] = "qsa"
    x0: Optional[List[float]] = None
    dt: Positive = 1e-3
    T: Positive = 200.0
    T1: Positive = 20.0
    gain: Positive = 2.0

    @model_validator(mode="after")
    def _check(self):
        _check_stabilizing(self.model, _check_gain(self.model, self.K_init, "K_init"), "K_init")
        _check_stabilizing(self.model, _check_gain(self.model, self.K0, "K0"), "K0")
        if not self.T1 < self.T:
            raise ValueError("T1 must be smaller than T")
        return self


class AssumptionParams(_Strict):
    A: Matrix
    gain: Positive = 1.0
    schedule: Literal["decaying", "constant"] = "decaying"

    @field_validator("A")
    @classmethod
    def _sq(cls, a):
        _square(a, "A")
        return a


PARAMS = {
    "qmc-paths": QmcPathsParams,
    "qmc-histogram": QmcHistogramParams,
    "coupling-sweep": CouplingSweepParams,
    "gradfree": GradfreeParams,
    "lqr-eval": LqrEvalParams,
    "lqr-pia": LqrPiaParams,
    "assumption-check": AssumptionParams,
}


class ExperimentConfig(_Strict):
    kind: Literal[KINDS]  # type: ignore[valid-type]
    seed: Annotated[int, Field(ge=0)]
    output_dir: Optional[str] = None
    params: dict = Field(default_factory=dict)

    @model_validator(mode="after")
    def _params(self):
        try:
            PARAMS[self.kind].model_validate(self.params)
        except ValidationError as exc:
            raise ValueError(_summarise(exc, prefix="params")) from None
        return self

    @property
    def parsed(self):
        """The kind-specific parameter block with defaults filled in."""
        return PARAMS[self.kind].model_validate(self.params)


def parse_config(data) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_summarise(exc)) from exc


def _summarise(exc: ValidationError, prefix=""):
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in (prefix, *err["loc"]) if x != "")
        msg = err["msg"].removeprefix("Value error, ")
        parts.append(f"{loc}: {msg}" if loc else msg)
    return "; ".join(parts)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return parse_config(data)


def config_hash(cfg: ExperimentConfig):
    """SHA-256 of the canonical JSON of the validated config (defaults filled in)."""
    body = {"kind": cfg.kind, "seed": cfg.seed, "params": cfg.parsed.model_dump(mode="json")}
    return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()
