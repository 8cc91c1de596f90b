"""Quasi-stochastic approximation: deterministic-probing root finding,
quasi-Monte-Carlo estimation, extremum seeking and off-policy LQR learning."""

__version__ = "0.1.0"

from .core import DivergenceError, GainSchedule, Trajectory, simulate
from .signals import ProbingSignal, SawtoothSignal

__all__ = ["__version__", "DivergenceError", "GainSchedule", "Trajectory", "simulate", "ProbingSignal", "SawtoothSignal"]
