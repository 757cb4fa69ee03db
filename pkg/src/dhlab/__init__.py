"""Numerical laboratory for the double Heston affine diffusion.

Simulation (:mod:`dhlab.sim`), first moments and regimes (:mod:`dhlab.model`),
the stationary transform (:mod:`dhlab.riccati`), drift estimators
(:mod:`dhlab.estimate`) and experiment runs (:mod:`dhlab.bench`).
"""

from .errors import DHLabError, NumericalError, ValidationError
from .model import (
    DiffusionParams,
    DriftParams,
    Growth,
    Regime,
    RegimeLabel,
    State,
    ValidatedModel,
    classify,
    mean_trajectory,
    stationary_mean,
    validate,
)
from .sim import Path, TimeGrid, ito_sum, simulate_ensemble, simulate_path, trapezoid_integral

__all__ = [
    "DHLabError",
    "NumericalError",
    "ValidationError",
    "DiffusionParams",
    "DriftParams",
    "Growth",
    "Regime",
    "RegimeLabel",
    "State",
    "ValidatedModel",
    "classify",
    "mean_trajectory",
    "stationary_mean",
    "validate",
    "Path",
    "TimeGrid",
    "ito_sum",
    "simulate_ensemble",
    "simulate_path",
    "trapezoid_integral",
]
