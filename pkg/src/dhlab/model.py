"""Double Heston parameterization, validation and first-moment dynamics.

The process ``Z = (Y1, Y2, X)`` solves

    dY1 = (a1 - b11 Y1) dt + sigma11 sqrt(Y1) dB1
    dY2 = (a2 - b21 Y1 - b22 Y2) dt + sigma12 sqrt(Y2) dB2
    dX  = (m - kappa1 Y1 - kappa2 Y2 - theta X) dt
          + sigma21 sqrt(Y1) (rho11 dB1 + rhobar11 dW1)
          + sigma22 sqrt(Y2) (rho22 dB2 + rhobar22 dW2)

Its mean obeys the lower-triangular linear system ``dE/dt = c - A E`` with
``A = [[b11, 0, 0], [b21, b22, 0], [kappa1, kappa2, theta]]`` and
``c = (a1, a2, m)``; everything in this module is built on that system.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy.linalg import expm

from .errors import (
    CorrelationOutOfRange,
    CrossFeedPositive,
    DegenerateDiffusion,
    NegativeLevel,
    NotSubcritical,
    ValidationError,
)

#: Canonical order of the drift vector tau.
TAU_NAMES = ("a1", "b11", "a2", "b21", "b22", "m", "kappa1", "kappa2", "theta")

#: Tolerance used to decide that two mean-reversion speeds coincide.
ROOT_TOL = 1e-10


@dataclass(frozen=True)
class DriftParams:
    a1: float
    b11: float
    a2: float
    b21: float
    b22: float
    m: float
    kappa1: float
    kappa2: float
    theta: float

    def as_vector(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in TAU_NAMES], dtype=float)

    @classmethod
    def from_vector(cls, tau: Sequence[float]) -> "DriftParams":
        tau = np.asarray(tau, dtype=float)
        if tau.shape != (9,):
            raise ValidationError(f"drift vector must have 9 entries, got shape {tau.shape}")
        return cls(**{name: float(v) for name, v in zip(TAU_NAMES, tau)})

    def replace(self, **changes) -> "DriftParams":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return DriftParams(**values)

    @property
    def speeds(self) -> tuple:
        """Diagonal of the mean-reversion matrix: ``(b11, b22, theta)``."""
        return (self.b11, self.b22, self.theta)

    def mean_matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.b11, 0.0, 0.0],
                [self.b21, self.b22, 0.0],
                [self.kappa1, self.kappa2, self.theta],
            ]
        )

    def mean_source(self) -> np.ndarray:
        return np.array([self.a1, self.a2, self.m])


@dataclass(frozen=True)
class DiffusionParams:
    sigma11: float
    sigma12: float
    sigma21: float
    sigma22: float
    rho11: float
    rho22: float

    @property
    def rhobar11(self) -> float:
        return math.sqrt(max(0.0, 1.0 - self.rho11**2))

    @property
    def rhobar22(self) -> float:
        return math.sqrt(max(0.0, 1.0 - self.rho22**2))

    def replace(self, **changes) -> "DiffusionParams":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return DiffusionParams(**values)


class State(NamedTuple):
    y1: float
    y2: float
    x: float

    def as_array(self) -> np.ndarray:
        return np.array([self.y1, self.y2, self.x], dtype=float)


@dataclass(frozen=True)
class ValidatedModel:
    """A drift/diffusion pair that passed :func:`validate`.

    The Feller flags gate warnings only; nothing refuses to run on them.
    """

    drift: DriftParams
    diffusion: DiffusionParams
    feller_y1: bool
    feller_y2: bool
    feller_strict: bool

    @property
    def regime(self) -> "RegimeLabel":
        return classify(self.drift)

    @property
    def ergodicity_conditions(self) -> bool:
        # Exponential ergodicity needs a1 > 0, a2 in (sigma12^2/2, inf) and a
        # subcritical drift; the interval upper end is read as +inf.
        d = self.drift
        return (
            d.a1 > 0.0
            and d.a2 > self.diffusion.sigma12**2 / 2.0
            and classify(d).tag is Regime.SUBCRITICAL
        )


def validate(drift: DriftParams, diffusion: DiffusionParams) -> ValidatedModel:
    """Check the admissible parameter set and compute the Feller flags."""
    for obj in (drift, diffusion):
        for f in fields(obj):
            value = getattr(obj, f.name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ValidationError(f"{f.name} must be a finite real number, got {value!r}")
    if drift.a1 < 0:
        raise NegativeLevel(f"a1 must be >= 0, got {drift.a1}")
    if drift.a2 < 0:
        raise NegativeLevel(f"a2 must be >= 0, got {drift.a2}")
    if drift.b21 > 0:
        raise CrossFeedPositive(f"b21 must be <= 0, got {drift.b21}")
    for name in ("sigma11", "sigma12", "sigma21", "sigma22"):
        if getattr(diffusion, name) <= 0:
            raise DegenerateDiffusion(f"{name} must be > 0, got {getattr(diffusion, name)}")
    for name in ("rho11", "rho22"):
        if abs(getattr(diffusion, name)) > 1:
            raise CorrelationOutOfRange(f"|{name}| must be <= 1, got {getattr(diffusion, name)}")

    half1 = diffusion.sigma11**2 / 2.0
    half2 = diffusion.sigma12**2 / 2.0
    return ValidatedModel(
        drift=drift,
        diffusion=diffusion,
        feller_y1=drift.a1 >= half1,
        feller_y2=drift.a2 >= half2,
        feller_strict=drift.a1 > half1 and drift.a2 > half2,
    )


# --------------------------------------------------------------------------
# Regime classification


class Regime(enum.Enum):
    SUBCRITICAL = "Subcritical"
    CRITICAL = "Critical"
    SUPERCRITICAL = "Supercritical"


@dataclass(frozen=True)
class Growth:
    """Asymptotic size of one mean coordinate: ``t**degree * exp(rate * t)``.

    ``rate == 0`` and ``degree == 0`` is bounded, ``rate == 0`` with a positive
    degree is polynomial, ``rate > 0`` is exponential (``degree`` is then the
    extra polynomial factor that appears when two rates coincide).
    """

    rate: float = 0.0
    degree: int = 0

    @property
    def kind(self) -> str:
        if self.rate > 0:
            return "exponential"
        return "polynomial" if self.degree > 0 else "bounded"

    def __str__(self) -> str:
        if self.kind == "bounded":
            return "Bounded"
        if self.kind == "polynomial":
            return f"Polynomial({self.degree})"
        if self.degree:
            return f"Exponential({self.rate:g}, t^{self.degree})"
        return f"Exponential({self.rate:g})"


def _faster(g: Growth, h: Growth) -> Growth:
    if abs(g.rate - h.rate) <= ROOT_TOL:
        return g if g.degree >= h.degree else h
    return g if g.rate > h.rate else h


def _integrate_growth(speed: float, forcing: Optional[Growth]) -> Growth:
    """Growth of the solution of ``e' = f(t) - speed * e`` for generic data.

    ``forcing`` is None when the right-hand side has no source at all.
    """
    if speed > ROOT_TOL:
        # stable: the solution tracks its forcing
        return forcing if forcing is not None else Growth()
    if speed >= -ROOT_TOL:
        # zero speed: the solution is the running integral of the forcing
        if forcing is None:
            return Growth()
        if forcing.rate > 0:
            return forcing
        return Growth(0.0, forcing.degree + 1)
    rate = -speed
    if forcing is None or forcing.rate < rate - ROOT_TOL:
        return Growth(rate, 0)
    if forcing.rate <= rate + ROOT_TOL:
        # resonance between the forcing and the homogeneous mode
        return Growth(rate, forcing.degree + 1)
    return forcing


class GrowthDescriptor(NamedTuple):
    y1: Growth
    y2: Growth
    x: Growth

    def fastest(self) -> tuple:
        """Index and growth of the fastest-growing coordinate (first on ties)."""
        best = 0
        for i in (1, 2):
            if _faster(self[best], self[i]) is self[i] and self[i] != self[best]:
                best = i
        return best, self[best]


@dataclass(frozen=True)
class RegimeLabel:
    tag: Regime
    growth: GrowthDescriptor

    def __str__(self) -> str:
        return f"{self.tag.value}: E[Y1] {self.growth.y1}, E[Y2] {self.growth.y2}, E[X] {self.growth.x}"


def classify(drift: Union[DriftParams, ValidatedModel]) -> RegimeLabel:
    """Regime tag from the signs of ``(b11, b22, theta)`` plus per-coordinate growth.

    The growth table is built by propagating growth down the triangular mean
    system.  Each coordinate is forced by its constant level (when nonzero)
    and by the coordinates it is coupled to (``b21`` for Y2, ``kappa1`` and
    ``kappa2`` for X); a zero coupling breaks the cascade.  Initial values are
    taken generic, so an unstable mode is always excited.  With one zero speed
    this yields Kronecker-type growth ``t``; stacked zero speeds give Cesaro
    iterates ``t^2``, ``t^3``; a negative speed gives ``exp(-speed t)`` and
    coinciding negative speeds an extra factor ``t``.
    """
    if isinstance(drift, ValidatedModel):
        drift = drift.drift
    speeds = drift.speeds
    lowest = min(speeds)
    if lowest > 0:
        tag = Regime.SUBCRITICAL
    elif lowest == 0:
        tag = Regime.CRITICAL
    else:
        tag = Regime.SUPERCRITICAL

    def forcing(level, coupled):
        g = Growth() if level != 0 else None
        for coupling, growth in coupled:
            if coupling != 0:
                g = growth if g is None else _faster(g, growth)
        return g

    g1 = _integrate_growth(drift.b11, forcing(drift.a1, []))
    g2 = _integrate_growth(drift.b22, forcing(drift.a2, [(drift.b21, g1)]))
    g3 = _integrate_growth(
        drift.theta, forcing(drift.m, [(drift.kappa1, g1), (drift.kappa2, g2)])
    )
    return RegimeLabel(tag, GrowthDescriptor(g1, g2, g3))


# --------------------------------------------------------------------------
# First moments


def _drift_of(model) -> DriftParams:
    return model.drift if isinstance(model, ValidatedModel) else model


def _phi(lam: float, t: np.ndarray) -> np.ndarray:
    """``int_0^t exp(-lam s) ds``, stable for small ``lam * t``."""
    if lam == 0.0:
        return t.astype(float)
    return -np.expm1(-lam * t) / lam


def _distinct_roots(speeds) -> bool:
    b11, b22, theta = speeds
    return min(abs(b11 - b22), abs(b22 - theta), abs(b11 - theta)) > ROOT_TOL


def _eigvectors(drift: DriftParams) -> np.ndarray:
    # columns: eigenvectors of the lower-triangular mean matrix for b11, b22, theta
    b11, b22, th = drift.speeds
    v1_2 = -drift.b21 / (b22 - b11)
    v1_3 = -(drift.kappa1 + drift.kappa2 * v1_2) / (th - b11)
    v2_3 = -drift.kappa2 / (th - b22)
    return np.array([[1.0, 0.0, 0.0], [v1_2, 1.0, 0.0], [v1_3, v2_3, 1.0]])


def mean_trajectory(model, z0_mean, times) -> np.ndarray:
    """Exact ``E[Z_t]`` on ``times`` given ``E[Z_0] = z0_mean``.

    Returns an array of shape ``(len(times), 3)``.  Distinct speeds use the
    eigen-decomposition closed form; when two of ``b11, b22, theta`` coincide
    within ``ROOT_TOL`` the affine system is propagated with a matrix
    exponential instead.
    """
    drift = _drift_of(model)
    times = np.asarray(times, dtype=float)
    e0 = np.asarray(z0_mean, dtype=float)
    c = drift.mean_source()

    if _distinct_roots(drift.speeds):
        vecs = _eigvectors(drift)
        inv = np.linalg.solve(vecs, np.eye(3))
        w0 = inv @ e0
        wc = inv @ c
        modes = np.empty((times.size, 3))
        for k, lam in enumerate(drift.speeds):
            modes[:, k] = np.exp(-lam * times) * w0[k] + _phi(lam, times) * wc[k]
        return modes @ vecs.T

    generator = np.zeros((4, 4))
    generator[:3, :3] = -drift.mean_matrix()
    generator[:3, 3] = c
    start = np.append(e0, 1.0)
    out = np.empty((times.size, 3))
    for i, t in enumerate(times):
        out[i] = (expm(generator * t) @ start)[:3]
    return out


def stationary_mean(model) -> np.ndarray:
    """Fixed point of the mean ODE, i.e. ``E[Z_inf]`` for a subcritical drift."""
    drift = _drift_of(model)
    if classify(drift).tag is not Regime.SUBCRITICAL:
        raise NotSubcritical(
            f"stationary mean needs b11, b22, theta > 0; got {drift.speeds}"
        )
    y1 = drift.a1 / drift.b11
    y2 = (drift.a2 - drift.b21 * y1) / drift.b22
    x = (drift.m - drift.kappa1 * y1 - drift.kappa2 * y2) / drift.theta
    return np.array([y1, y2, x])


# Reference parameter set used throughout the numerical experiments.
REFERENCE_DRIFT = DriftParams(
    a1=1.0, b11=1.0, a2=1.0, b21=-0.5, b22=3.0, m=1.0, kappa1=0.5, kappa2=0.5, theta=2.0
)
REFERENCE_DIFFUSION = DiffusionParams(
    sigma11=0.1, sigma12=0.1, sigma21=0.1, sigma22=0.1, rho11=0.8, rho22=0.8
)
REFERENCE_Z0 = State(0.5, 0.5, 0.0)


def reference_model() -> ValidatedModel:
    return validate(REFERENCE_DRIFT, REFERENCE_DIFFUSION)
