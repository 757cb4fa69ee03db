"""Stationary Fourier-Laplace transform through the Riccati system.

For a subcritical model the stationary law satisfies

    E[exp(-lambda . Y_inf + i mu X_inf)]
        = exp(a1 int_0^inf K1 + a2 int_0^inf K2 + i mu m / theta)

where ``K = (K1, K2)`` solves

    K1' = sigma11^2/2 K1^2 - b11 K1 - b21 K2 - i mu kappa1 e^{-theta t}
          - mu^2 sigma21^2 / 2 e^{-2 theta t}
    K2' = sigma12^2/2 K2^2 - b22 K2 - i mu kappa2 e^{-theta t}
          - mu^2 sigma22^2 / 2 e^{-2 theta t}

with ``K(0) = (-lambda1, -lambda2)``.  Both components decay exponentially,
and explicit decay constants give a certified bound on the neglected tail
``int_{t_trunc}^inf``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NotSubcritical, NumericalError, ToleranceUnreachable, ValidationError
from .model import Regime, State, ValidatedModel, classify
from .sim import Path, trapezoid_integral

COINCIDE_TOL = 1e-10

#: Initial RK4 step and the step below which refinement gives up.
H_START = 0.05
MAX_STEPS = 1 << 21


@dataclass(frozen=True)
class TransformArg:
    lambda1: float
    lambda2: float
    mu: float

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "mu"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValidationError(
                f"Laplace arguments must be >= 0, got ({self.lambda1}, {self.lambda2})"
            )


@dataclass(frozen=True)
class DecayBounds:
    """``|K2(t)| <= c1 e^{-c2 t}`` and ``|K1(t)| <= c9 e^{-r1 t}``.

    ``v1`` and ``w1`` bound ``-Re K1`` and ``|Im K1|`` separately, ``c5`` and
    ``c3`` do the same for ``K2``; all at rate ``r1`` resp. ``c2``.
    """

    c1: float
    c2: float
    c3: float
    c5: float
    c7: float
    v1: float
    c9: float
    r1: float

    def tail(self, model: ValidatedModel, t: float) -> float:
        """Bound on ``|a1 int_t^inf K1 + a2 int_t^inf K2|``."""
        d = model.drift
        out = 0.0
        if d.a1 and self.c9:
            out += d.a1 * self.c9 / self.r1 * math.exp(-self.r1 * t)
        if d.a2 and self.c1:
            out += d.a2 * self.c1 / self.c2 * math.exp(-self.c2 * t)
        return out


@dataclass
class RiccatiSolution:
    times: np.ndarray
    k: np.ndarray  # complex, shape (n + 1, 2)
    t_trunc: float
    tail_bound: float
    quadrature_error: float
    integral: complex  # a1 int K1 + a2 int K2 over [0, t_trunc]
    bounds: DecayBounds
    steps: int


@dataclass(frozen=True)
class StationaryTransformValue:
    value: complex
    error_bound: float
    t_trunc: float
    solution: RiccatiSolution


def _require_subcritical(model: ValidatedModel) -> None:
    if classify(model.drift).tag is not Regime.SUBCRITICAL:
        raise NotSubcritical(
            f"the stationary transform needs b11, b22, theta > 0; got {model.drift.speeds}"
        )


def riccati_rhs(k, t: float, arg: TransformArg, model: ValidatedModel) -> np.ndarray:
    """Right-hand side of the Riccati system at time ``t``."""
    return np.array(_rhs_factory(model, arg.mu)(complex(k[0]), complex(k[1]), t))


def _rhs_factory(model: ValidatedModel, mu: float) -> Callable:
    d, s = model.drift, model.diffusion
    h1 = s.sigma11**2 / 2.0
    h2 = s.sigma12**2 / 2.0
    f1 = -1j * mu * d.kappa1
    f2 = -1j * mu * d.kappa2
    g1 = -0.5 * mu * mu * s.sigma21**2
    g2 = -0.5 * mu * mu * s.sigma22**2
    b11, b21, b22, th = d.b11, d.b21, d.b22, d.theta
    exp = math.exp

    def rhs(k1, k2, t):
        e = exp(-th * t)
        e2 = e * e
        return (
            h1 * k1 * k1 - b11 * k1 - b21 * k2 + f1 * e + g1 * e2,
            h2 * k2 * k2 - b22 * k2 + f2 * e + g2 * e2,
        )

    return rhs


def integrate_riccati(model: ValidatedModel, mu: float, k0, t_end: float, n_steps: int):
    """Classical RK4 with ``n_steps`` equal steps on ``[0, t_end]``.

    ``k0`` may be any complex pair, which is what the semigroup property
    needs.  Returns the grid and the complex trajectory ``(n_steps + 1, 2)``.
    """
    rhs = _rhs_factory(model, mu)
    h = t_end / n_steps
    k1, k2 = complex(k0[0]), complex(k0[1])
    out = np.empty((n_steps + 1, 2), dtype=complex)
    out[0] = (k1, k2)
    half = h / 2.0
    for i in range(n_steps):
        t = i * h
        a1, a2 = rhs(k1, k2, t)
        b1, b2 = rhs(k1 + half * a1, k2 + half * a2, t + half)
        c1, c2 = rhs(k1 + half * b1, k2 + half * b2, t + half)
        d1, d2 = rhs(k1 + h * c1, k2 + h * c2, t + h)
        k1 = k1 + h / 6.0 * (a1 + 2.0 * b1 + 2.0 * c1 + d1)
        k2 = k2 + h / 6.0 * (a2 + 2.0 * b2 + 2.0 * c2 + d2)
        out[i + 1] = (k1, k2)
    if not np.all(np.isfinite(out)):
        raise ToleranceUnreachable("Riccati solution blew up; the argument is too large")
    return np.arange(n_steps + 1) * h, out


def simpson(values: np.ndarray, h: float):
    """Composite Simpson rule along axis 0; needs an even number of intervals."""
    n = values.shape[0] - 1
    if n % 2:
        raise ValueError("Simpson's rule needs an even number of intervals")
    if n == 0:
        return values[0] * 0.0
    return h / 3.0 * (values[0] + values[-1] + 4.0 * values[1:-1:2].sum(axis=0) + 2.0 * values[2:-1:2].sum(axis=0))


def decay_bounds(arg: TransformArg, model: ValidatedModel) -> DecayBounds:
    """Explicit constants of the exponential decay of ``K``.

    Write ``K_j = -v_j + i w_j``.  Bounding the imaginary parts by variation
    of constants and the real parts by comparison with linear ODEs gives the
    constants below.  The real part of ``K1`` is driven by ``|w1|^2``, by the
    price-noise term and by ``-b21 v2``; all three are kept, so the first
    component decays at ``r1 = min(c2, b11)`` (``b11 / 2`` if the two meet).
    """
    _require_subcritical(model)
    d, s = model.drift, model.diffusion
    lam1, lam2, mu = arg.lambda1, arg.lambda2, arg.mu
    b11, b21, b22, th = d.b11, d.b21, d.b22, d.theta
    e = math.e

    c2 = min(th, b22 / 2.0)
    if abs(b22 - th) > COINCIDE_TOL:
        c3 = lam2 + abs(d.kappa2 * mu) / abs(b22 - th)
    else:
        c3 = lam2 + abs(d.kappa2 * mu) * 2.0 / (e * b22)
    c4 = s.sigma12**2 / 2.0 * c3**2 + mu * mu * s.sigma22**2 / 2.0
    c5 = lam2 + 2.0 * c4 / b22
    c1 = math.hypot(c5, c3)

    c6 = abs(mu * d.kappa1) - b21 * c3
    if abs(b11 - c2) > COINCIDE_TOL:
        r1 = min(c2, b11)
        c7 = lam1 + c6 / abs(b11 - c2)
    else:
        r1 = b11 / 2.0
        c7 = lam1 + c6 * 2.0 / (e * b11)

    # -Re K1 is forced by sigma11^2/2 w1^2 (rate 2 r1), mu^2 sigma21^2/2
    # (rate 2 theta) and -b21 v2 (rate c2); all at least q.
    q = min(2.0 * r1, c2)
    c8 = s.sigma11**2 / 2.0 * c7**2 + mu * mu * s.sigma21**2 / 2.0 - b21 * c5
    gap = abs(b11 - q)
    slack = min(b11, q) - r1
    candidates = []
    if gap > COINCIDE_TOL:
        candidates.append(1.0 / gap)
    if slack > COINCIDE_TOL:
        # int_0^t e^{-b11(t-s)} e^{-q s} ds <= t e^{-min t} <= e^{-r1 t} / (e slack)
        candidates.append(1.0 / (e * slack))
    v1 = lam1 + c8 * min(candidates) if c8 else lam1
    c9 = math.hypot(v1, c7)
    return DecayBounds(c1=c1, c2=c2, c3=c3, c5=c5, c7=c7, v1=v1, c9=c9, r1=r1)


def truncation_time(bounds: DecayBounds, model: ValidatedModel, budget: float) -> float:
    """Smallest ``t`` (up to rounding) with tail bound ``<= budget``."""
    d = model.drift
    t = 0.0
    # split the budget between the two terms
    if d.a1 and bounds.c9:
        t = max(t, math.log(2.0 * d.a1 * bounds.c9 / (bounds.r1 * budget)) / bounds.r1)
    if d.a2 and bounds.c1:
        t = max(t, math.log(2.0 * d.a2 * bounds.c1 / (bounds.c2 * budget)) / bounds.c2)
    return t


def _check_certificate(times, k, bounds: DecayBounds) -> None:
    scale = 1e-9 * (1.0 + float(np.abs(k).max()))
    if np.any(k.real > scale):
        raise NumericalError("Riccati solution left the half-plane Re K <= 0")
    if np.any(np.abs(k[:, 1]) > bounds.c1 * np.exp(-bounds.c2 * times) + scale):
        raise NumericalError("second Riccati component violates its decay bound")
    if np.any(np.abs(k[:, 0]) > bounds.c9 * np.exp(-bounds.r1 * times) + scale):
        raise NumericalError("first Riccati component violates its decay bound")


def solve_riccati(arg: TransformArg, model: ValidatedModel, tol: float = 1e-10) -> RiccatiSolution:
    """Solve on ``[0, t_trunc]`` with step halving until ``a . int K`` settles.

    ``t_trunc`` is chosen so the certified tail is at most ``tol / 2``; the
    step is halved until two successive estimates of ``a . int K`` differ by
    less than ``tol / 10``.
    """
    if not tol > 0:
        raise ValidationError("tol must be positive")
    bounds = decay_bounds(arg, model)
    t_trunc = truncation_time(bounds, model, tol / 2.0)
    tail = bounds.tail(model, t_trunc)
    weights = np.array([model.drift.a1, model.drift.a2])
    k0 = (-arg.lambda1 + 0j, -arg.lambda2 + 0j)

    if t_trunc == 0.0:
        times = np.zeros(1)
        k = np.zeros((1, 2), dtype=complex)
        return RiccatiSolution(times, k, 0.0, tail, 0.0, 0j, bounds, 0)

    n = max(2, 2 * math.ceil(t_trunc / (2 * H_START)))
    times, k = integrate_riccati(model, arg.mu, k0, t_trunc, n)
    previous = complex(weights @ simpson(k, t_trunc / n))
    while True:
        n *= 2
        if n > MAX_STEPS:
            raise ToleranceUnreachable(
                f"step size fell below {t_trunc / MAX_STEPS:.3g} without reaching tol={tol:g}"
            )
        times, k = integrate_riccati(model, arg.mu, k0, t_trunc, n)
        current = complex(weights @ simpson(k, t_trunc / n))
        change = abs(current - previous)
        if change < tol / 10.0:
            break
        previous = current
    _check_certificate(times, k, bounds)
    return RiccatiSolution(times, k, t_trunc, tail, change, current, bounds, n)


def stationary_transform(arg: TransformArg, model: ValidatedModel, tol: float = 1e-10) -> StationaryTransformValue:
    """``E[exp(-lambda . Y_inf + i mu X_inf)]`` with an error bound."""
    sol = solve_riccati(arg, model, tol)
    exponent = sol.integral + 1j * arg.mu * model.drift.m / model.drift.theta
    value = cmath.exp(exponent)
    delta = sol.tail_bound + sol.quadrature_error
    error = abs(value) * math.expm1(delta)
    return StationaryTransformValue(value, error, sol.t_trunc, sol)


def transform_gradient(model: ValidatedModel, h: float = 1e-4, tol: float = 1e-12) -> np.ndarray:
    """Finite-difference Laplace gradient at the origin; equals ``-E[Z]``.

    All three entries are derivatives of ``E exp(-l1 Y1 - l2 Y2 - s X)``.
    Laplace arguments must stay non-negative, so the ``lambda`` derivatives
    use the one-sided second-order stencil ``(-3 f0 + 4 f(h) - f(2h)) / 2h``.
    The ``x`` entry comes from a central ``mu`` difference through
    ``d/ds = i d/dmu`` with ``s = -i mu``.
    """
    def f(l1, l2, mu):
        return stationary_transform(TransformArg(l1, l2, mu), model, tol).value

    f0 = f(0.0, 0.0, 0.0)
    g1 = (-3 * f0 + 4 * f(h, 0.0, 0.0) - f(2 * h, 0.0, 0.0)) / (2 * h)
    g2 = (-3 * f0 + 4 * f(0.0, h, 0.0) - f(0.0, 2 * h, 0.0)) / (2 * h)
    g3 = (f(0.0, 0.0, h) - f(0.0, 0.0, -h)) / (2 * h)
    return np.array([g1.real, g2.real, -g3.imag])


def cir_stationary_laplace(lam: float, a: float, b: float, sigma: float) -> float:
    """Laplace transform of the Gamma(2a/sigma^2, sigma^2/(2b)) stationary CIR law."""
    if a < 0 or b <= 0 or sigma <= 0 or lam < 0:
        raise ValidationError("need a >= 0, b > 0, sigma > 0, lambda >= 0")
    return (1.0 + lam * sigma**2 / (2.0 * b)) ** (-2.0 * a / sigma**2)


def cir_riccati_closed_form(s, lam: float, b: float, sigma: float) -> np.ndarray:
    """Solution of ``K' = sigma^2/2 K^2 - b K`` with ``K(0) = -lam``."""
    s = np.asarray(s, dtype=float)
    return -lam * np.exp(-b * s) / (1.0 + lam * sigma**2 / (2.0 * b) * (-np.expm1(-b * s)))


def ergodic_average(path: Path, f: Callable) -> float:
    """Time average ``(1/T) int_0^T f(Z_s) ds`` along one path (trapezoid rule).

    ``f`` is called on the ``(n + 1, 3)`` state array when it vectorizes,
    otherwise once per :class:`State`.
    """
    n = path.grid.n_steps
    try:
        values = np.asarray(f(path.states), dtype=float)
        if values.shape != (n + 1,):
            values = np.broadcast_to(values, (n + 1,)) if values.ndim == 0 else None
    except (TypeError, ValueError, IndexError, AttributeError):
        values = None
    if values is None:
        values = np.array([f(State(*z)) for z in path.states], dtype=float)
    return float(trapezoid_integral(values, path.grid) / path.grid.t_max)
