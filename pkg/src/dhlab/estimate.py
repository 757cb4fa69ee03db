"""Drift estimators from one observed path: MLE and conditional least squares.

Writing the drift as ``D(z) tau`` with the 3x9 design matrix

    D(z) = [[1, -y1, 0, 0,   0,  0, 0,   0,   0 ],
            [0, 0,   1, -y1, -y2, 0, 0,   0,   0 ],
            [0, 0,   0, 0,   0,  1, -y1, -y2, -x]]

and ``R(z)`` for the instantaneous covariance of ``dZ``, the continuous-time
MLE is ``(int D' R^-1 D ds)^-1 int D' R^-1 dZ`` and the continuous CLSE is
``(int D' D ds)^-1 int D' dZ``.  Time integrals use the trapezoid rule and
stochastic integrals the left-point sum, as in :mod:`dhlab.sim`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from . import linalg
from .errors import (
    LinkOutOfDomain,
    SingularG,
    SingularGamma,
    SingularInformation,
    SingularR,
    ValidationError,
)
from .model import TAU_NAMES, DiffusionParams, DriftParams, ValidatedModel
from .sim import Path

FLOOR = 1e-12
QUADRATURES = ("trapezoid", "left")

#: Slices of tau handled by each block of the CLSE normal equations.
BLOCKS = (slice(0, 2), slice(2, 5), slice(5, 9))


@dataclass
class Estimate:
    tau_hat: np.ndarray
    covariance: np.ndarray  # covariance of tau_hat itself
    method: str
    T: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def scaled_covariance(self) -> np.ndarray:
        """Asymptotic covariance of ``sqrt(T) (tau_hat - tau)``."""
        return self.T * self.covariance

    @property
    def drift(self) -> DriftParams:
        return DriftParams.from_vector(self.tau_hat)

    def as_dict(self) -> dict:
        return dict(zip(TAU_NAMES, map(float, self.tau_hat)))


def _finish_covariance(cov: np.ndarray, what: str) -> np.ndarray:
    cov = linalg.symmetrize(cov)
    linalg.assert_psd(cov, what=what)
    return cov


# --------------------------------------------------------------------------
# Building blocks


def design_matrix(states) -> np.ndarray:
    """``D(z)`` for one state (3x9) or a stack of states (n x 3 x 9)."""
    z = np.asarray(states, dtype=float)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    out = np.zeros((z.shape[0], 3, 9))
    out[:, 0, 0] = 1.0
    out[:, 0, 1] = -z[:, 0]
    out[:, 1, 2] = 1.0
    out[:, 1, 3] = -z[:, 0]
    out[:, 1, 4] = -z[:, 1]
    out[:, 2, 5] = 1.0
    out[:, 2, 6] = -z[:, 0]
    out[:, 2, 7] = -z[:, 1]
    out[:, 2, 8] = -z[:, 2]
    return out[0] if single else out


def loading_matrix(states, diff: DiffusionParams, sqrt_mode: Optional[str] = None) -> np.ndarray:
    """The 3x4 matrix mapping ``(dB1, dB2, dW1, dW2)`` to ``dZ``.

    By default ``sqrt(y)`` is taken of ``max(y, 0)``.  With ``sqrt_mode`` set
    to ``"y-only"`` or ``"all"`` it reproduces exactly the loading the Euler
    scheme used, i.e. ``sqrt(|y|)`` in the variance rows and ``sqrt(max(y,
    0))`` resp. ``sqrt(|y|)`` in the price row.
    """
    z = np.asarray(states, dtype=float)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    y = z[:, :2]
    if sqrt_mode is None:
        ry = rx = np.sqrt(np.maximum(y, 0.0))
    else:
        ry = np.sqrt(np.abs(y))
        rx = ry if sqrt_mode == "all" else np.sqrt(np.maximum(y, 0.0))
    out = np.zeros((z.shape[0], 3, 4))
    out[:, 0, 0] = diff.sigma11 * ry[:, 0]
    out[:, 1, 1] = diff.sigma12 * ry[:, 1]
    out[:, 2, 0] = diff.rho11 * diff.sigma21 * rx[:, 0]
    out[:, 2, 1] = diff.rho22 * diff.sigma22 * rx[:, 1]
    out[:, 2, 2] = diff.rhobar11 * diff.sigma21 * rx[:, 0]
    out[:, 2, 3] = diff.rhobar22 * diff.sigma22 * rx[:, 1]
    return out[0] if single else out


def _r_entries(y1, y2, diff: DiffusionParams):
    s11, s12, s21, s22 = diff.sigma11, diff.sigma12, diff.sigma21, diff.sigma22
    r00 = s11**2 * y1
    r11 = s12**2 * y2
    r22 = s21**2 * y1 + s22**2 * y2
    r02 = diff.rho11 * s11 * s21 * y1
    r12 = diff.rho22 * s12 * s22 * y2
    return r00, r11, r22, r02, r12


def _assemble(r00, r11, r22, r02, r12) -> np.ndarray:
    n = np.shape(r00)[0]
    out = np.zeros((n, 3, 3))
    out[:, 0, 0] = r00
    out[:, 1, 1] = r11
    out[:, 2, 2] = r22
    out[:, 0, 2] = out[:, 2, 0] = r02
    out[:, 1, 2] = out[:, 2, 1] = r12
    return out


def _r_and_inverse(states, diff: DiffusionParams, floor: float):
    """Stacks of ``R``, ``R^-1``, ``det R`` and the number of floored entries."""
    z = np.atleast_2d(np.asarray(states, dtype=float))
    y1 = np.maximum(z[:, 0], floor)
    y2 = np.maximum(z[:, 1], floor)
    floored = int((z[:, 0] < floor).sum() + (z[:, 1] < floor).sum())
    r00, r11, r22, r02, r12 = _r_entries(y1, y2, diff)
    # R[0,1] = 0, so the adjugate simplifies
    c00 = r11 * r22 - r12 * r12
    c11 = r00 * r22 - r02 * r02
    c22 = r00 * r11
    c01 = r02 * r12
    c02 = -r02 * r11
    c12 = -r00 * r12
    det = r00 * c00 + r02 * c02
    if np.any(~(det >= 1e-300)):
        bad = int(np.argmin(np.where(np.isfinite(det), det, -np.inf)))
        raise SingularR(f"det R = {det[bad]:.3g} at index {bad} after flooring y at {floor:g}")
    inv = _assemble(c00 / det, c11 / det, c22 / det, c02 / det, c12 / det)
    inv[:, 0, 1] = inv[:, 1, 0] = c01 / det
    return _assemble(r00, r11, r22, r02, r12), inv, det, floored


@dataclass(frozen=True)
class DiffusionMatrixR:
    r: np.ndarray
    r_inv: np.ndarray
    det: float
    floored: bool


def diffusion_matrix(z, diff: DiffusionParams, floor: float = FLOOR) -> DiffusionMatrixR:
    """``R(z)`` with ``y`` floored at ``floor`` and its closed-form inverse."""
    if not floor > 0:
        raise ValidationError("floor must be positive")
    r, inv, det, floored = _r_and_inverse(np.asarray(z, dtype=float)[None, :], diff, floor)
    return DiffusionMatrixR(r[0], inv[0], float(det[0]), floored > 0)


def _weights(n_steps: int, dt: float, quadrature: str) -> np.ndarray:
    if quadrature not in QUADRATURES:
        raise ValidationError(f"quadrature must be one of {QUADRATURES}")
    w = np.full(n_steps + 1, dt)
    if quadrature == "trapezoid":
        w[0] = w[-1] = dt / 2.0
    else:
        w[-1] = 0.0
    return w


def _model_parts(model):
    if isinstance(model, ValidatedModel):
        return model, model.diffusion
    if isinstance(model, DiffusionParams):
        return None, model
    raise ValidationError("expected a ValidatedModel or DiffusionParams")


# --------------------------------------------------------------------------
# Maximum likelihood


def mle_information(path: Path, diff: DiffusionParams, floor: float = FLOOR, quadrature: str = "trapezoid") -> np.ndarray:
    """``int_0^T D' R^-1 D ds`` (9x9)."""
    d = design_matrix(path.states)
    _, inv, _, _ = _r_and_inverse(path.states, diff, floor)
    w = _weights(path.grid.n_steps, path.grid.dt, quadrature)
    info = np.einsum("n,nia,nij,njb->ab", w, d, inv, d, optimize=True)
    return linalg.symmetrize(info)


def mle(
    path: Path,
    diff,
    floor: float = FLOOR,
    quadrature: str = "trapezoid",
) -> Estimate:
    """Continuous-observation MLE of tau with covariance ``I^-1``.

    ``diff`` may be a :class:`ValidatedModel`, in which case its Feller flags
    are checked and a warning is issued when they fail.
    """
    model, diff = _model_parts(diff)
    if model is not None and not (model.feller_y1 and model.feller_y2):
        warnings.warn("Feller condition fails; the likelihood integrals may be unreliable", RuntimeWarning)
    d = design_matrix(path.states)
    _, inv, _, floored = _r_and_inverse(path.states, diff, floor)
    w = _weights(path.grid.n_steps, path.grid.dt, quadrature)
    dri = np.einsum("nia,nij->naj", d, inv)
    info = linalg.symmetrize(np.einsum("n,naj,njb->ab", w, dri, d))
    dz = np.diff(path.states, axis=0)
    score = np.einsum("naj,nj->a", dri[:-1], dz)
    cov, cond = linalg.inverse(info, SingularInformation, "information matrix")
    tau_hat = cov @ score
    return Estimate(
        tau_hat,
        _finish_covariance(cov, "MLE covariance"),
        "MLE",
        path.grid.t_max,
        {
            "condition_number": cond,
            "floored_y": floored,
            "clamps_y1": path.clamps[0],
            "clamps_y2": path.clamps[1],
            "quadrature": quadrature,
        },
    )


def martingale_terms(path: Path, diff: DiffusionParams, floor: float = FLOOR, sqrt_mode: str = "y-only"):
    """``(sum D' R^-1 rho dB, sum D' rho dB)`` rebuilt from the stored increments.

    These are the noise parts of the MLE and CLSE scores, computed without
    touching the state increments ``dZ``.
    """
    if path.increments is None:
        raise ValidationError("path carries no Brownian increments")
    d = design_matrix(path.states[:-1])
    load = loading_matrix(path.states[:-1], diff, sqrt_mode)
    noise = np.einsum("nik,nk->ni", load, path.increments)
    _, inv, _, _ = _r_and_inverse(path.states[:-1], diff, floor)
    m_mle = np.einsum("nia,nij,nj->a", d, inv, noise)
    m_clse = np.einsum("nia,ni->a", d, noise)
    return m_mle, m_clse


def mle_error_identity(path: Path, model: ValidatedModel, floor: float = FLOOR, quadrature: str = "left", sqrt_mode: str = "y-only"):
    """Both sides of ``tau_hat - tau = I^-1 (M_T + (I_left - I) tau)``.

    With left-point time integrals the correction vanishes and this is the
    martingale identity ``tau_hat - tau = <M>_T^-1 M_T``.
    """
    tau = model.drift.as_vector()
    est = mle(path, model.diffusion, floor, quadrature)
    m_t, _ = martingale_terms(path, model.diffusion, floor, sqrt_mode)
    info = mle_information(path, model.diffusion, floor, quadrature)
    info_left = mle_information(path, model.diffusion, floor, "left")
    rhs = np.linalg.solve(info, m_t + (info_left - info) @ tau)
    return est.tau_hat - tau, rhs


# --------------------------------------------------------------------------
# Continuous CLSE


def _clse_blocks(path: Path, quadrature: str = "trapezoid"):
    """Per-block ``G`` matrices and ``f`` vectors."""
    z = path.states
    n = path.grid.n_steps
    w = _weights(n, path.grid.dt, quadrature)
    ones = np.ones(n + 1)
    regressors = (
        np.column_stack([ones, -z[:, 0]]),
        np.column_stack([ones, -z[:, 0], -z[:, 1]]),
        np.column_stack([ones, -z[:, 0], -z[:, 1], -z[:, 2]]),
    )
    dz = np.diff(z, axis=0)
    gs, fs = [], []
    for k, reg in enumerate(regressors):
        gs.append(np.einsum("n,na,nb->ab", w, reg, reg))
        fs.append(reg[:-1].T @ dz[:, k])
    return gs, fs


def _block_diag(blocks) -> np.ndarray:
    out = np.zeros((9, 9))
    for sl, b in zip(BLOCKS, blocks):
        out[sl, sl] = b
    return out


def clse_g(path: Path, quadrature: str = "trapezoid") -> np.ndarray:
    """``G_T = int D' D ds`` (block diagonal)."""
    gs, _ = _clse_blocks(path, quadrature)
    return _block_diag(gs)


def _g_inverse_blocks(gs):
    return [linalg.small_inverse(g, SingularG, f"CLSE block G{k + 1}") for k, g in enumerate(gs)]


def clse_h(path: Path, diff: DiffusionParams) -> np.ndarray:
    """``H_T = int D' R D ds``, the quadratic variation of the CLSE noise term.

    ``R`` uses ``max(y, 0)``.  Its (1,2) block vanishes because the first two
    rows of ``R`` do not mix.
    """
    z = path.states
    d = design_matrix(z)
    y1 = np.maximum(z[:, 0], 0.0)
    y2 = np.maximum(z[:, 1], 0.0)
    r = _assemble(*_r_entries(y1, y2, diff))
    w = _weights(path.grid.n_steps, path.grid.dt, "trapezoid")
    return linalg.symmetrize(np.einsum("n,nia,nij,njb->ab", w, d, r, d, optimize=True))


def clse_sandwich_covariance(path: Path, diff: DiffusionParams) -> np.ndarray:
    """``G^-1 H G^-1`` with ``G = G_T / T`` and ``H = H_T / T``.

    This estimates the asymptotic covariance of ``sqrt(T) (tau_check - tau)``.
    """
    _, diff = _model_parts(diff)
    t = path.grid.t_max
    gs, _ = _clse_blocks(path)
    g_inv = _block_diag(_g_inverse_blocks([g / t for g in gs]))
    h = clse_h(path, diff) / t
    cov = linalg.symmetrize(g_inv @ h @ g_inv)
    linalg.assert_psd(h, what="H")
    return _finish_covariance(cov, "CLSE sandwich covariance")


def clse_continuous(path: Path, diff=None, quadrature: str = "trapezoid") -> Estimate:
    """``tau_check = G_T^-1 f_T``; covariance from the sandwich when ``diff`` is given."""
    gs, fs = _clse_blocks(path, quadrature)
    inverses = _g_inverse_blocks(gs)
    tau = np.concatenate([gi @ f for gi, f in zip(inverses, fs)])
    t = path.grid.t_max
    if diff is not None:
        cov = clse_sandwich_covariance(path, diff) / t
    else:
        cov = np.full((9, 9), np.nan)
    conds = [linalg.condition_number(g) for g in gs]
    return Estimate(
        tau,
        cov,
        "CLSE-continuous",
        t,
        {
            "condition_g1": conds[0],
            "condition_g2": conds[1],
            "condition_g3": conds[2],
            "clamps_y1": path.clamps[0],
            "clamps_y2": path.clamps[1],
            "quadrature": quadrature,
        },
    )


def clse_error_identity(path: Path, model: ValidatedModel, quadrature: str = "left", sqrt_mode: str = "y-only"):
    """Both sides of ``tau_check - tau = G^-1 (h_T + (G_left - G) tau)``."""
    tau = model.drift.as_vector()
    est = clse_continuous(path, None, quadrature)
    _, h_t = martingale_terms(path, model.diffusion, FLOOR, sqrt_mode)
    g = clse_g(path, quadrature)
    g_left = clse_g(path, "left")
    rhs = np.linalg.solve(g, h_t + (g_left - g) @ tau)
    return est.tau_hat - tau, rhs


# --------------------------------------------------------------------------
# Discrete CLSE and its link function


@dataclass
class DiscreteCLSE:
    tilde: np.ndarray
    gammas: Tuple[np.ndarray, np.ndarray, np.ndarray]
    phis: Tuple[np.ndarray, np.ndarray, np.ndarray]
    N: int
    samples: np.ndarray


def sampling_stride(grid, N: int) -> int:
    if N < 1:
        raise ValidationError("N must be a positive integer")
    stride = round(1.0 / (N * grid.dt))
    if stride < 1 or abs(stride * N * grid.dt - 1.0) > 1e-9:
        raise ValidationError(f"path step dt={grid.dt} does not refine the 1/{N} sampling grid")
    return stride


def clse_discrete(path: Path, N: int) -> DiscreteCLSE:
    """Least-squares fit of the one-step conditional means on the 1/N grid.

    Solves ``Gamma1 (a1~, b11~) = phi1``, ``Gamma2 (a2~, b21~, b22~) = phi2``
    and ``Gamma3 (m~, kappa1~, kappa2~, theta~) = phi3`` with sums over
    ``i = 1 .. floor(N T)``.
    """
    stride = sampling_stride(path.grid, N)
    count = math.floor(N * path.grid.t_max + 1e-9)
    z = path.states[: count * stride + 1 : stride]
    prev = z[:-1]
    dz = np.diff(z, axis=0)
    ones = np.ones(count)
    regressors = (
        np.column_stack([ones, -prev[:, 0]]),
        np.column_stack([ones, -prev[:, 0], -prev[:, 1]]),
        np.column_stack([ones, -prev[:, 0], -prev[:, 1], -prev[:, 2]]),
    )
    gammas, phis, parts = [], [], []
    for k, reg in enumerate(regressors):
        gamma = reg.T @ reg
        phi = reg.T @ dz[:, k]
        inv = linalg.small_inverse(gamma, SingularGamma, f"Gamma{k + 1}")
        gammas.append(gamma)
        phis.append(phi)
        parts.append(inv @ phi)
    return DiscreteCLSE(np.concatenate(parts), tuple(gammas), tuple(phis), N, z)


def clse_objective(samples: np.ndarray, tilde) -> float:
    """Sum of squared one-step prediction errors for the tilde parameters."""
    t = np.asarray(tilde, dtype=float)
    prev = samples[:-1]
    dz = np.diff(samples, axis=0)
    pred = np.einsum("nia,a->ni", design_matrix(prev), t)
    return float(((dz - pred) ** 2).sum())


def divided_difference(nodes, h: float) -> float:
    """Divided difference of ``x -> exp(x h)`` over ``nodes``.

    Equals the iterated convolution integral of the exponentials, e.g.
    ``f[p, q] = int_0^h e^{p (h - u)} e^{q u} du``.  Nodes closer than 1e-12
    are treated as repeated, where the confluent value ``h^k e^{x h} / k!``
    applies.
    """
    x = sorted(float(v) for v in nodes)
    k = len(x)
    table = [math.exp(v * h) for v in x]
    for order in range(1, k):
        nxt = []
        for i in range(k - order):
            lo, hi = x[i], x[i + order]
            if hi - lo < 1e-12:
                nxt.append(h**order * math.exp(lo * h) / math.factorial(order))
            elif order == 1:
                # expm1 form avoids cancellation for close nodes
                nxt.append(h * math.exp(lo * h) * _expm1_ratio((hi - lo) * h))
            else:
                nxt.append((table[i + 1] - table[i]) / (hi - lo))
        table = nxt
    return table[0]


def _expm1_ratio(x: float) -> float:
    return math.expm1(x) / x if x != 0 else 1.0


def _link_matrices(b11, b21, b22, theta, h):
    f = lambda *n: divided_difference(n, h)
    m = np.array(
        [[f(-theta, -b11), 0.0], [-b21 * f(-theta, -b22, -b11), f(-theta, -b22)]]
    )
    p = np.array(
        [
            [f(-theta, -b11, 0.0), 0.0],
            [-b21 * f(-theta, -b22, -b11, 0.0), f(-theta, -b22, 0.0)],
        ]
    )
    return m, p


def link_forward(tau, N: int) -> np.ndarray:
    """Map drift parameters to the one-step regression coefficients at step 1/N."""
    a1, b11, a2, b21, b22, m, k1, k2, th = (float(v) for v in tau)
    h = 1.0 / N
    f = lambda *n: divided_difference(n, h)
    mm, pp = _link_matrices(b11, b21, b22, th, h)
    kappa = np.array([k1, k2])
    kt = mm.T @ kappa
    mt = m * f(-th, 0.0) - kappa @ pp @ np.array([a1, a2])
    return np.array(
        [
            a1 * f(0.0, -b11),
            -math.expm1(-b11 * h),
            a2 * f(-b22, 0.0) - b21 * a1 * f(-b22, -b11, 0.0),
            b21 * f(-b22, -b11),
            -math.expm1(-b22 * h),
            mt,
            kt[0],
            kt[1],
            -math.expm1(-th * h),
        ]
    )


def _rate_from(tilde: float, N: int, name: str) -> float:
    if not 1.0 - tilde > 0:
        raise LinkOutOfDomain(f"1 - {name}~ = {1.0 - tilde:.3g} <= 0; the sample is too short or too coarse")
    return -N * math.log1p(-tilde)


def clse_invert_link(tilde, N: int) -> np.ndarray:
    """Inverse of :func:`link_forward`."""
    at1, bt11, at2, bt21, bt22, mt, kt1, kt2, tht = (float(v) for v in tilde)
    h = 1.0 / N
    f = lambda *n: divided_difference(n, h)
    b11 = _rate_from(bt11, N, "b11")
    b22 = _rate_from(bt22, N, "b22")
    th = _rate_from(tht, N, "theta")
    a1 = at1 / f(0.0, -b11)
    b21 = bt21 / f(-b22, -b11)
    a2 = (at2 + b21 * a1 * f(-b22, -b11, 0.0)) / f(-b22, 0.0)
    mm, pp = _link_matrices(b11, b21, b22, th, h)
    # solve mm' kappa = kappa~ (upper triangular)
    k2 = kt2 / mm[1, 1]
    k1 = (kt1 - mm[1, 0] * k2) / mm[0, 0]
    kappa = np.array([k1, k2])
    m = (mt + kappa @ pp @ np.array([a1, a2])) / f(-th, 0.0)
    return np.array([a1, b11, a2, b21, b22, m, k1, k2, th])


def clse_discrete_estimate(path: Path, N: int, diff=None) -> Estimate:
    """Discrete CLSE mapped back through the inverse link.

    The covariance is the continuous-time sandwich estimate, which is the
    large-N limit of the discrete one.
    """
    fit = clse_discrete(path, N)
    tau = clse_invert_link(fit.tilde, N)
    t = path.grid.t_max
    if diff is not None:
        cov = clse_sandwich_covariance(path, diff) / t
    else:
        cov = np.full((9, 9), np.nan)
    return Estimate(
        tau,
        cov,
        "CLSE-discrete",
        t,
        {
            "N": N,
            "samples": int(fit.samples.shape[0] - 1),
            "condition_gamma1": linalg.condition_number(fit.gammas[0]),
            "condition_gamma2": linalg.condition_number(fit.gammas[1]),
            "condition_gamma3": linalg.condition_number(fit.gammas[2]),
        },
    )


def estimate(path: Path, model: ValidatedModel, method: str, N: Optional[int] = None) -> Estimate:
    """Dispatch on ``method`` in ``{"mle", "clse", "clse-discrete"}``."""
    if method == "mle":
        return mle(path, model)
    if method == "clse":
        return clse_continuous(path, model.diffusion)
    if method == "clse-discrete":
        if N is None:
            N = round(1.0 / path.grid.dt)
        return clse_discrete_estimate(path, N, model.diffusion)
    raise ValidationError(f"unknown estimation method {method!r}")
