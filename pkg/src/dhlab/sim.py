"""Euler-Maruyama paths, Monte Carlo ensembles and quadrature primitives."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConfigError, InvalidState, NonFiniteState, ValidationError
from .model import ValidatedModel
from .rng import STREAMS, brownian_increments

SQRT_MODES = ("y-only", "all")

#: Replications simulated together in one vectorized block.  Fixed so that the
#: blocking, and hence every floating-point reduction, is independent of the
#: number of worker threads.
CHUNK = 100


@dataclass(frozen=True)
class TimeGrid:
    t_max: float
    dt: float

    def __post_init__(self):
        if not (self.t_max > 0 and self.dt > 0):
            raise ConfigError(f"t_max and dt must be positive, got {self.t_max}, {self.dt}")
        n = round(self.t_max / self.dt)
        if n < 1 or abs(n * self.dt - self.t_max) > 1e-12 * self.t_max:
            raise ConfigError(f"t_max={self.t_max} is not a whole number of steps dt={self.dt}")

    @property
    def n_steps(self) -> int:
        return round(self.t_max / self.dt)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def truncated(self, n_steps: int) -> "TimeGrid":
        return TimeGrid(n_steps * self.dt, self.dt)


@dataclass
class Path:
    """One simulated or observed trajectory.

    ``states`` has shape ``(n_steps + 1, 3)`` with columns ``(y1, y2, x)``;
    ``increments`` has shape ``(n_steps, 4)`` with columns ``dB1, dB2, dW1,
    dW2``.  ``clamps`` counts the steps whose pre-step ``y1`` / ``y2`` was
    negative, i.e. where the scheme had to take ``|y|`` or ``max(y, 0)``.
    """

    grid: TimeGrid
    states: np.ndarray
    increments: Optional[np.ndarray]
    seed: Optional[int] = None
    replication: Optional[int] = None
    clamps: tuple = (0, 0)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def y1(self) -> np.ndarray:
        return self.states[:, 0]

    @property
    def y2(self) -> np.ndarray:
        return self.states[:, 1]

    @property
    def x(self) -> np.ndarray:
        return self.states[:, 2]

    @property
    def clamp_fraction(self) -> float:
        return max(self.clamps) / self.grid.n_steps

    def head(self, n_steps: int) -> "Path":
        """The same path observed on ``[0, n_steps * dt]`` only."""
        if not 1 <= n_steps <= self.grid.n_steps:
            raise ValidationError(f"cannot truncate {self.grid.n_steps} steps to {n_steps}")
        inc = None if self.increments is None else self.increments[:n_steps].copy()
        neg = self.states[:n_steps, :2] < 0
        return Path(
            self.grid.truncated(n_steps),
            self.states[: n_steps + 1].copy(),
            inc,
            self.seed,
            self.replication,
            (int(neg[:, 0].sum()), int(neg[:, 1].sum())),
        )

    def subsample(self, stride: int) -> np.ndarray:
        return self.states[::stride]

    # -- CSV round trip -------------------------------------------------

    def to_csv(self, filename, provenance: str = "") -> None:
        with open(filename, "w", newline="") as fh:
            if provenance:
                fh.write(f"# {provenance}\n")
            fh.write(f"# seed={self.seed} replication={self.replication}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "y1", "y2", "x", *STREAMS])
            n = self.grid.n_steps
            for i, t in enumerate(self.times):
                row = [repr(float(t)), *(repr(float(v)) for v in self.states[i])]
                if i < n and self.increments is not None:
                    row += [repr(float(v)) for v in self.increments[i]]
                else:
                    row += [""] * 4
                writer.writerow(row)

    @classmethod
    def from_csv(cls, filename) -> "Path":
        seed = replication = None
        rows = []
        with open(filename, newline="") as fh:
            lines = []
            for line in fh:
                if line.startswith("#"):
                    for token in line[1:].split():
                        key, _, value = token.partition("=")
                        if key == "seed" and value not in ("", "None"):
                            seed = int(value)
                        elif key == "replication" and value not in ("", "None"):
                            replication = int(value)
                    continue
                lines.append(line)
            reader = csv.DictReader(lines)
            expected = ["t", "y1", "y2", "x", *STREAMS]
            if reader.fieldnames != expected:
                raise ValidationError(f"path CSV header must be {','.join(expected)}")
            rows = list(reader)
        if len(rows) < 2:
            raise ValidationError("path CSV needs at least two rows")
        t = np.array([float(r["t"]) for r in rows])
        states = np.array([[float(r[k]) for k in ("y1", "y2", "x")] for r in rows])
        dt = t[1] - t[0]
        n = len(rows) - 1
        if not np.allclose(np.diff(t), dt, rtol=1e-9, atol=1e-12):
            raise ValidationError("path CSV time column is not uniformly spaced")
        if abs(t[0]) > 1e-12:
            raise ValidationError("path CSV must start at t = 0")
        try:
            inc = np.array([[float(r[k]) for k in STREAMS] for r in rows[:-1]])
        except ValueError:
            inc = None
        grid = TimeGrid(n * dt, dt)
        neg = states[:-1, :2] < 0
        return cls(grid, states, inc, seed, replication, (int(neg[:, 0].sum()), int(neg[:, 1].sum())))


def _check_start(z0) -> np.ndarray:
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (3,) or not np.all(np.isfinite(z0)):
        raise InvalidState(f"initial state must be three finite numbers, got {z0}")
    if z0[0] <= 0 or z0[1] <= 0:
        raise InvalidState(f"initial variances must be positive, got {z0[:2]}")
    return z0


def _euler(model: ValidatedModel, z0: np.ndarray, dt: float, inc: np.ndarray, sqrt_mode: str):
    """Vectorized scheme; ``inc`` has shape ``(reps, n_steps, 4)``.

    Returns states ``(reps, n_steps + 1, 3)``, negative-visit counts
    ``(reps, 2)`` and the first non-finite step per replication (-1 if none).
    """
    if sqrt_mode not in SQRT_MODES:
        raise ConfigError(f"sqrt mode must be one of {SQRT_MODES}, got {sqrt_mode!r}")
    d, s = model.drift, model.diffusion
    reps, n, _ = inc.shape
    out = np.empty((reps, n + 1, 3))
    out[:, 0, :] = z0
    y1 = np.full(reps, z0[0])
    y2 = np.full(reps, z0[1])
    x = np.full(reps, z0[2])
    neg = np.zeros((reps, 2), dtype=np.int64)
    bad = np.full(reps, -1, dtype=np.int64)

    # correlated price shocks, computed once for the whole block
    price1 = s.sigma21 * (s.rho11 * inc[:, :, 0] + s.rhobar11 * inc[:, :, 2])
    price2 = s.sigma22 * (s.rho22 * inc[:, :, 1] + s.rhobar22 * inc[:, :, 3])
    dB1 = inc[:, :, 0]
    dB2 = inc[:, :, 1]
    all_abs = sqrt_mode == "all"

    for i in range(n):
        n1 = y1 < 0
        n2 = y2 < 0
        neg[:, 0] += n1
        neg[:, 1] += n2
        r1 = np.sqrt(np.abs(y1))
        r2 = np.sqrt(np.abs(y2))
        if all_abs:
            q1, q2 = r1, r2
        else:
            q1 = np.where(n1, 0.0, r1)
            q2 = np.where(n2, 0.0, r2)
        ny1 = y1 + (d.a1 - d.b11 * y1) * dt + s.sigma11 * r1 * dB1[:, i]
        ny2 = y2 + (d.a2 - d.b21 * y1 - d.b22 * y2) * dt + s.sigma12 * r2 * dB2[:, i]
        nx = (
            x
            + (d.m - d.kappa1 * y1 - d.kappa2 * y2 - d.theta * x) * dt
            + q1 * price1[:, i]
            + q2 * price2[:, i]
        )
        y1, y2, x = ny1, ny2, nx
        out[:, i + 1, 0] = y1
        out[:, i + 1, 1] = y2
        out[:, i + 1, 2] = x

    finite = np.isfinite(out).all(axis=2)
    for r in np.flatnonzero(~finite.all(axis=1)):
        bad[r] = int(np.argmin(finite[r]))
    return out, neg, bad


def simulate_batch(
    model: ValidatedModel,
    z0,
    grid: TimeGrid,
    seed: int,
    replications: Sequence[int],
    sqrt_mode: str = "y-only",
    strict: bool = True,
) -> List[Optional[Path]]:
    """Simulate several replications at once.

    Each path depends only on ``(seed, replication)``.  With ``strict`` a
    non-finite state raises :class:`NonFiniteState`; otherwise the failed
    replication is returned as ``None``.
    """
    z0 = _check_start(z0)
    n = grid.n_steps
    reps = list(replications)
    inc = np.stack([brownian_increments(seed, r, n, grid.dt) for r in reps])
    with np.errstate(over="ignore", invalid="ignore"):
        states, neg, bad = _euler(model, z0, grid.dt, inc, sqrt_mode)
    paths: List[Optional[Path]] = []
    for k, r in enumerate(reps):
        if bad[k] >= 0:
            if strict:
                raise NonFiniteState(
                    f"state became non-finite at step {bad[k]} of replication {r}; "
                    "dt is probably too large for this drift",
                    replication=r,
                    step=int(bad[k]),
                )
            paths.append(None)
            continue
        paths.append(
            Path(grid, states[k], inc[k], seed, r, (int(neg[k, 0]), int(neg[k, 1])))
        )
    return paths


def simulate_path(
    model: ValidatedModel,
    z0,
    grid: TimeGrid,
    seed: int,
    replication: int = 0,
    sqrt_mode: str = "y-only",
) -> Path:
    """One Euler path with increments keyed by ``(seed, replication)``."""
    return simulate_batch(model, z0, grid, seed, [replication], sqrt_mode)[0]


@dataclass
class EnsembleStats:
    times: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    replications: int
    se_defined: bool = True
    clamp_fraction: float = 0.0
    extra: dict = field(default_factory=dict)


def _combine(acc, part):
    """Chan et al. pairwise update of (count, mean, M2)."""
    if acc is None:
        return part
    na, ma, sa = acc
    nb, mb, sb = part
    n = na + nb
    delta = mb - ma
    return n, ma + delta * (nb / n), sa + sb + delta**2 * (na * nb / n)


def simulate_ensemble(
    model: ValidatedModel,
    z0,
    grid: TimeGrid,
    replications: int,
    seed: int,
    sqrt_mode: str = "y-only",
    threads: int = 1,
) -> EnsembleStats:
    """Per-time mean and standard error over ``replications`` paths.

    Paths are generated in fixed blocks of :data:`CHUNK` replications and the
    block moments are merged in block order, so the result does not depend
    on ``threads``.
    """
    if replications < 1:
        raise ConfigError("replications must be >= 1")
    blocks = [range(s, min(s + CHUNK, replications)) for s in range(0, replications, CHUNK)]

    def run(block):
        paths = simulate_batch(model, z0, grid, seed, block, sqrt_mode)
        arr = np.stack([p.states for p in paths])
        clamps = sum(max(p.clamps) for p in paths)
        mean = arr.mean(axis=0)
        return (len(block), mean, ((arr - mean) ** 2).sum(axis=0)), clamps

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, blocks))
    else:
        results = [run(b) for b in blocks]

    acc = None
    clamp_total = 0
    for part, clamps in results:
        acc = _combine(acc, part)
        clamp_total += clamps
    n, mean, m2 = acc
    if n > 1:
        se = np.sqrt(m2 / (n - 1) / n)
        defined = True
    else:
        se = np.zeros_like(mean)
        defined = False
    return EnsembleStats(
        grid.times,
        mean,
        se,
        n,
        defined,
        clamp_total / (n * grid.n_steps),
    )


# --------------------------------------------------------------------------
# Quadrature


def _step(grid_or_dt) -> float:
    return grid_or_dt.dt if isinstance(grid_or_dt, TimeGrid) else float(grid_or_dt)


def trapezoid_integral(values, grid_or_dt) -> np.ndarray:
    """``sum_i dt/2 (v_i + v_{i+1})`` along the first axis."""
    v = np.asarray(values, dtype=float)
    dt = _step(grid_or_dt)
    if isinstance(grid_or_dt, TimeGrid) and v.shape[0] != grid_or_dt.n_steps + 1:
        raise ValidationError("values must have one entry per grid point")
    return dt * (v[1:].sum(axis=0) + v[:-1].sum(axis=0)) / 2.0


def left_sum(values, grid_or_dt) -> np.ndarray:
    """Left-point rule ``sum_i dt v_i``."""
    v = np.asarray(values, dtype=float)
    return _step(grid_or_dt) * v[:-1].sum(axis=0)


def ito_sum(integrand, integrator, grid=None) -> np.ndarray:
    """Non-anticipating sum ``sum_i xi(t_i) (eta(t_{i+1}) - eta(t_i))``.

    ``integrand`` may carry trailing axes (e.g. a matrix per time point); the
    increments of ``integrator`` are broadcast against them.
    """
    xi = np.asarray(integrand, dtype=float)
    eta = np.asarray(integrator, dtype=float)
    if xi.shape[0] != eta.shape[0]:
        raise ValidationError("integrand and integrator must share the time axis")
    if grid is not None and eta.shape[0] != grid.n_steps + 1:
        raise ValidationError("sequences must have one entry per grid point")
    d_eta = np.diff(eta, axis=0)
    d_eta = d_eta.reshape(d_eta.shape + (1,) * (xi.ndim - eta.ndim))
    return (xi[:-1] * d_eta).sum(axis=0)

