"""Reproducible experiment runs: classification, estimator tables, diagnostics.

Every file written here starts with a ``# config_sha256=... seed=...`` line
(JSON files carry the same string under ``"provenance"``).  Floating-point
reductions always run in replication order, so outputs are byte-identical
for a fixed configuration and seed whatever the thread count.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

from . import plotting
from .config import ExperimentConfig
from .errors import DegenerateSamples, EstimationAborted, NumericalError, TooFewSamples
from .estimate import clse_continuous, clse_discrete_estimate, mle
from .model import TAU_NAMES, Regime, classify, mean_trajectory, stationary_mean
from .riccati import TransformArg, ergodic_average, stationary_transform
from .sim import CHUNK, TimeGrid, simulate_batch, simulate_ensemble, simulate_path

MAX_FAILURE_RATE = 0.05
METHODS = ("mle", "clse", "clse-discrete")
COORDS = ("y1", "y2", "x")


# --------------------------------------------------------------------------
# Output helpers


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def write_csv(filename, header: Sequence[str], rows, provenance: str, comments: Sequence[str] = ()) -> None:
    with open(filename, "w", newline="") as fh:
        fh.write(f"# {provenance}\n")
        for c in comments:
            fh.write(f"# {c}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def write_json(filename, payload: dict, provenance: str) -> None:
    body = {"provenance": provenance, **payload}
    with open(filename, "w") as fh:
        json.dump(_clean(body), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out(out_dir) -> FsPath:
    path = FsPath(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


# --------------------------------------------------------------------------
# Growth fits (test-side check of the symbolic classification)


def growth_slopes(times, values, t_lo: float, t_hi: float) -> dict:
    """Least-squares slopes of ``E``, ``log|E|`` and ``log|E|`` vs ``log t`` on ``[t_lo, t_hi]``."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    sel = (t >= t_lo) & (t <= t_hi) & (t > 0)
    tt, vv = t[sel], v[sel]
    out = {"linear": float(np.polyfit(tt, vv, 1)[0])}
    mag = np.abs(vv)
    if np.all(mag > 0):
        out["log"] = float(np.polyfit(tt, np.log(mag), 1)[0])
        out["loglog"] = float(np.polyfit(np.log(tt), np.log(mag), 1)[0])
    else:
        out["log"] = out["loglog"] = float("nan")
    return out


# --------------------------------------------------------------------------
# Classification


def run_classification(cfg: ExperimentConfig, out_dir=None, threads: int = 1, write: bool = True) -> dict:
    """Ensemble mean of ``Z_t`` against the exact mean, plus the regime label."""
    label = classify(cfg.model.drift)
    ens = simulate_ensemble(cfg.model, cfg.z0, cfg.grid, cfg.replications, cfg.seed, cfg.sqrt_mode, threads)
    exact = mean_trajectory(cfg.model, cfg.z0, ens.times)
    t_max = cfg.grid.t_max
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(ens.se > 0, np.abs(ens.mean - exact) / ens.se, 0.0)
    report = {
        "regime": str(label),
        "tag": label.tag.value,
        "growth": {c: str(g) for c, g in zip(COORDS, label.growth)},
        "replications": ens.replications,
        "se_defined": ens.se_defined,
        "clamp_fraction": ens.clamp_fraction,
        "max_z": {c: float(z[1:, k].max()) for k, c in enumerate(COORDS)},
        "slopes_mc": {c: growth_slopes(ens.times, ens.mean[:, k], t_max / 2, t_max) for k, c in enumerate(COORDS)},
        "slopes_exact": {c: growth_slopes(ens.times, exact[:, k], t_max / 2, t_max) for k, c in enumerate(COORDS)},
    }
    if write:
        out = _out(out_dir or cfg.out_dir)
        header = ["t"]
        for c in COORDS:
            header += [f"mean_{c}", f"se_{c}", f"analytic_{c}"]
        rows = (
            [t, *[v for k in range(3) for v in (ens.mean[i, k], ens.se[i, k], exact[i, k])]]
            for i, t in enumerate(ens.times)
        )
        write_csv(out / "classification.csv", header, rows, cfg.provenance, [str(label)])
        for k, c in enumerate(COORDS):
            plotting.mean_band(
                ens.times, ens.mean[:, k], ens.se[:, k], exact[:, k], c.upper(), out / f"mean_{c}.svg", str(label.growth[k])
            )
        write_json(out / "report.json", {"classification": report}, cfg.provenance)
    report["ensemble"] = ens
    report["exact"] = exact
    report["label"] = label
    return report


# --------------------------------------------------------------------------
# Estimation tables


@dataclass
class ErrorTable:
    """Mean absolute error ``|tau_hat_i - tau_i|`` per horizon (rows) and coordinate."""

    method: str
    horizons: List[float]
    mae: np.ndarray
    mae_se: np.ndarray
    bias: np.ndarray
    replications: List[int]
    failures: List[int]

    def row(self, T: float) -> np.ndarray:
        return self.mae[self.horizons.index(T)]

    def to_csv(self, filename, provenance: str) -> None:
        header = ["T", "replications", "failures"]
        header += [f"mae_{n}" for n in TAU_NAMES] + [f"se_{n}" for n in TAU_NAMES]
        rows = [
            [T, self.replications[i], self.failures[i], *self.mae[i], *self.mae_se[i]]
            for i, T in enumerate(self.horizons)
        ]
        write_csv(
            filename,
            header,
            rows,
            provenance,
            [f"method={self.method}; entries are mean |tau_hat - tau| over successful replications, se its Monte Carlo standard error"],
        )


@dataclass
class EstimationRun:
    table: ErrorTable
    errors: Dict[float, np.ndarray]  # T -> (reps, 9) of tau_hat - tau, NaN rows for failures
    studentized: Dict[float, np.ndarray]
    normality: Dict[str, dict] = field(default_factory=dict)


def _estimator(method: str, cfg: ExperimentConfig):
    diff = cfg.model.diffusion
    if method == "mle":
        return lambda p: mle(p, diff, cfg.floor)
    if method == "clse":
        return lambda p: clse_continuous(p, diff)
    if method == "clse-discrete":
        return lambda p: clse_discrete_estimate(p, cfg.N or round(1.0 / p.grid.dt), diff)
    raise ValueError(f"unknown method {method!r}")


def run_estimation(
    cfg: ExperimentConfig,
    method: str,
    horizons: Optional[Sequence[float]] = None,
    replications: Optional[int] = None,
    out_dir=None,
    threads: int = 1,
    write: bool = True,
) -> EstimationRun:
    """Monte Carlo error table for one estimator.

    Each replication is simulated once up to the largest horizon; shorter
    horizons use the initial segment of the same path.  Failed replications
    (non-finite path or singular estimator) are excluded and counted; more
    than 5 % failures at any horizon aborts the run.
    """
    horizons = sorted(float(h) for h in (horizons or cfg.horizons))
    reps = int(replications or cfg.replications)
    dt = cfg.grid.dt
    grid = TimeGrid(horizons[-1], dt)
    steps = [TimeGrid(h, dt).n_steps for h in horizons]
    fit = _estimator(method, cfg)
    tau = cfg.model.drift.as_vector()

    def run(block):
        paths = simulate_batch(cfg.model, cfg.z0, grid, cfg.seed, block, cfg.sqrt_mode, strict=False)
        err = np.full((len(block), len(horizons), 9), np.nan)
        stud = np.full_like(err, np.nan)
        for i, path in enumerate(paths):
            if path is None:
                continue
            for j, n in enumerate(steps):
                try:
                    est = fit(path if n == grid.n_steps else path.head(n))
                except NumericalError:
                    continue
                err[i, j] = est.tau_hat - tau
                stud[i, j] = err[i, j] / np.sqrt(np.diag(est.covariance))
        return err, stud

    blocks = [range(s, min(s + CHUNK, reps)) for s in range(0, reps, CHUNK)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    err = np.concatenate([p[0] for p in parts])
    stud = np.concatenate([p[1] for p in parts])

    mae, se, bias, ok, failed = [], [], [], [], []
    for j, T in enumerate(horizons):
        good = ~np.isnan(err[:, j]).any(axis=1)
        n_ok = int(good.sum())
        n_bad = reps - n_ok
        if n_bad > MAX_FAILURE_RATE * reps:
            raise EstimationAborted(f"{n_bad} of {reps} replications failed at T={T:g}")
        a = np.abs(err[good, j])
        mae.append(a.mean(axis=0))
        se.append(a.std(axis=0, ddof=1) / math.sqrt(n_ok) if n_ok > 1 else np.zeros(9))
        bias.append(err[good, j].mean(axis=0))
        ok.append(n_ok)
        failed.append(n_bad)
    table = ErrorTable(method, horizons, np.array(mae), np.array(se), np.array(bias), ok, failed)
    errors = {T: err[:, j] for j, T in enumerate(horizons)}
    studentized = {T: stud[:, j] for j, T in enumerate(horizons)}
    result = EstimationRun(table, errors, studentized)

    last = horizons[-1]
    good = ~np.isnan(studentized[last]).any(axis=1)
    if good.sum() >= 100:
        try:
            result.normality = normality_diagnostics(studentized[last][good])
        except DegenerateSamples:
            result.normality = {}

    if write:
        out = _out(out_dir or cfg.out_dir)
        table.to_csv(out / "error_table.csv", cfg.provenance)
        for T in horizons:
            scaled = math.sqrt(T) * errors[T]
            _write_scaled(out / f"scaled_errors_T{T:g}.csv", scaled, cfg.provenance, T)
            if T == last:
                _write_scaled(out / "scaled_errors.csv", scaled, cfg.provenance, T)
        scaled_last = math.sqrt(last) * errors[last][good]
        for k, name in enumerate(TAU_NAMES):
            plotting.histogram(
                scaled_last[:, k],
                out / f"scaled_error_{name}.svg",
                f"{method.upper()} sqrt(T) error, {name}, T={last:g}",
                name,
            )
        write_json(
            out / "report.json",
            {
                "estimation": {
                    "method": method,
                    "horizons": horizons,
                    "replications": reps,
                    "failures": dict(zip(map(str, horizons), failed)),
                    "failure_policy": "failed replications are excluded; abort above 5% at any horizon",
                    "mean_abs_error": {f"{T:g}": dict(zip(TAU_NAMES, m)) for T, m in zip(horizons, table.mae)},
                    "bias": {f"{T:g}": dict(zip(TAU_NAMES, b)) for T, b in zip(horizons, table.bias)},
                    "normality_studentized": result.normality,
                }
            },
            cfg.provenance,
        )
    return result


def _write_scaled(filename, scaled: np.ndarray, provenance: str, T: float) -> None:
    rows = (
        [r, name, scaled[r, k]]
        for r in range(scaled.shape[0])
        if not np.isnan(scaled[r]).any()
        for k, name in enumerate(TAU_NAMES)
    )
    write_csv(filename, ["rep", "coord", "value"], rows, provenance, [f"sqrt(T) (tau_hat - tau) at T={T:g}"])


def normality_diagnostics(samples, names: Sequence[str] = TAU_NAMES) -> Dict[str, dict]:
    """Moments and a KS distance to the moment-matched normal, per column."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
        names = names[:1] if len(names) != 1 else names
    if x.shape[0] < 100:
        raise TooFewSamples(f"need at least 100 samples, got {x.shape[0]}")
    out = {}
    for k in range(x.shape[1]):
        col = x[:, k]
        mean, sd = float(col.mean()), float(col.std(ddof=1))
        if not sd > 0 or np.ptp(col) == 0:
            raise DegenerateSamples(f"column {k} has zero spread")
        out[names[k] if k < len(names) else str(k)] = {
            "n": int(col.size),
            "mean": mean,
            "std": sd,
            "skewness": float(stats.skew(col)),
            "excess_kurtosis": float(stats.kurtosis(col)),
            "ks": float(stats.kstest(col, "norm", args=(mean, sd)).statistic),
        }
    return out


# --------------------------------------------------------------------------
# Single-path checks


def run_ergodic(cfg: ExperimentConfig, out_dir=None, write: bool = True) -> dict:
    """Time averages of ``(y1, y2, x)`` along one path against the stationary mean."""
    path = simulate_path(cfg.model, cfg.z0, cfg.grid, cfg.seed, 0, cfg.sqrt_mode)
    averages = [ergodic_average(path, lambda z, k=k: z[:, k]) for k in range(3)]
    report = {
        "T": cfg.grid.t_max,
        "dt": cfg.grid.dt,
        "time_average": dict(zip(COORDS, averages)),
        "ergodicity_conditions_hold": cfg.model.ergodicity_conditions,
        "clamp_fraction": path.clamp_fraction,
    }
    if classify(cfg.model.drift).tag is Regime.SUBCRITICAL:
        target = stationary_mean(cfg.model)
        report["stationary_mean"] = dict(zip(COORDS, target))
        report["abs_difference"] = dict(zip(COORDS, np.abs(np.array(averages) - target)))
    if write:
        out = _out(out_dir or cfg.out_dir)
        write_json(out / "report.json", {"ergodic": report}, cfg.provenance)
    return report


def run_transform(cfg: ExperimentConfig, arg: TransformArg, tol: Optional[float] = None) -> dict:
    res = stationary_transform(arg, cfg.model, tol or cfg.tol)
    return {
        "value_re": res.value.real,
        "value_im": res.value.imag,
        "error_bound": res.error_bound,
        "t_trunc": res.t_trunc,
    }
