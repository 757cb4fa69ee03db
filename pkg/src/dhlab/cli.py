"""Command line entry point.

    dhlab classify  --config FILE [--out DIR] [--seed U64] [--threads N]
    dhlab estimate  --config FILE [--method mle|clse|clse-discrete] [--long] ...
    dhlab estimate  --method M --input path.csv --diffusion FILE
    dhlab transform --config FILE --lambda1 L1 --lambda2 L2 --mu MU [--tol TOL]
    dhlab ergodic   --config FILE
    dhlab simulate  --config FILE [--replication R]    (dump one path as CSV)

Exit status is 0 on success, 2 for invalid input and 3 for numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path as FsPath

from . import bench
from .config import load_config
from .errors import NumericalError, ValidationError
from .estimate import estimate as estimate_path
from .riccati import TransformArg
from .sim import Path, simulate_path

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3

def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dhlab", description="Double Heston simulation and estimation lab")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="INI model/experiment file")
        p.add_argument("--out", help="output directory (default from config)")
        p.add_argument("--seed", type=_seed, help="override the configured seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for replications")

    common(sub.add_parser("classify", help="regime label and mean trajectories"))

    p = sub.add_parser("estimate", help="estimator error tables or a single-path fit")
    common(p, config_required=False)
    p.add_argument("--method", choices=bench.METHODS, default="mle")
    p.add_argument("--input", help="path CSV to fit instead of running Monte Carlo")
    p.add_argument("--diffusion", help="config supplying the diffusion parameters for --input")
    p.add_argument("--N", type=int, help="sampling frequency for clse-discrete")
    p.add_argument("--long", action="store_true", help="also run the configured long horizons")

    p = sub.add_parser("transform", help="stationary Fourier-Laplace transform")
    common(p)
    p.add_argument("--lambda1", type=float, default=0.0)
    p.add_argument("--lambda2", type=float, default=0.0)
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--tol", type=float)

    common(sub.add_parser("ergodic", help="time averages along one long path"))

    p = sub.add_parser("simulate", help="write one simulated path as CSV")
    common(p)
    p.add_argument("--replication", type=int, default=0)
    return parser

def _cfg(args):
    cfg = load_config(args.config)
    return cfg.with_overrides(seed=args.seed, out_dir=args.out)

def _estimate_single(args) -> int:
    source = args.diffusion or args.config
    if not source:
        raise ValidationError("--input needs --diffusion (or --config) for the diffusion parameters")
    cfg = load_config(source)
    path = Path.from_csv(args.input)
    est = estimate_path(path, cfg.model, args.method, args.N)
    print(",".join(repr(float(v)) for v in est.tau_hat))
    for row in est.covariance:
        print(",".join(repr(float(v)) for v in row))
    sidecar = FsPath(args.out) / "diagnostics.txt" if args.out else FsPath(str(args.input) + ".diagnostics.txt")
    sidecar.parent.mkdir(parents=True, exist_ok=True)
    with open(sidecar, "w") as fh:
        fh.write(f"method={est.method}\nT={float(est.T)!r}\n")
        for key, value in est.diagnostics.items():
            fh.write(f"{key}={value}\n")
    return EXIT_OK

def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "estimate" and args.input:
        return _estimate_single(args)
    if not args.config:
        raise ValidationError("--config is required")
    cfg = _cfg(args)

    if args.command == "classify":
        report = bench.run_classification(cfg, threads=args.threads)
        print(report["regime"])
    elif args.command == "estimate":
        horizons = list(cfg.horizons) + (list(cfg.long_horizons) if args.long else [])
        if args.N is not None:
            cfg = cfg.with_overrides(N=args.N)
        if args.method == "mle" and not (cfg.model.feller_y1 and cfg.model.feller_y2):
            warnings.warn("Feller condition fails; MLE integrals may be unreliable", RuntimeWarning)
        res = bench.run_estimation(cfg, args.method, horizons, threads=args.threads)
        for T, row in zip(res.table.horizons, res.table.mae):
            print(f"T={T:g}," + ",".join(f"{v:.6g}" for v in row))
    elif args.command == "transform":
        if not cfg.model.ergodicity_conditions:
            warnings.warn("ergodicity conditions do not hold for this model", RuntimeWarning)
        r = bench.run_transform(cfg, TransformArg(args.lambda1, args.lambda2, args.mu), args.tol)
        print(",".join(repr(float(r[k])) for k in ("value_re", "value_im", "error_bound", "t_trunc")))
    elif args.command == "ergodic":
        if not cfg.model.ergodicity_conditions:
            warnings.warn("ergodicity conditions do not hold for this model", RuntimeWarning)
        report = bench.run_ergodic(cfg)
        print(",".join(f"{k}={v:.6g}" for k, v in report["time_average"].items()))
    elif args.command == "simulate":
        path = simulate_path(cfg.model, cfg.z0, cfg.grid, cfg.seed, args.replication, cfg.sqrt_mode)
        out = FsPath(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        target = out / f"path_rep{args.replication}.csv"
        path.to_csv(target, cfg.provenance)
        print(target)
    return EXIT_OK

def main(argv=None) -> int:
    try:
        return run(argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

if __name__ == "__main__":
    sys.exit(main())
