"""INI-style experiment configuration.

Sections ``[drift]``, ``[diffusion]``, ``[initial]`` and ``[grid]`` are
required; ``[experiment]`` carries optional knobs.  Example::

    [drift]
    a1 = 1
    b11 = 1
    ...
    [initial]
    y1_0 = 0.5
    y2_0 = 0.5
    x0 = 0
    [grid]
    t_max = 50
    dt = 0.1
    seed = 1
    replications = 1000
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path as FsPath
from typing import Optional, Tuple

from .errors import ConfigError
from .model import DiffusionParams, DriftParams, State, ValidatedModel, validate
from .sim import SQRT_MODES, TimeGrid

KINDS = ("classify", "estimate-mle", "estimate-clse", "transform", "ergodic-check")

_DRIFT_KEYS = ("a1", "b11", "a2", "b21", "b22", "m", "kappa1", "kappa2", "theta")
_DIFF_KEYS = ("sigma11", "sigma12", "sigma21", "sigma22", "rho11", "rho22")


@dataclass(frozen=True)
class ExperimentConfig:
    model: ValidatedModel
    z0: State
    grid: TimeGrid
    replications: int
    seed: int
    kind: str = "classify"
    horizons: Tuple[float, ...] = ()
    long_horizons: Tuple[float, ...] = ()
    floor: float = 1e-12
    tol: float = 1e-10
    N: Optional[int] = None
    sqrt_mode: str = "y-only"
    out_dir: str = "out"
    source: str = field(default="", compare=False)
    sha256: str = field(default="", compare=False)

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.kind not in KINDS:
            raise ConfigError(f"experiment kind must be one of {KINDS}, got {self.kind!r}")
        if self.sqrt_mode not in SQRT_MODES:
            raise ConfigError(f"sqrt_mode must be one of {SQRT_MODES}")
        if self.kind.startswith("estimate") and not self.horizons:
            raise ConfigError("estimation experiments need at least one horizon")
        if not self.tol > 0 or not self.floor > 0:
            raise ConfigError("tol and floor must be positive")

    def with_overrides(self, **changes) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})

    @property
    def provenance(self) -> str:
        return f"config_sha256={self.sha256} seed={self.seed}"


def _floats(section, keys, where):
    out = {}
    for key in keys:
        if key not in section:
            raise ConfigError(f"missing key {key!r} in [{where}]")
        try:
            out[key] = float(section[key])
        except ValueError:
            raise ConfigError(f"[{where}] {key} = {section[key]!r} is not a number") from None
    return out


def _float_list(text: str) -> Tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"cannot parse list of numbers {text!r}") from None


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    for name in ("drift", "diffusion", "initial", "grid"):
        if not parser.has_section(name):
            raise ConfigError(f"missing section [{name}]")

    drift = DriftParams(**_floats(parser["drift"], _DRIFT_KEYS, "drift"))
    diffusion = DiffusionParams(**_floats(parser["diffusion"], _DIFF_KEYS, "diffusion"))
    init = _floats(parser["initial"], ("y1_0", "y2_0", "x0"), "initial")
    g = parser["grid"]
    sizes = _floats(g, ("t_max", "dt"), "grid")
    try:
        seed = int(g.get("seed", "0"))
        reps = int(g.get("replications", "1"))
    except ValueError:
        raise ConfigError("[grid] seed and replications must be integers") from None
    if not 0 <= seed < 2**64:
        raise ConfigError("seed must fit in an unsigned 64-bit integer")

    exp = parser["experiment"] if parser.has_section("experiment") else {}
    n_value = exp.get("N")
    cfg = ExperimentConfig(
        model=validate(drift, diffusion),
        z0=State(init["y1_0"], init["y2_0"], init["x0"]),
        grid=TimeGrid(sizes["t_max"], sizes["dt"]),
        replications=reps,
        seed=seed,
        kind=exp.get("kind", "classify"),
        horizons=_float_list(exp.get("horizons", "")) or (sizes["t_max"],),
        long_horizons=_float_list(exp.get("long_horizons", "")),
        floor=float(exp.get("floor", 1e-12)),
        tol=float(exp.get("tol", 1e-10)),
        N=int(n_value) if n_value else None,
        sqrt_mode=exp.get("sqrt_mode", "y-only"),
        out_dir=exp.get("out_dir", "out"),
        source=source,
        sha256=hashlib.sha256(text.encode()).hexdigest(),
    )
    return cfg


def load_config(filename) -> ExperimentConfig:
    try:
        text = FsPath(filename).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {filename}: {exc}") from None
    return parse_config(text, str(filename))


def render_config(cfg: ExperimentConfig) -> str:
    """INI text that parses back to ``cfg`` (hash aside)."""
    d, s = cfg.model.drift, cfg.model.diffusion
    lines = ["[drift]"]
    lines += [f"{k} = {getattr(d, k)!r}" for k in _DRIFT_KEYS]
    lines += ["", "[diffusion]"]
    lines += [f"{k} = {getattr(s, k)!r}" for k in _DIFF_KEYS]
    lines += ["", "[initial]", f"y1_0 = {cfg.z0.y1!r}", f"y2_0 = {cfg.z0.y2!r}", f"x0 = {cfg.z0.x!r}"]
    lines += [
        "",
        "[grid]",
        f"t_max = {cfg.grid.t_max!r}",
        f"dt = {cfg.grid.dt!r}",
        f"seed = {cfg.seed}",
        f"replications = {cfg.replications}",
        "",
        "[experiment]",
        f"kind = {cfg.kind}",
        f"horizons = {', '.join(repr(h) for h in cfg.horizons)}",
        f"floor = {cfg.floor!r}",
        f"tol = {cfg.tol!r}",
        f"sqrt_mode = {cfg.sqrt_mode}",
    ]
    if cfg.long_horizons:
        lines.append(f"long_horizons = {', '.join(repr(h) for h in cfg.long_horizons)}")
    if cfg.N is not None:
        lines.append(f"N = {cfg.N}")
    return "\n".join(lines) + "\n"
