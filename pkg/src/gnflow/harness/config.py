"""TOML experiment configuration.

Sections and keys (unknown keys are rejected)::

    [data]      source = "synthetic" | "csv"
                csv:       path, target, n (optional), seed
                synthetic: n, d, seed, min_eig, noise, teacher_width, target_scale
    [network]   m, init_seed, L = "auto" | float
    [flow]      mode, dt, eta = "recommended" | float, t_max or n_steps,
                exit_radius = "auto" | "none" | float, exit_policy,
                optimum = "zero" | "refine" | float, r, baseline_dt
    [sweep]     alpha = [float | "recommended", ...], rho = [float, ...]
    [output]    dir, bound_tol, gap_floor, fit_window, workers

Relative paths are resolved against the directory of the config file.
"""

from __future__ import annotations

import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..dynamics import DISCRETE, EULER, FLAG, HALT


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


RECOMMENDED = "recommended"


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"
    path: str | None = None
    target: str | None = None
    n: int | None = 256
    d: int = 8
    seed: int = 0
    min_eig: float = 1.0
    noise: float = 0.0
    teacher_width: int = 4
    target_scale: float = 1.0


@dataclass(frozen=True)
class NetworkConfig:
    m: int = 18
    init_seed: int = 0
    L: float | str = "auto"


@dataclass(frozen=True)
class FlowSettings:
    mode: str = EULER
    dt: float = 0.01
    eta: float | str | None = None
    t_max: float | None = None
    n_steps: int | None = None
    exit_radius: float | str = "auto"
    exit_policy: str = FLAG
    optimum: float | str = "zero"
    r: float = 0.5
    baseline_dt: float | None = None


@dataclass(frozen=True)
class SweepConfig:
    alpha: tuple = ()
    rho: tuple = (0.0,)


@dataclass(frozen=True)
class OutputConfig:
    dir: str | None = None
    bound_tol: float = 0.05
    gap_floor: float = 1e-10
    fit_window: tuple = (0.2, 0.8)
    workers: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    flow: FlowSettings = field(default_factory=FlowSettings)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sweep"] = {k: list(v) for k, v in d["sweep"].items()}
        d["output"]["fit_window"] = list(d["output"]["fit_window"])
        return d

    @property
    def n_steps(self) -> int:
        f = self.flow
        if f.n_steps is not None:
            return int(f.n_steps)
        step = f.dt if f.mode == EULER else 1.0
        return int(round(f.t_max / step))


_SECTIONS = {"data": DataConfig, "network": NetworkConfig, "flow": FlowSettings,
             "sweep": SweepConfig, "output": OutputConfig}


def _section(name, cls, raw):
    if not isinstance(raw, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = set(cls.__dataclass_fields__)
    extra = sorted(set(raw) - known)
    if extra:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(extra)}")
    kw = dict(raw)
    for k in ("alpha", "rho", "fit_window"):
        if k in kw:
            if not isinstance(kw[k], list):
                raise ConfigError(f"[{name}] {k} must be a list")
            kw[k] = tuple(kw[k])
    return cls(**kw)


def _number(v, what, positive=False, allow=()):
    if isinstance(v, str) and v in allow:
        return
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        opts = f" or one of {list(allow)}" if allow else ""
        raise ConfigError(f"{what} must be a finite number{opts}, got {v!r}")
    if positive and v <= 0:
        raise ConfigError(f"{what} must be positive, got {v!r}")


def _integer(v, what, minimum):
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigError(f"{what} must be an integer >= {minimum}, got {v!r}")


def validate(cfg: ExperimentConfig, base_dir: Path | None = None) -> ExperimentConfig:
    """Check types and cross-field consistency; resolve the CSV path."""
    d, net, f, sw, out = cfg.data, cfg.network, cfg.flow, cfg.sweep, cfg.output
    if d.source not in ("synthetic", "csv"):
        raise ConfigError(f"data.source must be 'synthetic' or 'csv', got {d.source!r}")
    _integer(d.seed, "data.seed", 0)
    if d.source == "csv":
        if not d.path or not d.target:
            raise ConfigError("csv data needs both data.path and data.target")
        p = Path(d.path)
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        if not p.is_file():
            raise ConfigError(f"data file does not exist: {p}")
        d = DataConfig(**{**asdict(d), "path": str(p)})
        if d.n is not None:
            _integer(d.n, "data.n", 1)
    else:
        if d.n is None:
            raise ConfigError("synthetic data needs data.n")
        _integer(d.n, "data.n", 1)
        _integer(d.d, "data.d", 1)
        _integer(d.teacher_width, "data.teacher_width", 1)
        _number(d.min_eig, "data.min_eig", positive=True)
        _number(d.noise, "data.noise")
        _number(d.target_scale, "data.target_scale", positive=True)
    _integer(net.m, "network.m", 1)
    _integer(net.init_seed, "network.init_seed", 0)
    _number(net.L, "network.L", positive=True, allow=("auto",))

    if f.mode not in (EULER, DISCRETE):
        raise ConfigError(f"flow.mode must be {EULER!r} or {DISCRETE!r}, got {f.mode!r}")
    _number(f.dt, "flow.dt", positive=True)
    if f.mode == DISCRETE:
        if f.eta is None:
            raise ConfigError("discrete mode needs flow.eta")
        _number(f.eta, "flow.eta", allow=(RECOMMENDED,))
    if (f.t_max is None) == (f.n_steps is None):
        raise ConfigError("set exactly one of flow.t_max and flow.n_steps")
    if f.t_max is not None:
        _number(f.t_max, "flow.t_max")
        if f.t_max < 0:
            raise ConfigError("flow.t_max must be nonnegative")
    else:
        _integer(f.n_steps, "flow.n_steps", 0)
    _number(f.exit_radius, "flow.exit_radius", positive=True, allow=("auto", "none"))
    if f.exit_policy not in (HALT, FLAG):
        raise ConfigError(f"flow.exit_policy must be {HALT!r} or {FLAG!r}")
    _number(f.optimum, "flow.optimum", allow=("zero", "refine"))
    _number(f.r, "flow.r")
    if not 0.0 < f.r < 1.0:
        raise ConfigError(f"flow.r must lie in (0, 1), got {f.r}")
    if f.baseline_dt is not None:
        _number(f.baseline_dt, "flow.baseline_dt", positive=True)

    for a in sw.alpha:
        _number(a, "sweep.alpha entry", positive=True, allow=(RECOMMENDED,))
    for r in sw.rho:
        _number(r, "sweep.rho entry")
        if not 0.0 <= r <= 1.0:
            raise ConfigError(f"sweep.rho entries must lie in [0, 1], got {r}")
        if f.mode == DISCRETE and r == 0.0:
            raise ConfigError("the discrete method needs rho > 0")

    _number(out.bound_tol, "output.bound_tol")
    _number(out.gap_floor, "output.gap_floor")
    if len(out.fit_window) != 2 or not 0.0 <= out.fit_window[0] < out.fit_window[1] <= 1.0:
        raise ConfigError(f"output.fit_window must be [lo, hi] with 0 <= lo < hi <= 1, got {out.fit_window}")
    _integer(out.workers, "output.workers", 1)
    if out.dir is not None and not Path(out.dir).is_absolute() and base_dir is not None:
        out = OutputConfig(**{**asdict(out), "dir": str(base_dir / out.dir)})
    return ExperimentConfig(d, net, f, sw, out)


def from_dict(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    try:
        parts = {name: _section(name, cls, raw.get(name, {})) for name, cls in _SECTIONS.items()}
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return validate(ExperimentConfig(**parts), base_dir)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file does not exist: {path}")
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(raw, base_dir=path.parent)
