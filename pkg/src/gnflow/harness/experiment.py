"""Experiment orchestration: problem setup, sweeps, artifacts and verdicts."""

from __future__ import annotations

import json
import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import diagnostics as diag
from ..dynamics import (COLUMNS, DISCRETE, EULER, FlowConfig, QuadraticLoss, TrajectoryRecord,
                        recommended_alpha, recommended_eta, refine_in_class_optimum, run_trajectory)
from ..network import TANH, Dataset, NetworkParams, bind, init_params, jacobian, lipschitz_output_bound
from .config import RECOMMENDED, ExperimentConfig
from .data import load_csv, synth_dataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Problem:
    """Everything shared by the trajectories of one config."""

    dataset: Dataset
    params: NetworkParams
    loss: QuadraticLoss
    report: diag.SpectralReport
    lip_f: float
    g0: float


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    d = cfg.data
    if d.source == "csv":
        return load_csv(d.path, d.target, n_subset=d.n, seed=d.seed)
    return synth_dataset(d.n, d.d, min_eig=d.min_eig, seed=d.seed, noise=d.noise,
                         teacher_width=d.teacher_width, target_scale=d.target_scale)


def build_problem(cfg: ExperimentConfig) -> Problem:
    ds = build_dataset(cfg)
    params = bind(init_params(cfg.network.init_seed, cfg.network.m, ds.d), ds.X)
    L = cfg.network.L
    L = diag.jacobian_lipschitz_estimate(ds.X) if L == "auto" else float(L)
    report = diag.spectral_report(jacobian(params), L)
    loss = QuadraticLoss(ds.y)
    return Problem(ds, params, loss, report, lipschitz_output_bound(ds.X, cfg.network.m),
                   loss.value(np.zeros(ds.n)))


def spectral(cfg: ExperimentConfig) -> dict:
    """Initial spectral report plus the derived constants used by the thresholds."""
    pb = build_problem(cfg)
    rep = pb.report
    out = {"spectral": rep.to_dict(), "lip_f": pb.lip_f, "sigma2": TANH.sigma2,
           "initial_loss": pb.g0, "data_warnings": list(pb.dataset.meta.get("warnings", []))}
    if rep.lambda0 > 0:
        out["gram_floor_thresholds"] = diag.gram_floor_thresholds(rep.lambda0, cfg.flow.r)
    return _clean(out)


def _delta0_estimate(cfg: ExperimentConfig, g0: float) -> float:
    opt = cfg.flow.optimum
    return g0 - float(opt) if isinstance(opt, (int, float)) else g0


def resolve_alpha(cfg: ExperimentConfig, pb: Problem, alpha, rho: float) -> float:
    """Numeric scaling factor; ``"recommended"`` picks the threshold of the matching guarantee."""
    if alpha != RECOMMENDED:
        return float(alpha)
    rep, loss = pb.report, pb.loss
    delta0 = _delta0_estimate(cfg, pb.g0)
    if cfg.flow.mode == DISCRETE:
        return recommended_alpha("discrete", rep, rho, loss.nu, loss.mu, delta0, m=cfg.network.m,
                                 n=pb.dataset.n, sigma2=TANH.sigma2, lip_f=pb.lip_f,
                                 lip_g=loss.grad_bound(pb.g0))
    if rep.regime == diag.UNDER and rho == 0.0:
        return recommended_alpha("under", rep, rho, loss.nu, loss.mu, delta0, r=cfg.flow.r)
    return recommended_alpha("over", rep, rho, loss.nu, loss.mu, delta0)


def flow_config(cfg: ExperimentConfig, pb: Problem, alpha: float, rho: float) -> FlowConfig:
    f = cfg.flow
    rep = pb.report
    if f.exit_radius == "none":
        radius = math.inf
    elif f.exit_radius == "auto":
        if rep.regime == diag.UNDER and rho == 0.0:
            radius = 2.0 * f.r * rep.r0
        else:
            radius = rep.r0
        radius = radius if radius > 0 else math.inf
    else:
        radius = float(f.exit_radius)
    optimum = float(f.optimum) if isinstance(f.optimum, (int, float)) else 0.0
    if f.mode == DISCRETE:
        eta = f.eta
        if eta == RECOMMENDED:
            eta = recommended_eta(rep, rho, alpha, cfg.network.m, pb.lip_f, pb.loss)
        return FlowConfig(alpha=alpha, rho=rho, mode=DISCRETE, eta=float(eta), n_steps=cfg.n_steps,
                          exit_radius=radius, exit_policy=f.exit_policy, optimum=optimum)
    dt = f.dt
    n_steps = cfg.n_steps
    if rho == 1.0 and f.baseline_dt is not None:
        horizon = n_steps * f.dt
        dt = f.baseline_dt
        n_steps = int(round(horizon / dt))
    return FlowConfig(alpha=alpha, rho=rho, mode=EULER, dt=dt, n_steps=n_steps,
                      exit_radius=radius, exit_policy=f.exit_policy, optimum=optimum)


def rate_bound_for(cfg: ExperimentConfig, pb: Problem, fc: FlowConfig, delta0: float):
    """The guarantee that applies to this trajectory, or None if no guarantee covers it."""
    rep, loss = pb.report, pb.loss
    if not rep.assumption_ok or delta0 <= 0:
        return None
    if fc.mode == DISCRETE:
        if rep.regime != diag.OVER:
            return None
        return diag.RateBound("over-discrete", {
            "nu": loss.nu, "mu": loss.mu, "lambda0": rep.lambda0, "lambda_n": rep.lambda_n,
            "rho": fc.rho, "lip_f": pb.lip_f, "delta0": delta0})
    if rep.regime == diag.UNDER:
        # the guarantee is about the gap to the in-class optimum, not to zero loss
        if fc.rho != 0.0 or cfg.flow.optimum == "zero":
            return None
        return diag.RateBound("under-continuous", {"nu": loss.nu, "delta0": delta0})
    if fc.rho == 0.0:
        return None
    return diag.RateBound("over-continuous", {"nu": loss.nu, "lambda0": rep.lambda0,
                                              "rho": fc.rho, "delta0": delta0})


def verdicts(bound: diag.RateBound | None, t, gap, exited, tol: float, floor: float,
             premises: dict | None = None) -> list:
    """Bound verdicts restricted to steps before exit; a pure function of the time series.

    ``premises`` (the alpha threshold and whether it is met) is carried along
    unchanged, since a violated bound only contradicts the guarantee when they hold.
    """
    if bound is None:
        return []
    v = diag.bound_verdict(t, gap, bound, tol=tol, floor=floor, mask=np.asarray(exited) == 0)
    return [{"bound": bound.to_dict(), "tol": tol, "floor": floor, **(premises or {}), **v}]


def _premises(cfg: ExperimentConfig, pb: Problem, alpha: float, rho: float) -> dict:
    try:
        thr = resolve_alpha(cfg, pb, RECOMMENDED, rho)
    except ValueError:
        return {"alpha_threshold": None, "premises_met": False}
    return {"alpha_threshold": thr, "premises_met": bool(alpha >= thr * (1 - 1e-12))}


def _tag(x: float) -> str:
    return repr(float(x))


def run_filename(alpha_token, rho: float) -> str:
    a = alpha_token if alpha_token == RECOMMENDED else _tag(alpha_token)
    return f"traj_alpha={a}_rho={_tag(rho)}.csv"


def write_timeseries(path: Path, rec: TrajectoryRecord) -> None:
    cols = rec.columns()
    lines = [",".join(COLUMNS)]
    for i in range(len(rec)):
        row = []
        for name in COLUMNS:
            v = cols[name][i]
            row.append(str(int(v)) if name in ("step", "exited") else repr(float(v)))
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")


def read_timeseries(path) -> dict:
    """Columns of a time-series file as float arrays (step and exited as int)."""
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    if tuple(header) != COLUMNS:
        raise ValueError(f"{path}: unexpected header {header}")
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    out = {name: arr[:, i] for i, name in enumerate(COLUMNS)}
    out["step"] = out["step"].astype(int)
    out["exited"] = out["exited"].astype(int)
    return out


def _clean(obj):
    """JSON-safe copy: non-finite floats become None, numpy scalars become Python ones."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def run_single(cfg: ExperimentConfig, alpha_token, rho: float, pb: Problem | None = None):
    """One trajectory; returns (summary dict, record or None).  Never raises."""
    entry = {"alpha_token": alpha_token, "rho": float(rho), "file": run_filename(alpha_token, rho)}
    try:
        pb = build_problem(cfg) if pb is None else pb
        alpha = resolve_alpha(cfg, pb, alpha_token, rho)
        fc = flow_config(cfg, pb, alpha, rho)
        rec = run_trajectory(fc, pb.params, loss=pb.loss)
        optimum = fc.optimum
        if cfg.flow.optimum == "refine":
            optimum, _ = refine_in_class_optimum(pb.params, pb.loss, alpha, rec.delta_final)
            rec = rec.with_optimum(optimum)
        delta0 = float(rec.gap[0])
        bound = rate_bound_for(cfg, pb, fc, delta0)
        out = cfg.output
        try:
            rate = diag.fit_decay_rate(rec, window=out.fit_window, floor=out.gap_floor)
        except ValueError:
            rate = None
        entry.update({
            "status": "ok", "alpha": alpha, "mode": fc.mode, "dt": fc.dt if fc.mode == EULER else None,
            "eta": fc.eta, "n_steps": fc.n_steps, "exit_radius": fc.exit_radius,
            "optimum": optimum, "delta0": delta0, "final_loss": float(rec.loss[-1]),
            "final_gap": float(rec.gap[-1]), "exit_step": rec.exit_step, "exit_time": rec.exit_time,
            "stop_reason": rec.stop_reason, "fitted_rate": rate,
            "max_dev_norm": float(np.max(rec.dev_norm)), "n_events": len(rec.events),
            "events": rec.events[:20],
            "verdicts": verdicts(bound, rec.t, rec.gap, rec.exited, out.bound_tol, out.gap_floor,
                                 _premises(cfg, pb, alpha, rho) if bound is not None else None),
        })
        if pb.report.lambda0 > 0:
            entry["gram_floor"] = diag.gram_floor_check(rec.lambda_min_gram, pb.report.lambda0, cfg.flow.r)
        return _clean(entry), rec
    except Exception as exc:  # captured so sibling runs proceed
        log.error("run alpha=%s rho=%s failed: %s", alpha_token, rho, exc)
        entry.update({"status": "error", "error": f"{type(exc).__name__}: {exc}",
                      "traceback": traceback.format_exc(limit=5)})
        return _clean(entry), None


def _worker(args):
    cfg, alpha_token, rho = args
    entry, rec = run_single(cfg, alpha_token, rho)
    return entry, rec


def _comparisons(entries: list, records: dict) -> list:
    """Time for each rho < 1 run to reach the final loss of the rho = 1 run at the same alpha."""
    out = []
    for base in entries:
        if base.get("status") != "ok" or base["rho"] != 1.0:
            continue
        for e in entries:
            if e is base or e.get("status") != "ok" or e["alpha"] != base["alpha"] or e["rho"] == 1.0:
                continue
            rec = records[e["file"]]
            target = base["final_loss"]
            hit = np.flatnonzero(rec.loss <= target) if target is not None else np.array([], int)
            t_hit = float(rec.t[hit[0]]) if hit.size else None
            horizon = float(rec.t[-1]) if len(rec) else 0.0
            out.append({"alpha": e["alpha"], "rho": e["rho"], "baseline_final_loss": target,
                        "baseline_stop_reason": base["stop_reason"], "time_to_baseline_loss": t_hit,
                        "fraction_of_horizon": (t_hit / horizon) if (t_hit is not None and horizon > 0) else None})
    return out


def run(cfg: ExperimentConfig, out_dir=None, workers: int | None = None) -> dict:
    """Run every (alpha, rho) pair of the sweep; write artifacts if an output directory is set.

    Results are assembled in config order, so the summary does not depend on
    the number of workers.
    """
    out_dir = cfg.output.dir if out_dir is None else out_dir
    workers = cfg.output.workers if workers is None else workers
    pairs = [(a, float(r)) for a in cfg.sweep.alpha for r in cfg.sweep.rho]
    summary = {"config": cfg.to_dict(), "runs": [], "comparisons": []}
    try:
        pb = build_problem(cfg)
    except Exception as exc:
        summary["error"] = f"{type(exc).__name__}: {exc}"
        return _clean(summary)
    summary["spectral"] = pb.report.to_dict()
    summary["lip_f"] = pb.lip_f
    summary["initial_loss"] = pb.g0
    summary["data_warnings"] = list(pb.dataset.meta.get("warnings", []))
    if workers > 1 and len(pairs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_worker, [(cfg, a, r) for a, r in pairs]))
    else:
        results = [run_single(cfg, a, r, pb) for a, r in pairs]
    records = {}
    for entry, rec in results:
        summary["runs"].append(entry)
        if rec is not None:
            records[entry["file"]] = rec
    summary["comparisons"] = _comparisons(summary["runs"], records)
    summary = _clean(summary)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for entry in summary["runs"]:
            if entry["file"] in records:
                write_timeseries(out / entry["file"], records[entry["file"]])
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    summary["_records"] = records
    return summary


def recompute_verdicts(summary: dict, out_dir) -> list:
    """Verdicts of every run recomputed from its emitted time-series file."""
    out = []
    for entry in summary["runs"]:
        if entry.get("status") != "ok":
            out.append(None)
            continue
        ts = read_timeseries(Path(out_dir) / entry["file"])
        vs = []
        for v in entry["verdicts"]:
            bound = diag.RateBound.from_dict(v["bound"])
            premises = {k: v[k] for k in ("alpha_threshold", "premises_met") if k in v}
            vs.extend(verdicts(bound, ts["t"], ts["gap"], ts["exited"], v["tol"], v["floor"], premises))
        out.append(vs)
    return out
