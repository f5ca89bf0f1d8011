"""Spectral reports, theoretical rate bounds, and measured-vs-guaranteed checks."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .linalg import SINGULAR_RTOL, SingularPreconditioner, projection_apply, sym_eig_extremes
from .network import TANH, ActivationSpec

UNDER = "underparameterized"
OVER = "overparameterized"


@dataclass(frozen=True)
class SpectralReport:
    """Spectral quantities of the Jacobian at initialization.

    ``lambda0`` and ``lambda_n`` are quarter-scaled square roots:
    ``4 lambda0^2`` is the smallest eigenvalue of the kernel (p >= n) or of the
    Gram matrix (p < n), and ``4 lambda_n^2`` is the largest eigenvalue of the
    kernel.  ``r0 = lambda0 / L``.
    """

    lambda0: float
    lambda_n: float
    r0: float
    L: float
    regime: str
    assumption_ok: bool
    floor_eig: float
    top_eig: float
    n: int
    p: int

    def to_dict(self) -> dict:
        return asdict(self)


def jacobian_lipschitz_estimate(X, activation: ActivationSpec = TANH) -> float:
    """sigma2 * sqrt(sum_j ||x_j||^4), an upper bound on Lip(w -> Df(w)) in operator norm."""
    X = np.asarray(X, dtype=float)
    sq = np.sum(X * X, axis=1)
    return float(activation.sigma2 * np.sqrt(np.sum(sq * sq)))


def spectral_report(D_init, L_estimate: float) -> SpectralReport:
    D = np.asarray(D_init, dtype=float)
    n, p = D.shape
    regime = UNDER if p < n else OVER
    K = D @ D.T
    M = D.T @ D if regime == UNDER else K
    floor, _ = sym_eig_extremes(M)
    _, top = sym_eig_extremes(K)
    ok = bool(floor > SINGULAR_RTOL * max(top, 0.0))
    lam0 = math.sqrt(max(floor, 0.0) / 4.0)
    lam_n = math.sqrt(max(top, 0.0) / 4.0)
    L = float(L_estimate)
    r0 = lam0 / L if (L > 0 and lam0 > 0) else 0.0
    return SpectralReport(lam0, lam_n, r0, L, regime, ok, floor, top, n, p)


def _positive(**kw):
    for k, v in kw.items():
        if not (v > 0 and math.isfinite(v)):
            raise ValueError(f"{k} must be positive and finite, got {v}")


def rate_bound_over(t, nu: float, lambda0: float, rho: float, delta0: float):
    """Delta0 * exp(-2 nu lambda0^2 t / (rho + (1 - rho) lambda0^2))."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be nonnegative")
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    _positive(nu=nu, lambda0=lambda0)
    l2 = lambda0 * lambda0
    out = delta0 * np.exp(-2.0 * nu * l2 * t / (rho + (1.0 - rho) * l2))
    return float(out) if out.ndim == 0 else out


def rate_bound_under(t, nu: float, delta0: float):
    """Delta0 * exp(-2 nu t); note the absence of any spectral quantity."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be nonnegative")
    out = delta0 * np.exp(-2.0 * nu * t)
    return float(out) if out.ndim == 0 else out


def contraction_factor(nu, mu, lambda0, lambda_n, rho, lip_f) -> float:
    """Per-step gap contraction factor q of the discrete damped Gauss-Newton method.

    Returns 0 with a warning if the formula goes negative (the step-size
    premises are then violated).
    """
    _positive(nu=nu, mu=mu, lambda0=lambda0, lambda_n=lambda_n, lip_f=lip_f)
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    l0, ln = lambda0 ** 2, lambda_n ** 2
    ratio = ((1 - rho) * ln + rho) / ((1 - rho) * l0 + rho)
    q = 1.0 - (nu / mu) * (l0 * l0 / (ln * lip_f ** 2)) * ratio ** 2
    if q < 0:
        warnings.warn(f"contraction factor {q:.3g} < 0 clamped to 0; guarantee premises violated",
                      RuntimeWarning, stacklevel=2)
        q = 0.0
    return q


def riemannian_grad_norm(D, euclid_grad) -> float:
    """Norm of the Euclidean gradient projected onto the column space of D."""
    return float(np.linalg.norm(projection_apply(D, euclid_grad)))


def tangent_grad_norm(D, euclid_grad, rtol: float = 1e-12) -> float:
    """Like :func:`riemannian_grad_norm` but rank-revealing, so it never raises.

    Used for rows of a trajectory where the Gram matrix is singular or p >= n.
    """
    D = np.asarray(D, dtype=float)
    try:
        if D.shape[1] < D.shape[0]:
            return riemannian_grad_norm(D, euclid_grad)
    except SingularPreconditioner:
        pass
    U, s, _ = np.linalg.svd(D, full_matrices=False)
    keep = s > rtol * (s[0] if s.size else 0.0)
    return float(np.linalg.norm(U[:, keep].T @ np.asarray(euclid_grad, dtype=float)))


def deviation_bound_under(mu, nu, delta0, alpha, r, lambda0) -> float:
    """mu sqrt(Delta0) / (alpha (1 - r) lambda0 sqrt(2 nu^3)): cap on ||w_t - w_0||."""
    if not 0.0 < r < 1.0:
        raise ValueError(f"r must lie in (0, 1), got {r}")
    _positive(mu=mu, nu=nu, alpha=alpha, lambda0=lambda0)
    if delta0 < 0:
        raise ValueError("delta0 must be nonnegative")
    return mu * math.sqrt(delta0) / (alpha * (1.0 - r) * lambda0 * math.sqrt(2.0 * nu ** 3))


def gram_floor_thresholds(lambda0: float, r: float) -> dict:
    """Both candidate floors for lambda_min(D^T D) inside the ball of radius 2 r lambda0 / L."""
    return {"weak": (1.0 - r) ** 2 * lambda0 ** 2, "strong": 4.0 * (1.0 - r) ** 2 * lambda0 ** 2}


def gram_floor_check(lambda_min_traj, lambda0: float, r: float) -> dict:
    """Which floor the recorded Gram minimum eigenvalue respects throughout."""
    lm = float(np.min(np.asarray(lambda_min_traj, dtype=float)))
    th = gram_floor_thresholds(lambda0, r)
    return {"lambda_min": lm, **th, "weak_holds": lm >= th["weak"], "strong_holds": lm >= th["strong"]}


@dataclass(frozen=True)
class RateBound:
    """A guaranteed gap envelope evaluated over time ``t`` or step ``k``.

    kind is ``over-continuous``, ``over-discrete`` or ``under-continuous``.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __call__(self, t):
        p = self.params
        if self.kind == "over-continuous":
            return rate_bound_over(t, p["nu"], p["lambda0"], p["rho"], p["delta0"])
        if self.kind == "under-continuous":
            return rate_bound_under(t, p["nu"], p["delta0"])
        if self.kind == "over-discrete":
            q = contraction_factor(p["nu"], p["mu"], p["lambda0"], p["lambda_n"], p["rho"], p["lip_f"])
            k = np.asarray(t, dtype=float)
            out = p["delta0"] * q ** k
            return float(out) if out.ndim == 0 else out
        raise ValueError(f"unknown bound kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "RateBound":
        return cls(d["kind"], dict(d["params"]))


def bound_verdict(t, gap, bound: RateBound, tol: float = 0.05, floor: float = 0.0, mask=None) -> dict:
    """Compare a measured gap series against ``bound * (1 + tol)``.

    Only points with ``gap > floor`` (and ``mask`` true, if given) count.
    """
    t = np.asarray(t, dtype=float)
    gap = np.asarray(gap, dtype=float)
    sel = gap > floor
    if mask is not None:
        sel &= np.asarray(mask, dtype=bool)
    if not np.any(sel):
        return {"held": True, "max_ratio": 0.0, "n_points": 0}
    env = np.asarray(bound(t[sel]), dtype=float)
    ratio = gap[sel] / env
    max_ratio = float(np.max(ratio))
    return {"held": bool(max_ratio <= 1.0 + tol), "max_ratio": max_ratio, "n_points": int(sel.sum())}


def fit_decay_rate(record, window=(0.2, 0.8), floor: float = 0.0) -> float:
    """Exponential decay rate of the gap by least squares on log(gap) versus t.

    ``record`` is anything with ``t`` and ``gap`` sequences (or a ``(t, gap)``
    pair).  ``window`` selects a fraction of the recorded steps (default: the
    middle 60%); points with ``gap <= floor`` are dropped.
    """
    if isinstance(record, tuple):
        t, gap = record
    else:
        t, gap = record.t, record.gap
    t = np.asarray(t, dtype=float)
    gap = np.asarray(gap, dtype=float)
    n = t.size
    lo, hi = int(math.floor(window[0] * n)), int(math.ceil(window[1] * n))
    t, gap = t[lo:hi], gap[lo:hi]
    keep = np.isfinite(gap) & (gap > floor)
    if keep.sum() < 2:
        raise ValueError("fewer than two points with positive gap in the fit window")
    slope = np.polyfit(t[keep], np.log(gap[keep]), 1)[0]
    return float(-slope)
