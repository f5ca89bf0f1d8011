"""Gauss-Newton / Levenberg-Marquardt training dynamics.

The continuous flow

    dw/dt = -(1/alpha) H_rho(w)^{-1} Df(w)^T grad g(alpha f(w))

is integrated with explicit Euler; the discrete method replaces ``dt/alpha``
by a learning rate ``eta``.  ``rho = 1`` is plain gradient flow (slowed by
``1/alpha^2``) and serves as the baseline.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import diagnostics as diag
from .linalg import DampedPreconditioner, SingularPreconditioner, spectrum
from .network import NetworkParams, centered_output, jacobian

log = logging.getLogger(__name__)

EULER = "euler-flow"
DISCRETE = "discrete-gn"
HALT = "halt"
FLAG = "flag-and-continue"

#: gradient norms below this are treated as exact stationarity
STATIONARY_TOL = 1e-14


@dataclass(frozen=True)
class QuadraticLoss:
    """g(psi) = ||psi - y||^2, which is 2-strongly convex with 2-Lipschitz gradient."""

    y: np.ndarray
    nu: float = field(default=2.0, init=False)
    mu: float = field(default=2.0, init=False)

    def __post_init__(self):
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))

    def _check(self, psi):
        psi = np.asarray(psi, dtype=float)
        if psi.shape != self.y.shape:
            raise ValueError(f"output has shape {psi.shape}, targets have {self.y.shape}")
        return psi

    def value(self, psi) -> float:
        r = self._check(psi) - self.y
        return float(r @ r)

    def grad(self, psi) -> np.ndarray:
        return 2.0 * (self._check(psi) - self.y)

    def grad_bound(self, level: float) -> float:
        """sup of ||grad g|| over the sublevel set {g <= level}."""
        return 2.0 * math.sqrt(max(level, 0.0))


def loss_value(psi, loss: QuadraticLoss) -> float:
    return loss.value(psi)


def loss_grad(psi, loss: QuadraticLoss) -> np.ndarray:
    return loss.grad(psi)


@dataclass(frozen=True)
class FlowConfig:
    """Settings for one trajectory.

    ``n_steps`` is the horizon in steps; use :meth:`with_horizon` to set it
    from a final time.  ``optimum`` is the loss value subtracted to form the
    recorded gap.
    """

    alpha: float
    rho: float = 0.0
    mode: str = EULER
    dt: float = 0.01
    eta: float | None = None
    n_steps: int = 1000
    exit_radius: float = math.inf
    exit_policy: str = FLAG
    optimum: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if self.mode not in (EULER, DISCRETE):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == EULER and not self.dt > 0:
            raise ValueError("Euler step dt must be positive")
        if self.mode == DISCRETE and (self.eta is None or self.eta < 0):
            raise ValueError("discrete mode needs a learning rate eta >= 0")
        if self.n_steps < 0 or int(self.n_steps) != self.n_steps:
            raise ValueError("n_steps must be a nonnegative integer")
        if not self.exit_radius > 0:
            raise ValueError("exit_radius must be positive")
        if self.exit_policy not in (HALT, FLAG):
            raise ValueError(f"unknown exit policy {self.exit_policy!r}")

    @property
    def step_scale(self) -> float:
        """Multiplier of the preconditioned gradient in one update."""
        return self.dt / self.alpha if self.mode == EULER else float(self.eta)

    @property
    def time_step(self) -> float:
        return self.dt if self.mode == EULER else 1.0

    def with_horizon(self, t_max: float) -> "FlowConfig":
        return replace(self, n_steps=int(round(t_max / self.time_step)))


def gn_direction(w, rho: float, alpha: float, model: NetworkParams, loss: QuadraticLoss,
                 allow_fallback: bool = False, D=None, delta=None):
    """H_rho^{-1} Df(w)^T grad g(alpha f(w)) and the preconditioner used (or None).

    ``delta = w - w_init`` may be passed alongside ``w`` for a cancellation-free
    evaluation of f.
    """
    w = np.asarray(w, dtype=float)
    if delta is None:
        delta = w - model.w_init
    g = loss.grad(alpha * centered_output(model, delta=delta))
    if np.linalg.norm(g) < STATIONARY_TOL:
        return np.zeros_like(w), None
    if D is None:
        D = jacobian(model, w=w)
    pre = DampedPreconditioner(D, rho, mode="auto", allow_fallback=allow_fallback)
    return pre.solve(D.T @ g), pre


def gn_flow_step(w, cfg: FlowConfig, model: NetworkParams, loss: QuadraticLoss) -> np.ndarray:
    """One explicit Euler step of the continuous Gauss-Newton flow."""
    if cfg.mode != EULER:
        raise ValueError("gn_flow_step needs an euler-flow config")
    direction, _ = gn_direction(w, cfg.rho, cfg.alpha, model, loss)
    return np.asarray(w, dtype=float) - (cfg.dt / cfg.alpha) * direction


def gn_discrete_step(w, cfg: FlowConfig, model: NetworkParams, loss: QuadraticLoss) -> np.ndarray:
    """One damped Gauss-Newton update with learning rate eta."""
    if cfg.mode != DISCRETE:
        raise ValueError("gn_discrete_step needs a discrete-gn config")
    if not cfg.rho > 0:
        raise ValueError("the discrete method needs rho in (0, 1]")
    direction, _ = gn_direction(w, cfg.rho, cfg.alpha, model, loss)
    return np.asarray(w, dtype=float) - cfg.eta * direction


def recommended_eta(spectral: diag.SpectralReport, rho: float, alpha: float, m: int,
                    lip_f: float, loss: QuadraticLoss | None = None) -> float:
    """Learning rate that makes the discrete method contract at the guaranteed rate."""
    l0, ln = spectral.lambda0, spectral.lambda_n
    for name, v in (("lambda0", l0), ("lambda_n", ln), ("alpha", alpha), ("m", m), ("lip_f", lip_f)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    l0s, lns = l0 * l0, ln * ln
    return (1.0 / (alpha * math.sqrt(m))) * (l0s / lns) / lip_f ** 2 \
        * ((1 - rho) * lns + rho) ** 2 / ((1 - rho) * l0s + rho)


def alpha_over(L, mu, nu, delta0, lambda0, lambda_n, rho) -> float:
    """Smallest scaling keeping the continuous damped flow inside the radius-r0 ball."""
    l0s, lns = lambda0 ** 2, lambda_n ** 2
    return (L * mu * math.sqrt(2 * delta0) / nu ** 1.5) * (lambda_n / lambda0 ** 3) \
        * ((1 - rho) * l0s + rho) / ((1 - rho) * lns + rho)


def alpha_discrete(L, mu, nu, delta0, lambda0, lambda_n, rho, m, n, sigma2, lip_f, lip_g) -> float:
    first = alpha_over(L, mu, nu, delta0, lambda0, lambda_n, rho) / math.sqrt(m)
    second = sigma2 * math.sqrt(n) * lip_g / (mu * lip_f ** 2 * math.sqrt(m))
    return max(first, second)


def alpha_under(L, mu, nu, delta0, lambda0, r) -> float:
    """Scaling for which the undamped flow never leaves the radius-2 r lambda0 / L ball."""
    if not 0.0 < r < 1.0:
        raise ValueError(f"r must lie in (0, 1), got {r}")
    return (L * mu / (r * (1 - r) * lambda0 ** 2)) * math.sqrt(delta0) / (2 * math.sqrt(2 * nu ** 3))


def recommended_alpha(regime: str, spectral: diag.SpectralReport, rho: float, nu: float, mu: float,
                      delta0: float, L: float | None = None, r: float | None = None,
                      m: int | None = None, **discrete) -> float:
    """Scaling-factor threshold for the given regime.

    ``regime`` is ``"over"`` (continuous damped flow), ``"discrete"`` (needs
    ``n``, ``sigma2``, ``lip_f``, ``lip_g`` keywords as well as ``m``) or
    ``"under"`` (undamped flow, needs ``r``).
    """
    L = spectral.L if L is None else L
    l0, ln = spectral.lambda0, spectral.lambda_n
    for name, v in (("lambda0", l0), ("lambda_n", ln), ("L", L), ("nu", nu), ("mu", mu)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    if delta0 < 0:
        raise ValueError("delta0 must be nonnegative")
    if regime == "under":
        if r is None:
            raise ValueError("the underparameterized threshold needs r")
        return alpha_under(L, mu, nu, delta0, l0, r)
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    if regime == "over":
        return alpha_over(L, mu, nu, delta0, l0, ln, rho)
    if regime == "discrete":
        if m is None:
            raise ValueError("the discrete threshold needs m")
        return alpha_discrete(L, mu, nu, delta0, l0, ln, rho, m, discrete["n"], discrete["sigma2"],
                              discrete["lip_f"], discrete["lip_g"])
    raise ValueError(f"unknown regime {regime!r}")


COLUMNS = ("step", "t", "loss", "gap", "dev_norm", "rgrad_norm",
           "lambda_min_gram", "lambda_max_gram", "lambda_min_kernel", "exited")


@dataclass
class TrajectoryRecord:
    """Per-step time series of one trajectory plus a short summary.

    ``stop_reason`` is ``"horizon"``, ``"exit"`` (halt policy),
    ``"diverged"`` or ``"error"``.
    """

    step: np.ndarray
    t: np.ndarray
    loss: np.ndarray
    gap: np.ndarray
    dev_norm: np.ndarray
    rgrad_norm: np.ndarray
    lambda_min_gram: np.ndarray
    lambda_max_gram: np.ndarray
    lambda_min_kernel: np.ndarray
    exited: np.ndarray
    w_final: np.ndarray
    delta_final: np.ndarray
    exit_step: int | None = None
    exit_time: float | None = None
    stop_reason: str = "horizon"
    events: list = field(default_factory=list)

    def __len__(self):
        return int(self.step.size)

    def columns(self) -> dict:
        return {name: getattr(self, name) for name in COLUMNS}

    def with_optimum(self, optimum: float) -> "TrajectoryRecord":
        """Copy with the gap recomputed against a new optimal loss value."""
        return replace(self, gap=self.loss - optimum)


def _record_row(rows, k, t, delta, model, loss, alpha, optimum):
    psi = alpha * centered_output(model, delta=delta)
    g = loss.grad(psi)
    D = jacobian(model, w=model.w_init + delta)
    gev, kev = spectrum(D)
    val = loss.value(psi)
    rows.append([k, t, val, val - optimum, float(np.linalg.norm(delta)),
                 diag.tangent_grad_norm(D, g), gev[0], gev[-1], kev[0], 0])
    return D


def run_trajectory(cfg: FlowConfig, params: NetworkParams, dataset=None,
                   loss: QuadraticLoss | None = None) -> TrajectoryRecord:
    """Integrate the configured dynamics from ``params.w`` and record every step.

    ``params`` must be bound to the training features; ``loss`` defaults to
    the quadratic loss on ``dataset.y``.  The state is the displacement from
    ``w_init``.  Under the flag-and-continue policy a singular preconditioner
    is replaced by the floored fallback and the run goes on; under the halt
    policy the run stops at the first exit.
    """
    if loss is None:
        if dataset is None:
            raise ValueError("need a dataset or a loss")
        loss = QuadraticLoss(dataset.y)
    if params.X is None:
        raise ValueError("params are not bound to a dataset")
    alpha, dt = cfg.alpha, cfg.time_step
    scale = cfg.step_scale
    w0 = params.w_init
    delta = params.w - w0
    rows: list = []
    events: list = []
    exited = False
    exit_step = exit_time = None
    stop = "horizon"

    for k in range(cfg.n_steps + 1):
        t = k * dt
        D = _record_row(rows, k, t, delta, params, loss, alpha, cfg.optimum)
        dev = rows[-1][4]
        singular = None
        direction = None
        if k < cfg.n_steps:
            try:
                direction, _ = gn_direction(w0 + delta, cfg.rho, alpha, params, loss, D=D, delta=delta)
            except SingularPreconditioner as exc:
                singular = exc
        if not exited and (dev >= cfg.exit_radius or singular is not None):
            exited = True
            exit_step, exit_time = k, t
            why = "singular preconditioner" if singular is not None else "left exit ball"
            events.append(f"step {k}: exit ({why})")
        rows[-1][9] = int(exited)
        if k == cfg.n_steps:
            break
        if exited and cfg.exit_policy == HALT:
            stop = "exit"
            break
        if singular is not None:
            direction, pre = gn_direction(w0 + delta, cfg.rho, alpha, params, loss,
                                          allow_fallback=True, D=D, delta=delta)
            events.append(f"step {k}: fallback factorization ({pre.fallback_reason})")
        delta = delta - scale * direction
        if not np.all(np.isfinite(delta)):
            events.append(f"step {k}: non-finite weights, run stopped")
            stop = "diverged"
            break

    arr = np.array(rows, dtype=float)
    cols = {name: arr[:, i] for i, name in enumerate(COLUMNS)}
    cols["step"] = cols["step"].astype(int)
    cols["exited"] = cols["exited"].astype(int)
    return TrajectoryRecord(**cols, w_final=w0 + delta, delta_final=delta, exit_step=exit_step,
                            exit_time=exit_time, stop_reason=stop, events=events)


def refine_in_class_optimum(params: NetworkParams, loss: QuadraticLoss, alpha: float, delta_start,
                            max_iter: int = 200, tol: float = 1e-15) -> tuple[float, np.ndarray]:
    """Polish a near-stationary point of w -> g(alpha f(w)) with full undamped GN steps.

    Starts from the displacement ``delta_start = w - w_init`` and returns the
    loss at the polished point (the in-class optimum estimate) together with
    the polished displacement.  Intended for the underparameterized regime,
    where the optimum over reachable outputs is not known in advance.
    """
    delta = np.asarray(delta_start, dtype=float).copy()
    y = loss.y
    best = loss.value(alpha * centered_output(params, delta=delta))
    for _ in range(max_iter):
        r = alpha * centered_output(params, delta=delta) - y
        D = jacobian(params, w=params.w_init + delta)
        step, *_ = np.linalg.lstsq(alpha * D, r, rcond=None)
        cand = delta - step
        val = loss.value(alpha * centered_output(params, delta=cand))
        if val > best:
            break
        improved = best - val
        delta, best = cand, val
        if improved <= tol * max(best, 1.0):
            break
    return best, delta
