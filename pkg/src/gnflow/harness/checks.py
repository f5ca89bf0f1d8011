"""Self-check suites run by ``gnflow check``.

Each suite draws its own seeded instances and returns a :class:`SuiteResult`.
``jacobian_fn`` can be swapped to confirm that a broken Jacobian is caught.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..diagnostics import riemannian_grad_norm
from ..dynamics import QuadraticLoss, gn_direction
from ..linalg import output_operator_apply, precond_solve, precond_solve_smw, projection_apply
from ..network import bind, centered_output, fd_jacobian, init_params, jacobian

LEVELS = {"quick": 10, "full": 50}


@dataclass
class SuiteResult:
    name: str
    passed: bool
    worst: float
    tol: float
    seconds: float
    detail: str = ""

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag} {self.name:<14} worst={self.worst:.3e} tol={self.tol:.0e} ({self.seconds:.2f}s) {self.detail}"


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def suite_smw(count: int, rng) -> tuple[float, float, str]:
    worst = 0.0
    for n, p in ((8, 24), (24, 8)):
        for _ in range(count):
            D = rng.standard_normal((n, p))
            rhs = rng.standard_normal(p)
            for rho in (0.1, 0.5, 0.9):
                worst = max(worst, _rel(precond_solve_smw(D, rho, rhs), precond_solve(D, rho, rhs)))
    return worst, 1e-8, f"{2 * count * 3} solves"


def suite_projection(count: int, rng) -> tuple[float, float, str]:
    worst = 0.0
    for _ in range(count):
        n = int(rng.integers(4, 12))
        p = int(rng.integers(1, n))
        D = rng.standard_normal((n, p))
        u, v = rng.standard_normal(n), rng.standard_normal(n)
        Pv = projection_apply(D, v)
        z, *_ = np.linalg.lstsq(D, v, rcond=None)
        worst = max(worst,
                    np.linalg.norm(projection_apply(D, Pv) - Pv),
                    abs(projection_apply(D, u) @ v - u @ Pv),
                    max(np.linalg.norm(Pv) - np.linalg.norm(v), 0.0),
                    np.linalg.norm(Pv - D @ z))
    return worst, 1e-10, f"{count} instances"


def suite_eigenmap(count: int, rng) -> tuple[float, float, str]:
    worst = 0.0
    for _ in range(count):
        n, p = (6, 15) if rng.random() < 0.5 else (10, 4)
        D = rng.standard_normal((n, p))
        gam, U = np.linalg.eigh(D @ D.T)
        rho = float(rng.uniform(0.05, 0.95))
        for g, u in zip(gam, U.T):
            if g <= 1e-12:
                continue
            err = np.linalg.norm(output_operator_apply(D, rho, u) - g / ((1 - rho) * g + rho) * u)
            worst = max(worst, err)
    return worst, 1e-8, f"{count} kernels"


def suite_jacobian_fd(count: int, rng, jacobian_fn=jacobian) -> tuple[float, float, str]:
    worst = 0.0
    for _ in range(count):
        m, d, n = (int(rng.integers(1, 5)), int(rng.integers(1, 6)), int(rng.integers(1, 7)))
        params = init_params(int(rng.integers(2**31)), m, d)
        X = rng.standard_normal((n, d))
        J = jacobian_fn(params, X)
        F = fd_jacobian(params, X, h=1e-5)
        worst = max(worst, float(np.max(np.abs(J - F)) / (1.0 + np.max(np.abs(J)))))
    return worst, 1e-5, f"{count} configurations"


def _edi_residual(params, loss, alpha, dt):
    w = params.w
    psi = alpha * centered_output(params, w)
    g = loss.grad(psi)
    D = jacobian(params)
    direction, _ = gn_direction(w, 0.0, alpha, params, loss, D=D)
    w1 = w - (dt / alpha) * direction
    g1 = loss.value(alpha * centered_output(params, w1))
    return (g1 - loss.value(psi)) / dt + riemannian_grad_norm(D, g) ** 2


def suite_edi(count: int, rng) -> tuple[float, float, str]:
    """Step halving must halve the energy-dissipation residual (first-order Euler)."""
    worst = 0.0
    reps = max(2, count // 5)
    for _ in range(reps):
        n, m, d = 20, 2, 3
        X = rng.standard_normal((n, d))
        base = bind(init_params(int(rng.integers(2**31)), m, d), X)
        params = base.with_weights(base.w + 0.3 * rng.standard_normal(base.p))
        loss = QuadraticLoss(rng.standard_normal(n))
        r1 = _edi_residual(params, loss, 1.0, 1e-3)
        r2 = _edi_residual(params, loss, 1.0, 5e-4)
        worst = max(worst, abs(r1 / r2 - 2.0))
    return worst, 0.2, f"|ratio - 2| over {reps} states"


def check(level: str = "quick", seed: int = 0, jacobian_fn=None) -> list[SuiteResult]:
    """Run all suites; ``level`` sets the number of random instances per suite."""
    if level not in LEVELS:
        raise ValueError(f"unknown level {level!r}; choose from {sorted(LEVELS)}")
    count = LEVELS[level]
    suites = [
        ("smw", suite_smw),
        ("projection", suite_projection),
        ("eigen-map", suite_eigenmap),
        ("jacobian-fd", lambda c, r: suite_jacobian_fd(c, r, jacobian_fn or jacobian)),
        ("edi-residual", suite_edi),
    ]
    results = []
    for k, (name, fn) in enumerate(suites):
        rng = np.random.default_rng([seed, k])
        t0 = time.perf_counter()
        try:
            worst, tol, detail = fn(count, rng)
            ok = bool(np.isfinite(worst) and worst < tol)
        except Exception as exc:
            worst, tol, detail, ok = float("nan"), float("nan"), f"raised {type(exc).__name__}: {exc}", False
        results.append(SuiteResult(name, ok, float(worst), tol, time.perf_counter() - t0, detail))
    return results
