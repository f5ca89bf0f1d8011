"""Dense matrix kernels behind the Gauss-Newton dynamics.

All routines take the Jacobian ``D`` (n x p) explicitly.  The damped
preconditioner is ``H = (1 - rho) D^T D + rho I``; with ``rho0 = rho/(1-rho)``
it admits the dual form

    H^{-1} = (1/rho) [I - rho0^{-1} D^T (I + rho0^{-1} D D^T)^{-1} D]

which only factors an n x n matrix and is the cheap route when p > n.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigh

log = logging.getLogger(__name__)

#: lambda_min(D^T D) <= SINGULAR_RTOL * lambda_max(D^T D) is treated as singular when rho = 0.
SINGULAR_RTOL = 1e-10
#: eigenvalue floor (relative to trace/p) used by the fallback factorization.
FLOOR_RTOL = 1e-12
SYMMETRY_TOL = 1e-10


class SingularPreconditioner(LinAlgError):
    """The undamped Gauss-Newton matrix is (numerically) singular."""


def _check_rho(rho: float) -> float:
    rho = float(rho)
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"damping rho must lie in [0, 1], got {rho}")
    return rho


def gram(D) -> np.ndarray:
    """D^T D (p x p)."""
    D = np.asarray(D, dtype=float)
    return D.T @ D


def kernel(D) -> np.ndarray:
    """D D^T (n x n), the empirical tangent kernel."""
    D = np.asarray(D, dtype=float)
    return D @ D.T


def sym_eig_extremes(A) -> tuple[float, float]:
    """(lambda_min, lambda_max) of a symmetric matrix via a full eigendecomposition."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if np.max(np.abs(A - A.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise ValueError("matrix is not symmetric")
    ev = np.linalg.eigvalsh(0.5 * (A + A.T))
    return float(ev[0]), float(ev[-1])


class DampedPreconditioner:
    """Factorization of ``H = (1 - rho) D^T D + rho I`` for repeated solves.

    ``mode`` is ``"direct"`` (p x p Cholesky), ``"smw"`` (n x n dual system,
    requires 0 < rho < 1) or ``"auto"``: identity for rho = 1, the dual system
    when p > n and rho in (0, 1), direct otherwise.

    With ``allow_fallback=True`` a failed or singular factorization is
    replaced by an eigendecomposition whose eigenvalues are floored at
    ``FLOOR_RTOL * trace(H) / p``; ``used_fallback`` records the event.
    """

    def __init__(self, D, rho: float, mode: str = "auto", allow_fallback: bool = False):
        D = np.asarray(D, dtype=float)
        if D.ndim != 2 or min(D.shape) < 1:
            raise ValueError(f"Jacobian must be a non-empty 2-D array, got shape {D.shape}")
        if not np.all(np.isfinite(D)):
            raise ValueError("Jacobian has non-finite entries")
        rho = _check_rho(rho)
        n, p = D.shape
        if mode == "auto":
            if rho == 1.0:
                mode = "identity"
            elif rho > 0.0 and p > n:
                mode = "smw"
            else:
                mode = "direct"
        if mode == "smw" and not 0.0 < rho < 1.0:
            raise ValueError(f"the dual (SMW) route needs rho in (0, 1), got {rho}")
        if mode not in ("identity", "direct", "smw"):
            raise ValueError(f"unknown preconditioner mode {mode!r}")
        self.D, self.rho, self.mode = D, rho, mode
        self.n, self.p = n, p
        self.used_fallback = False
        self.fallback_reason = None
        self._chol = None
        self._eig = None
        if mode == "direct":
            self._factor_direct(allow_fallback)
        elif mode == "smw":
            self.rho0 = rho / (1.0 - rho)
            S = np.eye(n) + (D @ D.T) / self.rho0
            self._chol = cho_factor(S, lower=True)

    def _factor_direct(self, allow_fallback: bool):
        H = (1.0 - self.rho) * gram(self.D)
        H[np.diag_indices_from(H)] += self.rho
        try:
            if self.rho == 0.0:
                ev = np.linalg.eigvalsh(H)
                if ev[0] <= SINGULAR_RTOL * max(ev[-1], 0.0):
                    raise SingularPreconditioner(
                        f"lambda_min(D^T D) = {ev[0]:.3e} <= {SINGULAR_RTOL:g} * "
                        f"lambda_max = {ev[-1]:.3e}"
                    )
            self._chol = cho_factor(H, lower=True)
        except LinAlgError as exc:
            if not allow_fallback:
                if isinstance(exc, SingularPreconditioner):
                    raise
                raise SingularPreconditioner(str(exc)) from exc
            lam, V = eigh(H)
            floor = FLOOR_RTOL * max(np.trace(H), np.finfo(float).tiny) / self.p
            self._eig = (np.maximum(lam, floor), V)
            self.used_fallback = True
            self.fallback_reason = str(exc)
            log.debug("preconditioner fell back to floored eigendecomposition: %s", exc)

    def solve(self, rhs) -> np.ndarray:
        """H^{-1} rhs."""
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.p:
            raise ValueError(f"rhs has leading dimension {rhs.shape[0]}, expected {self.p}")
        if self.mode == "identity":
            return rhs.copy()
        if self.mode == "smw":
            D = self.D
            inner = cho_solve(self._chol, D @ rhs)
            return (rhs - (D.T @ inner) / self.rho0) / self.rho
        if self._eig is not None:
            lam, V = self._eig
            return V @ ((V.T @ rhs) / (lam if rhs.ndim == 1 else lam[:, None]))
        return cho_solve(self._chol, rhs)

    def solve_sq(self, rhs) -> np.ndarray:
        """H^{-2} rhs (two successive solves)."""
        return self.solve(self.solve(rhs))


def precond_solve(D, rho: float, rhs, allow_fallback: bool = False) -> np.ndarray:
    """H_rho^{-1} rhs through a p x p Cholesky factorization.

    Raises :class:`SingularPreconditioner` when ``rho = 0`` and the Gram matrix
    is numerically singular, unless ``allow_fallback`` is set.
    """
    rho = _check_rho(rho)
    mode = "identity" if rho == 1.0 else "direct"
    return DampedPreconditioner(D, rho, mode=mode, allow_fallback=allow_fallback).solve(rhs)


def precond_solve_smw(D, rho: float, rhs) -> np.ndarray:
    """H_rho^{-1} rhs through the n x n system ``I + rho0^{-1} D D^T``."""
    rho = float(rho)
    if not 0.0 < rho < 1.0:
        raise ValueError(f"the dual (SMW) route needs rho in (0, 1), got {rho}")
    return DampedPreconditioner(D, rho, mode="smw").solve(rhs)


def precond_solve_sq(D, rho: float, rhs, allow_fallback: bool = False) -> np.ndarray:
    """H_rho^{-2} rhs."""
    rho = _check_rho(rho)
    mode = "identity" if rho == 1.0 else "direct"
    return DampedPreconditioner(D, rho, mode=mode, allow_fallback=allow_fallback).solve_sq(rhs)


def output_operator_apply(D, rho: float, v, mode: str = "auto") -> np.ndarray:
    """D H_rho^{-1} D^T v, the operator driving the flow of the network output."""
    D = np.asarray(D, dtype=float)
    v = np.asarray(v, dtype=float)
    return D @ DampedPreconditioner(D, rho, mode=mode).solve(D.T @ v)


def projection_apply(D, v) -> np.ndarray:
    """Orthogonal projection D (D^T D)^{-1} D^T v onto the column space of D.

    Requires full column rank; raises :class:`SingularPreconditioner` otherwise.
    """
    D = np.asarray(D, dtype=float)
    v = np.asarray(v, dtype=float)
    return D @ DampedPreconditioner(D, 0.0, mode="direct").solve(D.T @ v)


def spectrum(D) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues of (D^T D, D D^T) from one singular value decomposition.

    The larger of the two matrices gets ``|n - p|`` exact zeros.
    """
    D = np.asarray(D, dtype=float)
    n, p = D.shape
    s2 = np.sort(np.linalg.svd(D, compute_uv=False) ** 2)
    pad = np.zeros(abs(n - p))
    g = np.concatenate([pad, s2]) if p > n else s2
    k = np.concatenate([pad, s2]) if n > p else s2
    return g, k
