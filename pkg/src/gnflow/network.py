"""Two-layer smooth-activation network with a fixed output layer.

The model evaluated at a sample ``x`` is

    phi(x; w) = sum_i c_i * sigma(x . w_i)

with fixed signs ``c_i`` in {-1, +1} and trainable blocks ``w_i`` in R^d.
The trainable weights are stored as one flat vector of length ``p = m * d``
whose ``i``-th contiguous slice ``w[i*d:(i+1)*d]`` is the block of hidden
unit ``i``.  The centered output ``f(w) = phi(w) - phi(w_init)`` vanishes at
initialization.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

__all__ = [
    "ActivationSpec",
    "Dataset",
    "NetworkParams",
    "TANH",
    "LINEAR",
    "init_params",
    "bind",
    "forward",
    "centered_output",
    "jacobian",
    "fd_jacobian",
    "lipschitz_output_bound",
]


def _tanh_d1(z):
    t = np.tanh(z)
    return 1.0 - t * t


def _tanh_d2(z):
    t = np.tanh(z)
    return -2.0 * t * (1.0 - t * t)


def _tanh_increment(z0, dz):
    # tanh(z0 + dz) - tanh(z0) without cancellation when dz is small
    return np.tanh(dz) * (1.0 - np.tanh(z0 + dz) * np.tanh(z0))


def _max_abs_tanh_d2(lo: float = -5.0, hi: float = 5.0, n_grid: int = 20001) -> float:
    """Grid-maximize |tanh''| on [lo, hi], then polish the best grid point."""
    z = np.linspace(lo, hi, n_grid)
    vals = np.abs(_tanh_d2(z))
    k = int(np.argmax(vals))
    step = z[1] - z[0]
    a, b = z[max(k - 1, 0)], z[min(k + 1, n_grid - 1)]
    res = minimize_scalar(
        lambda s: -abs(_tanh_d2(s)), bounds=(a, b), method="bounded",
        options={"xatol": 1e-14 * max(1.0, step)},
    )
    return float(max(vals[k], -res.fun))


@dataclass(frozen=True)
class ActivationSpec:
    """Scalar activation with sup-norm bounds on it and its first two derivatives."""

    kind: str
    sigma0: float
    sigma1: float
    sigma2: float
    fn: Callable = field(repr=False, compare=False)
    d1: Callable = field(repr=False, compare=False)
    d2: Callable = field(repr=False, compare=False)
    increment: Callable | None = field(default=None, repr=False, compare=False)

    def diff(self, z0, dz):
        """sigma(z0 + dz) - sigma(z0)."""
        if self.increment is not None:
            return self.increment(z0, dz)
        return self.fn(z0 + dz) - self.fn(z0)


TANH = ActivationSpec(
    kind="tanh", sigma0=1.0, sigma1=1.0, sigma2=_max_abs_tanh_d2(),
    fn=np.tanh, d1=_tanh_d1, d2=_tanh_d2, increment=_tanh_increment,
)

# Test-only: exact derivatives make Jacobian assembly checkable without FD noise.
LINEAR = ActivationSpec(
    kind="linear", sigma0=np.inf, sigma1=1.0, sigma2=0.0,
    fn=lambda z: np.asarray(z, dtype=float),
    d1=lambda z: np.ones_like(np.asarray(z, dtype=float)),
    d2=lambda z: np.zeros_like(np.asarray(z, dtype=float)),
    increment=lambda z0, dz: np.asarray(dz, dtype=float),
)


@dataclass(frozen=True)
class Dataset:
    """Standardized features ``X`` (n x d), targets ``y`` (n,) and the scaling used."""

    X: np.ndarray
    y: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError(f"X must be a non-empty 2-D array, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ValueError(f"y must have shape ({X.shape[0]},), got {y.shape}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains missing or non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class NetworkParams:
    """Signs ``c``, current weights ``w`` and the frozen initialization.

    ``X`` and ``phi_init`` are set by :func:`bind`; unbound params can still
    be evaluated with :func:`forward` and :func:`jacobian`.
    """

    c: np.ndarray
    w: np.ndarray
    w_init: np.ndarray
    activation: ActivationSpec = TANH
    X: np.ndarray | None = field(default=None, repr=False)
    phi_init: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        w = np.asarray(self.w, dtype=float)
        if not np.all(np.abs(c) == 1.0):
            raise ValueError("output signs must be +1 or -1")
        if w.ndim != 1 or w.size % c.size:
            raise ValueError(f"weight length {w.size} is not a multiple of m={c.size}")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "w", w)

    @property
    def m(self) -> int:
        return self.c.size

    @property
    def d(self) -> int:
        return self.w.size // self.c.size

    @property
    def p(self) -> int:
        return self.w.size

    @property
    def blocks(self) -> np.ndarray:
        """Weights as an (m, d) view; row ``i`` is hidden unit ``i``."""
        return self.w.reshape(self.m, self.d)

    def with_weights(self, w) -> "NetworkParams":
        w = np.array(w, dtype=float)
        if w.shape != self.w.shape:
            raise ValueError(f"expected weights of shape {self.w.shape}, got {w.shape}")
        return replace(self, w=w)


def init_params(seed: int, m: int, d: int, activation: ActivationSpec = TANH) -> NetworkParams:
    """Random symmetric initialization.

    Draw order from ``numpy.random.default_rng(seed)``: the ``m`` signs first,
    then the standard-normal blocks ``w_1, ..., w_m`` in unit order.
    """
    if int(m) != m or m < 1 or int(d) != d or d < 1:
        raise ValueError(f"m and d must be positive integers, got m={m}, d={d}")
    m, d = int(m), int(d)
    rng = np.random.default_rng(seed)
    c = 2.0 * rng.integers(0, 2, size=m) - 1.0
    w = rng.standard_normal((m, d)).ravel()
    return NetworkParams(c=c, w=w, w_init=w.copy(), activation=activation)


def _check_X(params: NetworkParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.d:
        raise ValueError(f"X must have {params.d} columns, got shape {X.shape}")
    return X


def _preact(params: NetworkParams, X: np.ndarray, w=None) -> np.ndarray:
    W = params.blocks if w is None else np.asarray(w, dtype=float).reshape(params.m, params.d)
    return X @ W.T


def forward(params: NetworkParams, X, w=None) -> np.ndarray:
    """Raw network output phi(w) on the rows of ``X``."""
    X = _check_X(params, X)
    return params.activation.fn(_preact(params, X, w)) @ params.c


def bind(params: NetworkParams, X) -> NetworkParams:
    """Attach a dataset and cache phi(w_init) so that f(w_init) = 0."""
    X = _check_X(params, X)
    phi0 = forward(params, X, params.w_init)
    return replace(params, X=X, phi_init=phi0)


def centered_output(params: NetworkParams, w=None, *, delta=None) -> np.ndarray:
    """f(w) = phi(w) - phi(w_init) on the bound dataset.

    Passing the displacement ``delta = w - w_init`` instead of ``w`` evaluates
    the difference unit by unit, keeping full relative precision when the
    weights have barely moved.
    """
    if params.X is None or params.phi_init is None:
        raise ValueError("params are not bound to a dataset; call bind() first")
    if delta is None:
        return forward(params, params.X, w) - params.phi_init
    delta = np.asarray(delta, dtype=float)
    if delta.shape != params.w_init.shape:
        raise ValueError(f"displacement must have shape {params.w_init.shape}")
    Z0 = _preact(params, params.X, params.w_init)
    dZ = _preact(params, params.X, delta)
    return params.activation.diff(Z0, dZ) @ params.c


def jacobian(params: NetworkParams, X=None, w=None) -> np.ndarray:
    """Exact n x p Jacobian of the output with respect to the flat weights.

    Row ``j``, block ``i`` equals ``c_i * sigma'(x_j . w_i) * x_j``.
    """
    X = params.X if X is None else X
    if X is None:
        raise ValueError("no feature matrix given and params are not bound")
    X = _check_X(params, X)
    S = params.activation.d1(_preact(params, X, w)) * params.c  # (n, m)
    n = X.shape[0]
    return (S[:, :, None] * X[:, None, :]).reshape(n, params.p)


def fd_jacobian(params: NetworkParams, X=None, h: float = 1e-5, w=None) -> np.ndarray:
    """Central-difference Jacobian; a test oracle for :func:`jacobian`."""
    if h <= 0:
        raise ValueError("step h must be positive")
    X = params.X if X is None else X
    X = _check_X(params, X)
    w0 = params.w if w is None else np.asarray(w, dtype=float)
    J = np.empty((X.shape[0], w0.size))
    for k in range(w0.size):
        wp = w0.copy()
        wm = w0.copy()
        wp[k] += h
        wm[k] -= h
        J[:, k] = (forward(params, X, wp) - forward(params, X, wm)) / (2.0 * h)
    return J


def lipschitz_output_bound(X, m: int, activation: ActivationSpec = TANH) -> float:
    """Upper bound sigma1 * sqrt(m * sum_j ||x_j||^2) on the Lipschitz modulus of f."""
    X = np.asarray(X, dtype=float)
    return float(activation.sigma1 * np.sqrt(m * np.sum(X * X)))
