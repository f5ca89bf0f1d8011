"""Dataset ingestion, standardization and controlled synthetic problems."""

from __future__ import annotations

import csv
import logging
import math
from pathlib import Path

import numpy as np
from scipy.stats import random_correlation

from ..network import Dataset

log = logging.getLogger(__name__)


class DataError(ValueError):
    """Raised for unreadable or malformed input data."""


def standardize(X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Center each column and divide by its population standard deviation."""
    X = np.asarray(X, dtype=float)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    bad = np.flatnonzero(scale <= 1e-12 * np.maximum(1.0, np.abs(mean)))
    if bad.size:
        raise DataError(f"zero-variance feature column(s) at index {bad.tolist()}")
    return (X - mean) / scale, mean, scale


def load_csv(path, target_column: str, n_subset: int | None = None, seed: int = 0) -> Dataset:
    """Read a headered numeric CSV, subsample rows without replacement, standardize features.

    Standardization uses the statistics of the selected subset.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        if target_column not in header:
            raise DataError(f"target column {target_column!r} not in header {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
    if not rows:
        raise DataError(f"{path} has no data rows")
    A = np.array(rows, dtype=float)
    if not np.all(np.isfinite(A)):
        raise DataError(f"{path} contains missing or non-finite values")
    N = A.shape[0]
    n = N if n_subset is None else int(n_subset)
    if not 1 <= n <= N:
        raise DataError(f"requested {n} rows but {path} has {N}")
    idx = np.sort(np.random.default_rng(seed).choice(N, size=n, replace=False))
    A = A[idx]
    j = header.index(target_column)
    feats = [h for i, h in enumerate(header) if i != j]
    X, mean, scale = standardize(np.delete(A, j, axis=1))
    meta = {"source": str(path), "target": target_column, "features": feats,
            "rows_available": N, "subset_indices": idx.tolist(), "seed": seed}
    return Dataset(X=X, y=A[:, j], mean=mean, scale=scale, meta=meta)


def _centered_orthonormal(rng, n: int, d: int) -> np.ndarray:
    """n x d matrix with orthonormal columns, all orthogonal to the ones vector."""
    G = rng.standard_normal((n, d + 1))
    G[:, 0] = 1.0
    Q, _ = np.linalg.qr(G)
    return Q[:, 1:]


def synth_dataset(n: int, d: int, min_eig: float = 1.0, seed: int = 0, noise: float = 0.0,
                  teacher_width: int = 4, target_scale: float = 1.0) -> Dataset:
    """Standardized features with a prescribed correlation spectrum, plus teacher targets.

    The feature correlation matrix has smallest eigenvalue ``min_eig`` and the
    remaining ``d - 1`` eigenvalues equal, so columns have mean 0 and
    population standard deviation 1 exactly.  The smallest eigenvalue of the
    initial Gram matrix of a network on these features scales roughly
    linearly with ``min_eig``.  Targets come from a random odd tanh teacher,
    rescaled to standard deviation ``target_scale``, plus Gaussian ``noise``.

    Requests that cannot be met (``min_eig`` outside (0, 1], ``d = 1`` with
    ``min_eig != 1``, ``n <= d``) are clamped; the adjustment is listed in
    ``meta["warnings"]``.
    """
    if n < 1 or d < 1:
        raise ValueError(f"n and d must be positive, got n={n}, d={d}")
    rng = np.random.default_rng(seed)
    warn = []
    lam = float(min_eig)
    if not 0.0 < lam <= 1.0 or (d == 1 and lam != 1.0):
        clamped = 1.0 if d == 1 else min(max(lam, 1e-12), 1.0)
        warn.append(f"min_eig={min_eig} infeasible for d={d}; using {clamped}")
        lam = clamped
    if n > d:
        eigs = np.full(d, (d - lam) / (d - 1)) if d > 1 else np.ones(1)
        eigs[0] = lam
        C = random_correlation.rvs(eigs, random_state=rng) if d > 1 else np.ones((1, 1))
        C = 0.5 * (C + C.T)
        ev, V = np.linalg.eigh(C)
        ev = np.clip(ev, 0.0, None)
        U = _centered_orthonormal(rng, n, d)
        X = math.sqrt(n) * (U * np.sqrt(ev)) @ V.T
    else:
        warn.append(f"n={n} <= d={d}: correlation spectrum not controllable; plain Gaussian features")
        X = rng.standard_normal((n, d))
        X = X - X.mean(axis=0) if n > 1 else X
        s = X.std(axis=0)
        X = X / np.where(s > 0, s, 1.0)
    V_t = rng.standard_normal((teacher_width, d)) / math.sqrt(d)
    a_t = rng.standard_normal(teacher_width)
    y = np.tanh(X @ V_t.T) @ a_t
    sd = y.std()
    y = target_scale * (y / sd if sd > 0 else y)
    if noise:
        y = y + noise * rng.standard_normal(n)
    for msg in warn:
        log.warning(msg)
    meta = {"source": "synthetic", "n": n, "d": d, "min_eig": min_eig, "seed": seed,
            "noise": noise, "teacher_width": teacher_width, "target_scale": target_scale,
            "warnings": warn}
    return Dataset(X=X, y=y, mean=np.zeros(d), scale=np.ones(d), meta=meta)
