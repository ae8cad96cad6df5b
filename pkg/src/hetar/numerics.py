"""Dense linear algebra helpers.

All closed-form estimators in this package reduce to a symmetric positive
definite solve of the form ``(G + P) x = r`` with ``G`` a (weighted) Gram
matrix and ``P`` a non-negative diagonal penalty.  The helpers here keep that
path in one place: a Cholesky factorization that fails loudly on a
non-positive pivot, a cheap condition estimate, and an exactly symmetric Gram
accumulator.
"""

from __future__ import annotations

import warnings

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import cho_factor, cho_solve
from scipy.linalg.lapack import dpocon

from .errors import (
    ConvergenceFailure,
    DimensionMismatch,
    IllConditionedWarning,
    NotPositiveDefinite,
)

CONDITION_WARN = 1e12


def _symmetric_from_upper(a: NDArray[np.float64]) -> NDArray[np.float64]:
    upper = np.triu(a)
    return upper + np.triu(a, 1).T


def solve_spd(
    A: ArrayLike, B: ArrayLike, *, check_condition: bool = True
) -> NDArray[np.float64]:
    """Solve ``A X = B`` for symmetric positive definite ``A``.

    Uses a pivot-free Cholesky factorization; no inverse is formed.

    Parameters
    ----------
    A : (m, m) array_like
        Symmetric positive definite matrix.  Only the upper triangle is read.
    B : (m,) or (m, k) array_like
        Right-hand side(s).
    check_condition : bool
        If True, emit :class:`IllConditionedWarning` when the 1-norm condition
        estimate exceeds ``1e12``.

    Raises
    ------
    NotPositiveDefinite
        If the factorization meets a non-positive pivot.
    DimensionMismatch
        If shapes are incompatible.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"A must be square, got shape {A.shape}")
    if B.shape[0] != A.shape[0]:
        raise DimensionMismatch(
            f"B has {B.shape[0]} rows but A has order {A.shape[0]}"
        )
    m = A.shape[0]
    if m == 0:
        return np.zeros_like(B)
    if not np.all(np.isfinite(A)):
        raise NotPositiveDefinite("system matrix contains non-finite entries")
    try:
        c, lower = cho_factor(A, lower=False, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    if check_condition:
        anorm = np.max(np.sum(np.abs(_symmetric_from_upper(A)), axis=0))
        rcond, info = dpocon(c, anorm)
        if info == 0 and (rcond == 0.0 or 1.0 / rcond > CONDITION_WARN):
            # constant text so the default filter reports it once per call site
            w = IllConditionedWarning(f"system matrix condition estimate exceeds {CONDITION_WARN:.0e}")
            w.condition = 1.0 / max(rcond, 1e-300)
            warnings.warn(w, stacklevel=2)
    return cho_solve((c, lower), B, check_finite=False)


def condition_estimate(A: ArrayLike) -> float:
    """1-norm condition number estimate of an SPD matrix (inf if singular)."""
    A = np.asarray(A, dtype=np.float64)
    try:
        c, _ = cho_factor(A, lower=False, check_finite=False)
    except np.linalg.LinAlgError:
        return float("inf")
    anorm = np.max(np.sum(np.abs(_symmetric_from_upper(A)), axis=0))
    rcond, _ = dpocon(c, anorm)
    return float("inf") if rcond == 0.0 else float(1.0 / rcond)


def eigen_extremes(A: ArrayLike) -> tuple[float, float]:
    """Return ``(lambda_min, lambda_max)`` of a symmetric matrix."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"A must be square, got shape {A.shape}")
    if A.shape[0] == 0:
        raise DimensionMismatch("empty matrix has no eigenvalues")
    try:
        w = np.linalg.eigvalsh(A)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from None
    return float(w[0]), float(w[-1])


def weighted_gram(X: ArrayLike, w: ArrayLike | None = None) -> NDArray[np.float64]:
    """Return ``X^T diag(w) X`` (not divided by n).

    The upper triangle is computed and mirrored so the result is exactly
    symmetric.  ``w=None`` gives the plain Gram matrix.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch(f"X must be 2-d, got shape {X.shape}")
    if w is None:
        G = X.T @ X
    else:
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (X.shape[0],):
            raise DimensionMismatch(
                f"weights have shape {w.shape}, expected ({X.shape[0]},)"
            )
        G = (X * w[:, None]).T @ X
    return _symmetric_from_upper(G)
