"""Exception hierarchy shared by all hetar modules."""

from __future__ import annotations

import numpy as np


class HetarError(Exception):
    """Base class for every error raised by hetar."""


class DimensionMismatch(HetarError, ValueError):
    pass


class NotPositiveDefinite(HetarError, np.linalg.LinAlgError):
    """A system matrix failed Cholesky factorization.

    Raised when a Gram-plus-penalty matrix is not numerically positive
    definite, which usually means a zero penalty on a rank-deficient design.
    """


class ConvergenceFailure(HetarError, np.linalg.LinAlgError):
    pass


class NonFiniteWeights(HetarError, FloatingPointError):
    """exp(Z beta) overflowed while building the variance weights."""


class QuadratureFailure(HetarError, RuntimeError):
    pass


class InvalidFolds(HetarError, ValueError):
    pass


class AllPointsFailed(HetarError, RuntimeError):
    pass


class ConfigError(HetarError, ValueError):
    pass


class DataError(HetarError, ValueError):
    """Base class for problems with user supplied data files."""


class ParseError(DataError):
    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class MissingValue(ParseError):
    pass


class ConstantVarianceColumn(DataError):
    pass


class SchemaMismatch(DataError):
    pass


class IllConditionedWarning(UserWarning):
    """Condition number estimate of a system matrix exceeded the guard.

    The estimate is available as the ``condition`` attribute.
    """

    condition: float = float("nan")
