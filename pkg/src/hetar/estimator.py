"""Adaptive ridge (AR) and broken adaptive ridge (BAR) estimation.

Model::

    y_i = x_i^T alpha + exp(z_i^T beta / 2) * eps_i

The mean parameters are fitted by (weighted) ridge regressions on ``y`` and
the variance parameters by ridge regressions of the log squared residuals on
the augmented design ``Z* = [Z, 1]``; the trailing coefficient of ``beta_star``
absorbs ``c0 = E[log eps^2]``.  After an initial ridge pair, each AR iteration
reweights the ridge penalty by the inverse squared previous estimate, which
drives the coefficients of inactive covariates towards zero.  BAR runs the
iteration to a numeric fixed point.

Three ways of forming the reweighted systems are offered:

``"direct"``
    ``(X^T W X + diag(lambda / a^2)) alpha = X^T W y``.  Requires every previous
    coefficient to be non-zero.
``"rescaled"`` (default)
    Works with ``X~ = W^{1/2} X diag(|a|)`` so no division by small numbers
    takes place; coordinates that reach exactly zero stay there.
``"perturbed"``
    Direct form with weights ``1 / (a^2 + delta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import (
    DimensionMismatch,
    HetarError,
    NonFiniteWeights,
    NotPositiveDefinite,
)
from .numerics import eigen_extremes, solve_spd, weighted_gram

BAR = "bar"
STABILIZATIONS = ("direct", "rescaled", "perturbed")
RESIDUAL_FLOOR = 1e-150
DEFAULT_THRESHOLD = 1e-4

Penalty = Union[float, Sequence[float]]


class InvalidState(HetarError, ValueError):
    """A previous estimate cannot be used to build adaptive weights."""


def augment_variance_design(Z: ArrayLike) -> NDArray[np.float64]:
    """Append the all-ones column that carries c0."""
    Z = np.asarray(Z, dtype=np.float64)
    return np.hstack([Z, np.ones((Z.shape[0], 1))])


@dataclass(frozen=True, eq=False)
class Dataset:
    """Response with mean design ``X`` (n, p) and variance design ``Z`` (n, q).

    ``Z`` must not contain a constant column: the intercept of the variance
    regression is reserved for c0.
    """

    y: NDArray[np.float64]
    X: NDArray[np.float64]
    Z: NDArray[np.float64]
    x_names: tuple[str, ...] | None = None
    z_names: tuple[str, ...] | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        X = np.asarray(self.X, dtype=np.float64)
        Z = np.asarray(self.Z, dtype=np.float64)
        if y.ndim != 1:
            raise DimensionMismatch(f"y must be 1-d, got shape {y.shape}")
        n = y.shape[0]
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(n, 0)
        if Z.ndim == 1 and Z.size == 0:
            Z = Z.reshape(n, 0)
        if X.ndim != 2 or X.shape[0] != n:
            raise DimensionMismatch(f"X has shape {X.shape}, expected ({n}, p)")
        if Z.ndim != 2 or Z.shape[0] != n:
            raise DimensionMismatch(f"Z has shape {Z.shape}, expected ({n}, q)")
        if not (n > X.shape[1] and n > Z.shape[1]):
            raise DimensionMismatch(
                f"need n > p and n > q, got n={n}, p={X.shape[1]}, q={Z.shape[1]}"
            )
        if Z.shape[1] and np.any(np.ptp(Z, axis=0) == 0):
            bad = np.flatnonzero(np.ptp(Z, axis=0) == 0).tolist()
            raise ValueError(
                f"variance design has constant column(s) {bad}; the variance "
                "intercept is estimated internally and a constant Z column is "
                "not identifiable"
            )
        for name, names, width in (
            ("x_names", self.x_names, X.shape[1]),
            ("z_names", self.z_names, Z.shape[1]),
        ):
            if names is not None and len(names) != width:
                raise DimensionMismatch(f"{name} has {len(names)} labels for {width} columns")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Z", Z)
        if self.x_names is not None:
            object.__setattr__(self, "x_names", tuple(self.x_names))
        if self.z_names is not None:
            object.__setattr__(self, "z_names", tuple(self.z_names))

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Z.shape[1]

    @cached_property
    def Zstar(self) -> NDArray[np.float64]:
        return augment_variance_design(self.Z)

    @cached_property
    def _zstar_gram(self) -> NDArray[np.float64]:
        return weighted_gram(self.Zstar)

    def subset(self, rows: ArrayLike) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.y[rows], self.X[rows], self.Z[rows], self.x_names, self.z_names)

    def with_response(self, y: ArrayLike) -> "Dataset":
        return Dataset(np.asarray(y, dtype=np.float64), self.X, self.Z, self.x_names, self.z_names)


def _as_penalty(value: Penalty) -> float | tuple[float, ...]:
    if np.ndim(value) == 0:
        v = float(value)
        if not (math.isfinite(v) and v >= 0):
            raise ValueError(f"penalties must be finite and >= 0, got {v}")
        return v
    vals = tuple(float(v) for v in np.asarray(value, dtype=np.float64).ravel())
    if not all(math.isfinite(v) and v >= 0 for v in vals):
        raise ValueError(f"penalties must be finite and >= 0, got {vals}")
    return vals


def _expand(value: float | tuple[float, ...], size: int, name: str) -> NDArray[np.float64]:
    if isinstance(value, tuple):
        if len(value) != size:
            raise DimensionMismatch(f"{name} has {len(value)} entries, expected {size}")
        return np.array(value, dtype=np.float64)
    return np.full(size, value, dtype=np.float64)


@dataclass(frozen=True)
class TuningSchedule:
    """Diagonal penalties for the four ridge sub-problems.

    Each field is either a scalar (scalar times identity) or a full diagonal.
    ``psi`` and ``lambda_`` have length p; ``omega`` and ``gamma`` have length
    q + 1 (the last entry acts on c0).
    """

    psi: float | tuple[float, ...] = 0.0
    omega: float | tuple[float, ...] = 0.0
    lambda_: float | tuple[float, ...] = 0.0
    gamma: float | tuple[float, ...] = 0.0

    def __post_init__(self):
        for name in ("psi", "omega", "lambda_", "gamma"):
            object.__setattr__(self, name, _as_penalty(getattr(self, name)))

    @classmethod
    def default_rates(cls, n: int) -> "TuningSchedule":
        """psi = omega = sqrt(n), lambda = gamma = 0.1 log(n)."""
        root = math.sqrt(n)
        slow = 0.1 * math.log(n)
        return cls(psi=root, omega=root, lambda_=slow, gamma=slow)

    def resolve(self, p: int, q: int) -> tuple[NDArray, NDArray, NDArray, NDArray]:
        return (
            _expand(self.psi, p, "psi"),
            _expand(self.omega, q + 1, "omega"),
            _expand(self.lambda_, p, "lambda"),
            _expand(self.gamma, q + 1, "gamma"),
        )

    def replace(self, **changes) -> "TuningSchedule":
        fields = {k: getattr(self, k) for k in ("psi", "omega", "lambda_", "gamma")}
        fields.update(changes)
        return TuningSchedule(**fields)


@dataclass(frozen=True, eq=False)
class EstimatorState:
    """Current ``(alpha, beta_star)`` pair after ``iteration`` AR updates."""

    alpha: NDArray[np.float64]
    beta_star: NDArray[np.float64]
    iteration: int = 0

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=np.float64))
        object.__setattr__(self, "beta_star", np.asarray(self.beta_star, dtype=np.float64))

    @property
    def beta(self) -> NDArray[np.float64]:
        return self.beta_star[:-1]

    @property
    def c0(self) -> float:
        return float(self.beta_star[-1])

    @property
    def vector(self) -> NDArray[np.float64]:
        return np.concatenate([self.alpha, self.beta_star])

    def __eq__(self, other):
        if not isinstance(other, EstimatorState):
            return NotImplemented
        return (
            self.iteration == other.iteration
            and np.array_equal(self.alpha, other.alpha)
            and np.array_equal(self.beta_star, other.beta_star)
        )


@dataclass(frozen=True)
class FitOptions:
    """How many AR iterations to run (``k``, or ``"bar"``) and how.

    ``bar_tolerance``, ``bar_max_iterations`` and ``divergence_bound`` only
    matter in BAR mode.
    """

    k: int | str = 0
    stabilization: str = "rescaled"
    delta_alpha: float | None = None
    delta_beta: float | None = None
    bar_tolerance: float = 1e-10
    bar_max_iterations: int = 500
    divergence_bound: float = 1e8

    def __post_init__(self):
        if isinstance(self.k, str):
            if self.k.lower() != BAR:
                raise ValueError(f"k must be a non-negative integer or 'bar', got {self.k!r}")
            object.__setattr__(self, "k", BAR)
        elif isinstance(self.k, bool) or int(self.k) != self.k or self.k < 0:
            raise ValueError(f"k must be a non-negative integer or 'bar', got {self.k!r}")
        else:
            object.__setattr__(self, "k", int(self.k))
        if self.stabilization not in STABILIZATIONS:
            raise ValueError(f"stabilization must be one of {STABILIZATIONS}")
        if self.stabilization == "perturbed":
            for name in ("delta_alpha", "delta_beta"):
                v = getattr(self, name)
                if v is None or not v > 0:
                    raise ValueError(f"{name} must be > 0 in perturbed mode")
        if not self.bar_tolerance > 0:
            raise ValueError("bar_tolerance must be > 0")
        if int(self.bar_max_iterations) < 1:
            raise ValueError("bar_max_iterations must be >= 1")
        if not self.divergence_bound > 0:
            raise ValueError("divergence_bound must be > 0")

    @property
    def is_bar(self) -> bool:
        return self.k == BAR


@dataclass
class FitResult:
    final: EstimatorState
    trajectory: list[EstimatorState]
    objective_values: list[tuple[float, float]]
    converged: bool | None = None
    diverged: bool = False
    options: FitOptions | None = field(default=None, repr=False)


# --------------------------------------------------------------------------
# initial ridge pair


def ridge_alpha_init(d: Dataset, psi: ArrayLike) -> NDArray[np.float64]:
    """Ridge estimate ``(X^T X + diag(psi))^{-1} X^T y``."""
    psi = _expand(_as_penalty(psi), d.p, "psi")
    G = weighted_gram(d.X)
    G[np.diag_indices_from(G)] += psi
    return solve_spd(G, d.X.T @ d.y)


def log_sq_residuals(
    d: Dataset, alpha: ArrayLike, residual_floor: float = RESIDUAL_FLOOR
) -> NDArray[np.float64]:
    """``log((y_i - x_i^T alpha)^2)``, with ``|residual|`` clamped below at the floor."""
    r = np.abs(d.y - d.X @ np.asarray(alpha, dtype=np.float64))
    return 2.0 * np.log(np.maximum(r, residual_floor))


def ridge_beta_init(
    d: Dataset, alpha: ArrayLike, omega: ArrayLike, *, log_sq: NDArray | None = None
) -> NDArray[np.float64]:
    """Ridge regression of the log squared residuals on ``Z*``."""
    omega = _expand(_as_penalty(omega), d.q + 1, "omega")
    L = log_sq_residuals(d, alpha) if log_sq is None else log_sq
    G = d._zstar_gram.copy()
    G[np.diag_indices_from(G)] += omega
    return solve_spd(G, d.Zstar.T @ L)


# --------------------------------------------------------------------------
# adaptive updates


def _weight_scales(prev: NDArray, mode: str, delta: float | None) -> NDArray[np.float64]:
    """Return ``s`` with adaptive penalty weights ``1 / s^2``."""
    if mode == "perturbed":
        return np.sqrt(prev * prev + delta)
    s = np.abs(prev)
    if mode == "direct" and np.any(s == 0):
        raise InvalidState(
            "direct stabilization needs non-zero previous estimates; "
            f"zero at index {np.flatnonzero(s == 0).tolist()}"
        )
    return s


def _adaptive_solve(
    G: NDArray, r: NDArray, pen: NDArray, s: NDArray, mode: str
) -> NDArray[np.float64]:
    if mode == "rescaled":
        Gt = s[:, None] * G * s[None, :]
        Gt[np.diag_indices_from(Gt)] += pen
        return s * solve_spd(Gt, s * r)
    A = G.copy()
    with np.errstate(over="ignore", divide="ignore"):
        A[np.diag_indices_from(A)] += pen / (s * s)
    return solve_spd(A, r)


def _penalty_value(theta: NDArray, pen: NDArray, s: NDArray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(s > 0, theta / np.where(s > 0, s, 1.0), 0.0)
    return float(np.sum(pen * ratio * ratio))


def variance_weights(d: Dataset, beta: ArrayLike) -> NDArray[np.float64]:
    """Inverse variances ``exp(-z_i^T beta)``."""
    with np.errstate(over="ignore"):
        w = np.exp(-(d.Z @ np.asarray(beta, dtype=np.float64)))
    if not np.all(np.isfinite(w)):
        raise NonFiniteWeights("exp(-Z beta) overflowed; beta estimate is diverging")
    return w


def _alpha_update(d, prev, lam, mode, delta):
    w = variance_weights(d, prev.beta)
    G = weighted_gram(d.X, w)
    r = d.X.T @ (w * d.y)
    s = _weight_scales(prev.alpha, mode, delta)
    alpha = _adaptive_solve(G, r, lam, s, mode)
    resid = d.y - d.X @ alpha
    obj = float(np.sum(w * resid * resid)) + _penalty_value(alpha, lam, s)
    return alpha, obj


def _beta_update(d, alpha, prev_beta_star, gamma, mode, delta):
    L = log_sq_residuals(d, alpha)
    s = _weight_scales(prev_beta_star, mode, delta)
    beta_star = _adaptive_solve(d._zstar_gram, d.Zstar.T @ L, gamma, s, mode)
    resid = L - d.Zstar @ beta_star
    obj = float(resid @ resid) + _penalty_value(beta_star, gamma, s)
    return beta_star, obj


def ar_alpha_step(
    d: Dataset,
    prev: EstimatorState,
    lambda_: ArrayLike,
    mode: str = "rescaled",
    delta: float | None = None,
) -> NDArray[np.float64]:
    """One adaptive update of the mean coefficients.

    Minimizes ``||W^{1/2}(y - X alpha)||^2 + sum_j lambda_j alpha_j^2 / a_j^2``
    with ``W = diag(exp(-Z beta_prev))`` and ``a = prev.alpha``.
    """
    lam = _expand(_as_penalty(lambda_), d.p, "lambda")
    return _alpha_update(d, prev, lam, mode, delta)[0]


def ar_beta_step(
    d: Dataset,
    alpha: ArrayLike,
    prev_beta_star: ArrayLike,
    gamma: ArrayLike,
    mode: str = "rescaled",
    delta: float | None = None,
) -> NDArray[np.float64]:
    """One adaptive update of ``beta_star`` given the current mean fit ``alpha``."""
    gam = _expand(_as_penalty(gamma), d.q + 1, "gamma")
    prev_beta_star = np.asarray(prev_beta_star, dtype=np.float64)
    return _beta_update(d, np.asarray(alpha, dtype=np.float64), prev_beta_star, gam, mode, delta)[0]


def _initial(d: Dataset, psi, omega):
    alpha = ridge_alpha_init(d, psi)
    L = log_sq_residuals(d, alpha)
    beta_star = ridge_beta_init(d, alpha, omega, log_sq=L)
    r = d.y - d.X @ alpha
    obj_a = float(r @ r + np.sum(psi * alpha * alpha))
    rb = L - d.Zstar @ beta_star
    obj_b = float(rb @ rb + np.sum(omega * beta_star * beta_star))
    return EstimatorState(alpha, beta_star, 0), (obj_a, obj_b)


def _step(d, state, lam, gam, opts):
    j = state.iteration + 1
    try:
        alpha, obj_a = _alpha_update(d, state, lam, opts.stabilization, opts.delta_alpha)
        beta_star, obj_b = _beta_update(
            d, alpha, state.beta_star, gam, opts.stabilization, opts.delta_beta
        )
    except HetarError as exc:
        exc.iteration = j
        raise
    return EstimatorState(alpha, beta_star, j), (obj_a, obj_b)


def ar_fit(d: Dataset, tuning: TuningSchedule, opts: FitOptions = FitOptions()) -> FitResult:
    """Initial ridge pair followed by ``opts.k`` alternating AR updates."""
    if opts.is_bar:
        return bar_fit(d, tuning, opts)
    psi, omega, lam, gam = tuning.resolve(d.p, d.q)
    try:
        state, obj = _initial(d, psi, omega)
    except HetarError as exc:
        exc.iteration = 0
        raise
    traj, objs = [state], [obj]
    for _ in range(opts.k):
        state, obj = _step(d, state, lam, gam, opts)
        traj.append(state)
        objs.append(obj)
    return FitResult(final=state, trajectory=traj, objective_values=objs, options=opts)


def bar_fit(d: Dataset, tuning: TuningSchedule, opts: FitOptions = FitOptions(k=BAR)) -> FitResult:
    """Iterate AR updates until consecutive estimates differ by < ``bar_tolerance``.

    Stops unconverged when the estimate norm exceeds ``divergence_bound``, when
    the variance weights overflow, or after ``bar_max_iterations`` updates.
    """
    psi, omega, lam, gam = tuning.resolve(d.p, d.q)
    try:
        state, obj = _initial(d, psi, omega)
    except HetarError as exc:
        exc.iteration = 0
        raise
    traj, objs = [state], [obj]
    if np.linalg.norm(state.vector) > opts.divergence_bound:
        return FitResult(state, traj, objs, converged=False, diverged=True, options=opts)
    for _ in range(int(opts.bar_max_iterations)):
        try:
            new, obj = _step(d, state, lam, gam, opts)
        except NonFiniteWeights:
            return FitResult(state, traj, objs, converged=False, diverged=True, options=opts)
        traj.append(new)
        objs.append(obj)
        vec = new.vector
        if not np.all(np.isfinite(vec)) or np.linalg.norm(vec) > opts.divergence_bound:
            return FitResult(new, traj, objs, converged=False, diverged=True, options=opts)
        change = np.linalg.norm(vec - state.vector)
        state = new
        if change < opts.bar_tolerance:
            return FitResult(state, traj, objs, converged=True, options=opts)
    return FitResult(state, traj, objs, converged=False, options=opts)


def fit(d: Dataset, tuning: TuningSchedule, opts: FitOptions = FitOptions()) -> FitResult:
    """Dispatch to :func:`bar_fit` or :func:`ar_fit` on ``opts.k``."""
    return bar_fit(d, tuning, opts) if opts.is_bar else ar_fit(d, tuning, opts)


# --------------------------------------------------------------------------
# using a fitted state


def predict(
    state: EstimatorState, Xnew: ArrayLike, Znew: ArrayLike
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Return per-row mean ``X alpha`` and variance ``exp(Z beta)`` (c0 excluded)."""
    Xnew = np.atleast_2d(np.asarray(Xnew, dtype=np.float64))
    Znew = np.asarray(Znew, dtype=np.float64)
    if Znew.ndim == 1:
        Znew = Znew.reshape(1, -1) if Znew.size else Znew.reshape(Xnew.shape[0], 0)
    if Xnew.shape[1] != state.alpha.shape[0]:
        raise DimensionMismatch(f"Xnew has {Xnew.shape[1]} columns, model has {state.alpha.shape[0]}")
    if Znew.shape[1] != state.beta.shape[0]:
        raise DimensionMismatch(f"Znew has {Znew.shape[1]} columns, model has {state.beta.shape[0]}")
    if Xnew.shape[0] != Znew.shape[0]:
        raise DimensionMismatch("Xnew and Znew have different row counts")
    with np.errstate(over="ignore"):
        var = np.exp(Znew @ state.beta)
    return Xnew @ state.alpha, var


def support(
    state: EstimatorState, threshold: float = DEFAULT_THRESHOLD
) -> tuple[NDArray[np.intp], NDArray[np.intp]]:
    """Indices (0-based) of coefficients whose magnitude exceeds ``threshold``.

    The c0 slot never appears in the beta support.
    """
    if not threshold > 0:
        raise ValueError("threshold must be > 0")
    return (
        np.flatnonzero(np.abs(state.alpha) > threshold),
        np.flatnonzero(np.abs(state.beta) > threshold),
    )


@dataclass
class AssumptionReport:
    n: int
    x_eigen: tuple[float, float] | None
    zstar_eigen: tuple[float, float]
    x_max_row_norm: float
    zstar_max_row_norm: float
    x_near_singular: bool
    zstar_near_singular: bool
    weighted_x_eigen: tuple[float, float] | None = None
    singularity_tol: float = 1e-8

    def rows(self) -> list[tuple[str, object]]:
        out = [
            ("n", self.n),
            ("x_gram_lambda_min", None if self.x_eigen is None else self.x_eigen[0]),
            ("x_gram_lambda_max", None if self.x_eigen is None else self.x_eigen[1]),
            ("zstar_gram_lambda_min", self.zstar_eigen[0]),
            ("zstar_gram_lambda_max", self.zstar_eigen[1]),
            ("x_max_row_norm", self.x_max_row_norm),
            ("zstar_max_row_norm", self.zstar_max_row_norm),
            ("x_near_singular", self.x_near_singular),
            ("zstar_near_singular", self.zstar_near_singular),
        ]
        if self.weighted_x_eigen is not None:
            out += [
                ("weighted_x_gram_lambda_min", self.weighted_x_eigen[0]),
                ("weighted_x_gram_lambda_max", self.weighted_x_eigen[1]),
            ]
        return out


def _near_singular(ext: tuple[float, float], tol: float) -> bool:
    lo, hi = ext
    return lo <= tol * max(hi, 1.0)


def assumption_diagnostics(
    d: Dataset, beta: ArrayLike | None = None, singularity_tol: float = 1e-8
) -> AssumptionReport:
    """Empirical eigenvalue and row-norm checks of the normalized Gram matrices.

    If ``beta`` is given, also reports the extremes of ``X^T diag(exp(-Z beta)) X / n``.
    """
    n = d.n
    x_eig = eigen_extremes(weighted_gram(d.X) / n) if d.p else None
    z_eig = eigen_extremes(d._zstar_gram / n)
    w_eig = None
    if beta is not None and d.p:
        w_eig = eigen_extremes(weighted_gram(d.X, variance_weights(d, beta)) / n)
    return AssumptionReport(
        n=n,
        x_eigen=x_eig,
        zstar_eigen=z_eig,
        x_max_row_norm=float(np.max(np.linalg.norm(d.X, axis=1))) if d.p else 0.0,
        zstar_max_row_norm=float(np.max(np.linalg.norm(d.Zstar, axis=1))),
        x_near_singular=bool(x_eig is not None and _near_singular(x_eig, singularity_tol)),
        zstar_near_singular=_near_singular(z_eig, singularity_tol),
        weighted_x_eigen=w_eig,
        singularity_tol=singularity_tol,
    )
