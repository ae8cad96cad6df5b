"""K-fold cross-validation and grid search over the four ridge penalties.

Grid points are scored by fitting on each training fold and computing the
squared prediction error of the predicted mean on the matching validation
fold.  By default every training fold is standardized on its own and its
statistics are applied to the validation rows.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import AllPointsFailed, DimensionMismatch, HetarError, InvalidFolds
from .estimator import Dataset, FitOptions, TuningSchedule, fit, predict
from .preprocessing import Standardization, standardize_dataset

AXES = ("psi", "omega", "lambda", "gamma")
CRITERIA = ("mean_spe", "median_spe")
_FIELD = {"psi": "psi", "omega": "omega", "lambda": "lambda_", "gamma": "gamma"}


def log10_grid(start: float, stop: float, step: float) -> tuple[float, ...]:
    """``10**e`` for ``e = start, start + step, ..., stop`` (inclusive)."""
    count = int(round((stop - start) / step)) + 1
    return tuple(float(10.0 ** round(start + i * step, 10)) for i in range(count))


@dataclass(frozen=True)
class Grid:
    """Candidate values per penalty axis.

    Only axes listed in ``search_axes`` are swept; the others take the first
    value of their list unless a stage freezes them.
    """

    psi_values: tuple[float, ...] = (0.0,)
    omega_values: tuple[float, ...] = (0.0,)
    lambda_values: tuple[float, ...] = (0.0,)
    gamma_values: tuple[float, ...] = (0.0,)
    search_axes: tuple[str, ...] = AXES

    def __post_init__(self):
        for axis in AXES:
            vals = tuple(float(v) for v in getattr(self, f"{axis}_values"))
            if any(not (math.isfinite(v) and v >= 0) for v in vals):
                raise ValueError(f"{axis} values must be finite and >= 0")
            object.__setattr__(self, f"{axis}_values", vals)
        axes = tuple(self.search_axes)
        unknown = set(axes) - set(AXES)
        if unknown:
            raise ValueError(f"unknown search axes {sorted(unknown)}")
        object.__setattr__(self, "search_axes", tuple(a for a in AXES if a in axes))
        for axis in AXES:
            if not getattr(self, f"{axis}_values"):
                raise ValueError(f"{axis} values must be non-empty")

    def values(self, axis: str) -> tuple[float, ...]:
        return getattr(self, f"{axis}_values")

    def points(
        self, axes: Sequence[str] | None = None, fixed: dict[str, float] | None = None
    ) -> list[dict[str, float]]:
        """Cartesian product over ``axes`` with every other axis held fixed."""
        axes = self.search_axes if axes is None else tuple(axes)
        fixed = dict(fixed or {})
        base = {a: fixed.get(a, self.values(a)[0]) for a in AXES}
        out = []
        for combo in itertools.product(*(self.values(a) for a in axes)):
            point = dict(base)
            point.update(zip(axes, combo))
            out.append(point)
        return out

    @property
    def cardinality(self) -> int:
        return math.prod(len(self.values(a)) for a in self.search_axes)


@dataclass(frozen=True)
class CvPlan:
    folds: int = 5
    criterion: str = "mean_spe"
    shuffle_seed: int = 0

    def __post_init__(self):
        if int(self.folds) < 2:
            raise InvalidFolds(f"need at least 2 folds, got {self.folds}")
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}")


def point_to_schedule(point: dict[str, float]) -> TuningSchedule:
    return TuningSchedule(**{_FIELD[a]: point[a] for a in AXES})


def kfold_split(n: int, plan: CvPlan) -> list[tuple[NDArray[np.intp], NDArray[np.intp]]]:
    """Shuffled K-fold partition of ``range(n)``; fold sizes differ by at most one."""
    if plan.folds > n:
        raise InvalidFolds(f"{plan.folds} folds for {n} observations")
    perm = np.random.default_rng(plan.shuffle_seed).permutation(n)
    folds = np.array_split(perm, plan.folds)
    out = []
    for i, val in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append((np.sort(train), np.sort(val)))
    return out


def spe(predicted: ArrayLike, actual: ArrayLike, criterion: str = "mean_spe") -> float:
    """Mean or median of squared prediction errors."""
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if predicted.shape != actual.shape:
        raise DimensionMismatch(f"shapes differ: {predicted.shape} vs {actual.shape}")
    sq = (predicted - actual) ** 2
    if criterion == "mean_spe":
        return float(np.mean(sq))
    if criterion == "median_spe":
        return float(np.median(sq))
    raise ValueError(f"criterion must be one of {CRITERIA}")


def fit_and_predict(
    train: Dataset,
    test_X: NDArray,
    test_Z: NDArray,
    tuning: TuningSchedule,
    estimator: FitOptions,
    standardize: bool = True,
    center_response: bool = True,
) -> NDArray[np.float64]:
    """Fit on ``train`` (standardized on itself) and predict the mean of new rows.

    Raises on estimator errors and when BAR diverges.
    """
    d, st = standardize_dataset(train, standardize, center_response)
    res = fit(d, tuning, estimator)
    if res.diverged:
        raise FloatingPointError("BAR iteration diverged")
    mean, _ = predict(res.final, st.transform_x(test_X), st.transform_z(test_Z))
    return st.inverse_y(mean)


def cv_score(
    d: Dataset,
    tuning: TuningSchedule,
    plan: CvPlan,
    estimator: FitOptions,
    fold_standardize: bool = True,
    center_response: bool = True,
) -> float:
    """Fold-averaged criterion; ``inf`` if any fold fails to fit."""
    if not fold_standardize:
        d, _ = standardize_dataset(d, True, center_response)
    scores = []
    for train_idx, val_idx in kfold_split(d.n, plan):
        try:
            pred = fit_and_predict(
                d.subset(train_idx),
                d.X[val_idx],
                d.Z[val_idx],
                tuning,
                estimator,
                standardize=fold_standardize,
                center_response=center_response,
            )
        except (HetarError, ValueError, FloatingPointError):
            return math.inf
        scores.append(spe(pred, d.y[val_idx], plan.criterion))
    score = float(np.mean(scores))
    return score if math.isfinite(score) else math.inf


def _tie_key(item):
    point, score = item
    return (score,) + tuple(point[a] for a in AXES)


def _search(d, points, plan, estimator, fold_standardize, center_response, workers):
    def score(point):
        return cv_score(d, point_to_schedule(point), plan, estimator, fold_standardize, center_response)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(score, points))
    else:
        scores = [score(p) for p in points]
    table = [(p, s) for p, s in zip(points, scores) if math.isfinite(s)]
    if not table:
        raise AllPointsFailed(f"all {len(points)} grid points failed")
    best = min(table, key=_tie_key)[0]
    return best, table


def grid_search(
    d: Dataset,
    grid: Grid,
    plan: CvPlan,
    estimator: FitOptions = FitOptions(),
    *,
    fixed: dict[str, float] | None = None,
    fold_standardize: bool = True,
    center_response: bool = True,
    workers: int = 1,
) -> tuple[TuningSchedule, list[tuple[dict[str, float], float]]]:
    """Exhaustive CV search over ``grid.search_axes``.

    Returns the winning schedule and the table of ``(point, score)`` for every
    point that could be scored.  Points whose fit fails on any fold (including
    BAR divergence) are left out of the table.  Ties go to the smallest
    penalties in the order psi, omega, lambda, gamma.
    """
    points = grid.points(grid.search_axes, fixed)
    best, table = _search(d, points, plan, estimator, fold_standardize, center_response, workers)
    return point_to_schedule(best), table


def staged_search(
    d: Dataset,
    stages: Sequence[Sequence[str]],
    grid: Grid,
    plan: CvPlan,
    estimator: FitOptions = FitOptions(),
    *,
    fold_standardize: bool = True,
    center_response: bool = True,
    workers: int = 1,
    log: list | None = None,
) -> TuningSchedule:
    """Run :func:`grid_search` stage by stage, freezing earlier winners.

    ``stages`` must cover ``grid.search_axes`` exactly once.  If ``log`` is a
    list, ``(stage_index, point, score)`` rows are appended to it.
    """
    flat = [a for stage in stages for a in stage]
    if sorted(flat) != sorted(grid.search_axes) or len(set(flat)) != len(flat):
        raise ValueError(
            f"stages {list(map(list, stages))} must cover search axes "
            f"{list(grid.search_axes)} exactly once"
        )
    frozen: dict[str, float] = {}
    best = None
    for i, stage in enumerate(stages):
        points = grid.points(tuple(stage), frozen)
        try:
            best, table = _search(d, points, plan, estimator, fold_standardize, center_response, workers)
        except AllPointsFailed as exc:
            exc.stage = i
            raise AllPointsFailed(f"stage {i}: {exc}") from exc
        for point, score in table:
            if log is not None:
                log.append((i, point, score))
        frozen.update({a: best[a] for a in stage})
    if best is None:
        return point_to_schedule(grid.points((), frozen)[0])
    return point_to_schedule(best)
