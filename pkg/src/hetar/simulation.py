"""Monte-Carlo harness for the sparse heteroscedastic regression scenario.

Data are drawn from ``y = X alpha0 + exp(Z beta0 / 2) * eps`` with rows of
``X`` and ``Z`` independent equicorrelated Gaussians.  Every trial owns
independent random streams derived from ``(master_seed, trial_index, purpose)``,
so results do not depend on how trials are scheduled across workers.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import integrate, stats

from .errors import HetarError, QuadratureFailure
from .estimator import (
    BAR,
    DEFAULT_THRESHOLD,
    Dataset,
    EstimatorState,
    FitOptions,
    TuningSchedule,
    ar_fit,
    bar_fit,
)

NOISE_TAGS = ("normal", "laplace", "t")

_PURPOSE = {"x": 1, "z": 2, "noise": 3, "split": 4}


@dataclass(frozen=True)
class NoiseKind:
    """Error distribution: standard normal, Laplace(0, 1) or Student t(df).

    With ``standardize_variance`` the draws are divided by the distribution's
    standard deviation so that ``var(eps) = 1``.
    """

    tag: str = "normal"
    standardize_variance: bool = False
    df: float = 3.0

    def __post_init__(self):
        if self.tag not in NOISE_TAGS:
            raise ValueError(f"noise tag must be one of {NOISE_TAGS}, got {self.tag!r}")
        if self.tag == "t" and not self.df > 0:
            raise ValueError("t noise needs df > 0")
        if self.tag == "t" and self.standardize_variance and not self.df > 2:
            raise ValueError("standardizing t noise needs df > 2 (finite variance)")

    @property
    def distribution(self):
        if self.tag == "normal":
            return stats.norm()
        if self.tag == "laplace":
            return stats.laplace(loc=0.0, scale=1.0)
        return stats.t(self.df)

    @property
    def raw_std(self) -> float:
        if self.tag == "normal":
            return 1.0
        if self.tag == "laplace":
            return math.sqrt(2.0)
        if self.df <= 2:
            return math.inf
        return math.sqrt(self.df / (self.df - 2.0))

    @property
    def scale(self) -> float:
        """Factor applied to raw draws."""
        return 1.0 / self.raw_std if self.standardize_variance else 1.0

    @property
    def label(self) -> str:
        base = {"normal": "N", "laplace": "L", "t": "T"}[self.tag]
        return base + ("s" if self.standardize_variance else "")


def default_signal(dim: int, active: int = 10) -> tuple[float, ...]:
    """``(0.1, 0.2, ..., 1.0, 0, ..., 0)`` truncated or zero-padded to ``dim``."""
    return tuple(round(0.1 * (j + 1), 10) if j < active else 0.0 for j in range(dim))


def trial_rng(master_seed: int, trial_index: int, purpose: str) -> np.random.Generator:
    """Independent generator for one (trial, purpose) pair."""
    ss = np.random.SeedSequence([int(master_seed), int(trial_index), _PURPOSE[purpose]])
    return np.random.Generator(np.random.PCG64(ss))


def equicorrelated_gaussian(
    n: int, dim: int, rho: float, rng: np.random.Generator
) -> NDArray[np.float64]:
    """Rows iid ``N(0, (1 - rho) I + rho 11^T)``.

    Uses the closed-form symmetric square root
    ``sqrt(1 - rho) I + c 11^T`` with
    ``c = (sqrt(1 + (dim - 1) rho) - sqrt(1 - rho)) / dim``.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must be in [0, 1), got {rho}")
    G = rng.standard_normal((n, dim))
    if dim == 0 or rho == 0.0:
        return G
    a = math.sqrt(1.0 - rho)
    c = (math.sqrt(1.0 + (dim - 1) * rho) - a) / dim
    return a * G + c * G.sum(axis=1, keepdims=True)


def draw_noise(kind: NoiseKind, n: int, rng: np.random.Generator) -> NDArray[np.float64]:
    if kind.tag == "normal":
        e = rng.standard_normal(n)
    elif kind.tag == "laplace":
        e = rng.laplace(0.0, 1.0, n)
    else:
        e = rng.standard_t(kind.df, n)
    return e * kind.scale if kind.standardize_variance else e


@lru_cache(maxsize=None)
def compute_c0(kind: NoiseKind) -> float:
    """``E[log eps^2]`` for the given noise kind.

    Integrates ``log(x^2)`` against the (symmetric) density by adaptive
    quadrature, falling back to a 10^7-draw Monte-Carlo mean if quadrature
    reports a problem.
    """
    dist = kind.distribution

    def integrand(x):
        return 4.0 * math.log(x) * dist.pdf(x)

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            lo, _ = integrate.quad(integrand, 0.0, 1.0, limit=200)
            hi, _ = integrate.quad(integrand, 1.0, math.inf, limit=200)
        value = lo + hi
    except integrate.IntegrationWarning:
        rng = np.random.Generator(np.random.PCG64(20240101))
        draws = draw_noise(NoiseKind(kind.tag, False, kind.df), 10_000_000, rng)
        value = float(np.mean(np.log(draws * draws)))
    if not math.isfinite(value):
        raise QuadratureFailure(f"E[log eps^2] is not finite for {kind}")
    if kind.standardize_variance:
        value -= 2.0 * math.log(kind.raw_std)
    return float(value)


def _estimator_label(k) -> str:
    return "BAR" if k == BAR else f"k={int(k)}"


@dataclass(frozen=True)
class SimulationSpec:
    """One Monte-Carlo scenario.

    ``alpha0``/``beta0`` default to ``default_signal(p)``/``default_signal(q)``.
    ``tuning`` is either ``"default_rates"`` (psi = omega = sqrt(n),
    lambda = gamma = 0.1 log n) or an explicit :class:`TuningSchedule`.
    ``fit_options`` supplies stabilization and BAR settings; its ``k`` is
    ignored in favour of ``estimators``.
    """

    n: int = 1000
    p: int = 20
    q: int = 20
    rho: float = 0.4
    alpha0: tuple[float, ...] | None = None
    beta0: tuple[float, ...] | None = None
    noise: NoiseKind = NoiseKind()
    trials: int = 200
    master_seed: int = 0
    estimators: tuple = (0, 2, 5, 10, BAR)
    tuning: str | TuningSchedule = "default_rates"
    fit_options: FitOptions = FitOptions()
    name: str | None = None

    def __post_init__(self):
        if self.alpha0 is None:
            object.__setattr__(self, "alpha0", default_signal(self.p))
        if self.beta0 is None:
            object.__setattr__(self, "beta0", default_signal(self.q))
        object.__setattr__(self, "alpha0", tuple(float(v) for v in self.alpha0))
        object.__setattr__(self, "beta0", tuple(float(v) for v in self.beta0))
        if len(self.alpha0) != self.p or len(self.beta0) != self.q:
            raise ValueError("alpha0/beta0 lengths must equal p/q")
        if not (self.n > 0 and self.p >= 0 and self.q >= 0 and self.trials >= 1):
            raise ValueError("n and trials must be positive")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must be in [0, 1)")
        est = []
        for k in self.estimators:
            k = BAR if isinstance(k, str) and k.lower() == BAR else k
            if k != BAR and (isinstance(k, bool) or int(k) != k or k < 0):
                raise ValueError(f"bad estimator {k!r}")
            est.append(BAR if k == BAR else int(k))
        if not est:
            raise ValueError("at least one estimator is required")
        object.__setattr__(self, "estimators", tuple(est))
        if isinstance(self.tuning, str) and self.tuning != "default_rates":
            raise ValueError(f"unknown tuning rule {self.tuning!r}")

    @property
    def label(self) -> str:
        return self.name or f"n={self.n},{self.noise.label}"

    @property
    def estimator_labels(self) -> list[str]:
        return [_estimator_label(k) for k in self.estimators]

    @property
    def schedule(self) -> TuningSchedule:
        if isinstance(self.tuning, TuningSchedule):
            return self.tuning
        return TuningSchedule.default_rates(self.n)

    @property
    def beta0_star(self) -> NDArray[np.float64]:
        return np.array(self.beta0 + (compute_c0(self.noise),))


def gen_dataset(spec: SimulationSpec, trial_index: int) -> Dataset:
    X = equicorrelated_gaussian(spec.n, spec.p, spec.rho, trial_rng(spec.master_seed, trial_index, "x"))
    Z = equicorrelated_gaussian(spec.n, spec.q, spec.rho, trial_rng(spec.master_seed, trial_index, "z"))
    eps = draw_noise(spec.noise, spec.n, trial_rng(spec.master_seed, trial_index, "noise"))
    y = X @ np.asarray(spec.alpha0) + np.exp(0.5 * (Z @ np.asarray(spec.beta0))) * eps
    return Dataset(y, X, Z)


@dataclass
class TrialResult:
    """Fitted states of one trial, keyed by estimator label (``"k=2"``, ``"BAR"``).

    ``alpha_path``/``beta_path`` hold the full AR trajectory up to the largest
    requested k.  ``failures`` maps labels to a reason; failed labels have no
    state.
    """

    trial_index: int
    seed: tuple[int, int]
    states: dict[str, EstimatorState] = field(default_factory=dict)
    failures: dict[str, str] = field(default_factory=dict)
    alpha_path: NDArray[np.float64] | None = None
    beta_path: NDArray[np.float64] | None = None
    bar_iterations: int | None = None


def run_trial(spec: SimulationSpec, trial_index: int) -> TrialResult:
    d = gen_dataset(spec, trial_index)
    out = TrialResult(trial_index, (int(spec.master_seed), int(trial_index)))
    tuning = spec.schedule
    ks = [k for k in spec.estimators if k != BAR]
    if ks:
        opts = _with_k(spec.fit_options, max(ks))
        try:
            res = ar_fit(d, tuning, opts)
        except HetarError as exc:
            for k in ks:
                out.failures[_estimator_label(k)] = f"{type(exc).__name__}: {exc}"
        else:
            for k in ks:
                out.states[_estimator_label(k)] = res.trajectory[k]
            out.alpha_path = np.array([s.alpha for s in res.trajectory])
            out.beta_path = np.array([s.beta_star for s in res.trajectory])
    if BAR in spec.estimators:
        try:
            res = bar_fit(d, tuning, _with_k(spec.fit_options, BAR))
        except HetarError as exc:
            out.failures["BAR"] = f"{type(exc).__name__}: {exc}"
        else:
            out.bar_iterations = res.final.iteration
            if res.diverged:
                out.failures["BAR"] = "diverged"
            else:
                out.states["BAR"] = res.final
    return out


def _with_k(opts: FitOptions, k) -> FitOptions:
    return FitOptions(
        k=k,
        stabilization=opts.stabilization,
        delta_alpha=opts.delta_alpha,
        delta_beta=opts.delta_beta,
        bar_tolerance=opts.bar_tolerance,
        bar_max_iterations=opts.bar_max_iterations,
        divergence_bound=opts.divergence_bound,
    )


def run_trials(spec: SimulationSpec, workers: int = 1) -> list[TrialResult]:
    """Run every trial of ``spec``; the returned list is ordered by trial index."""
    indices = range(spec.trials)
    if workers <= 1:
        return [run_trial(spec, i) for i in indices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda i: run_trial(spec, i), indices))
    return sorted(results, key=lambda r: r.trial_index)


# --------------------------------------------------------------------------
# metrics


def collect(results: list[TrialResult], label: str) -> tuple[NDArray, NDArray]:
    """Stack ``(alpha, beta_star)`` estimates of non-failed trials in trial order."""
    rows = [r.states[label] for r in sorted(results, key=lambda r: r.trial_index) if label in r.states]
    if not rows:
        return np.empty((0, 0)), np.empty((0, 0))
    return np.array([s.alpha for s in rows]), np.array([s.beta_star for s in rows])


def mse_split(estimates: ArrayLike, truth: ArrayLike) -> tuple[float, float]:
    """Mean squared error over the non-zero and the zero block of ``truth``.

    ``estimates`` is (trials, dim).  A block with no components yields nan.
    """
    E = np.atleast_2d(np.asarray(estimates, dtype=np.float64))
    t = np.asarray(truth, dtype=np.float64)
    sq = (E - t) ** 2
    nz = t != 0
    ns = float(sq[:, nz].mean()) if nz.any() and len(E) else math.nan
    s = float(sq[:, ~nz].mean()) if (~nz).any() and len(E) else math.nan
    return ns, s


def median_abs_sparse(estimates: ArrayLike, zero_index: ArrayLike) -> float:
    """Median of ``|estimate|`` over all (trial, zero-index) pairs."""
    zero_index = np.asarray(zero_index, dtype=np.intp)
    if zero_index.size == 0:
        raise ValueError("zero_index must be non-empty")
    E = np.atleast_2d(np.asarray(estimates, dtype=np.float64))
    if E.size == 0:
        return math.nan
    return float(np.median(np.abs(E[:, zero_index])))


def selection_error_rates(
    estimates: ArrayLike, truth: ArrayLike, threshold: float = DEFAULT_THRESHOLD
) -> tuple[float, float]:
    """(FN %, FP %) of thresholded support against ``truth``.

    FN is the share of truly non-zero coefficients estimated at or below the
    threshold, FP the share of truly zero coefficients estimated above it.
    """
    if not threshold > 0:
        raise ValueError("threshold must be > 0")
    E = np.atleast_2d(np.asarray(estimates, dtype=np.float64))
    t = np.asarray(truth, dtype=np.float64)
    selected = np.abs(E) > threshold
    nz = t != 0
    fn = 100.0 * float(np.mean(~selected[:, nz])) if nz.any() and len(E) else math.nan
    fp = 100.0 * float(np.mean(selected[:, ~nz])) if (~nz).any() and len(E) else math.nan
    return fn, fp


def fp_fn_rates(
    alpha_estimates: ArrayLike,
    beta_star_estimates: ArrayLike,
    alpha0: ArrayLike,
    beta0_star: ArrayLike,
    threshold: float = DEFAULT_THRESHOLD,
) -> tuple[float, float, float, float]:
    """``(FN_alpha, FN_beta, FP_alpha, FP_beta)`` in percent; the c0 slot is dropped."""
    fn_a, fp_a = selection_error_rates(alpha_estimates, alpha0, threshold)
    B = np.atleast_2d(np.asarray(beta_star_estimates, dtype=np.float64))
    fn_b, fp_b = selection_error_rates(B[:, :-1], np.asarray(beta0_star)[:-1], threshold)
    return fn_a, fn_b, fp_a, fp_b


def misidentification_rate(
    estimates: ArrayLike, component_index: int, threshold: float = DEFAULT_THRESHOLD
) -> float:
    """Percent of trials whose estimate of one component is at or below ``threshold``."""
    E = np.atleast_2d(np.asarray(estimates, dtype=np.float64))
    if E.size == 0:
        return math.nan
    return 100.0 * float(np.mean(np.abs(E[:, component_index]) <= threshold))


def shrinkage_ratios(paths: ArrayLike, zero_index: ArrayLike) -> NDArray[np.float64]:
    """``||theta_zero^(k+1)|| / ||theta_zero^(k)||`` for each trial and k.

    ``paths`` is (trials, K + 1, dim); the result is (trials, K).
    """
    P = np.asarray(paths, dtype=np.float64)
    norms = np.linalg.norm(P[:, :, np.asarray(zero_index, dtype=np.intp)], axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        return norms[:, 1:] / norms[:, :-1]


@dataclass
class QQData:
    theoretical: NDArray[np.float64]
    sample: NDArray[np.float64]
    degenerate: bool

    @property
    def correlation(self) -> float:
        if self.degenerate:
            return math.nan
        return float(np.corrcoef(self.theoretical, self.sample)[0, 1])

    def pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.theoretical.tolist(), self.sample.tolist()))


def qq_data(sample: ArrayLike, reference: NoiseKind | None = None) -> QQData:
    """Sorted sample against reference quantiles at plotting positions (i - 0.5) / n.

    The reference defaults to the standard normal.  A constant sample is
    returned with ``degenerate=True``.
    """
    x = np.sort(np.asarray(sample, dtype=np.float64).ravel())
    if x.size < 10:
        raise ValueError("qq_data needs at least 10 observations")
    dist = stats.norm() if reference is None else reference.distribution
    probs = (np.arange(1, x.size + 1) - 0.5) / x.size
    theo = dist.ppf(probs)
    if reference is not None and reference.standardize_variance:
        theo = theo * reference.scale
    return QQData(theo, x, bool(np.ptp(x) == 0))


def histogram(sample: ArrayLike, bins: int) -> list[tuple[float, float, int]]:
    """Equal-width bins spanning ``[min, max]``; rows are (low, high, count)."""
    if int(bins) < 1:
        raise ValueError("bins must be >= 1")
    x = np.asarray(sample, dtype=np.float64).ravel()
    counts, edges = np.histogram(x, bins=int(bins))
    return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(len(counts))]


@dataclass
class AggregateMetrics:
    """Summary of one estimator over the trials of one scenario (rates in percent)."""

    scenario: str
    estimator: str
    trials: int
    failures: int
    mse_nonsparse_alpha: float
    mse_sparse_alpha: float
    mse_nonsparse_beta: float
    mse_sparse_beta: float
    median_abs_sparse_alpha: float
    median_abs_sparse_beta: float
    misident_alpha1: float
    misident_beta1: float
    fn_alpha: float
    fn_beta: float
    fp_alpha: float
    fp_beta: float

    def as_row(self) -> dict[str, object]:
        return dict(self.__dict__)


def _first_nonzero(v) -> int | None:
    idx = np.flatnonzero(np.asarray(v) != 0)
    return int(idx[0]) if idx.size else None


def aggregate(
    results: list[TrialResult],
    spec: SimulationSpec,
    label: str,
    threshold: float = DEFAULT_THRESHOLD,
) -> AggregateMetrics:
    A, B = collect(results, label)
    alpha0 = np.asarray(spec.alpha0)
    beta0_star = spec.beta0_star
    failures = sum(1 for r in results if label in r.failures)
    nan = math.nan
    if len(A) == 0:
        return AggregateMetrics(spec.label, label, len(results), failures, *([nan] * 12))
    ns_a, s_a = mse_split(A, alpha0)
    ns_b, s_b = mse_split(B, beta0_star)
    za = np.flatnonzero(alpha0 == 0)
    zb = np.flatnonzero(beta0_star == 0)
    ia, ib = _first_nonzero(alpha0), _first_nonzero(beta0_star[:-1])
    fn_a, fn_b, fp_a, fp_b = fp_fn_rates(A, B, alpha0, beta0_star, threshold)
    return AggregateMetrics(
        scenario=spec.label,
        estimator=label,
        trials=len(results),
        failures=failures,
        mse_nonsparse_alpha=ns_a,
        mse_sparse_alpha=s_a,
        mse_nonsparse_beta=ns_b,
        mse_sparse_beta=s_b,
        median_abs_sparse_alpha=median_abs_sparse(A, za) if za.size else nan,
        median_abs_sparse_beta=median_abs_sparse(B, zb) if zb.size else nan,
        misident_alpha1=misidentification_rate(A, ia, threshold) if ia is not None else nan,
        misident_beta1=misidentification_rate(B, ib, threshold) if ib is not None else nan,
        fn_alpha=fn_a,
        fn_beta=fn_b,
        fp_alpha=fp_a,
        fp_beta=fp_b,
    )


def summarize(
    results: list[TrialResult], spec: SimulationSpec, threshold: float = DEFAULT_THRESHOLD
) -> list[AggregateMetrics]:
    return [aggregate(results, spec, label, threshold) for label in spec.estimator_labels]
