"""``hetar`` command-line entry point.

Subcommands: fit, simulate, cv, diagnose and predict.  Exit codes are 0 on
success, 1 for usage or config errors, 2 for data errors and 3 for numerical
failures.  All tables are written as CSV from the main thread after the
parallel work has finished.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import CvConfig, DiagnoseConfig, FitConfig, RunConfig, SimulateConfig, load_config, load_tuning_file
from .errors import (
    ConfigError,
    ConstantVarianceColumn,
    ConvergenceFailure,
    DataError,
    HetarError,
    ParseError,
    SchemaMismatch,
)
from .estimator import Dataset, TuningSchedule, assumption_diagnostics, fit, support
from .io import FORMAT_VERSION, ModelArtifact, ingest, load_design, tuning_to_dict, write_csv
from .preprocessing import Standardization
from .simulation import histogram, qq_data, run_trials, summarize
from .tuning import AXES, grid_search, point_to_schedule, spe, staged_search

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


def _dataset(y, X, Z, schema) -> Dataset:
    try:
        return Dataset(y, X, Z, schema.mean_columns, schema.variance_columns)
    except ValueError as exc:
        raise DataError(str(exc)) from None


def _check_variance_columns(Z, schema) -> None:
    if Z.shape[0] and Z.shape[1]:
        const = [schema.variance_columns[j] for j in np.flatnonzero(np.ptp(Z, axis=0) == 0)]
        if const:
            raise ConstantVarianceColumn(
                f"variance column(s) {const} are constant on the training rows; the variance "
                "intercept is estimated internally and an extra constant column is not identifiable"
            )


def _split(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded uniform shuffle, then the first rows train and the rest test."""
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(n * fraction))
    if n_test < 1 or n_test >= n:
        raise ConfigError(f"test_fraction {fraction} leaves an empty train or test set for n={n}")
    return np.sort(perm[: n - n_test]), np.sort(perm[n - n_test :])


def _resolve_tuning(tuning, n: int) -> TuningSchedule:
    if isinstance(tuning, TuningSchedule):
        return tuning
    if tuning == "default_rates":
        return TuningSchedule.default_rates(n)
    return load_tuning_file(tuning)


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return "[" + ", ".join(repr(float(x)) for x in v) + "]"
    return repr(float(v))


# --------------------------------------------------------------------------
# fit


def cmd_fit(cfg: FitConfig, out: Path, now: str | None = None) -> dict:
    """Fit one estimator and write ``model.json``, ``report.txt`` and ``coefficients.csv``."""
    schema = cfg.data.schema
    X, Z, y = load_design(cfg.data.path, schema)
    n = y.size
    if n == 0:
        raise ParseError(f"{cfg.data.path} has no data rows")
    if cfg.split is not None:
        train, test = _split(n, cfg.split.test_fraction, cfg.seed)
    else:
        train, test = np.arange(n), np.arange(0)
    _check_variance_columns(Z[train], schema)
    st = Standardization.fit(X[train], Z[train], y[train], cfg.data.standardize, cfg.data.center_response)
    d = _dataset(st.transform_y(y[train]), st.transform_x(X[train]), st.transform_z(Z[train]), schema)
    tuning = _resolve_tuning(cfg.tuning, d.n)

    res = fit(d, tuning, cfg.options)
    if res.diverged:
        raise ConvergenceFailure(
            f"BAR diverged at iteration {res.final.iteration} (norm bound {cfg.options.divergence_bound:g})"
        )
    model = ModelArtifact(res.final, st, tuning, cfg.options, schema, converged=res.converged)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "model.json")

    def mspe(rows):
        mean, _ = model.predict_raw(X[rows], Z[rows])
        return spe(mean, y[rows])

    train_mspe = mspe(train)
    test_mspe = mspe(test) if test.size else None
    sa, sb = support(res.final, cfg.threshold)
    state = res.final

    rows = []
    for j, name in enumerate(schema.mean_columns):
        rows.append(("mean", name, state.alpha[j], j in sa))
    for j, name in enumerate(schema.variance_columns):
        rows.append(("variance", name, state.beta[j], j in sb))
    rows.append(("variance", "(intercept)", state.c0, None))
    write_csv(out / "coefficients.csv", ["block", "name", "estimate", "selected"], rows)

    label = "BAR" if cfg.options.is_bar else f"k={cfg.options.k}"
    now = now or _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    lines = [
        "hetar fit report",
        f"generated: {now}",
        f"data: {cfg.data.path}",
        f"rows: {n} (train {train.size}, test {test.size})",
        f"estimator: {label}, stabilization {cfg.options.stabilization}",
        f"iterations: {state.iteration}",
        f"converged: {'n/a' if res.converged is None else str(res.converged).lower()}",
        "tuning: " + ", ".join(f"{k}={_fmt(v)}" for k, v in tuning_to_dict(tuning).items()),
        f"threshold: {cfg.threshold!r}",
        f"selected predictors (mean): {sa.size} of {d.p}",
        f"selected predictors (variance): {sb.size} of {d.q}",
        f"train MSPE: {train_mspe!r}",
    ]
    if test_mspe is not None:
        lines.append(f"test MSPE: {test_mspe!r}")
    lines += ["", "block,name,estimate,selected"]
    for block, name, est, sel in rows:
        flag = "" if sel is None else ("yes" if sel else "no")
        lines.append(f"{block},{name},{float(est)!r},{flag}")
    (out / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return {"train_mspe": train_mspe, "test_mspe": test_mspe, "model": model}


# --------------------------------------------------------------------------
# simulate

_TABLES = {
    "mse_alpha.csv": ("mse_nonsparse_alpha", "mse_sparse_alpha"),
    "mse_beta.csv": ("mse_nonsparse_beta", "mse_sparse_beta"),
    "median_abs_sparse.csv": ("median_abs_sparse_alpha", "median_abs_sparse_beta"),
    "misidentification.csv": ("misident_alpha1", "misident_beta1"),
    "selection_errors.csv": ("fn_alpha", "fn_beta", "fp_alpha", "fp_beta"),
}


def cmd_simulate(cfg: SimulateConfig, out: Path, threads: int = 1) -> list:
    """Run each scenario and write one CSV per metric family plus figure data."""
    out.mkdir(parents=True, exist_ok=True)
    metrics, hist_rows, qq_rows, fail_rows = [], [], [], []
    for spec in cfg.scenarios:
        results = run_trials(spec, workers=threads)
        metrics.extend(summarize(results, spec, cfg.threshold))
        for r in results:
            for label, reason in sorted(r.failures.items()):
                fail_rows.append((spec.label, r.trial_index, label, reason))
        if 0 <= cfg.histogram_component < spec.p:
            for label in spec.estimator_labels:
                vals = [r.states[label].alpha[cfg.histogram_component] for r in results if label in r.states]
                if vals:
                    for lo, hi, c in histogram(vals, cfg.histogram_bins):
                        hist_rows.append((spec.label, label, cfg.histogram_component, lo, hi, c))
        initial = []
        if 0 <= cfg.qq_component <= spec.q:
            initial = [r.states["k=0"].beta_star[cfg.qq_component] for r in results if "k=0" in r.states]
        if len(initial) >= 10:
            qq = qq_data(initial)
            for t, s in qq.pairs():
                qq_rows.append((spec.label, cfg.qq_component, t, s, qq.correlation))

    base = ["scenario", "estimator", "trials", "failures"]
    rows = [m.as_row() for m in metrics]
    write_csv(out / "metrics.csv", list(rows[0]) if rows else base, [list(r.values()) for r in rows])
    for fname, cols in _TABLES.items():
        write_csv(out / fname, base + list(cols), [[r[c] for c in base + list(cols)] for r in rows])
    write_csv(out / "histogram.csv", ["scenario", "estimator", "component", "bin_low", "bin_high", "count"], hist_rows)
    write_csv(out / "qq_initial_beta.csv", ["scenario", "component", "theoretical", "sample", "correlation"], qq_rows)
    write_csv(out / "failures.csv", ["scenario", "trial", "estimator", "reason"], fail_rows)
    return metrics


# --------------------------------------------------------------------------
# cv


def cmd_cv(cfg: CvConfig, out: Path, threads: int = 1) -> TuningSchedule:
    """Grid or staged search; writes ``cv_table.csv`` and ``best_tuning.json``."""
    d, _ = ingest(cfg.data.path, cfg.data.schema, standardize=False, center_response=False)
    common = dict(
        fold_standardize=cfg.fold_standardize,
        center_response=cfg.data.center_response,
        workers=threads,
    )
    if cfg.stages is None:
        best, table = grid_search(d, cfg.grid, cfg.plan, cfg.options, **common)
        log = [(0, p, s) for p, s in table]
    else:
        log = []
        best = staged_search(d, cfg.stages, cfg.grid, cfg.plan, cfg.options, log=log, **common)
    last = max(stage for stage, _, _ in log)
    best_score = next(s for stage, p, s in log if stage == last and point_to_schedule(p) == best)

    out.mkdir(parents=True, exist_ok=True)
    crit = cfg.plan.criterion
    write_csv(
        out / "cv_table.csv",
        ["stage", *AXES, crit],
        [(stage, *(p[a] for a in AXES), s) for stage, p, s in log],
    )
    doc = {"format_version": FORMAT_VERSION, "criterion": crit, "score": best_score, "tuning": tuning_to_dict(best)}
    (out / "best_tuning.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return best


# --------------------------------------------------------------------------
# diagnose


def cmd_diagnose(cfg: DiagnoseConfig, out: Path):
    """Write ``diagnostics.csv``; with a model also ``residual_qq.csv``."""
    schema = cfg.data.schema
    model = None
    if cfg.model is not None:
        model = ModelArtifact.load(cfg.model)
        if model.schema != schema:
            raise SchemaMismatch("model was trained on different columns than the config lists")
        X, Z, y = load_design(cfg.data.path, schema)
        _check_variance_columns(Z, schema)
        st = model.standardization
        d = _dataset(st.transform_y(y), st.transform_x(X), st.transform_z(Z), schema)
    else:
        d, _ = ingest(cfg.data.path, schema, cfg.data.standardize, cfg.data.center_response)
    report = assumption_diagnostics(d, None if model is None else model.state.beta, cfg.singularity_tol)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "diagnostics.csv", ["quantity", "value"], report.rows())
    if model is not None:
        mean, var = model.predict_raw(X, Z)
        resid = (y - mean) / np.sqrt(var)
        qq = qq_data(resid)
        write_csv(
            out / "residual_qq.csv",
            ["theoretical", "sample", "correlation"],
            [(t, s, qq.correlation) for t, s in qq.pairs()],
        )
    return report


# --------------------------------------------------------------------------
# predict


def cmd_predict(model_path: str | Path, data_path: str | Path, out: Path) -> float | None:
    """Per-row mean and variance; returns the MSPE when the response is present."""
    model = ModelArtifact.load(model_path)
    X, Z, y = load_design(data_path, model.schema, require_response=False)
    mean, var = model.predict_raw(X, Z)
    out.mkdir(parents=True, exist_ok=True)
    if y is None:
        write_csv(out / "predictions.csv", ["row", "mean", "variance"], zip(range(len(mean)), mean, var))
        return None
    write_csv(
        out / "predictions.csv",
        ["row", "mean", "variance", "response", "squared_error"],
        zip(range(len(mean)), mean, var, y, (y - mean) ** 2),
    )
    mspe = spe(mean, y)
    write_csv(out / "prediction_error.csv", ["rows", "mspe"], [(len(y), mspe)])
    return mspe


# --------------------------------------------------------------------------
# argument handling


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hetar", description="Adaptive ridge fits for heteroscedastic regression.")
    parser.add_argument("--version", action="version", version=f"hetar {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, help="override the seed in the config")
        p.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
        p.add_argument("--out", default=".", help="output directory (default: current)")

    common(sub.add_parser("fit", help="fit a model and write model.json and report.txt"))
    common(sub.add_parser("simulate", help="run Monte-Carlo scenarios"))
    common(sub.add_parser("cv", help="cross-validated penalty search"))
    common(sub.add_parser("diagnose", help="design eigenvalue and residual checks"))
    p = sub.add_parser("predict", help="predict from a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    common(p, config=False)
    return parser


def _with_seed(rc: RunConfig, seed: int | None) -> RunConfig:
    if seed is None:
        return rc
    payload = rc.payload
    if isinstance(payload, FitConfig):
        payload = replace(payload, seed=seed)
    elif isinstance(payload, (SimulateConfig, CvConfig)):
        payload = payload.with_seed(seed)
    return RunConfig(rc.command, payload, rc.format_version)


def run(args: argparse.Namespace) -> int:
    out = Path(args.out)
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        raise ConfigError("--seed must be an unsigned 64-bit integer")
    if args.command == "predict":
        mspe = cmd_predict(args.model, args.data, out)
        if mspe is not None:
            print(f"MSPE: {mspe!r}")
        return EXIT_OK
    rc = load_config(args.config)
    if rc.command != args.command:
        raise ConfigError(f"config is for {rc.command!r}, not {args.command!r}")
    rc = _with_seed(rc, args.seed)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{args.command}_config.resolved.json").write_text(rc.dumps(), encoding="utf-8")
    cfg = rc.payload
    if args.command == "fit":
        res = cmd_fit(cfg, out)
        print(f"train MSPE: {res['train_mspe']!r}")
        if res["test_mspe"] is not None:
            print(f"test MSPE: {res['test_mspe']!r}")
    elif args.command == "simulate":
        cmd_simulate(cfg, out, args.threads)
    elif args.command == "cv":
        best = cmd_cv(cfg, out, args.threads)
        print("best: " + ", ".join(f"{k}={_fmt(v)}" for k, v in tuning_to_dict(best).items()))
    else:
        cmd_diagnose(cfg, out)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except Exception as err:
        exc = err
    if isinstance(exc, ConfigError):
        code = EXIT_USAGE
    elif isinstance(exc, DataError):
        code = EXIT_DATA
    elif isinstance(exc, (HetarError, np.linalg.LinAlgError, FloatingPointError)):
        code = EXIT_NUMERIC
    elif isinstance(exc, (TypeError, ValueError)):
        code = EXIT_USAGE
    else:
        raise exc
    where = getattr(exc, "iteration", None)
    ctx = f" (iteration {where})" if where is not None else ""
    print(f"hetar {args.command}: {type(exc).__name__}{ctx}: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
