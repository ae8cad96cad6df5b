"""Run configuration files.

Configs are JSON objects with a ``format_version`` and a ``command`` key plus
one payload per subcommand.  Parsing is strict: unknown keys raise
:class:`ConfigError`, and every default is filled in so that serializing a
parsed config writes out the complete run description.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .estimator import BAR, DEFAULT_THRESHOLD, FitOptions, TuningSchedule
from .io import DataFileSchema, options_to_dict, tuning_from_dict, tuning_to_dict
from .simulation import NoiseKind, SimulationSpec
from .tuning import AXES, CvPlan, Grid, log10_grid

FORMAT_VERSION = 1
COMMANDS = ("fit", "simulate", "cv", "diagnose")


def _check_keys(data: Any, allowed: set[str], where: str, required: set[str] = frozenset()) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    missing = sorted(required - set(data))
    if missing:
        raise ConfigError(f"{where}: missing required key(s) {missing}")
    return data


def _wrap(where: str, fn, *args, **kwargs):
    """Call a constructor, turning validation errors into ConfigError."""
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


# --------------------------------------------------------------------------
# shared sections


@dataclass(frozen=True)
class DataSection:
    path: str
    schema: DataFileSchema
    standardize: bool = True
    center_response: bool = True

    @classmethod
    def parse(cls, data: Any, where: str = "data") -> "DataSection":
        keys = {"path", "response_column", "mean_columns", "variance_columns", "standardize", "center_response"}
        _check_keys(data, keys, where, {"path", "response_column"})
        schema = _wrap(
            where,
            DataFileSchema,
            str(data["response_column"]),
            tuple(str(c) for c in data.get("mean_columns", [])),
            tuple(str(c) for c in data.get("variance_columns", [])),
        )
        return cls(
            str(data["path"]),
            schema,
            _bool(data.get("standardize", True), f"{where}.standardize"),
            _bool(data.get("center_response", True), f"{where}.center_response"),
        )

    def to_dict(self) -> dict:
        out = {"path": self.path}
        out.update(self.schema.to_dict())
        out.update(standardize=self.standardize, center_response=self.center_response)
        return out


def _bool(v: Any, where: str) -> bool:
    if not isinstance(v, bool):
        raise ConfigError(f"{where}: expected true/false, got {v!r}")
    return v


def _number(v: Any, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {v!r}")
    return float(v)


def _int(v: Any, where: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}: expected an integer, got {v!r}")
    return v


def parse_options(data: Any, where: str = "options") -> FitOptions:
    keys = {"k", "stabilization", "delta_alpha", "delta_beta", "bar_tolerance", "bar_max_iterations", "divergence_bound"}
    _check_keys(data if data is not None else {}, keys, where)
    data = dict(data or {})
    k = data.get("k", 0)
    if isinstance(k, str):
        if k.lower() != BAR:
            raise ConfigError(f"{where}.k: expected an integer or \"bar\", got {k!r}")
        data["k"] = BAR
    return _wrap(where, FitOptions, **data)


def parse_tuning(data: Any, where: str = "tuning") -> str | TuningSchedule:
    """``"default_rates"``, a path to a ``best_tuning.json`` file, or an explicit object."""
    if isinstance(data, str):
        return data
    _check_keys(data, {"psi", "omega", "lambda", "gamma"}, where, {"psi", "omega", "lambda", "gamma"})
    return _wrap(where, tuning_from_dict, data)


def _tuning_out(t: str | TuningSchedule):
    return t if isinstance(t, str) else tuning_to_dict(t)


def load_tuning_file(path: str | Path) -> TuningSchedule:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read tuning file {path}: {exc}") from None
    _check_keys(data, {"format_version", "criterion", "score", "tuning"}, str(path), {"tuning"})
    t = parse_tuning(data["tuning"], f"{path}:tuning")
    if isinstance(t, str):
        raise ConfigError(f"{path}: tuning must be an object")
    return t


# --------------------------------------------------------------------------
# payloads


@dataclass(frozen=True)
class SplitSection:
    test_fraction: float

    @classmethod
    def parse(cls, data: Any) -> "SplitSection | None":
        if data is None:
            return None
        _check_keys(data, {"test_fraction"}, "split", {"test_fraction"})
        f = _number(data["test_fraction"], "split.test_fraction")
        if not 0.0 < f < 1.0:
            raise ConfigError("split.test_fraction must lie strictly between 0 and 1")
        return cls(f)


@dataclass(frozen=True)
class FitConfig:
    data: DataSection
    tuning: str | TuningSchedule = "default_rates"
    options: FitOptions = FitOptions()
    threshold: float = DEFAULT_THRESHOLD
    split: SplitSection | None = None
    seed: int = 0

    @classmethod
    def parse(cls, p: dict) -> "FitConfig":
        _check_keys(p, {"data", "tuning", "options", "threshold", "split", "seed"}, "fit", {"data"})
        return cls(
            DataSection.parse(p["data"], "fit.data"),
            parse_tuning(p.get("tuning", "default_rates"), "fit.tuning"),
            parse_options(p.get("options"), "fit.options"),
            _number(p.get("threshold", DEFAULT_THRESHOLD), "fit.threshold"),
            SplitSection.parse(p.get("split")),
            _int(p.get("seed", 0), "fit.seed"),
        )

    def to_dict(self) -> dict:
        return {
            "data": self.data.to_dict(),
            "tuning": _tuning_out(self.tuning),
            "options": options_to_dict(self.options),
            "threshold": self.threshold,
            "split": None if self.split is None else {"test_fraction": self.split.test_fraction},
            "seed": self.seed,
        }


def _parse_noise(data: Any, where: str) -> NoiseKind:
    _check_keys(data, {"tag", "standardize_variance", "df"}, where)
    return _wrap(where, NoiseKind, **data)


_SCENARIO_KEYS = {"name", "n", "p", "q", "rho", "alpha0", "beta0", "noise", "trials", "estimators", "tuning"}


def _parse_scenario(data: Any, where: str, seed: int, options: FitOptions) -> SimulationSpec:
    _check_keys(data, _SCENARIO_KEYS, where)
    kw = dict(data)
    kw["noise"] = _parse_noise(kw.get("noise", {}), f"{where}.noise")
    if "tuning" in kw:
        kw["tuning"] = parse_tuning(kw["tuning"], f"{where}.tuning")
        if isinstance(kw["tuning"], str) and kw["tuning"] != "default_rates":
            kw["tuning"] = load_tuning_file(kw["tuning"])
    if "estimators" in kw:
        kw["estimators"] = tuple(kw["estimators"])
    return _wrap(where, SimulationSpec, master_seed=seed, fit_options=options, **kw)


def _scenario_out(s: SimulationSpec) -> dict:
    return {
        "name": s.name,
        "n": s.n,
        "p": s.p,
        "q": s.q,
        "rho": s.rho,
        "alpha0": list(s.alpha0),
        "beta0": list(s.beta0),
        "noise": {"tag": s.noise.tag, "standardize_variance": s.noise.standardize_variance, "df": s.noise.df},
        "trials": s.trials,
        "estimators": list(s.estimators),
        "tuning": _tuning_out(s.tuning),
    }


@dataclass(frozen=True)
class SimulateConfig:
    """Scenarios plus the figure-data selection.

    ``histogram_component`` is the 0-based mean coefficient whose estimates are
    binned; ``qq_component`` is the 0-based variance coefficient whose initial
    estimates feed the QQ table.
    """

    scenarios: tuple[SimulationSpec, ...]
    seed: int = 0
    options: FitOptions = FitOptions()
    threshold: float = DEFAULT_THRESHOLD
    histogram_component: int = 10
    histogram_bins: int = 30
    qq_component: int = 0

    @classmethod
    def parse(cls, p: dict) -> "SimulateConfig":
        keys = {"scenarios", "seed", "options", "threshold", "histogram_component", "histogram_bins", "qq_component"}
        _check_keys(p, keys, "simulate", {"scenarios"})
        seed = _int(p.get("seed", 0), "simulate.seed")
        options = parse_options(p.get("options"), "simulate.options")
        raw = p["scenarios"]
        if not isinstance(raw, list) or not raw:
            raise ConfigError("simulate.scenarios must be a non-empty list")
        scen = tuple(_parse_scenario(s, f"simulate.scenarios[{i}]", seed, options) for i, s in enumerate(raw))
        labels = [s.label for s in scen]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"simulate.scenarios: duplicate scenario labels {labels}; set distinct names")
        return cls(
            scen,
            seed,
            options,
            _number(p.get("threshold", DEFAULT_THRESHOLD), "simulate.threshold"),
            _int(p.get("histogram_component", 10), "simulate.histogram_component"),
            _int(p.get("histogram_bins", 30), "simulate.histogram_bins"),
            _int(p.get("qq_component", 0), "simulate.qq_component"),
        )

    def with_seed(self, seed: int) -> "SimulateConfig":
        return replace(self, seed=seed, scenarios=tuple(replace(s, master_seed=seed) for s in self.scenarios))

    def to_dict(self) -> dict:
        return {
            "scenarios": [_scenario_out(s) for s in self.scenarios],
            "seed": self.seed,
            "options": options_to_dict(self.options),
            "threshold": self.threshold,
            "histogram_component": self.histogram_component,
            "histogram_bins": self.histogram_bins,
            "qq_component": self.qq_component,
        }


def _parse_axis(v: Any, where: str) -> tuple[float, ...]:
    """A list of values or ``{"log10": [start, stop, step]}``."""
    if isinstance(v, dict):
        _check_keys(v, {"log10"}, where, {"log10"})
        spec = v["log10"]
        if not (isinstance(spec, list) and len(spec) == 3):
            raise ConfigError(f"{where}.log10 must be [start, stop, step]")
        start, stop, step = (_number(x, f"{where}.log10") for x in spec)
        if step <= 0 or stop < start:
            raise ConfigError(f"{where}.log10 needs step > 0 and stop >= start")
        return log10_grid(start, stop, step)
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return (float(v),)
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{where}: expected a non-empty list of numbers")
    return tuple(_number(x, where) for x in v)


@dataclass(frozen=True)
class CvConfig:
    data: DataSection
    grid: Grid
    plan: CvPlan = CvPlan()
    stages: tuple[tuple[str, ...], ...] | None = None
    options: FitOptions = FitOptions()
    fold_standardize: bool = True

    @classmethod
    def parse(cls, p: dict) -> "CvConfig":
        keys = {"data", "grid", "plan", "stages", "options", "fold_standardize"}
        _check_keys(p, keys, "cv", {"data", "grid"})
        g = _check_keys(p["grid"], set(AXES) | {"search_axes"}, "cv.grid")
        grid = _wrap(
            "cv.grid",
            Grid,
            **{f"{a}_values": _parse_axis(g.get(a, [0.0]), f"cv.grid.{a}") for a in AXES},
            search_axes=tuple(g.get("search_axes", AXES)),
        )
        plan_d = _check_keys(p.get("plan", {}), {"folds", "criterion", "shuffle_seed"}, "cv.plan")
        plan = _wrap("cv.plan", CvPlan, **plan_d)
        stages = p.get("stages")
        if stages is not None:
            if not isinstance(stages, list) or not all(isinstance(s, list) for s in stages):
                raise ConfigError("cv.stages must be a list of lists of axis names")
            stages = tuple(tuple(str(a) for a in s) for s in stages)
            flat = [a for s in stages for a in s]
            if sorted(flat) != sorted(grid.search_axes) or len(set(flat)) != len(flat):
                raise ConfigError(f"cv.stages must cover search axes {list(grid.search_axes)} exactly once")
        return cls(
            DataSection.parse(p["data"], "cv.data"),
            grid,
            plan,
            stages,
            parse_options(p.get("options"), "cv.options"),
            _bool(p.get("fold_standardize", True), "cv.fold_standardize"),
        )

    def with_seed(self, seed: int) -> "CvConfig":
        return replace(self, plan=replace(self.plan, shuffle_seed=seed))

    def to_dict(self) -> dict:
        grid = {a: list(self.grid.values(a)) for a in AXES}
        grid["search_axes"] = list(self.grid.search_axes)
        return {
            "data": self.data.to_dict(),
            "grid": grid,
            "plan": {"folds": self.plan.folds, "criterion": self.plan.criterion, "shuffle_seed": self.plan.shuffle_seed},
            "stages": None if self.stages is None else [list(s) for s in self.stages],
            "options": options_to_dict(self.options),
            "fold_standardize": self.fold_standardize,
        }


@dataclass(frozen=True)
class DiagnoseConfig:
    data: DataSection
    model: str | None = None
    singularity_tol: float = 1e-8

    @classmethod
    def parse(cls, p: dict) -> "DiagnoseConfig":
        _check_keys(p, {"data", "model", "singularity_tol"}, "diagnose", {"data"})
        model = p.get("model")
        if model is not None and not isinstance(model, str):
            raise ConfigError("diagnose.model must be a path or null")
        tol = _number(p.get("singularity_tol", 1e-8), "diagnose.singularity_tol")
        return cls(DataSection.parse(p["data"], "diagnose.data"), model, tol)

    def to_dict(self) -> dict:
        return {"data": self.data.to_dict(), "model": self.model, "singularity_tol": self.singularity_tol}


_PAYLOADS = {"fit": FitConfig, "simulate": SimulateConfig, "cv": CvConfig, "diagnose": DiagnoseConfig}


@dataclass(frozen=True)
class RunConfig:
    command: str
    payload: Any = field(compare=True)
    format_version: int = FORMAT_VERSION

    @classmethod
    def parse(cls, data: Any) -> "RunConfig":
        _check_keys(data, {"format_version", "command"} | set(COMMANDS), "config", {"format_version", "command"})
        if data["format_version"] != FORMAT_VERSION:
            raise ConfigError(f"unsupported format_version {data['format_version']!r}")
        cmd = data["command"]
        if cmd not in COMMANDS:
            raise ConfigError(f"command must be one of {list(COMMANDS)}, got {cmd!r}")
        extra = sorted(k for k in COMMANDS if k in data and k != cmd)
        if extra:
            raise ConfigError(f"config for {cmd!r} also carries section(s) {extra}")
        return cls(cmd, _PAYLOADS[cmd].parse(data.get(cmd, {})))

    def to_dict(self) -> dict:
        return {"format_version": self.format_version, "command": self.command, self.command: self.payload.to_dict()}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return RunConfig.parse(data)
