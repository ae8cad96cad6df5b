"""CSV ingestion, model artifacts and table output.

Data files are UTF-8, comma separated, ``.`` decimal, with a mandatory header
row.  Model artifacts are JSON; floats are written with Python's shortest
round-trip representation so every coefficient reloads bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import (
    ConstantVarianceColumn,
    MissingValue,
    ParseError,
    SchemaMismatch,
)
from .estimator import Dataset, EstimatorState, FitOptions, TuningSchedule, predict
from .preprocessing import Standardization

FORMAT_VERSION = 1
MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none"})


@dataclass(frozen=True)
class DataFileSchema:
    response_column: str
    mean_columns: tuple[str, ...]
    variance_columns: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "mean_columns", tuple(self.mean_columns))
        object.__setattr__(self, "variance_columns", tuple(self.variance_columns))
        if self.response_column in self.mean_columns or self.response_column in self.variance_columns:
            raise SchemaMismatch(f"response {self.response_column!r} is also listed as a covariate")
        for name, cols in (("mean_columns", self.mean_columns), ("variance_columns", self.variance_columns)):
            if len(set(cols)) != len(cols):
                raise SchemaMismatch(f"{name} lists a column twice")

    def to_dict(self) -> dict:
        return {
            "response_column": self.response_column,
            "mean_columns": list(self.mean_columns),
            "variance_columns": list(self.variance_columns),
        }


def read_columns(
    path: str | Path, columns: Sequence[str], optional: Sequence[str] = ()
) -> dict[str, NDArray[np.float64]]:
    """Read the named numeric columns of a CSV file.

    Columns in ``optional`` are returned only when present in the header.
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot open {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh, delimiter=",")
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path} is empty; a header row is required") from None
        except csv.Error as exc:
            raise ParseError(str(exc), row=1) from None
        header = [h.strip() for h in header]
        missing = [c for c in columns if c not in header]
        if missing:
            raise SchemaMismatch(f"{path} has no column(s) {missing}")
        wanted = list(columns) + [c for c in optional if c in header and c not in columns]
        pos = {c: header.index(c) for c in wanted}
        values: dict[str, list[float]] = {c: [] for c in wanted}
        line = 1
        try:
            for line, row in enumerate(reader, start=2):
                if not row or all(not f.strip() for f in row):
                    continue
                if len(row) != len(header):
                    raise ParseError(
                        f"expected {len(header)} fields, found {len(row)}", row=line
                    )
                for c in wanted:
                    raw = row[pos[c]].strip()
                    if raw.lower() in MISSING_TOKENS:
                        raise MissingValue("missing value", row=line, column=c)
                    try:
                        v = float(raw)
                    except ValueError:
                        raise ParseError(f"not a number: {raw!r}", row=line, column=c) from None
                    if not math.isfinite(v):
                        raise ParseError(f"non-finite value {raw!r}", row=line, column=c)
                    values[c].append(v)
        except csv.Error as exc:
            raise ParseError(str(exc), row=line + 1) from None
    return {c: np.array(v, dtype=np.float64) for c, v in values.items()}


def _stack(cols: dict[str, NDArray], names: Sequence[str], n: int) -> NDArray[np.float64]:
    if not names:
        return np.empty((n, 0))
    return np.column_stack([cols[c] for c in names])


def load_design(
    path: str | Path, schema: DataFileSchema, require_response: bool = True
) -> tuple[NDArray, NDArray, NDArray | None]:
    """Raw ``(X, Z, y)`` from a CSV; ``y`` is None if absent and not required."""
    needed = list(dict.fromkeys(list(schema.mean_columns) + list(schema.variance_columns)))
    if require_response:
        cols = read_columns(path, [schema.response_column] + needed)
    else:
        cols = read_columns(path, needed, optional=[schema.response_column])
    n = len(next(iter(cols.values()))) if cols else 0
    y = cols.get(schema.response_column)
    return _stack(cols, schema.mean_columns, n), _stack(cols, schema.variance_columns, n), y


def ingest(
    path: str | Path,
    schema: DataFileSchema,
    standardize: bool = True,
    center_response: bool = True,
) -> tuple[Dataset, Standardization]:
    """Read a data file into a :class:`Dataset`.

    With ``standardize`` every selected covariate column is shifted to mean 0
    and scaled to unit sample standard deviation (n - 1 denominator); with
    ``center_response`` the response mean is subtracted.  The statistics are
    returned for reuse at prediction time.  The all-ones variance column is
    added internally and must not appear in the file.
    """
    X, Z, y = load_design(path, schema)
    if y.size == 0:
        raise ParseError(f"{path} has no data rows")
    if Z.shape[1]:
        const = [schema.variance_columns[j] for j in np.flatnonzero(np.ptp(Z, axis=0) == 0)]
        if const:
            raise ConstantVarianceColumn(
                f"variance column(s) {const} are constant; the variance intercept is "
                "estimated internally and an extra constant column is not identifiable"
            )
    st = Standardization.fit(X, Z, y, standardize, center_response)
    d = Dataset(
        st.transform_y(y),
        st.transform_x(X),
        st.transform_z(Z),
        schema.mean_columns,
        schema.variance_columns,
    )
    return d, st


# --------------------------------------------------------------------------
# serialization helpers


def tuning_to_dict(t: TuningSchedule) -> dict:
    def conv(v):
        return list(v) if isinstance(v, tuple) else v

    return {"psi": conv(t.psi), "omega": conv(t.omega), "lambda": conv(t.lambda_), "gamma": conv(t.gamma)}


def tuning_from_dict(data: dict) -> TuningSchedule:
    return TuningSchedule(
        psi=data.get("psi", 0.0),
        omega=data.get("omega", 0.0),
        lambda_=data.get("lambda", 0.0),
        gamma=data.get("gamma", 0.0),
    )


def options_to_dict(o: FitOptions) -> dict:
    return {
        "k": o.k,
        "stabilization": o.stabilization,
        "delta_alpha": o.delta_alpha,
        "delta_beta": o.delta_beta,
        "bar_tolerance": o.bar_tolerance,
        "bar_max_iterations": int(o.bar_max_iterations),
        "divergence_bound": o.divergence_bound,
    }


def options_from_dict(data: dict) -> FitOptions:
    return FitOptions(**data)


@dataclass
class ModelArtifact:
    """A fitted state plus everything needed to predict from raw data."""

    state: EstimatorState
    standardization: Standardization
    tuning: TuningSchedule
    options: FitOptions
    schema: DataFileSchema
    converged: bool | None = None
    format_version: int = FORMAT_VERSION

    def predict_raw(self, X: ArrayLike, Z: ArrayLike) -> tuple[NDArray, NDArray]:
        """Mean and variance predictions on the original response scale."""
        st = self.standardization
        mean, var = predict(self.state, st.transform_x(X), st.transform_z(Z))
        return st.inverse_y(mean), var

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "kind": "hetar-model",
            "schema": self.schema.to_dict(),
            "state": {
                "alpha": self.state.alpha.tolist(),
                "beta_star": self.state.beta_star.tolist(),
                "iteration": int(self.state.iteration),
                "converged": self.converged,
            },
            "standardization": self.standardization.to_dict(),
            "tuning": tuning_to_dict(self.tuning),
            "options": options_to_dict(self.options),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelArtifact":
        version = data.get("format_version")
        if version != FORMAT_VERSION or data.get("kind") != "hetar-model":
            raise SchemaMismatch(f"unsupported model artifact (format_version={version!r})")
        s = data["state"]
        return cls(
            state=EstimatorState(np.array(s["alpha"], dtype=np.float64), np.array(s["beta_star"], dtype=np.float64), int(s["iteration"])),
            standardization=Standardization.from_dict(data["standardization"]),
            tuning=tuning_from_dict(data["tuning"]),
            options=options_from_dict(data["options"]),
            schema=DataFileSchema(**data["schema"]),
            converged=s.get("converged"),
            format_version=version,
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ModelArtifact":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise SchemaMismatch(f"cannot read model artifact {path}: {exc}") from None
        return cls.from_dict(data)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write a header plus rows with a fixed dialect and exact float text."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
