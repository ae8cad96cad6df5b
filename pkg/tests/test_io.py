import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from hetar.errors import ConstantVarianceColumn, MissingValue, ParseError, SchemaMismatch
from hetar.estimator import EstimatorState, FitOptions, TuningSchedule, ar_fit
from hetar.io import DataFileSchema, ModelArtifact, ingest, load_design, read_columns, write_csv
from hetar.preprocessing import Standardization, standardize_dataset

SCHEMA = DataFileSchema("y", ("x1", "x2"), ("z1",))


def _write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


TOY = "y,x1,x2,z1,unused\n1.0,2.0,-1.0,0.5,a\n2.0,4.0,0.0,1.5,b\n4.5,9.0,3.0,-2.0,c\n"


def test_ingest_standardizes(tmp_path):
    d, st_ = ingest(_write(tmp_path, TOY), SCHEMA)
    for A in (d.X, d.Z):
        assert_allclose(A.mean(axis=0), 0.0, atol=1e-15)
        assert_allclose(A.std(axis=0, ddof=1), 1.0, rtol=1e-14)
    assert d.y.mean() == pytest.approx(0.0, abs=1e-15)
    assert st_.y_offset == pytest.approx(7.5 / 3)
    assert d.x_names == ("x1", "x2") and d.z_names == ("z1",)


def test_ingest_raw(tmp_path):
    d, st_ = ingest(_write(tmp_path, TOY), SCHEMA, standardize=False, center_response=False)
    assert_array_equal(d.X, [[2.0, -1.0], [4.0, 0.0], [9.0, 3.0]])
    assert_array_equal(d.Z, [[0.5], [1.5], [-2.0]])
    assert_array_equal(d.y, [1.0, 2.0, 4.5])
    assert st_.y_offset == 0.0


def test_ingest_constant_variance_column(tmp_path):
    text = "y,x1,x2,z1\n1,2,3,7\n2,3,1,7\n3,1,2,7\n4,5,6,7\n"
    with pytest.raises(ConstantVarianceColumn, match="identifiab"):
        ingest(_write(tmp_path, text), SCHEMA)


@pytest.mark.parametrize("token", ["", "NA", "nan", " NaN "])
def test_missing_value_location(tmp_path, token):
    text = f"y,x1,x2,z1\n1,2,3,4\n2,{token},1,5\n"
    with pytest.raises(MissingValue) as info:
        ingest(_write(tmp_path, text), SCHEMA)
    assert info.value.row == 3 and info.value.column == "x1"


def test_parse_error_location(tmp_path):
    with pytest.raises(ParseError) as info:
        read_columns(_write(tmp_path, "y,x1\n1,2\n3,4,5\n"), ["y", "x1"])
    assert info.value.row == 3
    with pytest.raises(ParseError) as info:
        read_columns(_write(tmp_path, "y,x1\n1,2\n3,1;5\n"), ["y", "x1"])
    assert (info.value.row, info.value.column) == (3, "x1")
    with pytest.raises(ParseError):
        read_columns(_write(tmp_path, "y,x1\n1,inf\n"), ["y", "x1"])
    with pytest.raises(ParseError):
        read_columns(_write(tmp_path, ""), ["y"])
    with pytest.raises(ParseError):
        read_columns(tmp_path / "absent.csv", ["y"])


def test_decimal_comma_rejected(tmp_path):
    with pytest.raises(ParseError):
        read_columns(_write(tmp_path, 'y,x1\n"1,5",2\n'), ["y", "x1"])


def test_schema_checks(tmp_path):
    with pytest.raises(SchemaMismatch):
        ingest(_write(tmp_path, "y,x1\n1,2\n"), SCHEMA)
    with pytest.raises(SchemaMismatch):
        DataFileSchema("y", ("y", "x"), ())
    with pytest.raises(SchemaMismatch):
        DataFileSchema("y", ("x", "x"), ())


def test_load_design_optional_response(tmp_path):
    X, Z, y = load_design(_write(tmp_path, "x1,x2,z1\n1,2,3\n"), SCHEMA, require_response=False)
    assert y is None and X.shape == (1, 2)


def test_stored_standardization_reproduces_design(tmp_path):
    path = _write(tmp_path, TOY)
    d, st_ = ingest(path, SCHEMA)
    X, Z, y = load_design(path, SCHEMA)
    st2 = Standardization.from_dict(json.loads(json.dumps(st_.to_dict())))
    assert_array_equal(st2.transform_x(X), d.X)
    assert_array_equal(st2.transform_z(Z), d.Z)
    assert_array_equal(st2.transform_y(y), d.y)


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


@settings(max_examples=50, deadline=None)
@given(st.integers(4, 25), st.integers(0, 2**32 - 1), finite, st.floats(1e-3, 1e3))
def test_destandardize_roundtrip(tmp_path_factory, n, seed, shift, scale):
    g = np.random.default_rng(seed)
    M = shift + scale * g.standard_normal((n, 4))
    path = tmp_path_factory.mktemp("rt") / "d.csv"
    write_csv(path, ["y", "x1", "x2", "z1"], M.tolist())
    d, st_ = ingest(path, SCHEMA)
    assert_allclose(st_.inverse_x(d.X), M[:, 1:3], rtol=1e-12, atol=1e-12 * np.abs(M).max())
    assert_allclose(st_.inverse_z(d.Z), M[:, 3:], rtol=1e-12, atol=1e-12 * np.abs(M).max())
    assert_allclose(st_.inverse_y(d.y), M[:, 0], rtol=1e-12, atol=1e-12 * np.abs(M).max())


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=6),
       st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=2, max_size=6))
def test_artifact_bit_exact(tmp_path_factory, alpha, beta_star):
    p, q = len(alpha), len(beta_star) - 1
    model = ModelArtifact(
        EstimatorState(np.array(alpha), np.array(beta_star), 3),
        Standardization(np.full(p, 0.1), np.full(p, 3.0), np.full(q, -0.2), np.full(q, 7.0), 1 / 3),
        TuningSchedule(1.0, (0.5,) * (q + 1), 1 / 7, 0.0),
        FitOptions(k=3, stabilization="perturbed", delta_alpha=1e-8, delta_beta=1e-6),
        DataFileSchema("y", tuple(f"x{i}" for i in range(p)), tuple(f"z{i}" for i in range(q))),
    )
    path = tmp_path_factory.mktemp("m") / "model.json"
    model.save(path)
    back = ModelArtifact.load(path)
    assert back.state.alpha.tobytes() == model.state.alpha.tobytes()
    assert back.state.beta_star.tobytes() == model.state.beta_star.tobytes()
    assert back.tuning == model.tuning and back.options == model.options and back.schema == model.schema
    assert back.standardization.y_offset == 1 / 3


def test_artifact_version_check(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"format_version": 99, "kind": "hetar-model"}))
    with pytest.raises(SchemaMismatch):
        ModelArtifact.load(path)
    path.write_text("{not json")
    with pytest.raises(SchemaMismatch):
        ModelArtifact.load(path)


def test_standardize_dataset_matches_manual(rng):
    from conftest import random_dataset

    d = random_dataset(rng, n=30)
    ds, st_ = standardize_dataset(d)
    assert_allclose(ds.X, (d.X - d.X.mean(0)) / d.X.std(0, ddof=1))
    res = ar_fit(ds, TuningSchedule(1.0, 1.0, 0.1, 0.1), FitOptions(k=1))
    assert np.all(np.isfinite(res.final.vector))
    ident = Standardization.identity(d.p, d.q)
    assert_array_equal(ident.apply(d).X, d.X)
