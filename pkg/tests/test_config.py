import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetar.config import RunConfig, load_config
from hetar.errors import ConfigError
from hetar.estimator import BAR, FitOptions, TuningSchedule
from hetar.simulation import NoiseKind

DATA = {"path": "d.csv", "response_column": "y", "mean_columns": ["x1", "x2"], "variance_columns": ["z1"]}

EXAMPLES = {
    "fit": {"data": DATA, "options": {"k": 10}, "split": {"test_fraction": 0.2}, "seed": 4},
    "simulate": {
        "seed": 9,
        "scenarios": [
            {"n": 100, "trials": 3, "estimators": [0, 2, "bar"]},
            {"name": "t3", "n": 200, "p": 4, "q": 3, "noise": {"tag": "t", "standardize_variance": True}},
        ],
    },
    "cv": {
        "data": DATA,
        "grid": {"psi": {"log10": [-2, 2, 1]}, "omega": 1.0, "lambda": [0.1, 1.0], "search_axes": ["psi", "lambda"]},
        "stages": [["psi"], ["lambda"]],
        "plan": {"criterion": "median_spe"},
    },
    "diagnose": {"data": DATA, "model": "m.json"},
}


def _cfg(cmd, payload):
    return {"format_version": 1, "command": cmd, cmd: payload}


@pytest.mark.parametrize("cmd", sorted(EXAMPLES))
def test_roundtrip(cmd):
    rc = RunConfig.parse(_cfg(cmd, EXAMPLES[cmd]))
    again = RunConfig.parse(json.loads(rc.dumps()))
    assert again == rc
    assert again.dumps() == rc.dumps()


def test_defaults_are_explicit():
    out = RunConfig.parse(_cfg("fit", {"data": DATA})).to_dict()["fit"]
    assert out["tuning"] == "default_rates"
    assert out["options"] == {
        "k": 0, "stabilization": "rescaled", "delta_alpha": None, "delta_beta": None,
        "bar_tolerance": 1e-10, "bar_max_iterations": 500, "divergence_bound": 1e8,
    }
    assert out["threshold"] == 1e-4 and out["split"] is None and out["seed"] == 0
    assert out["data"]["standardize"] is True and out["data"]["center_response"] is True


def test_simulate_fills_scenarios():
    rc = RunConfig.parse(_cfg("simulate", EXAMPLES["simulate"]))
    a, b = rc.payload.scenarios
    assert a.master_seed == b.master_seed == 9
    assert a.estimators == (0, 2, BAR)
    assert b.noise == NoiseKind("t", standardize_variance=True)
    s = rc.to_dict()["simulate"]["scenarios"][0]
    assert len(s["alpha0"]) == 20 and s["tuning"] == "default_rates"


def test_cv_grid_expansion():
    rc = RunConfig.parse(_cfg("cv", EXAMPLES["cv"]))
    assert rc.payload.grid.psi_values == (0.01, 0.1, 1.0, 10.0, 100.0)
    assert rc.payload.plan.criterion == "median_spe"


@pytest.mark.parametrize(
    "mutate",
    [
        lambda c: c.update(extra=1),
        lambda c: c["fit"].update(tunning="default_rates"),
        lambda c: c["fit"]["data"].update(delimiter=";"),
        lambda c: c["fit"].update(options={"k": 2, "stabilisation": "direct"}),
        lambda c: c["fit"].update(split={"test_fraction": 0.2, "seed": 1}),
        lambda c: c.update(format_version=2),
        lambda c: c.update(command="train"),
        lambda c: c.update(cv={}),
        lambda c: c["fit"].update(options={"k": "many"}),
        lambda c: c["fit"].update(split={"test_fraction": 1.5}),
        lambda c: c["fit"].update(seed="7"),
        lambda c: c["fit"].update(tuning={"psi": 1.0}),
        lambda c: c["fit"].update(tuning={"psi": -1.0, "omega": 1.0, "lambda": 1.0, "gamma": 1.0}),
    ],
)
def test_rejects_bad_fit_configs(mutate):
    cfg = _cfg("fit", json.loads(json.dumps(EXAMPLES["fit"])))
    mutate(cfg)
    with pytest.raises(ConfigError):
        RunConfig.parse(cfg)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda c: c["cv"]["grid"].update(delta=[1.0]),
        lambda c: c["cv"].update(stages=[["psi"]]),
        lambda c: c["cv"]["plan"].update(folds=1),
        lambda c: c["cv"]["plan"].update(criterion="mae"),
        lambda c: c["cv"]["grid"].update(psi={"log10": [2, -2, 1]}),
        lambda c: c["cv"]["grid"].update(psi=[]),
    ],
)
def test_rejects_bad_cv_configs(mutate):
    cfg = _cfg("cv", json.loads(json.dumps(EXAMPLES["cv"])))
    mutate(cfg)
    with pytest.raises(ConfigError):
        RunConfig.parse(cfg)


def test_rejects_bad_simulate_configs():
    bad = [
        {"scenarios": []},
        {"scenarios": [{"n": 100, "noise": {"tag": "cauchy"}}]},
        {"scenarios": [{"n": 100, "rho": 1.2}]},
        {"scenarios": [{"n": 100}, {"n": 100}]},
        {"scenarios": [{"n": 100, "colour": 1}]},
    ]
    for payload in bad:
        with pytest.raises(ConfigError):
            RunConfig.parse(_cfg("simulate", payload))


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    p = tmp_path / "bad.json"
    p.write_text("{ nope")
    with pytest.raises(ConfigError, match="line 1"):
        load_config(p)


def test_tuning_file_reference(tmp_path):
    tfile = tmp_path / "best.json"
    tfile.write_text(json.dumps({"format_version": 1, "tuning": {"psi": 1.0, "omega": 2.0, "lambda": 3.0, "gamma": 4.0}}))
    rc = RunConfig.parse(_cfg("simulate", {"scenarios": [{"n": 50, "p": 2, "q": 2, "tuning": str(tfile)}]}))
    assert rc.payload.scenarios[0].tuning == TuningSchedule(1.0, 2.0, 3.0, 4.0)
    again = RunConfig.parse(json.loads(rc.dumps()))
    assert again == rc


pos = st.floats(0.0, 1e6, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(
    k=st.one_of(st.integers(0, 50), st.just("bar")),
    mode=st.sampled_from(["direct", "rescaled", "perturbed"]),
    delta=st.floats(1e-12, 1.0),
    tuning=st.tuples(pos, pos, pos, pos),
    frac=st.floats(0.01, 0.99),
    seed=st.integers(0, 2**63 - 1),
)
def test_fit_roundtrip_property(k, mode, delta, tuning, frac, seed):
    opts = {"k": k, "stabilization": mode}
    if mode == "perturbed":
        opts.update(delta_alpha=delta, delta_beta=delta / 2)
    payload = {
        "data": DATA,
        "options": opts,
        "tuning": dict(zip(["psi", "omega", "lambda", "gamma"], tuning)),
        "split": {"test_fraction": frac},
        "seed": seed,
    }
    rc = RunConfig.parse(_cfg("fit", payload))
    assert RunConfig.parse(json.loads(rc.dumps())) == rc
    assert isinstance(rc.payload.options, FitOptions)
