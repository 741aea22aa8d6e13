import json
import math
from pathlib import Path

import numpy as np
import pytest

from gravchannel.cli import (
    EXIT_CHECK,
    EXIT_CONFIG,
    EXIT_NUMERICAL,
    EXIT_OK,
    OUT_ENV,
    ConfigError,
    main,
    parse_config,
    read_series,
    series_document,
    summary_document,
    run,
)

URANIUM = {
    "experiment": "rates",
    "physical": {
        "rho": {"value": 19050, "unit": "kg/m^3"},
        "r": {"value": 10, "unit": "cm"},
        "omega": {"value": 1, "unit": "Hz"},
        "d": {"value": 20, "unit": "cm"},
        "Q": 1e9,
    },
}

WITNESS = {
    "experiment": "entangle-witness",
    "model": {"variant": "minimal", "g": 0.05, "epsilon": 0.0},
    "integration": {"dt": 0.01, "t_final": 20},
}

ENSEMBLE = {
    "experiment": "trajectories",
    "model": {"variant": "feedback", "g": 0.05},
    "integration": {"dt": 0.01, "t_final": 2},
    "ensemble": {"n_traj": 50, "seed": 3},
}


def _write(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def _summary(directory):
    return json.loads((Path(directory) / "summary.json").read_text())["summary"]


def test_rates_uranium(tmp_path):
    out = tmp_path / "out"
    assert main(["run", _write(tmp_path, URANIUM), "--out", str(out), "--check"]) == EXIT_OK
    s = _summary(out)
    assert s["Delta"]["unit"] == "1/s"
    assert s["Delta"]["value"] == pytest.approx(1.06e-7, rel=0.01)
    assert s["T_grav"]["unit"] == "K"
    assert s["T_grav"]["value"] == pytest.approx(8.1e-10, rel=0.01)
    assert s["Delta_bound"]["value"] == pytest.approx(s["Delta"]["value"], rel=1e-12)
    for entry in s.values():
        assert set(entry) == {"value", "unit"}


def test_unit_tags_are_equivalent():
    base = parse_config(URANIUM)
    alt = json.loads(json.dumps(URANIUM))
    alt["physical"]["omega"] = {"value": 2 * math.pi, "unit": "rad/s"}
    alt["physical"]["rho"] = {"value": 19.05, "unit": "g/cm^3"}
    alt["physical"]["r"] = {"value": 100, "unit": "mm"}
    alt["physical"]["d"] = {"value": 0.2, "unit": "m"}
    other = parse_config(alt)
    for field in ("m1", "omega1", "d", "rho", "r"):
        assert getattr(other.physical, field) == pytest.approx(getattr(base.physical, field), rel=1e-14)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda c: c["physical"].update(omega=1.0),
        lambda c: c["physical"].update(omega={"value": 1, "unit": "furlongs"}),
        lambda c: c.update(experiment="nope"),
        lambda c: c["physical"].pop("omega"),
        lambda c: c.update(model={"g": 0.05}),
    ],
)
def test_bad_configs_rejected(mutate):
    cfg = json.loads(json.dumps(URANIUM))
    mutate(cfg)
    with pytest.raises(ConfigError):
        parse_config(cfg)


def test_negative_mass_is_config_error_without_output(tmp_path):
    cfg = {
        "experiment": "rates",
        "physical": {
            "m": {"value": -1, "unit": "kg"},
            "omega": {"value": 1, "unit": "Hz"},
            "d": {"value": 1, "unit": "m"},
        },
    }
    out = tmp_path / "out"
    assert main(["run", _write(tmp_path, cfg), "--out", str(out)]) == EXIT_CONFIG
    assert not out.exists()


def test_missing_config_file(tmp_path):
    assert main(["run", str(tmp_path / "absent.json")]) == EXIT_CONFIG


def test_entangle_witness(tmp_path):
    out = tmp_path / "out"
    assert main(["run", _write(tmp_path, WITNESS), "--out", str(out), "--check"]) == EXIT_OK
    s = _summary(out)
    assert s["max_E_N"]["value"] <= 1e-10
    assert s["non_entangling"]["value"] is True
    series = read_series(out / "entanglement.csv")
    assert list(series)[0] == "time"
    assert series["time"][-1] == pytest.approx(20.0)


def test_numerical_abort_exit_code(tmp_path):
    cfg = {
        "experiment": "oracle-compare",
        "model": {"variant": "minimal", "g": 0.05},
        "initial": {"kind": "coherent", "alpha1": 2.0},
        "integration": {"dt": 0.02, "t_final": 0.1},
        "fock": {"N": 6},
    }
    out = tmp_path / "out"
    assert main(["run", _write(tmp_path, cfg), "--out", str(out)]) == EXIT_NUMERICAL
    assert not out.exists()


def test_check_failure_exit_code(tmp_path):
    cfg = json.loads(json.dumps(ENSEMBLE))
    cfg["ensemble"]["n_traj"] = 1
    out = tmp_path / "out"
    assert main(["run", _write(tmp_path, cfg), "--out", str(out), "--check"]) == EXIT_CHECK
    # without --check the data is emitted and not judged
    assert main(["run", _write(tmp_path, cfg), "--out", str(tmp_path / "o2")]) == EXIT_OK


def test_outputs_bit_identical_and_round_trip(tmp_path):
    path = _write(tmp_path, ENSEMBLE)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", path, "--out", str(a)]) == EXIT_OK
    assert main(["run", path, "--out", str(b)]) == EXIT_OK
    files = sorted(p.name for p in a.iterdir())
    assert files == sorted(p.name for p in b.iterdir())
    assert "summary.json" in files and "ensemble_covariance.csv" in files
    for name in files:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    text = (a / "summary.json").read_text()
    assert json.dumps(json.loads(text), sort_keys=True, indent=2) + "\n" == text
    for name in files:
        if name.endswith(".csv"):
            text = (a / name).read_text()
            assert series_document(read_series(a / name)) == text


def test_seed_override(tmp_path):
    path = _write(tmp_path, ENSEMBLE)
    assert main(["run", path, "--out", str(tmp_path / "a"), "--seed", "99"]) == EXIT_OK
    doc = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert doc["provenance"]["seed"] == 99
    assert doc["summary"]["seed"]["value"] == 99
    assert doc["provenance"]["config"]["ensemble"]["seed"] == 3
    assert "version" in doc["provenance"]


def test_environment_output_override(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    assert main(["run", _write(tmp_path, URANIUM)]) == EXIT_OK
    assert (tmp_path / "env" / "summary.json").exists()
    # the command-line flag wins over the environment
    assert main(["run", _write(tmp_path, URANIUM), "--out", str(tmp_path / "flag")]) == EXIT_OK
    assert (tmp_path / "flag" / "summary.json").exists()


def test_sweep_epsilon(tmp_path):
    cfg = dict(WITNESS, experiment="epsilon-scan")
    out = tmp_path / "sweep"
    code = main(["sweep", _write(tmp_path, cfg), "--param", "model.epsilon", "--grid", "0:0.05:4",
                 "--out", str(out), "--check"])
    assert code == EXIT_OK
    index = json.loads((out / "index.json").read_text())
    values = [p["value"] for p in index["points"]]
    assert values == pytest.approx([0.0, 0.05 / 3, 0.1 / 3, 0.05])
    maxima = [p["summary"]["max_E_N"]["value"][0] for p in index["points"]]
    assert maxima[0] <= 1e-10
    assert all(m > 0 for m in maxima[1:])
    assert (out / "index.csv").read_text().splitlines()[0].startswith("point,model.epsilon")


def test_sweep_separation_scaling(tmp_path):
    out = tmp_path / "sweep"
    code = main(["sweep", _write(tmp_path, URANIUM), "--param", "physical.d", "--grid", "20,40,80",
                 "--out", str(out)])
    assert code == EXIT_OK
    index = json.loads((out / "index.json").read_text())
    K = np.array([p["summary"]["K"]["value"] for p in index["points"]])
    np.testing.assert_allclose(K[1:] / K[:-1], 1 / 8, rtol=1e-12)


def test_sweep_errors(tmp_path):
    path = _write(tmp_path, URANIUM)
    assert main(["sweep", path, "--param", "physical.d", "--grid", "", "--out", str(tmp_path / "a")]) == EXIT_CONFIG
    assert main(["sweep", path, "--param", "physical.nope", "--grid", "1", "--out", str(tmp_path / "b")]) == EXIT_CONFIG
    assert main(["sweep", path, "--param", "physical", "--grid", "1", "--out", str(tmp_path / "c")]) == EXIT_CONFIG
    assert not (tmp_path / "a").exists()


def test_summary_document_every_scalar_has_unit():
    bundle = run(parse_config(URANIUM))
    doc = json.loads(summary_document(bundle))
    assert all(set(v) == {"value", "unit"} and isinstance(v["unit"], str) for v in doc["summary"].values())


def test_heat_experiment_both_engines(tmp_path):
    cfg = {
        "experiment": "heat",
        "model": {"variant": "minimal", "g": 0.05},
        "integration": {"dt": 0.01, "t_final": 0.05},
        "fock": {"N": 10},
    }
    out = tmp_path / "out"
    assert main(["run", _write(tmp_path, cfg), "--out", str(out), "--check"]) == EXIT_OK
    s = _summary(out)
    assert s["heating_rate_1"]["value"] == pytest.approx(0.025, rel=1e-12)
    assert s["heating_rate_fock_1"]["value"] == pytest.approx(0.025, rel=1e-10)
