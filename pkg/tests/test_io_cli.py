import json

import numpy as np
import pytest

from pvestim.cli import main
from pvestim.errors import ConfigError, ParseError
from pvestim.io import (
    DEFAULT_PLANT,
    ingest_csv,
    load_flat_json,
    load_plant,
    plant_from_dict,
    read_manifest,
    read_measurement_csv,
    scenario_from_dict,
)
from pvestim.model import S_MIN
from pvestim.simulate import ScenarioSpec, simulate, write_simulation_csv

HEADER = "timestamp_s,v_V,i_A,t_K,gni_Wm2,s_true_Wm2,p_max_true_W\n"


@pytest.fixture(scope="module")
def sim_csv(tmp_path_factory, plant):
    path = tmp_path_factory.mktemp("data") / "sim.csv"
    sim = simulate(ScenarioSpec(profile="partly_cloudy", start=11 * 3600.0, duration=300.0,
                                seed=2), plant)
    write_simulation_csv(path, sim)
    return path, sim


def write(tmp_path, text, name="m.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_three_row_file(tmp_path):
    p = write(tmp_path, "timestamp_s,v_V,i_A,t_K\n0,400,10,310\n1,401,10.1,310\n2,402,10.2,310\n")
    mf = read_measurement_csv(p)
    assert len(mf.samples()) == 3
    assert mf.series.gni is None and mf.s_true is None
    assert mf.samples()[1].v == 401.0


def test_duplicate_timestamp_reports_line(tmp_path):
    p = write(tmp_path, "timestamp_s,v_V,i_A,t_K\n0,400,10,310\n1,400,10,310\n1,400,10,310\n")
    with pytest.raises(ParseError) as info:
        read_measurement_csv(p)
    assert info.value.line == 4


def test_gni_column_is_carried(tmp_path):
    p = write(tmp_path, HEADER + "0,400,10,310,812.5,,\n1,400,10,310,820,,\n")
    mf = read_measurement_csv(p)
    np.testing.assert_array_equal(mf.series.gni, [812.5, 820.0])
    assert mf.samples()[0].gni == 812.5


@pytest.mark.parametrize("body, line", [
    ("0,400,10,310\n1,abc,10,310\n", 3),
    ("0,400,10,310\n1,400,10\n", 3),
    ("0,400,10,nan\n", 2),
])
def test_malformed_rows_report_line(tmp_path, body, line):
    p = write(tmp_path, "timestamp_s,v_V,i_A,t_K\n" + body)
    with pytest.raises(ParseError) as info:
        read_measurement_csv(p)
    assert info.value.line == line


def test_header_errors(tmp_path):
    with pytest.raises(ParseError):
        read_measurement_csv(write(tmp_path, "timestamp_s,v_V,i_A\n0,1,2\n"))
    with pytest.raises(ParseError):
        read_measurement_csv(write(tmp_path, "timestamp_s,v_V,i_A,t_K,wind\n0,1,2,3,4\n"))
    with pytest.raises(ConfigError):
        read_measurement_csv(tmp_path / "absent.csv")


def test_daylight_filter_drops_dark_samples(tmp_path, plant, sim_csv):
    path, sim = sim_csv
    text = path.read_text().splitlines()
    # prepend a night sample: zero current at a low voltage gives no irradiance
    night = "1.0,0.0,0.0,290.0,0.0,,"
    p = write(tmp_path, "\n".join([text[0], night] + text[1:]) + "\n")
    kept = ingest_csv(p, plant)
    assert kept.dropped == 1 and len(kept.series) == len(sim.measured)
    raw = ingest_csv(p, plant, daylight_filter=False)
    assert raw.dropped == 0 and len(raw.series) == len(sim.measured) + 1
    assert np.all(kept.s_true > S_MIN)


def test_temperature_correction_on_ingest(tmp_path, plant, sim_csv):
    path, _ = sim_csv
    plain = ingest_csv(path, plant)
    fixed = ingest_csv(path, plant, correct_temperature=True)
    np.testing.assert_array_equal(fixed.series.t[0], plain.series.t[0])
    d = fixed.series.t[1:] - plain.series.t[1:]
    assert np.all((d > 0) & (d < 3.5))


def test_config_loading(tmp_path):
    plant = load_plant()
    assert plant.topology.module_count == 56
    with pytest.raises(ConfigError):
        plant_from_dict(dict(DEFAULT_PLANT, colour="blue"))
    with pytest.raises(ConfigError):
        plant_from_dict(dict(DEFAULT_PLANT, v_mp_stc=50.0))
    nested = write(tmp_path, json.dumps({"a": {"b": 1}}), "n.json")
    with pytest.raises(ConfigError):
        load_flat_json(nested)
    with pytest.raises(ConfigError):
        load_flat_json(write(tmp_path, "{bad json", "b.json"))
    scen = scenario_from_dict({"profile": "step", "steps": [[0, 400]],
                               "curtailment": [[10, 20, 0.5], [30, 40, None, 900.0]]})
    assert scen.curtailment[1].setpoint_w == 900.0
    with pytest.raises(ConfigError):
        scenario_from_dict({"curtailment": [[10, 20]]})
    with pytest.raises(ConfigError):
        scenario_from_dict({"wind_speed": 3})


# --- CLI --------------------------------------------------------------------------


def run_cli(*argv):
    return main([str(a) for a in argv])


def test_cli_simulate_estimate_evaluate(tmp_path):
    scen = write(tmp_path, json.dumps({"profile": "partly_cloudy", "start": 39600,
                                       "duration": 200, "curtailment": [[39650, 39700, 0.5]]}),
                 "scen.json")
    noise = write(tmp_path, json.dumps({"std_i": 0.55, "std_v": 0.23, "std_t": 0.4}), "noise.json")
    assert run_cli("simulate", "--scenario", scen, "--noise", noise, "--out", tmp_path / "s",
                   "--seed", 4) == 0
    csv_path = tmp_path / "s" / "measurements.csv"
    assert read_measurement_csv(csv_path).p_max_true is not None
    assert run_cli("estimate", "--input", csv_path, "--estimator", "ekf",
                   "--out", tmp_path / "e") == 0
    assert (tmp_path / "e" / "estimates.csv").read_text().startswith("timestamp_s,s_hat_Wm2")
    assert run_cli("evaluate", "--input", csv_path, "--estimators", "analytical,iandi",
                   "--out", tmp_path / "v") == 0
    summary = (tmp_path / "v" / "summary.txt").read_text()
    assert "analytical.nrmse = " in summary
    manifest = read_manifest(tmp_path / "v" / "manifest.json")
    assert manifest["command"] == "evaluate" and "numpy" in manifest["versions"]


def test_cli_outputs_are_byte_identical(tmp_path):
    for out in ("a", "b"):
        assert run_cli("simulate", "--out", tmp_path / out, "--seed", 11) == 0
    for name in ("measurements.csv", "summary.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cli_replay_reproduces(tmp_path, sim_csv):
    path, _ = sim_csv
    assert run_cli("estimate", "--input", path, "--estimator", "iandi", "--gamma", 5,
                   "--out", tmp_path / "first") == 0
    assert run_cli("replay", tmp_path / "first" / "manifest.json",
                   "--out", tmp_path / "again") == 0
    a = (tmp_path / "first" / "estimates.csv").read_bytes()
    assert a == (tmp_path / "again" / "estimates.csv").read_bytes()


def test_cli_other_subcommands(tmp_path, sim_csv):
    path, _ = sim_csv
    assert run_cli("extract-params", "--out", tmp_path / "x") == 0
    assert "stc_r_s = " in (tmp_path / "x" / "stc_parameters.txt").read_text()
    assert run_cli("spectrum", "--input", path, "--source", "truth", "--out", tmp_path / "f") == 0
    assert run_cli("gamma-sweep", "--input", path, "--gammas", "1,10",
                   "--out", tmp_path / "g") == 0
    assert run_cli("fit-clusters", "--input", path, "--column", "s_true", "--k", 2,
                   "--out", tmp_path / "c") == 0
    assert (tmp_path / "c" / "clusters.txt").exists()


def test_cli_exit_codes(tmp_path, capsys):
    bad_plant = write(tmp_path, json.dumps(dict(DEFAULT_PLANT, v_mp_stc=99.0)), "p.json")
    assert run_cli("extract-params", "--plant", bad_plant, "--out", tmp_path / "o") == 2
    assert "ConfigError" in capsys.readouterr().err
    assert run_cli("estimate", "--input", tmp_path / "missing.csv", "--out", tmp_path / "o") == 2
    dup = write(tmp_path, "timestamp_s,v_V,i_A,t_K\n0,400,10,310\n0,400,10,310\n")
    assert run_cli("estimate", "--input", dup, "--out", tmp_path / "o") == 3
    assert "line 3" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        run_cli("estimate", "--out", tmp_path / "o")
