import json

import numpy as np
import pytest

from snvspin import io
from snvspin.cli import run_command
from snvspin.fitting import SpectroscopyDataset
from snvspin.synthetic import reference_model, reference_suite


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


ODMR = "# kind: odmr\n# emitter: A\n# field_magnitude: 0.19\ntheta_deg,qubit_GHz\n0,1.0\n2,1.1\n"


def test_parse_odmr(tmp_path):
    parsed = io.parse_dataset(write(tmp_path, "a.csv", ODMR))
    assert parsed.kind == "odmr"
    assert isinstance(parsed.data, SpectroscopyDataset)
    assert parsed.data.points == ((0.0, 1.0), (2.0, 1.1))


def test_non_finite_value_names_line(tmp_path):
    p = write(tmp_path, "a.csv", ODMR.replace("2,1.1", "2,nan"))
    with pytest.raises(io.DatasetError, match=r"a\.csv:6: column 'qubit_GHz': non-finite"):
        io.parse_dataset(p)


def test_missing_header_key(tmp_path):
    p = write(tmp_path, "a.csv", ODMR.replace("# field_magnitude: 0.19\n", ""))
    with pytest.raises(io.DatasetError, match="missing required header key 'field_magnitude'"):
        io.parse_dataset(p)


def test_schema_and_kind_errors(tmp_path):
    with pytest.raises(io.DatasetError, match="schema mismatch"):
        io.parse_dataset(write(tmp_path, "b.csv", ODMR.replace("qubit_GHz", "q")))
    with pytest.raises(io.DatasetError, match="declares kind"):
        io.parse_dataset(write(tmp_path, "c.csv", ODMR), "echo")
    with pytest.raises(io.DatasetError, match="'kind'"):
        io.parse_dataset(write(tmp_path, "d.csv", "theta_deg,qubit_GHz\n0,1\n"))
    with pytest.raises(io.DatasetError, match="not found"):
        io.parse_dataset(tmp_path / "missing.csv")
    with pytest.raises(io.DatasetError, match="no data rows"):
        io.parse_dataset(write(tmp_path, "e.csv", ODMR.split("0,1.0")[0]))


def test_cpmg_tau_column_scaled_to_total_time(tmp_path):
    text = "# kind: cpmg\nn_pulses,tau_ms,counts\n4,0.1,1.0\n4,0.2,0.9\n2,0.1,1.0\n"
    traces = io.parse_dataset(write(tmp_path, "c.csv", text)).data
    assert [t.n_pulses for t in traces] == [2, 4]
    assert traces[1].times == pytest.approx([0.4, 0.8])
    bad = text.replace("4,0.2", "2.5,0.2")
    with pytest.raises(io.DatasetError, match="positive integer"):
        io.parse_dataset(write(tmp_path, "d.csv", bad))


def test_bundled_files_parse(bundled):
    ds = io.load_pipeline_directory(bundled)
    assert sorted(ds) == ["A", "B", "C", "D"]
    ref = reference_suite()
    for e in "ABC":
        assert [d.kind for d in ds[e]] == ["odmr_qubit", "allowed_split"]
        assert np.allclose(ds[e][0].values, ref[e][0].values, rtol=0, atol=0)
    assert io.parse_dataset(bundled / "echo" / "echo_parallel.csv").kind == "echo"
    assert len(io.parse_dataset(bundled / "cpmg" / "cpmg_suite.csv").data) == 7
    assert len(io.parse_dataset(bundled / "strain" / "strain_cut.csv").data) == 21


def test_model_round_trip(tmp_path):
    m = reference_model("C")
    io.save_model(m, tmp_path / "m.json")
    assert io.load_model(tmp_path / "m.json") == m


def test_config_validation(tmp_path):
    cfg = io.config_from_dict({"grid_n": 3, "fit": {"refine_passes": 2}, "roles": {"unstrained": "D"}})
    assert cfg.grid_n == 3 and cfg.fit.refine_passes == 2 and cfg.roles == {"unstrained": "D"}
    with pytest.raises(ValueError, match="unknown key"):
        io.config_from_dict({"gridn": 3})
    with pytest.raises(ValueError, match="unknown key"):
        io.config_from_dict({"fit": {"tolerance": 1}})
    with pytest.raises(ValueError, match="positive"):
        io.config_from_dict({"rel_error": 0})
    with pytest.raises(ValueError, match="positive"):
        io.config_from_dict({"constants": {"gamma_s": -1}})
    p = write(tmp_path, "c.json", "{bad json")
    with pytest.raises(io.DatasetError, match="invalid JSON"):
        io.load_config(p)


def test_write_json_maps_nan_to_null(tmp_path):
    io.write_json({"b": float("nan"), "a": np.float64(1.5)}, tmp_path / "x.json")
    assert json.loads((tmp_path / "x.json").read_text()) == {"a": 1.5, "b": None}


# command line


def test_eigen_and_observables(tmp_path, bundled, capsys):
    out = tmp_path / "o"
    assert run_command(["eigen", "--model", str(bundled / "snvB.json"), "--b-par", "0", "--out", str(out)]) == 0
    energies = json.loads((out / "eigen.json").read_text())["energies_GHz"]
    assert energies[0] == pytest.approx(-0.5 * np.hypot(822.0, 2 * 577.3), rel=1e-12)
    assert run_command(["observables", "--model", str(bundled / "snvA.json"), "--magnitude", "0.19",
                        "--theta", "90", "--out", str(out)]) == 0
    assert "qubit=" in capsys.readouterr().out


def test_rotmap_line_count(tmp_path, bundled):
    assert run_command(["rotmap", "--model", str(bundled / "snvA.json"), "--out", str(tmp_path)]) == 0
    assert len((tmp_path / "rotmap.csv").read_text().splitlines()) == 181


def test_calibrate_cpmg_strain_commands(tmp_path, bundled):
    assert run_command(["calibrate-field", "--trace", str(bundled / "echo" / "echo_parallel.csv"),
                        "--out", str(tmp_path)]) == 0
    cal = json.loads((tmp_path / "calibration.json").read_text())
    assert cal["b_corrected_T"] * 1e3 == pytest.approx(96.7, abs=0.1)
    assert run_command(["fit-cpmg", "--data", str(bundled / "cpmg" / "cpmg_suite.csv"), "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "cpmg.json").read_text())["beta"] == pytest.approx(0.95, abs=1e-6)
    assert run_command(["strain-map", "--grid", str(bundled / "strain" / "strain_cut.csv"),
                        "--out", str(tmp_path)]) == 0
    assert len((tmp_path / "strain_map.csv").read_text().splitlines()) == 1 + 84


def test_synth_reproduces_bundled_suite(tmp_path, bundled):
    assert run_command(["synth", "--out", str(tmp_path)]) == 0
    for p in sorted(bundled.rglob("*")):
        if p.is_file():
            assert (tmp_path / p.relative_to(bundled)).read_bytes() == p.read_bytes(), p.name


def test_exit_codes(tmp_path, bundled, capsys):
    assert run_command([]) == 2
    assert run_command(["eigen", "--model", str(bundled / "snvA.json"), "--out", str(tmp_path)]) == 2
    assert "usage-error" in capsys.readouterr().err
    bad = write(tmp_path, "bad.csv", ODMR.replace("2,1.1", "2,inf"))
    assert run_command(["calibrate-field", "--trace", str(bad), "--out", str(tmp_path)]) == 1
    assert "error: data:" in capsys.readouterr().err
    empty = tmp_path / "empty"
    empty.mkdir()
    assert run_command(["fit", "--pipeline", str(empty), "--out", str(tmp_path)]) == 1
    cfg = write(tmp_path, "c.json", '{"unknown": 1}')
    assert run_command(["selftest", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "unknown key" in capsys.readouterr().err
    assert run_command(["selftest", "--jobs", "0", "--out", str(tmp_path)]) == 2


def test_fit_missing_stage_data_exits_with_stage_name(tmp_path, bundled, capsys):
    d = tmp_path / "data"
    d.mkdir()
    for name in ("snvA_rotmap.csv", "snvB_rotmap.csv", "snvC_rotmap.csv"):
        (d / name).write_bytes((bundled / name).read_bytes())
    assert run_command(["fit", "--pipeline", str(d), "--out", str(tmp_path)]) == 1
    assert "stage lambda_g" in capsys.readouterr().err
