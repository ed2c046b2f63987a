import csv
import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tubehom import cli
from tubehom.cli import main
from tubehom.config import DEFAULTS, ConfigError, from_dict, parse_config
from tubehom.io import atomic_write, format_value, read_csv, write_csv
from tubehom.spectral import SolverError

SMALL = "curve: {kind: cylinder}\ngrid: {ns: 16, nw: 11}\nepsilons: [0.4, 0.2]\ntimes: [0.5, 1.0]\n"


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "cfg.yaml"
    p.write_text(SMALL)
    return p


# config -----------------------------------------------------------------


def test_defaults_filled():
    cfg = from_dict({"curve": {"kind": "circle"}})
    assert cfg.epsilons == DEFAULTS["epsilons"]
    assert cfg["grid"]["nw"] == 201 and cfg["renorm"] == "discrete"
    assert cfg.curve.kind == "circle" and cfg.curve.ns == 256


def test_misspelled_kind_reported():
    with pytest.raises(ConfigError) as exc:
        from_dict({"curve": {"kind": "elipse"}})
    assert any("elipse" in e for e in exc.value.errors)


def test_epsilon_range_message():
    with pytest.raises(ConfigError) as exc:
        from_dict({"curve": {"kind": "circle"}, "epsilons": [0.0, 0.2]})
    assert any("ε must be in (0,1]" in e for e in exc.value.errors)
    with pytest.raises(ConfigError):
        from_dict({"curve": {"kind": "circle"}, "epsilons": [1.5]})


def test_all_errors_listed():
    with pytest.raises(ConfigError) as exc:
        from_dict({"curve": {"kind": "elipse"}, "epsilons": [0.0], "renorm": "sometimes"})
    assert len(exc.value.errors) >= 3


def test_semantic_errors():
    with pytest.raises(ConfigError) as exc:
        from_dict({"curve": {"kind": "circle"}, "grid": {"nw": 40, "ntheta": 15}})
    text = " ".join(exc.value.errors)
    assert "grid.nw" in text and "grid.ntheta" in text
    with pytest.raises(ConfigError, match="points"):
        from_dict({"curve": {"kind": "sampled"}})


def test_parse_yaml_exponent_float(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("curve: {kind: circle}\nsolver: {tol: 1e-10}\n")
    assert parse_config(p)["solver"]["tol"] == 1e-10


def test_parse_missing_and_invalid(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "nope.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("curve: [unclosed\n")
    with pytest.raises(ConfigError):
        parse_config(bad)


def test_replace_and_canonical_json():
    cfg = from_dict({"curve": {"kind": "circle"}})
    other = cfg.replace(grid={"ns": 64})
    assert other["grid"]["ns"] == 64 and other["grid"]["nw"] == 201
    assert json.loads(cfg.canonical_json()) == cfg.data


# io ---------------------------------------------------------------------


@settings(max_examples=100)
@given(x=st.floats(allow_nan=False, allow_infinity=False))
def test_format_value_roundtrips(x):
    assert float(format_value(x)) == x


def test_format_value_kinds():
    assert format_value(0.1) == "0.10000000000000001"
    assert format_value(np.int64(3)) == "3"
    assert format_value(None) == ""
    assert format_value(float("nan")) == "nan"


def test_atomic_write_replaces_and_leaves_no_temp(tmp_path):
    p = tmp_path / "sub" / "f.txt"
    atomic_write(p, "one")
    atomic_write(p, "two")
    assert p.read_text() == "two"
    assert os.listdir(p.parent) == ["f.txt"]


def test_atomic_write_failure_keeps_old(tmp_path):
    p = tmp_path / "f.txt"
    atomic_write(p, "old")
    with pytest.raises(TypeError):
        atomic_write(p, None)
    assert p.read_text() == "old" and os.listdir(tmp_path) == ["f.txt"]


def test_csv_roundtrip(tmp_path):
    p = tmp_path / "x.csv"
    write_csv(p, ["a", "b"], [{"a": 1.0 / 3, "b": "ok"}, {"a": 2.5}])
    rows = read_csv(p)
    assert float(rows[0]["a"]) == 1.0 / 3 and rows[1]["b"] == ""


# cli --------------------------------------------------------------------


def test_cli_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("curve: {kind: elipse}\nepsilons: [0]\n")
    assert main(["sweep", "--config", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "elipse" in err and "ε must be in (0,1]" in err
    assert main(["sweep"]) == 2
    assert main(["slcheck", "--k", "9"]) == 2


def test_cli_solver_failure_exit_code(small_cfg, tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise SolverError("no convergence", residual=1e-3)

    monkeypatch.setattr(cli, "sweep", boom)
    assert main(["sweep", "--config", str(small_cfg), "--out", str(tmp_path / "o"), "-q"]) == 3
    assert "solver failure" in capsys.readouterr().err


def test_cli_slcheck(capsys):
    assert main(["slcheck"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 8
    assert main(["slcheck", "--k", "2"]) == 0
    assert "k = 2: PASS" in capsys.readouterr().out


def test_cli_spectrum_and_dump(small_cfg, tmp_path):
    out = tmp_path / "o"
    dump = tmp_path / "op.mtx"
    assert main(["spectrum", "--config", str(small_cfg), "--out", str(out), "--dump-operator", str(dump), "-q"]) == 0
    rows = read_csv(out / "spectrum.csv")
    assert list(rows[0]) == cli.SPECTRUM_COLUMNS
    assert len(rows) == 2 * 40
    assert dump.is_file()
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "spectrum" and man["conventions"]["W_sign"] == "plus"


def test_cli_sweep_and_report(small_cfg, tmp_path):
    out = tmp_path / "o"
    code = main(["sweep", "--config", str(small_cfg), "--out", str(out), "-q"])
    assert code in (0, 1)
    with open(out / "report.csv") as fh:
        header = next(csv.reader(fh))
    assert header == cli.REPORT_COLUMNS
    assert main(["report", "--out", str(out), "-q"]) == 0
    svg = out / "plots" / "l2_error.svg"
    assert svg.is_file() and svg.read_text().lstrip().startswith("<?xml")


def test_cli_report_without_sweep(tmp_path):
    assert main(["report", "--out", str(tmp_path), "-q"]) == 2


def test_cli_potential(tmp_path, capsys):
    p = tmp_path / "c.yaml"
    p.write_text("curve: {kind: circle}\ngrid: {ns: 32, nw: 41}\n")
    assert main(["potential", "--config", str(p), "--out", str(tmp_path / "o"), "-q"]) == 0
    out = capsys.readouterr().out
    assert "induced/plus" in out and "selected" in out
    rows = read_csv(tmp_path / "o" / "potential.csv")
    assert sum(r["selected"] == "True" for r in rows) == 1


def test_cli_verify_cylinder(small_cfg, tmp_path, capsys):
    assert main(["verify", "--config", str(small_cfg), "--out", str(tmp_path / "o"), "-q"]) == 0
    rows = read_csv(tmp_path / "o" / "verify.csv")
    assert {r["suite"] for r in rows} == {"kato", "perturbation_kato", "uniform_bound", "interpolation",
                                          "boundary_scaling", "commutator", "smooth_ev", "potential"}
    assert all(r["verdict"] == "PASS" for r in rows)
