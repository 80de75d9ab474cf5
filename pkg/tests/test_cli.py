import csv
import json

import numpy as np
import pytest

from ddetc import cli
from ddetc import experiments as ex
from ddetc.config import (MANIFEST_SCHEMA, PRESETS, SCHEMA, config_hash, dataset, load_config, load_preset, rng_for,
                          validate_config)
from ddetc.sysmodel import ConfigError


def run(argv):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    return exc.value.code


def manifest_of(out):
    return json.loads((out / "manifest.json").read_text())


# -- configuration ---------------------------------------------------------------------

@pytest.mark.parametrize("name", PRESETS)
def test_presets_validate(name):
    cfg = load_preset(name)
    assert cfg["schema"] == SCHEMA and cfg["name"] == name


def test_field_level_diagnostics():
    raw = {"schema": SCHEMA, "kind": "simulate", "trigger": {"sigma1": -1, "theta": "x"},
           "timing": {"h": 0.0}, "msi": {"wbar": []}}
    with pytest.raises(ConfigError) as exc:
        validate_config(raw)
    text = "\n".join(exc.value.problems)
    for field in ("trigger.sigma1", "trigger.theta", "timing.h", "msi.wbar", "trigger.lam", "simulation.x0",
                  "design.K"):
        assert field in text


def test_schema_and_unknown_fields():
    with pytest.raises(ConfigError) as exc:
        validate_config({"schema": "other/2", "kind": "simulate", "extra": 1})
    assert any("schema" in p for p in exc.value.problems) and any("extra" in p for p in exc.value.problems)
    with pytest.raises(ConfigError):
        validate_config([1, 2])
    with pytest.raises(ConfigError):
        load_preset("nope")


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)


def test_rng_is_reproducible():
    assert np.array_equal(rng_for(7).uniform(size=5), rng_for(7).uniform(size=5))
    cfg = load_preset("fig3")
    a, b = dataset(cfg, 0.01, 3), dataset(cfg, 0.01, 3)
    assert np.array_equal(a.data.X, b.data.X) and np.array_equal(a.theta.Theta, b.theta.Theta)
    assert not np.array_equal(a.data.X, dataset(cfg, 0.01, 4).data.X)


def test_config_hash_stable():
    cfg = load_preset("fig3")
    assert config_hash(cfg) == config_hash(json.loads(json.dumps(cfg)))
    assert len(config_hash(cfg)) == 64


def test_parse_seeds():
    assert cli.parse_seeds("3") == [3]
    assert cli.parse_seeds("0,2") == [0, 2]
    assert cli.parse_seeds("0-4") == [0, 1, 2, 3, 4]
    for bad in ("x", "-1", ""):
        with pytest.raises(cli.UsageError):
            cli.parse_seeds(bad)


# -- exit codes -------------------------------------------------------------------------

def test_usage_errors(tmp_path, capsys):
    assert run([]) == 1
    assert run(["simulate", "--out-dir", str(tmp_path)]) == 1
    assert run(["simulate", "--config", "missing.json", "--out-dir", str(tmp_path)]) == 1
    assert run(["reproduce", "table9"]) == 1
    assert run(["msi", "--config", "fig3", "--out-dir", str(tmp_path)]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"schema": SCHEMA, "kind": "simulate", "timing": {"h": -1}}))
    assert run(["simulate", "--config", str(bad), "--out-dir", str(tmp_path)]) == 1
    assert "timing.h" in capsys.readouterr().err


def test_infeasible_exit_code(tmp_path):
    cfg = load_preset("fig3")
    cfg["timing"]["h"] = 60.0
    cfg["simulation"]["d"] = 0.1
    p = tmp_path / "huge_h.json"
    p.write_text(json.dumps(cfg))
    assert run(["codesign", "--config", str(p), "--out-dir", str(tmp_path / "o")]) == 2


def test_failed_certificate_exit_code(tmp_path):
    cfg = load_preset("example1-sim")
    cfg["design"]["K"] = [[3.75, 11.5]]
    cfg["timing"]["h"] = 1.0
    p = tmp_path / "unstable.json"
    p.write_text(json.dumps(cfg))
    assert run(["simulate", "--config", str(p), "--out-dir", str(tmp_path / "o")]) == 2
    assert manifest_of(tmp_path / "o")["status"] == "certificate-failed"


def test_numerical_exit_code(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise np.linalg.LinAlgError("singular")
    monkeypatch.setattr(ex, "run_simulate", boom)
    assert run(["simulate", "--config", "example1-sim", "--out-dir", str(tmp_path)]) == 3


# -- commands ---------------------------------------------------------------------------

def test_simulate_example_and_manifest(tmp_path):
    out = tmp_path / "sim"
    assert run(["simulate", "--config", "example1-sim", "--out-dir", str(out)]) == 0
    m = manifest_of(out)
    assert m["schema"] == MANIFEST_SCHEMA and m["command"] == "simulate" and m["status"] == "ok"
    assert m["config_sha256"] == config_hash(m["config"]) and m["rng"] == "numpy.random.Philox"
    assert set(m["versions"]) >= {"ddetc", "numpy", "scipy", "clarabel", "python"}
    with (out / "sim_trace.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    samples = sum(r["sample_flag"] == "1" for r in rows)
    sent = sum(r["transmit_flag"] == "1" for r in rows)
    assert samples == 150 and sent / samples <= 0.30


def test_simulate_is_bit_reproducible(tmp_path):
    for tag in ("a", "b"):
        assert run(["simulate", "--config", "example1-sim", "--out-dir", str(tmp_path / tag)]) == 0
    assert (tmp_path / "a" / "sim_trace.csv").read_bytes() == (tmp_path / "b" / "sim_trace.csv").read_bytes()
    cfg = manifest_of(tmp_path / "a")["config"]
    p = tmp_path / "again.json"
    p.write_text(json.dumps(cfg))
    assert run(["simulate", "--config", str(p), "--out-dir", str(tmp_path / "c")]) == 0
    assert (tmp_path / "a" / "sim_trace.csv").read_bytes() == (tmp_path / "c" / "sim_trace.csv").read_bytes()


def test_zero_state_preset(tmp_path):
    assert run(["simulate", "--config", "zero-state", "--out-dir", str(tmp_path)]) == 0
    with (tmp_path / "sim_trace.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert all(float(r["x1"]) == 0.0 and float(r["x2"]) == 0.0 for r in rows)


def test_collect(tmp_path, capsys):
    assert run(["collect", "--config", "fig3", "--seed", "2", "--out-dir", str(tmp_path)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["assumption_ok"] and summary["true_plant_margin"] >= 0 and summary["samples"] == 100
    assert (tmp_path / "data.csv").exists() and manifest_of(tmp_path)["seeds"] == [2]


def test_codesign_fig3(tmp_path):
    out = tmp_path / "fig3"
    assert run(["reproduce", "fig3", "--out-dir", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    cert = rep["certificate"]
    assert cert["passed"] and cert["transmission_ratio"] <= 0.30
    assert rep["design"]["valid"] is True and len(rep["design"]["K"][0]) == 2
    assert all(z[0] < 0 for z in rep["closed_loop_eigs"])
    for f in ("verify_trace.csv", "verify_events.csv", "fig3.gp", "manifest.json"):
        assert (out / f).exists()
    assert manifest_of(out)["command"] == "codesign"


def test_msi_single_cell(tmp_path):
    assert run(["msi", "--config", "msi-single", "--out-dir", str(tmp_path)]) == 0
    with (tmp_path / "table.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    h = float(rows[0]["h_bar"])
    assert 0.85 * 1.04 <= h <= 1.25 * 1.04
    cell = json.loads(next((tmp_path / "cells").glob("*.json")).read_text())
    assert cell["verified"] and cell["above_infeasible"]


def test_msi_tolerance_sweep():
    cfg = load_preset("msi-single")
    ds = dataset(cfg, cfg["msi"]["wbar"][0], 0)
    coarse = ex.msi_cell(cfg, ds, 2, 0.0, 0.0, 0.05)
    fine = ex.msi_cell(cfg, ds, 2, 0.0, 0.0, 0.005, guess=coarse["h_bar"])
    assert abs(fine["h_bar"] - coarse["h_bar"]) <= 0.05


def test_no_bracket_cell_marked():
    cfg = load_preset("msi-single")
    cfg["msi"]["bracket"] = [30.0, 40.0]
    ds = dataset(cfg, 0.005, 0)
    cell = ex.msi_cell(cfg, ds, 2, 0.0, 0.0, 0.01)
    assert cell["h_bar"] is None and cell["status"] == "no-bracket"
    assert ex._fmt(cell["h_bar"]) == ex.NO_BRACKET


def test_oracle_command(tmp_path, capsys):
    assert run(["oracle", "--out-dir", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(ln.startswith("PASS ") for ln in lines)
    assert json.loads((tmp_path / "oracles.json").read_text())["passed"]
