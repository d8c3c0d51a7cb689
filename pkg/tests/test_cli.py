import json
import math
import subprocess
import sys

import pytest
from hypothesis import given
from hypothesis import strategies as st

from maxent_market import cli
from maxent_market.reporting import fmt, sha256_file


def run(args, tmp_path, name="out"):
    out = tmp_path / name
    code = cli.main([*args, "--out", str(out)])
    return code, out


def data_files(root):
    return sorted(p for p in root.iterdir() if p.suffix in (".csv", ".json") and p.name != "manifest.json")


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_format_round_trips(x):
    assert float(fmt(x)) == x


def test_print_schema(capsys):
    assert cli.main(["--print-schema"]) == 0
    schema = json.loads(capsys.readouterr().out)
    assert "scenario" in schema["required"]


def test_gop_default_passes(tmp_path):
    code, out = run(["--scenario", "gop"], tmp_path)
    assert code == 0
    sol = json.loads((out / "gop_solution.json").read_text())
    assert sol["solution"]["weights"] == [1.0, 0.0]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 0 and manifest["exit_status"] == 0
    assert set(manifest["versions"]) >= {"maxent_market", "numpy", "scipy", "python"}
    for entry in manifest["files"]:
        assert sha256_file(out / entry["path"]) == entry["sha256"]


def test_no_gop_exits_two(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"scenario": "gop", "market": {"mu": [1, 0], "sigma": [[0], [0]]}}))
    code, out = run(["--config", str(cfg)], tmp_path)
    assert code == 2
    assert json.loads((out / "gop_solution.json").read_text())["no_gop"] is True


@pytest.mark.parametrize(
    "doc",
    [
        {"scenario": "simulate", "model": {"n": 0}},
        {"scenario": "simulate", "paths": 0},
        {"scenario": "simulate", "unknown": 1},
        {"scenario": "gop", "market": {"mu": [0.1, 0.0], "sigma": [[0.1, 0.2], [0.0, 0.0]]}},
        {"scenario": "simulate", "model": {"n": 2, "activities": [0.1]}},
    ],
)
def test_bad_config_exits_one_with_error_report(tmp_path, doc):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(doc))
    code, out = run(["--config", str(cfg)], tmp_path)
    assert code == 1
    err = json.loads((out / "error.json").read_text())
    assert err["message"]


def test_usage_errors_exit_one(tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--scenario", "nope"])
    assert exc.value.code == 1
    code, _ = run(["--config", str(tmp_path / "missing.json")], tmp_path)
    assert code == 1


def test_simulate_outputs_and_rerun_identity(tmp_path):
    args = ["--scenario", "simulate", "--paths", "3000", "--seed", "11"]
    code_a, a = run(args, tmp_path, "a")
    code_b, b = run(args, tmp_path, "b")
    assert code_a == code_b
    files = data_files(a)
    assert [p.name for p in files] == [p.name for p in data_files(b)]
    for p in files:
        assert p.read_bytes() == (b / p.name).read_bytes(), p.name
    header = (a / "paths.csv").read_text().splitlines()[0]
    assert header == "path_id,t,component,y,tau,theta,b_hat,log_lambda,s0_hat"
    summary = json.loads((a / "summary.json").read_text())
    assert summary["seed"] == 11 and len(summary["components"]) == 3
    m_a = json.loads((a / "manifest.json").read_text())
    m_b = json.loads((b / "manifest.json").read_text())
    assert m_a["config_sha256"] == m_b["config_sha256"]


def test_format_selection(tmp_path):
    code, out = run(["--scenario", "reference-transform", "--format", "json"], tmp_path)
    assert code == 0
    assert not list(out.glob("*.csv"))
    assert (out / "reference_transform.json").exists()


def test_equilibrium_connect_option(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"scenario": "equilibrium", "paths": 5000, "connect": [[0.01, 0.04], [0.09]]}))
    code, out = run(["--config", str(cfg)], tmp_path)
    assert code == 0
    rep = json.loads((out / "equilibrium_report.json").read_text())
    assert math.isclose(rep["connected"]["market_activity"], 0.04)
    assert (out / "equilibrium_trace.csv").exists()


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "maxent_market", "--scenario", "gop", "--out", str(tmp_path / "m")], capture_output=True, text=True)
    assert res.returncode == 0
    assert "[PASS] criterion 11" in res.stdout
