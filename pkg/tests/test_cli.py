import csv
import json
import shutil
import subprocess

import numpy as np
import pytest

from brwlab import cli
from brwlab.harness.parallel import ENV_WORKERS


@pytest.fixture(autouse=True)
def _no_env_workers(monkeypatch):
    monkeypatch.delenv(ENV_WORKERS, raising=False)


def run(argv, capsys):
    code = cli.main(argv)
    return code, capsys.readouterr()


def test_parse_helpers():
    assert cli.parse_count("1e6") == 1_000_000
    assert cli.parse_count("42") == 42
    assert np.allclose(cli.parse_grid("1:4"), [1, 2, 3, 4])
    assert np.allclose(cli.parse_grid("0:1:0.5"), [0, 0.5, 1])
    assert np.allclose(cli.parse_grid("0,1,5,20"), [0, 1, 5, 20])


def test_simulate_writes_replicas(tmp_path, capsys):
    code, out = run(["simulate", "--replicas", "200", "--horizon", "5", "--seed", "3", "--out", str(tmp_path)], capsys)
    assert code == 0
    summary = json.loads(out.out)
    assert summary["replicas"] == 200 and summary["passed"]
    rows = list(csv.DictReader(open(tmp_path / "replicas.csv")))
    assert len(rows) == 200
    assert json.loads((tmp_path / "simulate.json").read_text()) == summary


def test_global_and_subcommand_options_agree(capsys):
    _, a = run(["--seed", "9", "simulate", "--replicas", "50", "--horizon", "4"], capsys)
    _, b = run(["simulate", "--replicas", "50", "--horizon", "4", "--seed", "9"], capsys)
    assert a.out == b.out


def test_spine_checks(capsys):
    code, out = run(["spine", "--samples", "2000", "--n-max", "3"], capsys)
    assert code == 0 and len(json.loads(out.out)["rows"]) == 9
    code, out = run(["spine", "--check", "reversal", "--samples", "5000", "--n-max", "2"], capsys)
    assert code == 0


def test_renewal_table_and_gate(tmp_path, capsys):
    code, out = run(["renewal", "--u", "0:5", "--quantity", "rminus"], capsys)
    assert code == 0
    rows = json.loads(out.out)["rows"]
    assert [r["r_minus"] for r in rows] == [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
    code, _ = run(["renewal", "--tol", "0", "--out", str(tmp_path)], capsys)
    assert code == 2
    assert (tmp_path / "renewal.csv").exists()


def test_min_tail(tmp_path, capsys):
    code, out = run(["min-tail", "--x", "4", "--samples", "4000", "--seed", "1", "--out", str(tmp_path)], capsys)
    assert code == 0
    s = json.loads(out.out)
    assert 0 < s["exm_phat"] < 1.2
    assert s["truncation_bound"] == pytest.approx(np.exp(-12))
    rows = list(csv.DictReader(open(tmp_path / "intervals.csv")))
    assert len(rows) == 8 and float(rows[0]["upper"]) == -4.0


def test_verify_commands(capsys):
    code, out = run(["verify", "boundary"], capsys)
    assert code == 0 and json.loads(out.out)["max_abs_residual"] < 1e-10
    code, _ = run(["verify", "lemma25", "--x-grid", "1:3", "--a-grid", "1:2"], capsys)
    assert code == 0
    code, _ = run(["verify", "lemma25", "--tol", "0"], capsys)
    assert code == 2
    code, _ = run(["verify", "harmonicity", "--u-grid", "0,3"], capsys)
    assert code == 0


@pytest.mark.slow
def test_theorem_is_reproducible(tmp_path, capsys):
    argv = ["theorem", "--which", "overshoot", "--samples", "5000", "--seed", "2"]
    code, _ = run(argv + ["--out", str(tmp_path / "a")], capsys)
    assert code in (0, 2)
    code2, _ = run(argv + ["--out", str(tmp_path / "b"), "--workers", "2"], capsys)
    assert code2 == code
    assert (tmp_path / "a" / "summary.json").read_bytes() == (tmp_path / "b" / "summary.json").read_bytes()


def test_theorem_config_errors(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[run]\nfoo = 1\n")
    code, out = run(["theorem", "--which", "cM", "--config", str(cfg)], capsys)
    assert code == 1 and "run.foo" in out.err


@pytest.mark.parametrize("argv", [
    ["bogus"],
    ["min-tail"],
    ["verify", "lemma25", "--a-grid", "0:2"],
    ["renewal", "--u", "x"],
    ["simulate", "--p", "0.2"],
])
def test_execution_errors_exit_one(argv, capsys):
    with pytest.raises(SystemExit) as err:
        raise SystemExit(cli.main(argv))
    assert err.value.code == 1


def test_env_workers_is_validated(monkeypatch, capsys):
    monkeypatch.setenv(ENV_WORKERS, "nope")
    code, out = run(["verify", "boundary"], capsys)
    assert code == 1 and ENV_WORKERS in out.err


@pytest.mark.skipif(shutil.which("brw-lab") is None, reason="console script not installed")
def test_console_script():
    res = subprocess.run(["brw-lab", "verify", "boundary", "--p-grid", "1"], capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["passed"]
