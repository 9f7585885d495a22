import csv
import json
import math
import os

import numpy as np
import pytest
from scipy import stats

from brwlab.harness import parallel
from brwlab.harness.config import ConfigError, ExperimentConfig, load_config
from brwlab.harness.io import dumps_json, to_jsonable, write_csv, write_json, write_plot_data
from brwlab.harness.rng import RngStream, stream
from brwlab.harness.runner import RUNNERS, run_experiment
from brwlab.harness.stats import (Estimate, MeanAccumulator, agree, effective_sample_size, estimate_from_samples,
                                  exact_estimate, isotone_check, ks_test, ks_two_sample, merge_accumulators,
                                  plateau_fit, weighted_corr)


# --- stats -----------------------------------------------------------------

def test_ks_is_calibrated_under_the_null():
    pvals = [ks_test(stream(s).exponential(size=2000), stats.expon).p_value for s in range(10)]
    assert sum(p < 0.05 for p in pvals) <= 2
    assert min(pvals) > 1e-4


def test_ks_detects_wrong_scale():
    x = stream(1).exponential(2.0, size=2000)
    assert ks_test(x, stats.expon).p_value < 1e-6


def test_weighted_ks_with_unit_weights_matches_unweighted():
    x = stream(2).exponential(size=3000)
    a = ks_test(x, stats.expon)
    b = ks_test(x, stats.expon, np.ones_like(x))
    assert b.statistic == pytest.approx(a.statistic, abs=1e-12)
    assert b.n_effective == pytest.approx(3000)


def test_weighted_ks_recovers_a_tilted_law():
    # Exp(1) samples reweighted by e^{x/2} have the Exp(1/2) law
    x = stream(3).exponential(size=50_000)
    w = np.exp(-0.5 * x)  # Exp(1) -> Exp(1.5)
    assert ks_test(x, stats.expon(scale=1 / 1.5), w).p_value > 0.01
    assert ks_test(x, stats.expon, w).p_value < 1e-6


def test_ks_needs_enough_samples():
    with pytest.raises(ValueError):
        ks_test(np.ones(10), stats.expon)
    with pytest.raises(ValueError):
        ks_test(np.ones(100), stats.expon, np.r_[1.0, np.zeros(99)])


def test_two_sample_ks_identical_and_shifted():
    x = stream(4).normal(size=500)
    same = ks_two_sample(x, x)
    assert same.statistic == 0.0 and same.p_value == pytest.approx(1.0)
    shifted = ks_two_sample(x, x + 1.0)
    assert shifted.p_value < 1e-10
    wsame = ks_two_sample(x, x, np.ones_like(x), None)
    assert wsame.statistic == 0.0


def test_estimate_from_samples():
    x = stream(5).normal(3.0, 2.0, size=10_000)
    e = estimate_from_samples(x, "mc", 5)
    assert e.value == pytest.approx(x.mean())
    assert e.stderr == pytest.approx(x.std(ddof=1) / 100)
    assert e.ci_low < e.value < e.ci_high
    assert e.half_width == pytest.approx(1.959964 * e.stderr, rel=1e-5)
    assert within_interval(3.0, e)


def within_interval(v, e, k=4):
    return abs(v - e.value) <= k * e.stderr


def test_estimate_validation_and_scaling():
    with pytest.raises(ValueError):
        Estimate(1.0, -1.0, 0, 2, 1, 1, "x")
    with pytest.raises(ValueError):
        Estimate(1.0, 1.0, 0, 2, 5, 1, "x")
    e = estimate_from_samples([1.0, 2.0, 3.0], "x").scaled(-2.0)
    assert e.value == -4.0 and e.ci_low <= e.ci_high
    ex = exact_estimate(2.0, 1e-12)
    assert ex.stderr == 0.0 and ex.ci_high - ex.ci_low == pytest.approx(2e-12)


def test_accumulator_merge_is_order_pinned():
    blocks = [stream(6, b).normal(size=100) for b in range(5)]
    accs = [MeanAccumulator().add(b) for b in blocks]
    m = merge_accumulators(accs)
    full = estimate_from_samples(np.concatenate(blocks), "x")
    assert m.count == 500
    assert m.mean == pytest.approx(full.value)
    assert m.stderr == pytest.approx(full.stderr)


def test_agree_and_ess():
    a = Estimate(1.0, 0.1, 0.8, 1.2, 10, 10, "a")
    b = Estimate(1.3, 0.1, 1.1, 1.5, 10, 10, "b")
    assert agree(a, b) and not agree(a, b, k=1.0)
    assert effective_sample_size(np.ones(50)) == pytest.approx(50)
    assert effective_sample_size(np.r_[1.0, np.zeros(9)]) == pytest.approx(1)
    assert effective_sample_size(np.zeros(3)) == 0.0


def test_weighted_corr():
    x = stream(7).normal(size=2000)
    assert weighted_corr(x, 2 * x + 1, np.ones_like(x)) == pytest.approx(1.0)
    assert weighted_corr(x, np.ones_like(x), np.ones_like(x)) == pytest.approx(0.0, abs=1e-12)


def test_plateau_fit_flat_and_drifting():
    x = np.arange(1.0, 13.0)
    flat = plateau_fit(x, np.full(12, 0.44), np.full(12, 0.01))
    assert flat.level == pytest.approx(0.44) and not flat.flagged
    assert flat.window == (7.0, 12.0)
    drift = plateau_fit(x, 0.44 + 0.02 * x, np.full(12, 0.01))
    assert drift.flagged and drift.slope == pytest.approx(0.02)
    assert drift.relative_drift == pytest.approx(0.1 / drift.level)
    win = plateau_fit(x, 0.44 + 0.02 * x, np.full(12, 0.01), window=(1.0, 3.0))
    assert win.window == (1.0, 3.0)
    with pytest.raises(ValueError):
        plateau_fit(x[:3], x[:3], x[:3])


def test_isotone_check():
    y = np.array([1.0, 0.8, 0.81, 0.5])
    ok, resid = isotone_check(y, np.full(4, 0.01))
    assert ok and abs(resid).max() <= 0.03
    bad, _ = isotone_check(np.array([1.0, 0.5, 0.9, 0.1]), np.full(4, 0.01))
    assert not bad


# --- rng and parallel --------------------------------------------------------

def test_streams_are_reproducible_and_distinct():
    a = RngStream(42, 3).generator().random(5)
    b = RngStream(42, 3).generator().random(5)
    c = RngStream(42, 4).generator().random(5)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    skip = RngStream(42, 3, counter=1).generator().random(5)
    assert not np.array_equal(a, skip)
    child = RngStream(42, 3).child(1)
    assert child.stream_id == 3 and child.root_seed != 42


@pytest.mark.parametrize("kw", [dict(root_seed=-1), dict(root_seed=2 ** 64), dict(root_seed=1, stream_id=-1),
                                dict(root_seed=1, counter=-1)])
def test_stream_validation(kw):
    with pytest.raises(ValueError):
        RngStream(**kw)


def test_block_sizes():
    assert parallel.block_sizes(10, 4) == [4, 4, 2]
    assert parallel.block_sizes(8, 4) == [4, 4]
    assert parallel.block_sizes(0, 4) == []
    with pytest.raises(ValueError):
        parallel.block_sizes(5, 0)


def test_resolve_workers(monkeypatch):
    monkeypatch.delenv(parallel.ENV_WORKERS, raising=False)
    assert parallel.resolve_workers() == 1
    assert parallel.resolve_workers(3) == 3
    monkeypatch.setenv(parallel.ENV_WORKERS, "2")
    assert parallel.resolve_workers(5) == 2
    monkeypatch.setenv(parallel.ENV_WORKERS, "x")
    with pytest.raises(ValueError):
        parallel.resolve_workers()
    monkeypatch.setenv(parallel.ENV_WORKERS, "0")
    with pytest.raises(ValueError):
        parallel.resolve_workers()


def _draw(block_id, size):
    return RngStream(9, block_id).generator().random(size)


def _fail_on_two(block_id, size):
    if block_id == 2:
        raise ArithmeticError("boom")
    return size


@pytest.mark.parametrize("workers", [1, 3])
def test_map_blocks_order_and_errors(monkeypatch, workers):
    monkeypatch.delenv(parallel.ENV_WORKERS, raising=False)
    sizes = parallel.block_sizes(25, 4)
    out = parallel.map_blocks(_draw, sizes, workers)
    ref = [_draw(b, s) for b, s in enumerate(sizes)]
    assert all(np.array_equal(a, b) for a, b in zip(out, ref))
    with pytest.raises(parallel.BlockError) as err:
        parallel.map_blocks(_fail_on_two, sizes, workers)
    assert err.value.block_id == 2


# --- config ------------------------------------------------------------------

def test_config_defaults_and_roundtrip(tmp_path):
    cfg = load_config()
    assert cfg == ExperimentConfig()
    text = """
experiment = "overshoot"
seed = 7
[model]
p = 0.8
[run]
samples = 1e4
[analysis]
x_grid = [4, 6, 8]
"""
    path = tmp_path / "c.toml"
    path.write_text(text)
    cfg = load_config(path)
    assert cfg.experiment == "overshoot" and cfg.seed == 7 and cfg.model.p == 0.8
    assert cfg.run.samples == 10_000 and cfg.analysis.x_grid == (4, 6, 8)
    assert cfg.spec.p == 0.8
    assert json.loads(dumps_json(cfg))["analysis"]["x_grid"] == [4, 6, 8]


@pytest.mark.parametrize("text,path", [
    ("[run]\nfoo = 1", "run.foo"),
    ("bar = 1", "bar"),
    ("[model]\np = 0.5", "model.p"),
    ("[model]\np = 1.2", "model.p"),
    ("[model]\nfamily = 'x'", "model.family"),
    ("[run]\nsamples = 0", "run.samples"),
    ("[run]\nsamples = 'many'", "run.samples"),
    ("[run]\ndepth = 12", "run.depth"),
    ("experiment = 'nope'", "experiment"),
    ("seed = -3", "seed"),
    ("[analysis]\nx_grid = [3, 2]", "analysis.x_grid"),
    ("[analysis]\nt_grid = [0, 50]", "analysis.t_grid"),
    ("model = 3", "model"),
])
def test_config_errors_name_the_field(text, path):
    with pytest.raises(ConfigError) as err:
        load_config(text=text)
    assert err.value.path == path
    assert path in str(err.value)


def test_config_replace_validates():
    cfg = ExperimentConfig().replace(**{"run.samples": 50, "seed": 3})
    assert cfg.run.samples == 50 and cfg.seed == 3
    with pytest.raises(ConfigError):
        cfg.replace(**{"model.p": 0.3})


# --- io ------------------------------------------------------------------------

def test_to_jsonable_handles_numpy_and_non_finite():
    est = Estimate(1.0, 0.0, 1.0, 1.0, 1.0, 1, "exact")
    out = to_jsonable({"a": np.float64(math.inf), "b": np.arange(3), "c": (np.bool_(True), np.nan), "d": est})
    assert out == {"a": "inf", "b": [0, 1, 2], "c": [True, "nan"],
                   "d": {"value": 1.0, "stderr": 0.0, "ci_low": 1.0, "ci_high": 1.0, "n_effective": 1.0,
                         "n_samples": 1, "method": "exact", "seed": None}}
    assert dumps_json({"b": 1, "a": -math.inf}).index('"a"') < dumps_json({"b": 1, "a": 2}).index('"b"')


def test_writers(tmp_path):
    write_json(tmp_path / "x" / "s.json", {"v": 0.1})
    assert json.loads((tmp_path / "x" / "s.json").read_text()) == {"v": 0.1}
    write_csv(tmp_path / "t.csv", [{"a": 1, "b": 0.1 + 0.2}, {"a": 2, "b": 1.0}])
    rows = list(csv.DictReader(open(tmp_path / "t.csv")))
    assert rows[0] == {"a": "1", "b": repr(0.1 + 0.2)}
    write_plot_data(tmp_path / "p.dat", {"x": [1, 2], "y": [3.5, 4.5]}, ["seed 1"])
    lines = (tmp_path / "p.dat").read_text().splitlines()
    assert lines == ["# seed 1", "# x y", "1.0 3.5", "2.0 4.5"]
    data = np.loadtxt(tmp_path / "p.dat")
    assert data.shape == (2, 2)
    with pytest.raises(ValueError):
        write_plot_data(tmp_path / "q.dat", {"x": [1], "y": [1, 2]})


# --- runner ------------------------------------------------------------------------

def test_runner_covers_every_experiment():
    from brwlab.harness.config import EXPERIMENTS
    assert set(RUNNERS) == set(EXPERIMENTS)


@pytest.mark.slow
def test_runner_outputs_are_worker_invariant(tmp_path, monkeypatch):
    monkeypatch.delenv(parallel.ENV_WORKERS, raising=False)
    cfg = ExperimentConfig(experiment="overshoot", seed=5).replace(**{"run.samples": 10_000})
    a = run_experiment(cfg, tmp_path / "a", workers=1)
    b = run_experiment(cfg, tmp_path / "b", workers=2)
    assert a["passed"] == b["passed"]
    for name in ("summary.json", "overshoot.csv", "overshoot.dat"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["config"]["run"]["samples"] == 10_000
    assert os.path.getsize(tmp_path / "a" / "overshoot.csv") > 0
