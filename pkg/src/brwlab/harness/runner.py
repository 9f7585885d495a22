"""Run a configured tail experiment, gate it and write its outputs.

Each experiment returns a summary dict with a ``passed`` flag (the
statistical gate), a ``results`` payload and tabular ``rows`` for the CSV and
plot-data files.  Nothing in the summary depends on timing or the worker
count, so the JSON is byte-identical for a fixed (config, seed).
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Callable

import numpy as np

from .. import tail_lab as tl
from .config import ExperimentConfig
from .io import write_csv, write_json, write_plot_data

__all__ = ["ExperimentResult", "run_experiment", "RUNNERS"]

ExperimentResult = dict


def _min_run(cfg: ExperimentConfig, workers):
    r = cfg.run
    return tl.min_law_run(cfg.spec, r.samples, cfg.seed, depth=r.depth, slack=r.slack,
                          record_window=r.record_window, workers=workers, t_grid=cfg.analysis.t_grid)


def _curve_result(curve: tl.TailCurve) -> dict:
    return {"level": curve.level, "drift": curve.plateau.drift, "relative_drift": curve.plateau.relative_drift,
            "window": curve.plateau.window, "flagged": curve.plateau.flagged, "monotone": curve.monotone,
            "bracket_ok": curve.bracket_ok()}


def _cM(cfg, workers):
    grid = cfg.analysis.x_grid or tuple(range(1, 13))
    curve = tl.estimate_cM(cfg.spec, grid, run=_min_run(cfg, workers), tolerance=cfg.analysis.tolerance)
    res = _curve_result(curve)
    res["frozen_constant"] = curve.extra["frozen_constant"]
    ok = not curve.plateau.flagged and curve.bracket_ok(cfg.analysis.k_sigma)
    return {"passed": ok, "results": res, "rows": list(curve.rows()), "plot": ("x", "transformed")}


def _cDinf(cfg, workers):
    grid = cfg.analysis.x_grid or None
    curve = tl.estimate_cDinf(cfg.spec, grid, run=_min_run(cfg, workers),
                              tolerance=max(cfg.analysis.tolerance, 0.15))
    res = _curve_result(curve)
    res["log_integral_spread"] = curve.extra["log_integral_spread"]
    rows = [dict(r, log_integral=float(li), log_integral_stderr=float(ls))
            for r, li, ls in zip(curve.rows(), curve.extra["log_integral"], curve.extra["log_integral_stderr"])]
    ok = not curve.plateau.flagged and curve.extra["log_integral_spread"] < 0.15
    return {"passed": ok, "results": res, "rows": rows, "plot": ("x", "transformed")}


def _overshoot(cfg, workers):
    x = cfg.analysis.conditional_x
    cs, rep = tl.conditional_min_law(cfg.spec, x, run=_min_run(cfg, workers))
    ok = rep["ks"].p_value > 0.01 and abs(rep["corr"]) < 0.05
    qs = np.linspace(0.0, 5.0, 51)
    over = -cs.overshoots
    w = cs.weights / cs.weights.sum()
    rows = [{"y": float(q), "survival": float(w[over > q].sum()), "exp1": math.exp(-q)} for q in qs]
    return {"passed": bool(ok), "results": rep, "rows": rows, "plot": ("y", "survival", "exp1")}


def _factorization(cfg, workers):
    run = _min_run(cfg, workers)
    cm = tl.estimate_cM(cfg.spec, tuple(range(1, 13)), run=run, tolerance=cfg.analysis.tolerance)
    cd = tl.estimate_cDinf(cfg.spec, None, run=run)
    _, rep = tl.conditional_min_law(cfg.spec, cfg.analysis.conditional_x, run=run)
    flags = [name for name, c in (("cM", cm), ("cDinf", cd)) if c.plateau.flagged]
    fac = tl.factorization_check(cm.level, cd.level, rep["frak_D_mean"], cfg.analysis.k_sigma, flags=flags)
    ok = fac.passes and not flags
    rows = [{"quantity": "c_M", "value": fac.c_M.value, "stderr": fac.c_M.stderr},
            {"quantity": "c_Dinf", "value": fac.c_D.value, "stderr": fac.c_D.stderr},
            {"quantity": "frak_D_mean", "value": fac.frak_D_mean.value, "stderr": fac.frak_D_mean.stderr},
            {"quantity": "product", "value": fac.product, "stderr": float("nan")}]
    return {"passed": bool(ok), "results": fac, "rows": rows, "plot": None}


def _smoothing(cfg, workers):
    rep = tl.smoothing_fixed_point_test(cfg.spec, cfg.run.horizon, cfg.run.samples, cfg.seed, workers=workers)
    rows = [{"q": q, "quantile_a": float(a), "quantile_b": float(b)}
            for q, a, b in zip(rep.quantile_levels, rep.quantiles_a, rep.quantiles_b)]
    return {"passed": bool(rep.ks.p_value > 0.01), "results": rep, "rows": rows,
            "plot": ("q", "quantile_a", "quantile_b")}


def _integrability(cfg, workers):
    grid = cfg.analysis.x_grid or (4, 6, 8, 10)
    prof = tl.integrability_profile(cfg.spec, grid, run=_min_run(cfg, workers))
    ok = prof.flat(cfg.analysis.k_sigma)
    return {"passed": ok, "results": {"flat": ok, "moments": prof.moments, "top1_share": prof.heavy_tail},
            "rows": list(prof.rows()), "plot": ("x", "moment", "stderr")}


def _truncation(cfg, workers):
    grid = cfg.analysis.x_grid or (4, 6, 8, 10)
    tab = tl.truncation_profile(cfg.spec, cfg.analysis.t_grid, grid, cfg.analysis.epsilon,
                                run=_min_run(cfg, workers))
    sup = tab.sup_over_x()
    ok = tab.monotone_in_t() and bool(np.all(np.diff(sup) <= 1e-15)) and sup[-1] < sup[0]
    rows = [{"t": int(t), **{f"x={x:g}": float(tab.table[i, j]) for j, x in enumerate(tab.x_grid)},
             "sup_over_x": float(sup[i])} for i, t in enumerate(tab.t_grid)]
    return {"passed": bool(ok), "results": {"table": tab.table, "stderr": tab.stderr, "t_grid": tab.t_grid,
                                            "x_grid": tab.x_grid, "sup_over_x": sup,
                                            "monotone_in_t": tab.monotone_in_t()},
            "rows": rows, "plot": ("t", "sup_over_x")}


RUNNERS: dict[str, Callable] = {
    "cM": _cM, "cDinf": _cDinf, "overshoot": _overshoot, "factorization": _factorization,
    "smoothing": _smoothing, "integrability": _integrability, "truncation": _truncation,
}


def run_experiment(config: ExperimentConfig, out: str | Path | None = None,
                   workers: int | None = None) -> ExperimentResult:
    """Run ``config.experiment`` and, when ``out`` is given, write

    summary.json, <experiment>.csv and <experiment>.dat into that directory.
    ``workers`` overrides ``config.run.workers`` (the environment variable
    overrides both).
    """
    workers = config.run.workers if workers is None else workers
    body = RUNNERS[config.experiment](config, workers)
    summary = {"experiment": config.experiment, "seed": config.seed, "config": config.to_dict(),
               "passed": bool(body["passed"]), "results": body["results"]}
    if out is not None:
        out = Path(out)
        write_json(out / "summary.json", summary)
        write_csv(out / f"{config.experiment}.csv", body["rows"])
        if body["plot"] and body["rows"]:
            cols = {c: [r[c] for r in body["rows"]] for c in body["plot"]}
            write_plot_data(out / f"{config.experiment}.dat", cols,
                            [f"experiment {config.experiment}", f"seed {config.seed}", f"p {config.model.p}"])
    summary["rows"] = body["rows"]
    return summary
