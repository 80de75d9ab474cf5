"""Experiment orchestration shared by the command line and the acceptance tests."""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import dataset, plant_from, trigger_from
from .datarep import check_assumption, write_data_csv
from .lmi import DEFAULT_MARGIN, theorem1_lmis
from .sdp import FEASIBLE, NUMERICAL, NoFeasibleBracket, msi_bisect, solve
from .sim import simulate, write_trace_csv
from .synthesis import CodesignError, analysis_problem, codesign_convex, codesign_iterative, msi_convex, \
    write_report
from .sysmodel import DelaySamplingBounds, make_selector_basis

log = logging.getLogger(__name__)

NO_BRACKET = "—"
ETA_FLOOR = -1e-12


def _backend(cfg):
    b = cfg.get("backend", "auto")
    return None if b == "auto" else b


def write_atomic(path, payload: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    write_report(tmp, payload)
    os.replace(tmp, path)
    return path


def write_json(path, payload: dict):
    return write_atomic(path, payload)


# -- certificates ---------------------------------------------------------------

def certificate(trace, x0, verify: dict) -> dict:
    """Closed-loop checks on a simulation trace.

    Convergence means no divergence, ``|x(t_end)| < |x(0)|`` and a negative
    least-squares decay rate of ``log |x|`` over the second half of the run.
    ``verify`` may add ``x_final_max`` (absolute bound on ``|x(t_end)|``) and
    ``max_transmission_ratio``.
    """
    x0n = float(np.linalg.norm(x0))
    xf = float(np.linalg.norm(trace.x[-1]))
    rate = tail_decay_rate(trace)
    retained = ~trace.transmit
    retained[0] = False
    scale = np.maximum(1.0, np.abs(trace.f_t[retained]))
    gap = float(np.max((trace.f_c[retained] - trace.f_t[retained]) / scale)) if retained.any() else -np.inf
    out = {
        "x_final_norm": xf,
        "x0_norm": x0n,
        "eta_min": float(trace.eta.min()),
        "eta_residual": trace.eta_residual(),
        "fc_minus_ft_max": gap,
        "transmissions": trace.transmissions,
        "samples": trace.samples,
        "transmission_ratio": trace.transmission_ratio,
        "diverged": bool(trace.diverged),
        "tail_decay_rate": rate,
    }
    checks = {
        "not_diverged": not trace.diverged,
        "converged": x0n == 0.0 or (xf < x0n and rate < 0.0),
        "eta_nonnegative": out["eta_min"] >= ETA_FLOOR,
        "trigger_respected": gap <= 1e-12,
    }
    if "x_final_max" in verify:
        checks["x_final"] = xf <= verify["x_final_max"]
    if "max_transmission_ratio" in verify:
        checks["transmission_ratio"] = out["transmission_ratio"] <= verify["max_transmission_ratio"]
    out["checks"] = checks
    out["passed"] = all(checks.values())
    return out


def tail_decay_rate(trace) -> float:
    """Slope of ``log |x(t)|`` fitted over the second half of the run (``-inf`` once the state is zero)."""
    k = trace.t.size // 2
    nrm = np.linalg.norm(trace.x[k:], axis=1)
    if trace.t.size < 4 or not np.all(nrm > 0):
        return -np.inf if np.all(nrm[-1:] == 0) else float("nan")
    return float(np.polyfit(trace.t[k:], np.log(nrm), 1)[0])


# -- simulate / collect ------------------------------------------------------------

def run_simulate(cfg: dict, out_dir, K=None, Omega=None, tag="sim"):
    """Simulate the loop from the configured (or given) gain and trigger matrix and write CSVs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sysm = plant_from(cfg)
    K = np.atleast_2d(np.asarray(cfg["design"]["K"] if K is None else K, dtype=float))
    Om = np.asarray(cfg["design"]["Omega"] if Omega is None else Omega, dtype=float)
    sim = cfg["simulation"]
    tr = simulate(sysm, K, trigger_from(cfg, Om), sim["x0"], sim.get("t_end", 30.0), sim.get("substeps", 20))
    trace_csv, events_csv = out_dir / f"{tag}_trace.csv", out_dir / f"{tag}_events.csv"
    write_trace_csv(tr, trace_csv, events_csv)
    cert = certificate(tr, sim["x0"], cfg["verify"])
    return tr, cert, [trace_csv, events_csv]


def run_collect(cfg: dict, out_dir, seed: int):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds = dataset(cfg, cfg["data"]["wbar"], seed)
    sysm = plant_from(cfg)
    path = write_data_csv(ds.data, out_dir / "data.csv")
    rep = check_assumption(ds.theta, sysm.n_w)
    summary = {"samples": int(ds.data.X.shape[1]), "wbar": ds.wbar, "assumption": str(rep),
               "assumption_ok": rep.ok, "true_plant_margin": float(ds.theta.min_eig(np.hstack([sysm.A, sysm.B])))}
    return summary, [path]


# -- fixed-gain MSI table -----------------------------------------------------------

def fixed_gain_problem(theorem, cfg, ds, K, vertices, margin=DEFAULT_MARGIN):
    t = cfg["trigger"]
    s1, s2 = t.get("sigma1", 1e-4), t.get("sigma2", 1e-4)
    sysm = plant_from(cfg)
    if theorem == 1:
        return theorem1_lmis(make_selector_basis(sysm.n), sysm.A, sysm.B, K, s1, s2, vertices, margin=margin)
    if theorem == 2:
        return analysis_problem(K, ds.theta, s1, s2, vertices, n_w=sysm.n_w)
    return analysis_problem(K, ds.theta_bar, s1, s2, vertices, B=sysm.B, n_w=sysm.n_w)


def msi_cell(cfg: dict, ds, theorem: int, d_lo: float, d_hi: float, tol: float, guess=None, K=None) -> dict:
    """Bisect one table cell and re-verify the result independently."""
    K = np.atleast_2d(np.asarray(cfg["design"]["K"] if K is None else K, dtype=float))
    h_lo = cfg["timing"].get("h_lo", 1e-5)
    bracket = cfg["msi"].get("bracket", [0.25, 1.0])
    be = _backend(cfg)

    def feas(h):
        return solve(fixed_gain_problem(theorem, cfg, ds, K, DelaySamplingBounds(d_lo, d_hi, h_lo, h).vertices()),
                     objective="none", backend=be)
    t0 = time.perf_counter()
    cell = {"theorem": theorem, "wbar": ds.wbar, "d_lo": d_lo, "dbar": d_hi, "tol": tol, "guess": guess}
    try:
        r = msi_bisect(feas, bracket, tol=tol, guess=guess)
    except NoFeasibleBracket as exc:
        cell.update(h_bar=None, status="no-bracket", detail=str(exc), seconds=time.perf_counter() - t0)
        return cell
    check = solve(fixed_gain_problem(theorem, cfg, ds, K, DelaySamplingBounds(d_lo, d_hi, h_lo, r.h_bar).vertices()),
                  objective="margin", backend=be)
    above = r.evaluations.get(round(r.h_bar + tol, 10))
    cell.update(h_bar=r.h_bar, status="ok", evaluations=len(r.evaluations), capped=r.capped,
                non_monotone=r.non_monotone, indeterminate=r.indeterminate,
                verified=check.status == FEASIBLE, margin=check.margin_achieved,
                recheck_max=float(max(check.recheck)) if check.recheck else None,
                above_infeasible=(above is False), seconds=time.perf_counter() - t0)
    return cell


def _row_worker(args):
    cfg, theorem, dbar, seeds, tol, cells_dir = args
    d_lo = cfg["timing"].get("d_lo", 0.0)
    res, prev_seed = [], {}
    for seed in seeds:
        prev_col = None
        for wbar in cfg["msi"]["wbar"]:
            guess = prev_seed.get(wbar, prev_col)
            ds = dataset(cfg, wbar, seed)
            cell = msi_cell(cfg, ds, theorem, d_lo, dbar, tol, guess=guess)
            cell["seed"] = seed
            if cells_dir is not None:
                write_atomic(Path(cells_dir) / f"th{theorem}_d{dbar:g}_w{wbar:g}_s{seed}.json", cell)
            log.info("cell th%d dbar=%g wbar=%g seed=%d -> %s (%.1fs)", theorem, dbar, wbar, seed,
                     cell["h_bar"], cell["seconds"])
            res.append(cell)
            if cell["h_bar"] is not None:
                prev_seed[wbar] = prev_col = cell["h_bar"]
    return res


def run_msi_table(cfg: dict, seeds, out_dir=None, jobs: int = 1, tol=None) -> dict:
    """Every (theorem, delay bound, noise level, seed) cell.

    Rows (theorem, delay bound) run independently; within a row the
    bisection for each cell starts from the previous seed's value for the
    same cell or else from the neighbouring noise level's value.
    """
    tol = cfg["msi"].get("tol", 0.01) if tol is None else tol
    cells_dir = None if out_dir is None else Path(out_dir) / "cells"
    rows = [(cfg, th, db, list(seeds), tol, cells_dir)
            for th in cfg["msi"].get("theorems", [2, 3]) for db in cfg["msi"].get("dbar", [0.0])]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_row_worker, rows))
    else:
        parts = [_row_worker(r) for r in rows]
    cells = [c for part in parts for c in part]
    table = median_table(cells)
    out = {"cells": cells, "median": table, "tol": tol}
    if out_dir is not None:
        out["files"] = [write_cells_csv(cells, Path(out_dir) / "cells.csv"),
                        write_median_csv(table, Path(out_dir) / "table.csv")]
    return out


def median_table(cells) -> list:
    groups = {}
    for c in cells:
        groups.setdefault((c["theorem"], c["dbar"], c["wbar"]), []).append(c["h_bar"])
    table = []
    for (th, db, wb), vals in sorted(groups.items()):
        got = [v for v in vals if v is not None]
        med = float(np.median(got)) if len(got) * 2 > len(vals) else None
        table.append({"theorem": th, "dbar": db, "wbar": wb, "h_bar": med, "n_seeds": len(vals),
                      "n_feasible": len(got)})
    return table


def _fmt(v):
    return NO_BRACKET if v is None else repr(float(v))


def write_cells_csv(cells, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = ["seed", "wbar", "dbar", "theorem", "h_bar", "status", "verified", "above_infeasible", "margin",
            "evaluations", "seconds"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for c in cells:
            w.writerow([c.get("seed"), c["wbar"], c["dbar"], c["theorem"], _fmt(c["h_bar"]), c["status"],
                        c.get("verified", ""), c.get("above_infeasible", ""), c.get("margin", ""),
                        c.get("evaluations", ""), f"{c['seconds']:.3f}"])
    return path


def write_median_csv(table, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["wbar", "dbar", "theorem", "h_bar", "n_seeds"])
        for r in table:
            w.writerow([r["wbar"], r["dbar"], r["theorem"], _fmt(r["h_bar"]), r["n_seeds"]])
    return path


# -- co-design -----------------------------------------------------------------------

def _design_args(cfg, ds):
    t, tm, de = cfg["trigger"], cfg["timing"], cfg["design"]
    sysm = plant_from(cfg)
    thm = de.get("theorem", 5)
    qmi = ds.theta if thm == 5 else ds.theta_bar
    B = None if thm == 5 else sysm.B
    return sysm, thm, qmi, B, t["sigma1"], t["sigma2"], de.get("slack", 2.0), de.get("margin", DEFAULT_MARGIN)


def run_codesign(cfg: dict, seed: int, out_dir) -> dict:
    """Convex co-design at ``h`` over the delay interval, then a verification simulation."""
    out_dir = Path(out_dir)
    ds = dataset(cfg, cfg["data"]["wbar"], seed)
    sysm, thm, qmi, B, s1, s2, slack, margin = _design_args(cfg, ds)
    tm = cfg["timing"]
    bounds = DelaySamplingBounds(tm.get("d_lo", 0.0), tm.get("d_hi", 0.0), tm["h"], tm["h"])
    t0 = time.perf_counter()
    res = codesign_convex(qmi, bounds, s1, s2, slack=slack, B=B, backend=_backend(cfg), n_w=sysm.n_w,
                          margin=margin, validate=cfg["design"].get("validate", True))
    design_s = time.perf_counter() - t0
    tr, cert, files = run_simulate(cfg, out_dir, K=res.K, Omega=res.Omega, tag="verify")
    eigs = np.linalg.eigvals(sysm.A + sysm.B @ res.K)
    report = {"design": res.report(), "certificate": cert, "design_seconds": design_s, "seed": seed,
              "closed_loop_eigs": [[float(z.real), float(z.imag)] for z in eigs]}
    files.append(write_json(out_dir / "report.json", report))
    report["files"] = [str(f) for f in files]
    report["trace"] = tr
    return report


# -- convex and iterative MSI (second and third tables) ------------------------------------

@dataclass
class IterCell:
    wbar: float
    seed: int
    mode: str
    convex_h_bar: float
    initial_h_bar: float
    h_bar: float
    trace: list
    seconds: float


def _mode_data(cfg, ds, mode):
    sysm = plant_from(cfg)
    return (ds.theta, None) if mode == "AB" else (ds.theta_bar, sysm.B)


def convex_cell(cfg, ds, mode, tol, guess=None):
    """Largest ``h`` for the convex co-design (unknown ``[A B]`` or known ``B``), with ``d`` fixed by the timing box."""
    t, tm = cfg["trigger"], cfg["timing"]
    qmi, B = _mode_data(cfg, ds, mode)
    bracket = cfg["msi"].get("convex_bracket", [0.25, 0.5])
    return msi_convex(qmi, tm.get("d_lo", 0.0), tm.get("d_hi", 0.0), tm.get("h_lo", 1e-5), t.get("sigma1", 1e-4),
                      t.get("sigma2", 1e-4), bracket, slack=cfg["design"].get("slack", 2.0), B=B, tol=tol,
                      guess=guess, backend=_backend(cfg))


def iterative_cell(cfg, ds, mode, seed, tol, guess=None) -> IterCell:
    """Convex co-design MSI, then the alternation started from the convex gain."""
    t, tm = cfg["trigger"], cfg["timing"]
    s1, s2 = t.get("sigma1", 1e-4), t.get("sigma2", 1e-4)
    d_lo, d_hi, h_lo = tm.get("d_lo", 0.0), tm.get("d_hi", 0.0), tm.get("h_lo", 1e-5)
    qmi, B = _mode_data(cfg, ds, mode)
    t0 = time.perf_counter()
    rc = convex_cell(cfg, ds, mode, tol, guess=guess)
    cd = codesign_convex(qmi, DelaySamplingBounds(d_lo, d_hi, h_lo, rc.h_bar), s1, s2,
                         slack=cfg["design"].get("slack", 2.0), B=B, backend=_backend(cfg), validate=False)
    it = codesign_iterative(qmi, cd.K, d_lo, d_hi, h_lo, s1, s2, B=B, tol=tol,
                            h_start=cfg["msi"].get("bracket", [0.25])[0],
                            h_cap=cfg["msi"].get("h_cap", 200.0), backend=_backend(cfg))
    return IterCell(ds.wbar, seed, mode, rc.h_bar, it.trace[0]["h_bar"], it.h_bar, it.trace,
                    time.perf_counter() - t0)


def run_iterative_table(cfg, seeds, out_dir=None, tol=None) -> list:
    tol = cfg["msi"].get("tol", 0.05) if tol is None else tol
    cells = []
    for mode in cfg["msi"].get("modes", ["AB", "knownB"]):
        prev = None
        for seed in seeds:
            for wbar in cfg["msi"]["wbar"]:
                ds = dataset(cfg, wbar, seed)
                try:
                    c = iterative_cell(cfg, ds, mode, seed, tol, guess=prev)
                    row = c.__dict__.copy()
                    prev = c.convex_h_bar
                except (NoFeasibleBracket, CodesignError) as exc:
                    row = {"wbar": wbar, "seed": seed, "mode": mode, "convex_h_bar": None, "initial_h_bar": None,
                           "h_bar": None, "trace": [], "error": str(exc), "seconds": None}
                if out_dir is not None:
                    write_atomic(Path(out_dir) / "cells" / f"{mode}_w{wbar:g}_s{seed}.json", row)
                log.info("iterative %s wbar=%g seed=%d -> %s", mode, wbar, seed, row["h_bar"])
                cells.append(row)
    if out_dir is not None:
        path = Path(out_dir) / "table.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["wbar", "seed", "mode", "convex_h_bar", "initial_h_bar", "h_bar", "iterations"])
            for r in cells:
                w.writerow([r["wbar"], r["seed"], r["mode"], _fmt(r["convex_h_bar"]), _fmt(r["initial_h_bar"]),
                            _fmt(r["h_bar"]), max(len(r["trace"]) - 1, 0)])
        tpath = Path(out_dir) / "trace.csv"
        with tpath.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["wbar", "seed", "mode", "iteration", "h_bar", "candidate_h_bar", "accepted"])
            for r in cells:
                for e in r["trace"]:
                    w.writerow([r["wbar"], r["seed"], r["mode"], e["iteration"], repr(float(e["h_bar"])),
                                e.get("candidate_h_bar", ""), e.get("accepted", "")])
    return cells


def run_convex_table(cfg, seeds, out_dir=None, tol=None) -> list:
    tol = cfg["msi"].get("tol", 0.05) if tol is None else tol
    cells = []
    for mode in cfg["msi"].get("modes", ["AB", "knownB"]):
        prev = None
        for seed in seeds:
            for wbar in cfg["msi"]["wbar"]:
                ds = dataset(cfg, wbar, seed)
                t0 = time.perf_counter()
                try:
                    r = convex_cell(cfg, ds, mode, tol, guess=prev)
                    h, prev = r.h_bar, r.h_bar
                except NoFeasibleBracket:
                    h = None
                cells.append({"wbar": wbar, "seed": seed, "theorem": 5 if mode == "AB" else 6, "mode": mode,
                              "h_bar": h, "seconds": time.perf_counter() - t0})
    if out_dir is not None:
        path = Path(out_dir) / "table.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["wbar", "seed", "theorem", "h_bar"])
            for r in cells:
                w.writerow([r["wbar"], r["seed"], r["theorem"], _fmt(r["h_bar"])])
    return cells


GNUPLOT_STUB = """# gnuplot script for {name}; run: gnuplot {name}.gp
set datafile separator ','
set key autotitle columnhead
set terminal pngcairo size 900,600
set output '{name}.png'
set multiplot layout 2,1
plot for [i=2:{last}] 'verify_trace.csv' using 1:i with lines
plot 'verify_trace.csv' using 1:(column('sample_flag')==1 ? column('eta') : 1/0) with points title 'eta'
unset multiplot
"""


def write_gnuplot_stub(out_dir, name: str, n: int):
    path = Path(out_dir) / f"{name}.gp"
    path.write_text(GNUPLOT_STUB.format(name=name, last=n + 1))
    return path


def status_exit(status: str) -> int:
    return {FEASIBLE: 0, NUMERICAL: 3}.get(status, 2)


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=str)
