"""Method comparison: time for each solver to reach a target RMSD."""

from __future__ import annotations

import csv

import numpy as np

from .optimizer import solve

METHODS = ("qm", "ncg", "ncg-d", "ncg-ic")
BENCH_COLUMNS = (
    "method",
    "iterations",
    "reached",
    "iters_to_target",
    "time_to_target_s",
    "speedup_of_ncg_ic",
    "final_cost",
    "final_rmsd_hz",
    "final_rmse_hz",
)


def reference_solution(problem, omega0, n_iter=60, n_inner=10, ict_scale=1e-3):
    """Long preconditioned run used as the converged reference."""
    om, _ = solve(problem, omega0, "ncg-ic", n_iter, n_inner, ict_scale)
    return om


def first_below(log, target_hz):
    """(iteration, time) of the first logged iterate with RMSD below ``target_hz``."""
    for r in log.rows:
        if r["rmsd_hz"] is not None and r["rmsd_hz"] < target_hz:
            return r["iter"], r["time_s"]
    return None, None


def run_bench(problem, omega0, reference, methods=METHODS, n_iter=20, qm_iter=None, n_inner=10, ict_scale=1e-3,
              target_hz=0.5, truth=None):
    """Run every method from ``omega0``; returns (summary rows, logs by method)."""
    logs, rows = {}, []
    for m in methods:
        iters = qm_iter if (m == "qm" and qm_iter) else n_iter
        _, log = solve(problem, omega0, m, iters, n_inner, ict_scale, truth=truth, reference=reference)
        logs[m] = log
        it, t = first_below(log, target_hz)
        last = log.rows[-1]
        rows.append({
            "method": m,
            "iterations": last["iter"],
            "reached": it is not None,
            "iters_to_target": it,
            "time_to_target_s": t,
            "final_cost": last["cost"],
            "final_rmsd_hz": last["rmsd_hz"],
            "final_rmse_hz": last["rmse_hz"],
        })
    base = next((r["time_to_target_s"] for r in rows if r["method"] == "ncg-ic"), None)
    for r in rows:
        t = r["time_to_target_s"]
        r["speedup_of_ncg_ic"] = t / base if (t is not None and base) else None
    return rows, logs


def write_bench_csv(rows, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(BENCH_COLUMNS)
        for r in rows:
            wr.writerow([_cell(r.get(c)) for c in BENCH_COLUMNS])


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)
