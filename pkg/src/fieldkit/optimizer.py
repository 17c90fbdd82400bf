"""Preconditioned nonlinear CG with a majorize-minimize line search, plus baselines."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import likelihood as lk
from .regularizer import DifferenceOperator
from .signal import PairTermCache
from .sparse import FactorizationError, assemble_hessian, ichol

log = logging.getLogger(__name__)

PRECONDITIONERS = ("none", "diag", "ic0", "ict")


class NumericalError(FloatingPointError):
    """Non-finite cost or gradient encountered during optimization."""


@dataclass
class SolverConfig:
    preconditioner: str = "ict"
    n_outer: int = 20
    n_inner: int = 10
    ict_scale: float = 1e-3
    gtol: Optional[float] = None

    def __post_init__(self):
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"preconditioner must be one of {PRECONDITIONERS}, got {self.preconditioner!r}")
        if self.n_outer < 1 or self.n_inner < 1:
            raise ValueError("iteration counts must be at least 1")
        if not self.ict_scale > 0:
            raise ValueError("ict_scale must be positive")


class Problem:
    """Penalized-likelihood field-map problem over the masked voxels."""

    def __init__(self, cache: PairTermCache, op: DifferenceOperator, beta: float):
        if beta < 0:
            raise ValueError("beta must be nonnegative")
        if op.n_voxels != cache.n_voxels:
            raise ValueError("regularizer and data disagree on the number of voxels")
        self.cache = cache
        self.op = op
        self.beta = float(beta)
        self.idx = cache.idx
        gram = op.gram(self.beta).tocsc()
        self.reg = gram[self.idx][:, self.idx].tocsc()
        self.reg_diag = self.reg.diagonal()

    def cost(self, omega) -> float:
        return lk.cost_psi(self.cache, omega, self.op, self.beta)

    def grad(self, omega) -> np.ndarray:
        return lk.grad_psi(self.cache, omega, self.op, self.beta)


@dataclass
class IterationLog:
    """Per-iteration record; row 0 describes the starting point."""

    rows: list = field(default_factory=list)
    inner_costs: list = field(default_factory=list)
    fallbacks: int = 0
    restarts: int = 0

    COLUMNS = ("iter", "time_s", "cost", "grad_norm", "step", "rmse_hz", "rmsd_hz", "factor_nnz")

    def append(self, **row):
        self.rows.append(row)

    def column(self, name) -> np.ndarray:
        return np.array([r.get(name, np.nan) for r in self.rows], dtype=float)

    @property
    def costs(self) -> np.ndarray:
        return self.column("cost")

    def to_csv(self, path_or_file, columns=None):
        columns = columns or [c for c in self.COLUMNS if any(r.get(c) is not None for r in self.rows)]
        own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(columns)
            for r in self.rows:
                wr.writerow([_fmt(r.get(c)) for c in columns])
        finally:
            if own:
                fh.close()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def _rms_hz(a, b, idx) -> float:
    return float(np.sqrt(np.mean((a[idx] - b[idx]) ** 2)) / (2 * np.pi))


class _Recorder:
    def __init__(self, problem: Problem, truth, reference):
        self.p = problem
        self.truth = truth
        self.reference = reference
        self.t0 = time.perf_counter()
        self.log = IterationLog()

    def record(self, it, omega, cost, g, step, nnz=None):
        if not np.isfinite(cost) or not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite cost or gradient at iteration {it}")
        idx = self.p.idx
        self.log.append(
            iter=it,
            time_s=time.perf_counter() - self.t0,
            cost=cost,
            grad_norm=float(np.linalg.norm(g[idx])),
            step=step,
            rmse_hz=None if self.truth is None else _rms_hz(omega, self.truth, idx),
            rmsd_hz=None if self.reference is None else _rms_hz(omega, self.reference, idx),
            factor_nnz=nnz,
        )


def _start(problem: Problem, omega0) -> np.ndarray:
    om = np.zeros(problem.cache.n_voxels)
    om0 = np.asarray(omega0, dtype=np.float64)
    if om0.shape != om.shape:
        raise ValueError(f"initial field map has shape {om0.shape}, expected {om.shape}")
    if not np.all(np.isfinite(om0[problem.idx])):
        raise ValueError("initial field map is not finite inside the mask")
    om[problem.idx] = om0[problem.idx]
    return om


def diag_precond(d, reg_diag):
    """Diagonal of the Hessian ``d + diag(beta C^T C)``; zero entries are replaced by 1."""
    p = np.asarray(d, dtype=np.float64) + np.asarray(reg_diag, dtype=np.float64)
    return np.where(p > 0, p, 1.0)


def line_search(problem: Problem, omega, z, n_inner: int, d0=None, history=None):
    """Majorize-minimize step along ``z``.

    Each inner step is one Newton step on the Huber quadratic majorizer of the
    line restriction ``f(a) = Psi(omega + a z)``, so ``f`` never increases.

    Returns ``(alpha, flat)`` where ``flat`` is True if the majorizer curvature
    vanished.  If ``history`` is a list, ``f(alpha_k)`` is appended for every
    inner iterate.
    """
    cache, beta, idx = problem.cache, problem.beta, problem.idx
    cz = problem.op.apply(z)
    cw = problem.op.apply(omega)
    czz = float(cz @ cz)
    czw = float(cz @ cw)
    zc = z[idx]
    z2 = zc * zc
    alpha = 0.0
    if history is not None:
        history.append(problem.cost(omega))
    for k in range(n_inner):
        om = omega + alpha * z
        d = d0 if (k == 0 and d0 is not None) else lk.curvatures(cache, om)
        df = float(zc @ lk.grad_phi(cache, om)[idx]) + beta * (czw + alpha * czz)
        curv = float(z2 @ d[idx]) + beta * czz
        if not curv > 0:
            return alpha, True
        alpha = alpha - df / curv
        if history is not None:
            history.append(problem.cost(omega + alpha * z))
    return alpha, False


def _make_precond(problem: Problem, kind: str, d, scale: float, rec_log: IterationLog):
    idx = problem.idx
    dc = d[idx]
    if kind == "none":
        return (lambda g: g), None
    if kind == "ic0" or kind == "ict":
        try:
            H = assemble_hessian(dc, problem.reg)
            F = ichol(H, kind, scale)
            return F.solve, F.nnz
        except FactorizationError as exc:
            rec_log.fallbacks += 1
            log.warning("incomplete Cholesky failed (%s); using diagonal preconditioner", exc)
    pd = diag_precond(dc, problem.reg_diag)
    return (lambda g: g / pd), None


def ncg_mls(problem: Problem, omega0, cfg: SolverConfig = SolverConfig(), truth=None, reference=None,
            record_inner: bool = False):
    """Preconditioned Polak-Ribiere NCG with monotone line search.

    Parameters
    ----------
    problem : Problem
    omega0 : (Nv,) initial field map in rad/s
    cfg : SolverConfig
    truth, reference : optional (Nv,) field maps for RMSE / RMSD logging
    record_inner : keep the line-search cost sequence of every outer iteration

    Returns
    -------
    omega : (Nv,) estimate in rad/s
    log : IterationLog
    """
    rec = _Recorder(problem, truth, reference)
    idx = problem.idx
    om = _start(problem, omega0)
    z = g_prev = p_prev = None
    nnz = None
    for it in range(cfg.n_outer + 1):
        g = problem.grad(om)
        rec.record(it, om, problem.cost(om), g, 0.0 if it == 0 else alpha, nnz)
        if it == cfg.n_outer:
            break
        gc = g[idx]
        if cfg.gtol is not None and np.max(np.abs(gc), initial=0.0) < cfg.gtol:
            break
        if not np.any(gc):
            break
        d = lk.curvatures(problem.cache, om)
        solve, nnz = _make_precond(problem, cfg.preconditioner, d, cfg.ict_scale, rec.log)
        p = -solve(gc)
        if z is None:
            z = p
        else:
            mu = max(0.0, float(p @ (gc - g_prev)) / float(p_prev @ g_prev))
            z = p + mu * z
            if not float(z @ gc) < 0:
                z = p
                rec.log.restarts += 1
        g_prev, p_prev = gc, p
        zf = np.zeros_like(om)
        zf[idx] = z
        hist = [] if record_inner else None
        alpha, flat = line_search(problem, om, zf, cfg.n_inner, d0=d, history=hist)
        if hist is not None:
            rec.log.inner_costs.append(hist)
        if flat:
            log.info("flat search direction at iteration %d", it)
        om = om + alpha * zf
    return om, rec.log


def qm_baseline(problem: Problem, omega0, n_iter: int = 20, truth=None, reference=None):
    """Separable quadratic majorizer iteration with a fixed diagonal curvature.

    ``omega+ = omega - grad / (d_max + m)`` with ``d_max`` the global bound on
    the data-term curvature and ``m`` a row-sum bound of ``beta C^T C``.
    """
    rec = _Recorder(problem, truth, reference)
    idx = problem.idx
    om = _start(problem, omega0)
    denom = lk.max_curvatures(problem.cache)[idx] + problem.op.diag_majorizer(problem.beta)[idx]
    denom = np.where(denom > 0, denom, 1.0)
    for it in range(n_iter + 1):
        g = problem.grad(om)
        rec.record(it, om, problem.cost(om), g, 0.0 if it == 0 else 1.0)
        if it == n_iter:
            break
        om = om.copy()
        om[idx] -= g[idx] / denom
    return om, rec.log


def solve(problem: Problem, omega0, method: str, n_iter: int, n_inner: int = 10, ict_scale: float = 1e-3,
          truth=None, reference=None):
    """Run one of ``qm``, ``ncg``, ``ncg-d``, ``ncg-ic0``, ``ncg-ic``."""
    kinds = {"ncg": "none", "ncg-d": "diag", "ncg-ic0": "ic0", "ncg-ic": "ict"}
    if method == "qm":
        return qm_baseline(problem, omega0, n_iter, truth=truth, reference=reference)
    if method not in kinds:
        raise ValueError(f"unknown method {method!r}")
    cfg = SolverConfig(kinds[method], n_iter, n_inner, ict_scale)
    return ncg_mls(problem, omega0, cfg, truth=truth, reference=reference)
