"""Initial field maps: two-echo phase difference, voxel-wise sweep and PWLS smoothing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .signal import FatModel, PairTermCache


@dataclass
class SweepConfig:
    """Grid of ``n_grid`` points spanning ``[-|df|/2, |df|/2]`` Hz, endpoints included."""

    n_grid: int = 100
    n_cg: int = 10

    def grid(self, fat: FatModel) -> np.ndarray:
        if self.n_grid < 2:
            raise ValueError("sweep needs at least 2 grid points")
        half = abs(fat.mean_shift_hz) / 2
        return 2 * np.pi * np.linspace(-half, half, self.n_grid)


def init_two_echo(y, s, t, mask=None) -> np.ndarray:
    """Phase difference of the first two coil-combined echoes over ``t2 - t1``."""
    t = np.asarray(t, dtype=np.float64)
    if t.size < 2 or t[1] == t[0]:
        raise ValueError("two distinct echo times are required")
    y = np.asarray(y)
    s = np.asarray(s)
    z1 = np.sum(s.conj() * y[:, 0], axis=0)
    z2 = np.sum(s.conj() * y[:, 1], axis=0)
    om = np.angle(z1.conj() * z2) / (t[1] - t[0])
    if mask is not None:
        om = np.where(np.asarray(mask).ravel(), om, 0.0)
    return om


def sweep_costs(cache: PairTermCache, grid) -> np.ndarray:
    """Data cost of every masked voxel at every grid value, shape (G, n_mask)."""
    grid = np.asarray(grid, dtype=np.float64)
    out = np.empty((grid.size, cache.idx.size))
    base = cache.c0[cache.idx] + 2.0 * cache.K0c.sum(axis=0)
    for gi, om in enumerate(grid):
        rot = cache.Rc * np.exp(1j * cache.dt * om)[:, None]
        out[gi] = base - 2.0 * rot.real.sum(axis=0)
    return out


def init_sweep(cache: PairTermCache, grid) -> np.ndarray:
    """Per-voxel grid minimizer of the data cost.

    Ties go to the grid value with the smallest magnitude (then the more
    negative one).  Voxels whose cost is flat over the grid get 0.
    """
    grid = np.asarray(grid, dtype=np.float64)
    costs = sweep_costs(cache, grid)
    # visit grid points by increasing |omega| so argmin's first-hit rule breaks ties
    order = np.lexsort((grid, np.abs(grid)))
    best = order[np.argmin(costs[order], axis=0)]
    om_c = grid[best]
    flat = ~np.any(cache.Rc != 0, axis=0)
    om_c[flat] = 0.0
    om = np.zeros(cache.n_voxels)
    om[cache.idx] = om_c
    return om


def init_pwls(omega_tilde, rho, op, beta: float, n_cg: int = 10, history=None) -> np.ndarray:
    """A few CG iterations on ``sum rho_j (w_j - w~_j)^2 + beta/2 ||C w||^2``.

    The normal equations are ``(2 diag(rho) + beta C^T C) w = 2 rho * w~``;
    CG starts from ``w~``.  If ``history`` is a list, the PWLS objective of
    every iterate is appended (CG never increases it).
    """
    om_t = np.asarray(omega_tilde, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    if np.any(rho < 0):
        raise ValueError("PWLS weights must be nonnegative")
    A = (op.gram(beta) + sp.diags(2.0 * rho)).tocsr()
    if A.nnz == 0 or not np.any(A.data):
        raise ValueError("PWLS system is singular (zero weights and no regularization)")
    b = 2.0 * rho * om_t
    x = om_t.copy()
    r = b - A @ x
    p = r.copy()
    rr = float(r @ r)

    def objective(v):
        return float(rho @ (v - om_t) ** 2) + op.penalty(v, beta)

    if history is not None:
        history.append(objective(x))
    for _ in range(n_cg):
        if rr == 0.0:
            break
        Ap = A @ p
        a = rr / float(p @ Ap)
        x += a * p
        r -= a * Ap
        rr_new = float(r @ r)
        p = r + (rr_new / rr) * p
        rr = rr_new
        if history is not None:
            history.append(objective(x))
    return x


def init_waterfat(cache: PairTermCache, fat: FatModel, op, beta: float, cfg: SweepConfig = SweepConfig()):
    """Sweep followed by PWLS smoothing; returns ``(omega0, omega_tilde)``."""
    om_t = init_sweep(cache, cfg.grid(fat))
    om0 = init_pwls(om_t, cache.rho, op, beta, cfg.n_cg)
    om0[~cache.mask] = 0.0
    return om0, om_t

