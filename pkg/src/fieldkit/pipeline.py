"""End-to-end estimation on volume-shaped arrays."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .initialize import SweepConfig, init_sweep, init_pwls, init_two_echo
from .optimizer import IterationLog, Problem, solve
from .regularizer import DifferenceOperator
from .signal import FatModel, build_gamma, flatten, precompute_cache, unflatten
from .sim import make_mask
from .waterfat import separate


@dataclass
class Estimate:
    dims: tuple
    mask: np.ndarray  # (nx, ny, nz) bool
    omega: np.ndarray  # flat rad/s
    omega0: np.ndarray
    log: IterationLog
    problem: Problem
    water: Optional[np.ndarray] = None  # flat complex
    fat: Optional[np.ndarray] = None
    omega_tilde: Optional[np.ndarray] = None

    @property
    def fieldmap_hz(self) -> np.ndarray:
        return unflatten(self.omega / (2 * np.pi), self.dims)


def setup(y, s, t, mode="fieldmap", fat: Optional[FatModel] = None, beta=2.0**-4, order=1, mask=None,
          threshold_frac=0.1, dilation=2):
    """Mask, pair-term cache and penalized problem for volume-shaped data."""
    y = np.asarray(y)
    s = np.asarray(s)
    dims = y.shape[-3:]
    if mask is None:
        mask = make_mask(y, s, threshold_frac, dilation)
    mask = np.asarray(mask, dtype=bool)
    basis = build_gamma(mode, t, fat if mode == "waterfat" else None)
    cache = precompute_cache(flatten(y), flatten(s), basis, flatten(mask), t)
    op = DifferenceOperator(mask, order=order, axes=[a for a, n in zip("xyz", dims) if n > 1])
    return Problem(cache, op, beta), basis, mask


def estimate(y, s, t, mode="fieldmap", fat: Optional[FatModel] = None, beta=2.0**-4, order=1,
             method="ncg-ic", n_outer=20, n_inner=10, ict_scale=1e-3, sweep: SweepConfig = SweepConfig(),
             mask=None, truth_hz=None, reference=None, omega0=None, threshold_frac=0.1,
             dilation=2) -> Estimate:
    """Mask, initialize, minimize and (in waterfat mode) separate.

    ``truth_hz`` (volume, Hz) and ``reference`` (flat, rad/s) only feed the
    iteration log.
    """
    problem, basis, mask = setup(y, s, t, mode, fat, beta, order, mask, threshold_frac, dilation)
    dims = mask.shape
    cache = problem.cache
    om_tilde = None
    if omega0 is None:
        if mode == "fieldmap":
            omega0 = init_two_echo(flatten(y), flatten(s), t, cache.mask)
        else:
            om_tilde = init_sweep(cache, sweep.grid(fat))
            omega0 = init_pwls(om_tilde, cache.rho, problem.op, beta, sweep.n_cg)
            omega0[~cache.mask] = 0.0
    truth = None if truth_hz is None else 2 * np.pi * flatten(truth_hz)
    omega, log = solve(problem, omega0, method, n_outer, n_inner, ict_scale, truth=truth, reference=reference)
    est = Estimate(dims=dims, mask=mask, omega=omega, omega0=omega0, log=log, problem=problem,
                   omega_tilde=om_tilde)
    if mode == "waterfat":
        comp = separate(flatten(y), flatten(s), basis, t, omega, mask=cache.mask)
        est.water, est.fat = comp.water, comp.fat
    return est
