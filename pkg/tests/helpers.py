"""Random instances and brute-force oracles shared by the test modules."""

import numpy as np

from fieldkit.optimizer import Problem
from fieldkit.regularizer import DifferenceOperator
from fieldkit.signal import FatModel, build_gamma, precompute_cache

SINGLE_FAT = FatModel.single(-440.0)


def echo_set(L, rng=None):
    """Distinct, strictly increasing echo times (seconds)."""
    base = {2: [0.0, 2.1e-3], 3: [0.0, 2.0e-3, 10e-3], 4: [1.2e-3, 2.3e-3, 3.9e-3, 5.1e-3]}[L]
    t = np.array(base)
    if rng is not None:
        t = t + rng.uniform(0, 2e-4, L).cumsum()
    return t


def random_data(rng, nc, L, nv, mode="fieldmap"):
    """Random complex data with nonvanishing sensitivities."""
    t = echo_set(L, rng)
    fat = SINGLE_FAT if mode == "waterfat" else None
    if mode == "waterfat" and L == 2:
        fat = FatModel.single(-210.0)
    basis = build_gamma(mode, t, fat)
    y = rng.standard_normal((nc, L, nv)) + 1j * rng.standard_normal((nc, L, nv))
    s = rng.standard_normal((nc, nv)) + 1j * rng.standard_normal((nc, nv))
    if nc == 1:
        s = np.ones((1, nv), dtype=complex)
    return y, s, t, basis


def random_cache(rng, nc, L, nv, mode="fieldmap"):
    y, s, t, basis = random_data(rng, nc, L, nv, mode)
    cache = precompute_cache(y, s, basis, np.ones(nv, bool), t)
    return cache, (y, s, t, basis)


def random_problem(rng, dims, nc=2, L=3, mode="fieldmap", beta=0.3, order=1, mask=None):
    nv = int(np.prod(dims))
    if mask is None:
        mask = np.ones(dims, bool)
    y, s, t, basis = random_data(rng, nc, L, nv, mode)
    cache = precompute_cache(y, s, basis, mask.ravel(order="F"), t)
    op = DifferenceOperator(mask, order=order)
    return Problem(cache, op, beta)


def r_direct(y, s, proj, c, d, m, n, j):
    """One r_cdmnj straight from its definition."""
    ssq = np.sum(np.abs(s[:, j]) ** 2)
    return proj[m, n] / ssq * np.conj(np.conj(s[c, j]) * y[c, m, j]) * (np.conj(s[d, j]) * y[d, n, j])


def phi_direct(y, s, proj, t, omega, voxels=None):
    """Quadruple-loop data cost sum |r| (1 - cos(angle r + w (t_m - t_n)))."""
    nc, L, nv = y.shape
    total = 0.0
    for j in voxels if voxels is not None else range(nv):
        for m in range(L):
            for n in range(L):
                for c in range(nc):
                    for d in range(nc):
                        r = r_direct(y, s, proj, c, d, m, n, j)
                        total += abs(r) * (1 - np.cos(np.angle(r) + omega[j] * (t[m] - t[n])))
    return total


def phi_tilde_min(y, s, basis, t, omega, j):
    """min_x sum_{c,l} |y_clj - e^{i w t_l} s_cj (gamma x)_l|^2 by dense least squares."""
    nc, L, _ = y.shape
    E = np.exp(1j * omega[j] * t)[:, None] * basis.gamma  # (L, K)
    A = np.concatenate([s[c, j] * E for c in range(nc)], axis=0)
    b = np.concatenate([y[c, :, j] for c in range(nc)])
    x, *_ = np.linalg.lstsq(A, b, rcond=None)
    return float(np.sum(np.abs(A @ x - b) ** 2)), x


def central_diff(f, x, h):
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g
