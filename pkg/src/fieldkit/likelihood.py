"""Eliminated-image negative log-likelihood and its derivatives.

For each voxel the data term is a sum of weighted ``1 - cos`` terms in the
field map.  Cost and gradient use the coil-collapsed pair sums ``R`` and
``K0``; the Huber curvatures need each coil pair separately and are
evaluated on the fly from the coil-weighted images.
"""

from __future__ import annotations

import numba
import numpy as np

from .signal import PairTermCache, SignalBasis, echo_times

_SINC_EPS = 1e-9


def _phase(cache: PairTermCache, omega) -> np.ndarray:
    om = np.asarray(omega, dtype=np.float64)[cache.idx]
    return cache.Rc * np.exp(1j * cache.dt[:, None] * om[None, :])


def cost_phi_voxels(cache: PairTermCache, omega) -> np.ndarray:
    """Per-voxel data cost (zero outside the mask)."""
    out = np.zeros(cache.n_voxels)
    rot = _phase(cache, omega)
    out[cache.idx] = cache.c0[cache.idx] + 2.0 * np.sum(cache.K0c - rot.real, axis=0)
    return out


def cost_phi(cache: PairTermCache, omega) -> float:
    rot = _phase(cache, omega)
    per = cache.c0[cache.idx] + 2.0 * np.sum(cache.K0c - rot.real, axis=0)
    return float(np.sum(per))


def grad_phi(cache: PairTermCache, omega) -> np.ndarray:
    rot = _phase(cache, omega)
    g = np.zeros(cache.n_voxels)
    g[cache.idx] = 2.0 * np.sum(cache.dt[:, None] * rot.imag, axis=0)
    return g


def cost_psi(cache: PairTermCache, omega, op, beta: float) -> float:
    return cost_phi(cache, omega) + op.penalty(omega, beta)


def grad_psi(cache: PairTermCache, omega, op, beta: float) -> np.ndarray:
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    g = grad_phi(cache, omega)
    if beta > 0:
        g = g + beta * op.adjoint(op.apply(omega))
    return g


def cost_report(cache: PairTermCache, omega, op, beta: float) -> dict:
    phi = cost_phi(cache, omega)
    cw = op.apply(omega)
    reg = float(cw @ cw)
    return {"phi": phi, "reg": reg, "psi": phi + 0.5 * beta * reg}


@numba.njit(cache=True, parallel=True)
def _curvature_kernel(wabs, wang, ssq, gabs, gang, pm, pn, dt, om, out):
    nc = wabs.shape[0]
    nv = wabs.shape[2]
    npair = dt.size
    twopi = 2.0 * np.pi
    for j in numba.prange(nv):
        acc = 0.0
        for p in range(npair):
            m = pm[p]
            n = pn[p]
            base = gang[p] + om[j] * dt[p]
            scale = gabs[p] * dt[p] * dt[p]
            for c in range(nc):
                am = wabs[c, m, j]
                if am == 0.0:
                    continue
                phm = base - wang[c, m, j]
                for d in range(nc):
                    x = phm + wang[d, n, j]
                    # wrap into (-pi, pi]
                    u = x - twopi * np.ceil((x - np.pi) / twopi)
                    if abs(u) < _SINC_EPS:
                        sinc = 1.0 - u * u / 6.0
                    else:
                        sinc = np.sin(u) / u
                    acc += scale * am * wabs[d, n, j] * sinc
        out[j] = 2.0 * acc / ssq[j]


def curvatures(cache: PairTermCache, omega) -> np.ndarray:
    """Huber optimal curvatures of the data term at ``omega``.

    ``d_j = sum_{m<n} sum_{c,d} 2 |r| dt^2 sin(u)/u`` with
    ``u = angle(r) + omega_j dt`` wrapped into (-pi, pi].
    """
    om = np.ascontiguousarray(np.asarray(omega, dtype=np.float64)[cache.idx])
    g = cache.proj[cache.pairs[:, 0], cache.pairs[:, 1]]
    out_c = np.empty(cache.idx.size)
    _curvature_kernel(
        cache.wc_abs,
        cache.wc_angle,
        cache.ssqc,
        np.abs(g),
        np.angle(g),
        cache.pairs[:, 0].astype(np.int64),
        cache.pairs[:, 1].astype(np.int64),
        cache.dt,
        om,
        out_c,
    )
    out = np.zeros(cache.n_voxels)
    out[cache.idx] = np.maximum(out_c, 0.0)
    return out


def max_curvatures(cache: PairTermCache) -> np.ndarray:
    """Global curvature bound ``sum 2 |r| dt^2`` (sinc <= 1)."""
    out = np.zeros(cache.n_voxels)
    out[cache.idx] = 2.0 * np.sum(cache.K0c * cache.dt[:, None] ** 2, axis=0)
    return out


def ml_images(y, s, basis: SignalBasis, t, omega, mask=None, rank_tol: float = 1e-10):
    """Least-squares component images for a fixed field map.

    Solves, per voxel, the (Nc L) x K system ``((gamma diag(e^{i w t})) kron s_j) x = y_j``
    through its K x K normal equations.

    Returns
    -------
    x : (K, Nv) complex
    flags : (Nv,) bool, True where the voxel system is rank deficient
    """
    t = echo_times(t)
    y = np.asarray(y, dtype=np.complex128)
    s = np.asarray(s, dtype=np.complex128)
    omega = np.asarray(omega, dtype=np.float64)
    nc, L, nv = y.shape
    K = basis.n_components
    x = np.zeros((K, nv), dtype=np.complex128)
    flags = np.zeros(nv, dtype=bool)
    sel = np.arange(nv) if mask is None else np.flatnonzero(np.asarray(mask).ravel())

    ssq = np.sum(np.abs(s[:, sel]) ** 2, axis=0)
    z = np.sum(s[:, None, sel].conj() * y[:, :, sel], axis=0)  # (L, n)
    demod = np.exp(-1j * np.outer(t, omega[sel])) * z
    gram = basis.gamma.conj().T @ basis.gamma  # (K, K)
    rhs = basis.gamma.conj().T @ demod  # (K, n)
    ev = np.linalg.eigvalsh(gram)
    # A^H A = ssq * gamma^H gamma, so the eigenvalue ratio is voxel independent
    bad = (ssq <= 0) | (ev[0] <= rank_tol * ev[-1])
    good = ~bad
    sol = np.linalg.solve(gram, rhs[:, good]) / ssq[good]
    x[:, sel[good]] = sol
    flags[sel[bad]] = True
    return x, flags
