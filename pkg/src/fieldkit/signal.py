"""Multi-echo signal model, projector construction and pair-term precomputation.

Volumes are stored as ``(nx, ny, nz)`` arrays and flattened x-fastest, i.e.
voxel ``j = x + nx * (y + ny * z)``.  All per-voxel arrays in this module are
already flattened.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

__all__ = [
    "DegenerateBasisError",
    "FatModel",
    "SignalBasis",
    "PairTermCache",
    "echo_times",
    "flatten",
    "unflatten",
    "sensitivity_ssq",
    "build_gamma",
    "precompute_cache",
    "forward_model",
]


class DegenerateBasisError(ValueError):
    """Raised when the signal basis does not have full column rank."""


def flatten(vol):
    """Flatten trailing ``(nx, ny, nz)`` axes x-fastest."""
    vol = np.asarray(vol)
    lead = vol.shape[:-3]
    n = int(np.prod(vol.shape[-3:]))
    # x-fastest == Fortran order over the spatial axes
    moved = np.moveaxis(vol, (-3, -2, -1), (-1, -2, -3))
    return np.ascontiguousarray(moved).reshape(lead + (n,))


def unflatten(arr, dims):
    """Inverse of :func:`flatten`."""
    arr = np.asarray(arr)
    nx, ny, nz = dims
    lead = arr.shape[:-1]
    return np.moveaxis(arr.reshape(lead + (nz, ny, nx)), (-1, -2, -3), (-3, -2, -1))


def echo_times(t) -> np.ndarray:
    """Validate echo-time shifts (seconds): at least two, strictly increasing."""
    t = np.asarray(t, dtype=np.float64).ravel()
    if t.size < 2:
        raise ValueError(f"need at least 2 echo times, got {t.size}")
    if not np.all(np.isfinite(t)):
        raise ValueError("echo times must be finite")
    if np.any(np.diff(t) <= 0):
        raise ValueError("echo times must be strictly increasing")
    return t


@dataclass(frozen=True)
class FatModel:
    """Multipeak fat spectrum: relative amplitudes and frequency shifts in Hz.

    Amplitudes are normalized to sum to one on construction.
    """

    amplitudes: np.ndarray
    shifts_hz: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.amplitudes, dtype=np.float64))
        f = np.atleast_1d(np.asarray(self.shifts_hz, dtype=np.float64))
        if a.shape != f.shape or a.ndim != 1 or a.size < 1:
            raise ValueError("fat model needs matching 1D amplitude and shift arrays")
        if np.any(a < 0) or a.sum() <= 0:
            raise ValueError("fat amplitudes must be nonnegative with positive sum")
        object.__setattr__(self, "amplitudes", a / a.sum())
        object.__setattr__(self, "shifts_hz", f)

    @classmethod
    def single(cls, shift_hz: float) -> "FatModel":
        return cls(np.array([1.0]), np.array([shift_hz]))

    @classmethod
    def six_peak(cls, field_t: float = 3.0) -> "FatModel":
        """Common six-peak liver fat spectrum, shifts relative to water."""
        ppm = np.array([-3.80, -3.40, -2.60, -1.94, -0.39, 0.60])
        amp = np.array([0.087, 0.693, 0.128, 0.004, 0.039, 0.048])
        return cls(amp, ppm * 42.577478 * field_t)

    @property
    def mean_shift_hz(self) -> float:
        return float(np.dot(self.amplitudes, self.shifts_hz))

    def phasor(self, t) -> np.ndarray:
        """Sum_p alpha_p exp(i 2 pi df_p t) evaluated at each echo time."""
        t = np.asarray(t, dtype=np.float64)
        return np.exp(2j * np.pi * np.outer(t, self.shifts_hz)) @ self.amplitudes


@dataclass(frozen=True)
class SignalBasis:
    """Basis ``gamma`` (L x K) and its orthogonal projector ``Gamma`` (L x L)."""

    mode: str
    gamma: np.ndarray
    proj: np.ndarray

    @property
    def n_components(self) -> int:
        return self.gamma.shape[1]


def build_gamma(mode: str, t, fat: Optional[FatModel] = None) -> SignalBasis:
    t = echo_times(t)
    L = t.size
    if mode == "fieldmap":
        if fat is not None:
            raise ValueError("fat model given in fieldmap mode")
        gamma = np.ones((L, 1), dtype=np.complex128)
    elif mode == "waterfat":
        if fat is None:
            raise ValueError("waterfat mode requires a fat model")
        gamma = np.stack([np.ones(L, dtype=np.complex128), fat.phasor(t)], axis=1)
    else:
        raise ValueError(f"unknown mode {mode!r}")

    gram = gamma.conj().T @ gamma
    ev = np.linalg.eigvalsh(gram)
    if ev[0] <= 1e-10 * ev[-1]:
        raise DegenerateBasisError(
            "signal basis is rank deficient; fat phasor is (nearly) constant over the echo times"
        )
    # Gamma = gamma (gamma* gamma)^-1 gamma*, via a K x K solve
    proj = gamma @ np.linalg.solve(gram, gamma.conj().T)
    proj = 0.5 * (proj + proj.conj().T)
    return SignalBasis(mode=mode, gamma=gamma, proj=proj)


def sensitivity_ssq(s) -> np.ndarray:
    s = np.asarray(s)
    return np.sum(np.abs(s) ** 2, axis=0)


@dataclass(frozen=True)
class PairTermCache:
    """Coil-weighted images and collapsed pair terms for the m < n echo pairs.

    ``r_cdmnj = (Gamma_mn / ssq_j) conj(w_cmj) w_dnj`` is never stored; ``R``
    and ``K0`` hold its coil sums ``sum_cd r`` and ``sum_cd |r|``.
    """

    t: np.ndarray
    proj: np.ndarray
    w: np.ndarray  # (Nc, L, Nv)
    z: np.ndarray  # (L, Nv)
    ssq: np.ndarray  # (Nv,)
    mask: np.ndarray  # (Nv,) bool
    pairs: np.ndarray  # (P, 2)
    dt: np.ndarray  # (P,) t_m - t_n
    R: np.ndarray  # (P, Nv) complex
    K0: np.ndarray  # (P, Nv)
    c0: np.ndarray  # (Nv,) contribution of the m == n terms
    rho: np.ndarray  # (Nv,) sum over all (c, d, m, n) of |r|
    idx: np.ndarray = field(repr=False)

    @property
    def n_voxels(self) -> int:
        return self.ssq.size

    @property
    def n_coils(self) -> int:
        return self.w.shape[0]

    # compact (masked-voxel) views used by the hot loops
    @cached_property
    def Rc(self) -> np.ndarray:
        return np.ascontiguousarray(self.R[:, self.idx])

    @cached_property
    def K0c(self) -> np.ndarray:
        return np.ascontiguousarray(self.K0[:, self.idx])

    @cached_property
    def wc(self) -> np.ndarray:
        return np.ascontiguousarray(self.w[:, :, self.idx])

    @cached_property
    def wc_abs(self) -> np.ndarray:
        return np.abs(self.wc)

    @cached_property
    def wc_angle(self) -> np.ndarray:
        return np.angle(self.wc)

    @cached_property
    def ssqc(self) -> np.ndarray:
        return np.ascontiguousarray(self.ssq[self.idx])

    def pair_scale(self) -> np.ndarray:
        """Gamma_mn / ssq_j for each pair, (P, Nv), zero off-mask."""
        inv = np.zeros_like(self.ssq)
        inv[self.idx] = 1.0 / self.ssq[self.idx]
        g = self.proj[self.pairs[:, 0], self.pairs[:, 1]]
        return g[:, None] * inv[None, :]

    def r_terms(self, c: int, d: int, p: int) -> np.ndarray:
        """Full r_{c d m n j} over voxels for pair index ``p`` (m < n)."""
        m, n = self.pairs[p]
        inv = np.zeros_like(self.ssq)
        inv[self.idx] = 1.0 / self.ssq[self.idx]
        return self.proj[m, n] * inv * self.w[c, m].conj() * self.w[d, n]


def precompute_cache(y, s, basis: SignalBasis, mask, t) -> PairTermCache:
    """Build the pair-term cache from flattened data.

    Parameters
    ----------
    y : (Nc, L, Nv) complex
    s : (Nc, Nv) complex
    basis : SignalBasis
    mask : (Nv,) bool
    t : echo times in seconds
    """
    t = echo_times(t)
    y = np.asarray(y, dtype=np.complex128)
    s = np.asarray(s, dtype=np.complex128)
    mask = np.asarray(mask, dtype=bool).ravel()
    if y.ndim != 3:
        raise ValueError(f"y must have shape (Nc, L, Nv), got {y.shape}")
    nc, L, nv = y.shape
    if L != t.size:
        raise ValueError(f"y has {L} echoes but {t.size} echo times were given")
    if s.shape != (nc, nv):
        raise ValueError(f"sensitivity shape {s.shape} does not match data {(nc, nv)}")
    if mask.shape != (nv,):
        raise ValueError(f"mask has {mask.size} voxels, data has {nv}")
    if basis.proj.shape != (L, L):
        raise ValueError("basis does not match the number of echoes")
    if not np.all(np.isfinite(y)):
        raise ValueError("data contain non-finite values")

    ssq = sensitivity_ssq(s)
    if np.any(mask & (ssq <= 0)):
        raise ValueError("mask includes voxels with zero total coil sensitivity")
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValueError("mask is empty")

    w = np.zeros_like(y)
    w[:, :, idx] = s[:, None, idx].conj() * y[:, :, idx]
    z = w.sum(axis=0)
    wabs = np.abs(w).sum(axis=0)  # (L, Nv): sum_c |w_clj|

    inv = np.zeros(nv)
    inv[idx] = 1.0 / ssq[idx]

    m_idx, n_idx = np.triu_indices(L, k=1)
    pairs = np.stack([m_idx, n_idx], axis=1)
    dt = t[m_idx] - t[n_idx]
    g = basis.proj[m_idx, n_idx]
    R = (g[:, None] * inv[None, :]) * z[m_idx].conj() * z[n_idx]
    K0 = (np.abs(g)[:, None] * inv[None, :]) * wabs[m_idx] * wabs[n_idx]

    gdiag = basis.proj.diagonal().real
    diag_abs = gdiag[:, None] * inv[None, :] * wabs**2  # sum_cd |r_cdmm|
    diag_re = gdiag[:, None] * inv[None, :] * np.abs(z) ** 2  # Re sum_cd r_cdmm
    c0 = np.sum(diag_abs - diag_re, axis=0)
    rho = 2.0 * K0.sum(axis=0) + diag_abs.sum(axis=0)

    return PairTermCache(
        t=t,
        proj=basis.proj,
        w=w,
        z=z,
        ssq=ssq,
        mask=mask,
        pairs=pairs,
        dt=dt,
        R=R,
        K0=K0,
        c0=np.maximum(c0, 0.0),
        rho=rho,
        idx=idx,
    )


def forward_model(x, omega, s, t, basis: SignalBasis) -> np.ndarray:
    """Noiseless multi-echo data ``y_clj = exp(i w_j t_l) s_cj x_lj``.

    ``x`` has shape (K, Nv): the magnetization (K = 1) or the water and fat
    images (K = 2).  Returns (Nc, L, Nv).
    """
    t = echo_times(t)
    x = np.atleast_2d(np.asarray(x, dtype=np.complex128))
    omega = np.asarray(omega, dtype=np.float64)
    s = np.asarray(s, dtype=np.complex128)
    if x.shape[0] != basis.n_components:
        raise ValueError(f"expected {basis.n_components} component images, got {x.shape[0]}")
    if x.shape[1] != omega.size or s.shape[1] != omega.size:
        raise ValueError("component images, field map and sensitivities disagree on voxel count")
    echo_img = basis.gamma @ x  # (L, Nv)
    phase = np.exp(1j * np.outer(t, omega))
    return s[:, None, :] * (phase * echo_img)[None, :, :]

