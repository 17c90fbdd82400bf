"""Synthetic phantoms, coil maps, noise, support masks and error metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .signal import FatModel, build_gamma, flatten, forward_model, unflatten

BRAIN_ECHO_TIMES = (0.0, 2e-3, 10e-3)
WATERFAT_ECHO_TIMES = tuple(1.5e-3 + 2.3e-3 * k for k in range(8))
# 2.3 ms echo spacing is the water/fat opposed-phase period at 1.5 T.
WATERFAT_FIELD_T = 1.5
# Brain magnitude scale; sets the data-to-penalty balance at beta = 2^-4.
DEFAULT_BRAIN_SCALE = 18.0


@dataclass(frozen=True)
class Phantom:
    """Ground truth on a (nx, ny, nz) grid.  Field map in Hz."""

    dims: tuple
    magnitude: np.ndarray
    fieldmap_hz: np.ndarray
    water: Optional[np.ndarray] = None
    fat: Optional[np.ndarray] = None


def _grid(dims):
    axes = [np.linspace(-1.0, 1.0, n) if n > 1 else np.zeros(1) for n in dims]
    return np.meshgrid(*axes, indexing="ij")


def brain_phantom(dims=(64, 64, 40), scale: float = DEFAULT_BRAIN_SCALE) -> Phantom:
    """Ellipsoidal head with a brighter rim, darker ventricles, and a smooth field map.

    The field map is a low-order polynomial plus two Gaussian bumps, one of
    them a strong frontal-inferior off-resonance lobe; it spans roughly
    -150 to +150 Hz inside the head.
    """
    x, y, z = _grid(dims)
    head = (x / 0.85) ** 2 + (y / 0.95) ** 2 + (z / 0.85) ** 2
    brain = (x / 0.75) ** 2 + (y / 0.85) ** 2 + (z / 0.75) ** 2
    vent = ((x - 0.18) / 0.12) ** 2 + (y / 0.35) ** 2 + (z / 0.2) ** 2
    vent2 = ((x + 0.18) / 0.12) ** 2 + (y / 0.35) ** 2 + (z / 0.2) ** 2
    mag = np.zeros(dims)
    mag[head <= 1] = 0.7
    mag[brain <= 1] = 1.0
    mag[(vent <= 1) | (vent2 <= 1)] = 0.4
    mag *= scale

    fm = 20 * x - 25 * y + 15 * z + 30 * x * y - 20 * z**2
    fm += 140 * np.exp(-((x / 0.25) ** 2 + ((y - 0.7) / 0.2) ** 2 + ((z + 0.55) / 0.25) ** 2))
    fm -= 60 * np.exp(-(((x + 0.5) / 0.3) ** 2 + ((y + 0.4) / 0.3) ** 2 + (z / 0.4) ** 2))
    return Phantom(dims=tuple(dims), magnitude=mag, fieldmap_hz=fm)


def waterfat_phantom(dims=(96, 72, 1)) -> Phantom:
    """2D torso-like slice: subcutaneous fat ring, water organs, a mixed region and a fat blob."""
    x, y, _ = _grid(dims)
    body = (x / 0.9) ** 2 + (y / 0.8) ** 2
    inner = (x / 0.8) ** 2 + (y / 0.68) ** 2
    water = np.zeros(dims)
    fat = np.zeros(dims)
    ring = (body <= 1) & (inner > 1)
    fat[ring] = 0.9
    water[ring] = 0.05
    water[inner <= 1] = 0.8
    liver = ((x + 0.35) / 0.3) ** 2 + ((y - 0.15) / 0.35) ** 2 <= 1
    water[liver] = 0.7
    fat[liver] = 0.15
    blob = ((x - 0.4) / 0.15) ** 2 + ((y + 0.3) / 0.12) ** 2 <= 1
    water[blob] = 0.1
    fat[blob] = 0.8
    heart = ((x - 0.15) / 0.22) ** 2 + ((y - 0.2) / 0.2) ** 2 <= 1
    water[heart] = 1.0
    fat[heart] = 0.0
    fm = 40 * x - 30 * y + 25 * x * y + 60 * np.exp(-(((x - 0.2) / 0.4) ** 2 + ((y + 0.1) / 0.35) ** 2))
    mag = np.abs(water + fat)
    return Phantom(dims=tuple(dims), magnitude=mag, fieldmap_hz=fm, water=water, fat=fat)


def sim_coil_maps(dims, n_coils: int) -> np.ndarray:
    """Smooth complex coil profiles, shape (Nc, nx, ny, nz).

    Coil ``c`` is a Gaussian lobe centred on a face of the volume (cycling
    +x, -x, +y, -y, +z, -z) with a gentle linear phase.  One coil gives ones.
    """
    if n_coils < 1:
        raise ValueError("need at least one coil")
    if n_coils == 1:
        return np.ones((1,) + tuple(dims), dtype=np.complex128)
    x, y, z = _grid(dims)
    centers = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
    out = np.empty((n_coils,) + tuple(dims), dtype=np.complex128)
    for c in range(n_coils):
        cx, cy, cz = centers[c % 6]
        shrink = 1.0 + 0.25 * (c // 6)
        d2 = (x - cx / shrink) ** 2 + (y - cy / shrink) ** 2 + (z - cz / shrink) ** 2
        mag = np.exp(-d2 / (2 * 0.8**2))
        phase = 0.5 * np.pi * c / n_coils + 0.4 * (cx * y - cy * x + cz * x)
        out[c] = mag * np.exp(1j * phase)
    return out


def add_noise_snr(y, snr_db, seed=None) -> np.ndarray:
    """Add white complex Gaussian noise so that ``10 log10(||y||^2 / E||e||^2) = snr_db``.

    ``snr_db`` of ``None`` or ``inf`` returns an unchanged copy.
    """
    y = np.asarray(y, dtype=np.complex128)
    if snr_db is None or np.isinf(snr_db):
        return y.copy()
    rng = np.random.default_rng(seed)
    power = float(np.sum(np.abs(y) ** 2)) / y.size
    sigma = np.sqrt(power / 10 ** (snr_db / 10) / 2)
    re = rng.standard_normal(y.shape)
    im = rng.standard_normal(y.shape)
    return y + sigma * (re + 1j * im)


def convex_hull_2d(img) -> np.ndarray:
    """Filled convex hull (pixel centres on or inside) of the True pixels of a 2D image."""
    img = np.asarray(img, dtype=bool)
    pts = np.argwhere(img)
    out = np.zeros_like(img)
    if pts.size == 0:
        return out
    hull = _monotone_chain(pts)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    ii, jj = np.meshgrid(np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1), indexing="ij")
    inside = np.ones(ii.shape, dtype=bool)
    if len(hull) >= 2:
        for k in range(len(hull)):
            a = hull[k]
            b = hull[(k + 1) % len(hull)]
            cross = (b[0] - a[0]) * (jj - a[1]) - (b[1] - a[1]) * (ii - a[0])
            inside &= cross >= 0
    out[lo[0] : hi[0] + 1, lo[1] : hi[1] + 1] = inside
    return out


def _monotone_chain(pts):
    """Counter-clockwise hull vertices (collinear points dropped), integer exact."""
    p = sorted(set(map(tuple, pts.tolist())))
    if len(p) <= 2:
        return p

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for q in p:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], q) <= 0:
            lower.pop()
        lower.append(q)
    for q in reversed(p):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], q) <= 0:
            upper.pop()
        upper.append(q)
    return lower[:-1] + upper[:-1]


def coil_combined(y, s) -> np.ndarray:
    """``|sum_c conj(s_c) y_c1|`` for volume-shaped inputs (Nc, L, nx, ny, nz) and (Nc, nx, ny, nz)."""
    return np.abs(np.sum(np.conj(s) * np.asarray(y)[:, 0], axis=0))


def make_mask(y, s, threshold_frac: float = 0.1, dilation: int = 2) -> np.ndarray:
    """Support mask: threshold, per-slice convex hull, then 6-connected dilation.

    Voxels with zero total coil sensitivity are always excluded.
    """
    s = np.asarray(s)
    mag = coil_combined(y, s)
    keep = mag >= threshold_frac * mag.max()
    keep &= mag > 0
    if not keep.any():
        raise ValueError("mask is empty after thresholding")
    hull = np.zeros_like(keep)
    for k in range(keep.shape[2]):
        if keep[:, :, k].any():
            hull[:, :, k] = convex_hull_2d(keep[:, :, k])
    if dilation > 0:
        hull = ndimage.binary_dilation(hull, structure=ndimage.generate_binary_structure(3, 1), iterations=dilation)
    hull &= np.sum(np.abs(s) ** 2, axis=0) > 0
    return hull


def rms_hz(omega, ref, mask=None) -> float:
    """RMS difference of two field maps given in rad/s, reported in Hz."""
    a = np.asarray(omega, dtype=np.float64).ravel()
    b = np.asarray(ref, dtype=np.float64).ravel()
    if mask is not None:
        sel = np.asarray(mask, dtype=bool).ravel()
        a, b = a[sel], b[sel]
    return float(np.linalg.norm(a - b) / np.sqrt(a.size) / (2 * np.pi))


rmse_hz = rms_hz
rmsd_hz = rms_hz


def nrmse(est, truth, mask=None) -> float:
    """``||est - truth|| / ||truth||``."""
    a = np.asarray(est).ravel()
    b = np.asarray(truth).ravel()
    if mask is not None:
        sel = np.asarray(mask, dtype=bool).ravel()
        a, b = a[sel], b[sel]
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def metrics(omega, truth=None, reference=None, mask=None) -> dict:
    out = {}
    if truth is not None:
        out["rmse_hz"] = rms_hz(omega, truth, mask)
    if reference is not None:
        out["rmsd_hz"] = rms_hz(omega, reference, mask)
    return out


def simulate_fieldmap(dims=(64, 64, 40), n_coils: int = 4, t=BRAIN_ECHO_TIMES, snr_db=20.0, seed=0,
                      scale: float = DEFAULT_BRAIN_SCALE):
    """Multi-coil field-map data on the brain phantom.

    Returns a dict of volume-shaped arrays: ``y`` (Nc, L, nx, ny, nz), ``s``
    (Nc, nx, ny, nz), ``fieldmap_hz``, ``magnitude`` and the echo times.
    """
    ph = brain_phantom(dims, scale)
    s = sim_coil_maps(dims, n_coils)
    basis = build_gamma("fieldmap", t)
    om = 2 * np.pi * flatten(ph.fieldmap_hz)
    y = forward_model(flatten(ph.magnitude)[None], om, flatten(s), t, basis)
    y = add_noise_snr(y, snr_db, seed)
    return {
        "y": unflatten(y, dims),
        "s": s,
        "fieldmap_hz": ph.fieldmap_hz,
        "magnitude": ph.magnitude,
        "t": np.asarray(t, dtype=np.float64),
    }


def simulate_waterfat(dims=(96, 72, 1), n_coils: int = 1, t=WATERFAT_ECHO_TIMES, snr_db=None, seed=0,
                      fat: Optional[FatModel] = None):
    """Water/fat data on the torso phantom with a multipeak fat model."""
    fat = fat or FatModel.six_peak(WATERFAT_FIELD_T)
    ph = waterfat_phantom(dims)
    s = sim_coil_maps(dims, n_coils)
    basis = build_gamma("waterfat", t, fat)
    om = 2 * np.pi * flatten(ph.fieldmap_hz)
    x = np.stack([flatten(ph.water), flatten(ph.fat)]).astype(np.complex128)
    y = forward_model(x, om, flatten(s), t, basis)
    y = add_noise_snr(y, snr_db, seed)
    return {
        "y": unflatten(y, dims),
        "s": s,
        "fieldmap_hz": ph.fieldmap_hz,
        "magnitude": ph.magnitude,
        "water": ph.water.astype(np.complex128),
        "fat": ph.fat.astype(np.complex128),
        "t": np.asarray(t, dtype=np.float64),
        "fat_model": fat,
    }
