"""Water and fat images from an estimated field map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .likelihood import ml_images
from .signal import SignalBasis


@dataclass(frozen=True)
class ComponentImages:
    water: np.ndarray
    fat: np.ndarray
    flags: np.ndarray  # rank-deficient voxels


def separate(y, s, basis: SignalBasis, t, omega, mask=None, rank_tol: float = 1e-10) -> ComponentImages:
    """Per-voxel least-squares water/fat fit with the field map held fixed.

    Voxels outside ``mask`` and voxels whose system has rank < 2 are zero.
    """
    if basis.n_components != 2:
        raise ValueError("water/fat separation needs a two-column (waterfat) basis")
    x, flags = ml_images(y, s, basis, t, omega, mask=mask, rank_tol=rank_tol)
    return ComponentImages(water=x[0], fat=x[1], flags=flags)
