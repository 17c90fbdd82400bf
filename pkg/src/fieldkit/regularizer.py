"""Masked finite-difference roughness penalty."""

from __future__ import annotations

from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .signal import flatten

_AXES = {"x": 0, "y": 1, "z": 2}
_STENCILS = {1: (-1.0, 1.0), 2: (1.0, -2.0, 1.0)}


class DifferenceOperator:
    """First- or second-order differences between voxels inside a mask.

    A row is kept only if its whole stencil lies inside the mask.  Optional
    per-difference weights ``w_k >= 0`` scale the squared differences, so the
    rows of ``C`` carry ``sqrt(w_k)``.  Weight volumes are indexed by the
    first voxel of each stencil.

    Parameters
    ----------
    mask : bool array of shape (nx, ny, nz)
    order : 1 or 2
    axes : iterable of "x", "y", "z" (or 0, 1, 2); axes of length 1 are skipped
    weights : optional mapping axis -> (nx, ny, nz) array
    """

    def __init__(
        self,
        mask,
        order: int = 1,
        axes: Sequence = ("x", "y", "z"),
        weights: Optional[Mapping] = None,
    ):
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 3:
            raise ValueError(f"mask must be 3D (nx, ny, nz), got shape {mask.shape}")
        if order not in _STENCILS:
            raise ValueError(f"order must be 1 or 2, got {order}")
        self.dims = mask.shape
        self.order = order
        self.mask = flatten(mask)
        self.axes = tuple(_AXES.get(a, a) for a in axes)
        if any(a not in (0, 1, 2) for a in self.axes):
            raise ValueError(f"invalid axes {axes!r}")
        weights = {_AXES.get(k, k): np.asarray(v, dtype=np.float64) for k, v in (weights or {}).items()}

        nv = mask.size
        ids = np.arange(nv).reshape(self.dims[::-1]).transpose(2, 1, 0)  # x-fastest ids
        stencil = _STENCILS[order]
        span = len(stencil) - 1
        rows, cols, vals = [], [], []
        nrow = 0
        for ax in self.axes:
            n_ax = self.dims[ax]
            if n_ax <= span:
                continue
            ok = np.ones_like(mask)
            ok = ok[_slab(ax, 0, n_ax - span)]
            for k in range(len(stencil)):
                ok = ok & mask[_slab(ax, k, n_ax - span + k)]
            anchor = ids[_slab(ax, 0, n_ax - span)][ok]
            order_ = np.argsort(anchor, kind="stable")
            anchor = anchor[order_]
            if ax in weights:
                wv = weights[ax]
                if wv.shape != self.dims or np.any(wv < 0):
                    raise ValueError("weights must be nonnegative volumes matching the mask")
                scale = np.sqrt(wv[_slab(ax, 0, n_ax - span)][ok][order_])
            else:
                scale = np.ones(anchor.size)
            stride = int(np.prod(self.dims[:ax]))
            r = np.arange(nrow, nrow + anchor.size)
            for k, c in enumerate(stencil):
                rows.append(r)
                cols.append(anchor + k * stride)
                vals.append(c * scale)
            nrow += anchor.size

        if rows:
            rows, cols, vals = map(np.concatenate, (rows, cols, vals))
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
            vals = np.zeros(0)
        self.C = sp.csr_matrix((vals, (rows, cols)), shape=(nrow, nv))

    @property
    def n_rows(self) -> int:
        return self.C.shape[0]

    @property
    def n_voxels(self) -> int:
        return self.C.shape[1]

    def apply(self, x) -> np.ndarray:
        return self.C @ np.asarray(x, dtype=np.float64)

    def adjoint(self, v) -> np.ndarray:
        return self.C.T @ np.asarray(v, dtype=np.float64)

    def gram(self, beta: float = 1.0) -> sp.csr_matrix:
        """Assembled ``beta * C^T C``."""
        if beta < 0:
            raise ValueError("beta must be nonnegative")
        return (beta * (self.C.T @ self.C)).tocsr()

    def diag_majorizer(self, beta: float = 1.0) -> np.ndarray:
        """Row sums of ``|beta C^T C|``; ``diag(m) - beta C^T C`` is PSD."""
        g = self.gram(beta)
        return np.asarray(abs(g).sum(axis=1)).ravel()

    def penalty(self, x, beta: float) -> float:
        cx = self.apply(x)
        return 0.5 * beta * float(cx @ cx)


def _slab(axis: int, start: int, stop: int):
    sl = [slice(None)] * 3
    sl[axis] = slice(start, stop)
    return tuple(sl)
