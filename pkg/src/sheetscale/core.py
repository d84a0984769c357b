"""Grids, quadrature and finite-difference stencils shared by the solvers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DimensionError(ValueError):
    """Array shapes or grid sizes are incompatible."""


@dataclass(frozen=True)
class RadialGrid:
    """Uniform grid on ``[r0, 1]`` that never contains the origin.

    The default first node sits half a cell away from ``r = 0`` so that the
    ``1/r`` weights in the radial energies stay finite.
    """

    r: np.ndarray = field(repr=False)
    spacing: float

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64)
        if r.ndim != 1 or r.size < 2:
            raise DimensionError("a radial grid needs at least two nodes")
        if r[0] <= 0.0:
            raise ValueError("radial grid must not contain r = 0")
        if np.any(np.diff(r) <= 0.0):
            raise ValueError("radii must be strictly increasing")
        r.setflags(write=False)
        object.__setattr__(self, "r", r)

    @classmethod
    def uniform(cls, n: int, r0: float | None = None) -> "RadialGrid":
        """``n`` equispaced nodes ending at 1; ``r0`` defaults to half a step."""
        if n < 2:
            raise DimensionError(f"need n >= 2 nodes, got {n}")
        if r0 is None:
            dr = 1.0 / (n - 0.5)
            r0 = 0.5 * dr
        else:
            if not 0.0 < r0 < 1.0:
                raise ValueError(f"r0 must lie in (0, 1), got {r0}")
            dr = (1.0 - r0) / (n - 1)
        r = r0 + dr * np.arange(n)
        r[-1] = 1.0
        return cls(r=r, spacing=dr)

    @property
    def n(self) -> int:
        return self.r.size


@dataclass(frozen=True)
class EnergyBreakdown:
    """Per-term energy values; ``total`` is their sum."""

    membrane_u: float
    membrane_stretch: float
    bend: float

    @property
    def total(self) -> float:
        return self.membrane_u + self.membrane_stretch + self.bend

    @property
    def membrane(self) -> float:
        return self.membrane_u + self.membrane_stretch

    def as_dict(self) -> dict:
        return {
            "membrane_u": self.membrane_u,
            "membrane_stretch": self.membrane_stretch,
            "bend": self.bend,
            "total": self.total,
        }


@dataclass(frozen=True)
class ModelParams:
    """Thickness ``h``, indentation depth ``delta`` and excess-angle ``Delta``."""

    h: float
    delta: float = 0.0
    Delta: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.h <= 0.5:
            raise ValueError(f"h must lie in (0, 1/2], got {self.h}")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")
        if not self.Delta > 0.0:
            raise ValueError(f"Delta must be positive, got {self.Delta}")


def trapezoid_weights(grid) -> np.ndarray:
    """Composite trapezoid weights for the nodes of a uniform grid."""
    w = np.full(grid.n, grid.spacing)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def integrate(values, grid: RadialGrid) -> float:
    """Composite trapezoid rule over the grid nodes."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] != grid.n:
        raise DimensionError(f"expected {grid.n} values, got {values.shape[0]}")
    return float(np.trapezoid(values, grid.r, axis=0))


def _check_stencil(values, grid, axis, minimum):
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[axis]
    if n != grid.n:
        raise DimensionError(f"expected {grid.n} values along axis {axis}, got {n}")
    if n < minimum:
        raise DimensionError(f"stencil needs at least {minimum} nodes, got {n}")
    return np.moveaxis(values, axis, 0)


def d1(values, grid, axis: int = 0) -> np.ndarray:
    """First derivative: central in the interior, one-sided 3-point at the ends."""
    f = _check_stencil(values, grid, axis, 3)
    dx = grid.spacing
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - f[:-2]) / (2.0 * dx)
    out[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * dx)
    out[-1] = (3.0 * f[-1] - 4.0 * f[-2] + f[-3]) / (2.0 * dx)
    return np.moveaxis(out, 0, axis)


def d2(values, grid, axis: int = 0) -> np.ndarray:
    """Second derivative: central in the interior, one-sided 4-point at the ends.

    With exactly three nodes the ends fall back to the 3-point stencil.
    """
    f = _check_stencil(values, grid, axis, 3)
    dx2 = grid.spacing**2
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / dx2
    if f.shape[0] >= 4:
        out[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / dx2
        out[-1] = (2.0 * f[-1] - 5.0 * f[-2] + 4.0 * f[-3] - f[-4]) / dx2
    else:
        out[0] = out[1]
        out[-1] = out[1]
    return np.moveaxis(out, 0, axis)


def d1_matrix(grid):
    """Sparse matrix form of :func:`d1` (same stencils)."""
    import scipy.sparse as sp

    n, dx = grid.n, grid.spacing
    rows, cols, vals = [], [], []
    interior = np.arange(1, n - 1)
    rows += [interior, interior]
    cols += [interior - 1, interior + 1]
    vals += [np.full(n - 2, -0.5 / dx), np.full(n - 2, 0.5 / dx)]
    rows += [np.zeros(3, int), np.full(3, n - 1)]
    cols += [np.arange(3), np.arange(n - 3, n)]
    vals += [np.array([-3.0, 4.0, -1.0]) / (2 * dx), np.array([1.0, -4.0, 3.0]) / (2 * dx)]
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def d2_matrix(grid):
    """Sparse matrix form of :func:`d2` (requires at least four nodes)."""
    import scipy.sparse as sp

    n, dx2 = grid.n, grid.spacing**2
    if n < 4:
        raise DimensionError("d2_matrix needs at least 4 nodes")
    rows, cols, vals = [], [], []
    interior = np.arange(1, n - 1)
    for off, c in ((-1, 1.0), (0, -2.0), (1, 1.0)):
        rows.append(interior)
        cols.append(interior + off)
        vals.append(np.full(n - 2, c / dx2))
    rows += [np.zeros(4, int), np.full(4, n - 1)]
    cols += [np.arange(4), np.arange(n - 1, n - 5, -1)]
    stencil = np.array([2.0, -5.0, 4.0, -1.0]) / dx2
    vals += [stencil, stencil]
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


def origin_weights(grid: RadialGrid) -> np.ndarray:
    """Quadratic extrapolation weights from the first three nodes to ``r = 0``."""
    x = -grid.r[0] / grid.spacing
    return np.array([(x - 1) * (x - 2) / 2.0, -x * (x - 2), x * (x - 1) / 2.0])


def extrapolate_origin(values, grid: RadialGrid) -> float:
    """Value at ``r = 0`` of the quadratic through the first three nodes."""
    values = np.asarray(values, dtype=np.float64)
    return float(origin_weights(grid) @ values[:3])
