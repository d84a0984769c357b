"""Truncated 1-homogeneous test fields for the excess-cone plate energy.

Fields live on a uniform polar grid. Angular derivatives are taken with the
FFT (the fields are band-limited in angle), radial derivatives with the
finite-difference stencils of :mod:`sheetscale.core`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .circle import TWO_PI, FourierCurve, circle_constraint
from .core import DimensionError, EnergyBreakdown, d1, d2

logger = logging.getLogger(__name__)


class PreconditionError(ValueError):
    """Inputs violate a documented precondition."""


@dataclass(frozen=True)
class PolarGrid:
    """Tensor grid of ``nr`` equispaced radii and ``nt`` periodic angles.

    ``n`` and ``spacing`` describe the radial direction, so the radial
    stencils of :mod:`sheetscale.core` accept a ``PolarGrid`` along axis 0.
    """

    r: np.ndarray = field(repr=False)
    nt: int

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64)
        if r.ndim != 1 or r.size < 4:
            raise DimensionError("a polar grid needs at least four radii")
        if r[0] <= 0.0 or np.any(np.diff(r) <= 0.0):
            raise ValueError("radii must be positive and increasing")
        if not np.allclose(np.diff(r), r[1] - r[0], rtol=1e-9, atol=0.0):
            raise ValueError("radii must be equispaced")
        if self.nt < 8 or self.nt % 2:
            raise DimensionError(f"nt must be even and at least 8, got {self.nt}")
        r.setflags(write=False)
        object.__setattr__(self, "r", r)

    @classmethod
    def uniform(cls, nr: int, nt: int, r_min: float | None = None, r_max: float = 1.0) -> "PolarGrid":
        """Radii on ``[r_min, r_max]``; by default the first radius is half a step from 0."""
        if r_min is None:
            dr = r_max / (nr - 0.5)
            r = 0.5 * dr + dr * np.arange(nr)
        else:
            if not 0.0 < r_min < r_max:
                raise ValueError(f"need 0 < r_min < r_max, got {r_min}, {r_max}")
            r = np.linspace(r_min, r_max, nr)
        r[-1] = r_max
        return cls(r, nt)

    @classmethod
    def for_truncation(cls, h: float, nt: int, cells_below_h: int = 8) -> "PolarGrid":
        """Smallest origin-centred grid on ``(0, 1]`` with spacing at most ``h / cells_below_h``."""
        nr = int(np.ceil(cells_below_h / h + 0.5))
        return cls.uniform(nr, nt)

    @property
    def n(self) -> int:
        return self.r.size

    @property
    def nr(self) -> int:
        return self.r.size

    @property
    def spacing(self) -> float:
        return float(self.r[1] - self.r[0])

    @property
    def dt(self) -> float:
        return TWO_PI / self.nt

    @property
    def t(self) -> np.ndarray:
        return self.dt * np.arange(self.nt)

    @property
    def shape(self) -> tuple:
        return (self.nr, self.nt)


@dataclass(frozen=True)
class PolarField:
    """Samples ``values[i, j]`` at ``(r[i], t[j])``."""

    grid: PolarGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise DimensionError(f"field shape {v.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: PolarGrid) -> "PolarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: PolarGrid, fn) -> "PolarField":
        """``fn(r, t)`` evaluated on the mesh (broadcast arguments)."""
        return cls(grid, np.broadcast_to(fn(grid.r[:, None], grid.t[None, :]), grid.shape))


def angular_derivative(values, order: int = 1) -> np.ndarray:
    """Spectral derivative along the last (periodic) axis.

    For odd orders the Nyquist mode is dropped, which keeps real input real.
    """
    values = np.asarray(values, dtype=np.float64)
    nt = values.shape[-1]
    k = np.fft.rfftfreq(nt, d=1.0 / nt)
    mult = (1j * k) ** order
    if order % 2:
        mult[-1] = 0.0
    return np.fft.irfft(np.fft.rfft(values, axis=-1) * mult, n=nt, axis=-1)


def eta_quintic(x) -> np.ndarray:
    """C2 truncation: 0 on ``[0, 1/2]``, ``x`` on ``[1, inf)``, quintic between."""
    x = np.asarray(x, dtype=np.float64)
    s = np.clip(2.0 * x - 1.0, 0.0, 1.0)
    blend = s**3 * (8.0 - 11.5 * s + 4.5 * s * s)
    return np.where(x >= 1.0, x, np.where(x <= 0.5, 0.0, blend))


TRUNCATIONS = {"quintic": eta_quintic}


@dataclass(frozen=True)
class EConeConfig:
    """Angular profile, excess angle, thickness and truncation of the test field."""

    alpha: FourierCurve
    Delta: float
    h: float
    eta: str = "quintic"

    def __post_init__(self):
        if self.Delta < 0.0:
            raise ValueError(f"Delta must be non-negative, got {self.Delta}")
        if not 0.0 < self.h <= 0.5:
            raise ValueError(f"h must lie in (0, 1/2], got {self.h}")
        if self.eta not in TRUNCATIONS:
            raise ValueError(f"unknown truncation {self.eta!r}; choose from {sorted(TRUNCATIONS)}")
        target = TWO_PI * self.Delta**2
        gap = abs(circle_constraint(self.alpha) - target)
        if gap > 1e-8 * max(target, 1e-300) and not (target == 0.0 and gap == 0.0):
            raise PreconditionError(
                f"alpha misses the constraint by {gap:.3e} (target {target:.6g})"
            )


def _angular_profiles(alpha: FourierCurve, Delta: float, t: np.ndarray):
    """``alpha``, ``u = -alpha^2/2`` and the mean-zero ``v`` with ``v' = (Delta^2 + alpha^2 - alpha'^2)/2``."""
    a = alpha(t)
    da = alpha(t, 1)
    rate = 0.5 * (Delta**2 + a * a - da * da)
    nt = t.size
    spectrum = np.fft.rfft(rate)
    k = np.fft.rfftfreq(nt, d=1.0 / nt)
    out = np.zeros_like(spectrum)
    out[1:] = spectrum[1:] / (1j * k[1:])
    if nt % 2 == 0:
        out[-1] = 0.0
    v = np.fft.irfft(out, n=nt)
    return a, -0.5 * a * a, v


def build_econe_pair(cfg: EConeConfig, grid: PolarGrid):
    """In-plane field ``(U_r, U_phi)`` and height ``W`` of the truncated construction.

    ``W = h eta(r/h) alpha(t)`` and ``U = h eta(r/h) (u(t) e_r + v(t) e_phi)``.
    For ``r >= h`` both are exactly 1-homogeneous and the membrane strain
    vanishes identically there.
    """
    if cfg.h / grid.spacing < 8.0 - 1e-9:
        raise PreconditionError(
            f"grid spacing {grid.spacing:.3g} leaves fewer than 8 cells below h = {cfg.h}"
        )
    a, u, v = _angular_profiles(cfg.alpha, cfg.Delta, grid.t)
    radial = cfg.h * TRUNCATIONS[cfg.eta](grid.r / cfg.h)[:, None]
    W = PolarField(grid, radial * a[None, :])
    Ur = PolarField(grid, radial * u[None, :])
    Uphi = PolarField(grid, radial * v[None, :])
    return (Ur, Uphi), W


def homogeneous_pair(alpha: FourierCurve, Delta: float, grid: PolarGrid):
    """Untruncated version of :func:`build_econe_pair`: ``W = r alpha(t)``."""
    a, u, v = _angular_profiles(alpha, Delta, grid.t)
    r = grid.r[:, None]
    return (PolarField(grid, r * u), PolarField(grid, r * v)), PolarField(grid, r * a)


def homogeneous_field(alpha: FourierCurve, grid: PolarGrid) -> PolarField:
    """``W = r alpha(t)``."""
    return PolarField(grid, grid.r[:, None] * alpha(grid.t)[None, :])


def _check_same_grid(grid, *fields):
    for f in fields:
        if f.grid is not grid and (f.grid.nt != grid.nt or not np.array_equal(f.grid.r, grid.r)):
            raise DimensionError("fields are sampled on different grids")


def membrane_density(U, W: PolarField, Delta: float, grid: PolarGrid) -> np.ndarray:
    """Pointwise ``|2 sym DU + grad W (x) grad W - Delta^2 e_phi (x) e_phi|^2``."""
    Ur, Uphi = U
    _check_same_grid(grid, Ur, Uphi, W)
    r = grid.r[:, None]
    wr = d1(W.values, grid)
    wt = angular_derivative(W.values) / r
    m_rr = 2.0 * d1(Ur.values, grid) + wr * wr
    m_tt = 2.0 * (angular_derivative(Uphi.values) + Ur.values) / r + wt * wt - Delta**2
    m_rt = (
        d1(Uphi.values, grid)
        + (angular_derivative(Ur.values) - Uphi.values) / r
        + wr * wt
    )
    return m_rr**2 + m_tt**2 + 2.0 * m_rt**2


def bending_density(W: PolarField, grid: PolarGrid) -> np.ndarray:
    """Pointwise ``|D^2 W|^2`` in polar coordinates."""
    _check_same_grid(grid, W)
    r = grid.r[:, None]
    w = W.values
    wr = d1(w, grid)
    wrr = d2(w, grid)
    wt = angular_derivative(w)
    wtt = angular_derivative(w, 2)
    wrt = d1(wt, grid)
    return wrr**2 + (wr / r + wtt / (r * r)) ** 2 + 2.0 * (wrt / r - wt / (r * r)) ** 2


def _area_integral(density, grid: PolarGrid, r_range=None) -> float:
    r = grid.r
    radial = density.sum(axis=1) * grid.dt * r
    if r_range is None:
        return float(np.trapezoid(radial, r))
    lo, hi = r_range
    keep = (r >= lo - 1e-12) & (r <= hi + 1e-12)
    if keep.sum() < 2:
        raise DimensionError(f"no grid radii in [{lo}, {hi}]")
    return float(np.trapezoid(radial[keep], r[keep]))


def fvk_energy_polar(U, W: PolarField, Delta: float, h: float, grid: PolarGrid, r_range=None) -> EnergyBreakdown:
    """Plate energy over the grid's annulus (or the radii in ``r_range``).

    The membrane integral is reported as ``membrane_stretch``; ``bend``
    already carries the ``h^2`` factor.
    """
    membrane = _area_integral(membrane_density(U, W, Delta, grid), grid, r_range)
    bend = _area_integral(bending_density(W, grid), grid, r_range)
    return EnergyBreakdown(membrane_u=0.0, membrane_stretch=membrane, bend=h * h * bend)


def gauss_curvature(W: PolarField, r: float, grid: PolarGrid) -> float:
    """Integrated Gauss curvature of the graph inside the circle of radius ``r``.

    Half the angular integral of ``W_r^2 - (W_phi/r)^2 + (W_r W_phi)_phi / r``
    on that circle. ``r`` must coincide with a grid radius other than the
    first or last. A field vanishing on the circle gives 0.
    """
    _check_same_grid(grid, W)
    idx = int(np.argmin(np.abs(grid.r - r)))
    if not np.isclose(grid.r[idx], r, rtol=0.0, atol=1e-9 * max(1.0, r)) or idx in (0, grid.nr - 1):
        raise ValueError(f"r = {r} is not an interior grid radius")
    rr = grid.r[idx]
    lo, hi = max(idx - 2, 0), min(idx + 3, grid.nr)
    # stencils only need a few neighbouring rows
    sub = PolarGrid(grid.r[lo:hi], grid.nt) if hi - lo >= 4 else grid
    rows = W.values[lo:hi] if sub is not grid else W.values
    wr = d1(rows, sub)[idx - lo if sub is not grid else idx]
    wt = angular_derivative(W.values[idx])
    form = wr * wr - (wt / rr) ** 2 + angular_derivative(wr * wt) / rr
    return float(0.5 * form.sum() * grid.dt)


def fit_log_coefficient(samples) -> tuple:
    """Fit ``energy = C1 h^2 log(1/h) + C2 h^2``.

    Least squares of ``energy / h^2`` against ``log(1/h)``. Returns
    ``(C1, C2, max_rel_residual)``.
    """
    data = np.asarray(samples, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 4:
        raise ValueError("need at least 4 (h, energy) samples")
    h, energy = data[:, 0], data[:, 1]
    if np.any(h <= 0.0) or np.unique(h).size < 4:
        raise ValueError("h values must be positive with at least 4 distinct entries")
    if h.max() / h.min() < 100.0:
        logger.warning("h samples span less than two decades (%.3g)", h.max() / h.min())
    x = np.log(1.0 / h)
    y = energy / h**2
    design = np.column_stack((x, np.ones_like(x)))
    (c1, c2), *_ = np.linalg.lstsq(design, y, rcond=None)
    model = c1 * x + c2
    resid = float(np.max(np.abs(model - y) / np.maximum(np.abs(y), 1e-300)))
    return float(c1), float(c2), resid
