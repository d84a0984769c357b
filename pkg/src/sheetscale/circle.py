"""Closed-curve problem: minimize int (a + a'')^2 subject to int (a'^2 - a^2) = 2 pi Delta^2.

Curves are truncated Fourier series, so both functionals are diagonal
quadratic forms in the coefficients and are evaluated exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .optim import ConvergenceError, OptimSettings, augmented_lagrangian

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class FourierCurve:
    """``a0 + sum_n a[n-1] cos(n t) + b[n-1] sin(n t)`` for ``n = 1..N``."""

    a0: float
    a: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64).copy()
        b = np.asarray(self.b, dtype=np.float64).copy()
        if a.ndim != 1 or a.shape != b.shape:
            raise ValueError("cosine and sine coefficient arrays must match")
        if a.size < 2:
            raise ValueError("truncation order N must be at least 2")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a0", float(self.a0))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def N(self) -> int:
        return self.a.size

    @property
    def modes(self) -> np.ndarray:
        return np.arange(1, self.N + 1)

    @classmethod
    def zeros(cls, N: int) -> "FourierCurve":
        return cls(0.0, np.zeros(N), np.zeros(N))

    @classmethod
    def from_modes(cls, N: int, cos=None, sin=None, a0: float = 0.0) -> "FourierCurve":
        """Build from ``{mode: amplitude}`` mappings."""
        a, b = np.zeros(N), np.zeros(N)
        for n, amp in (cos or {}).items():
            a[n - 1] = amp
        for n, amp in (sin or {}).items():
            b[n - 1] = amp
        return cls(a0, a, b)

    @classmethod
    def from_vector(cls, x) -> "FourierCurve":
        x = np.asarray(x, dtype=np.float64)
        N = (x.size - 1) // 2
        return cls(x[0], x[1 : N + 1], x[N + 1 :])

    def to_vector(self) -> np.ndarray:
        return np.concatenate(([self.a0], self.a, self.b))

    def __add__(self, other: "FourierCurve") -> "FourierCurve":
        return FourierCurve(self.a0 + other.a0, self.a + other.a, self.b + other.b)

    def scaled(self, s: float) -> "FourierCurve":
        return FourierCurve(s * self.a0, s * self.a, s * self.b)

    def evaluate(self, t, derivative: int = 0) -> np.ndarray:
        """Value (or ``derivative``-th derivative) at the angles ``t``."""
        t = np.asarray(t, dtype=np.float64)
        n = self.modes
        phase = np.multiply.outer(t, n)
        # d^k/dt^k of cos(nt), sin(nt) cycles with period 4 in k
        k = derivative % 4
        c, s = np.cos(phase), np.sin(phase)
        basis_c = (c, -s, -c, s)[k]
        basis_s = (s, c, -s, -c)[k]
        nk = n.astype(np.float64) ** derivative
        out = basis_c @ (nk * self.a) + basis_s @ (nk * self.b)
        if derivative == 0:
            out = out + self.a0
        return out

    __call__ = evaluate


def _energy_weights(N):
    n = np.arange(1, N + 1, dtype=np.float64)
    return np.concatenate(([TWO_PI], np.tile(np.pi * (1.0 - n**2) ** 2, 2)))


def _constraint_weights(N):
    n = np.arange(1, N + 1, dtype=np.float64)
    return np.concatenate(([-TWO_PI], np.tile(np.pi * (n**2 - 1.0), 2)))


def circle_energy(curve: FourierCurve) -> float:
    """Exact value of ``int_0^{2pi} (a + a'')^2 dt``."""
    x = curve.to_vector()
    return float(_energy_weights(curve.N) @ (x * x))


def circle_constraint(curve: FourierCurve) -> float:
    """Exact value of ``int_0^{2pi} (a'^2 - a^2) dt``."""
    x = curve.to_vector()
    return float(_constraint_weights(curve.N) @ (x * x))


def spectral_mass(curve: FourierCurve) -> np.ndarray:
    """``int a^2`` split by mode: entry ``n`` holds the mode-``n`` share."""
    return np.concatenate(([TWO_PI * curve.a0**2], np.pi * (curve.a**2 + curve.b**2)))


def dominant_mode(curve: FourierCurve) -> int:
    """Mode carrying the largest mass, ignoring the energy-free tilt mode 1."""
    mass = spectral_mass(curve).copy()
    mass[1] = -1.0
    return int(np.argmax(mass))


def mode_energy_table(Delta: float, n_max: int) -> list:
    """``(n, 2 pi Delta^2 (n^2 - 1))`` for ``n = 2..n_max``.

    Each entry is the least energy among admissible curves built from modes
    1 and ``n`` only.
    """
    if n_max < 2:
        raise ValueError(f"n_max must be at least 2, got {n_max}")
    return [(n, TWO_PI * Delta**2 * (n * n - 1)) for n in range(2, n_max + 1)]


def el_residual(curve: FourierCurve, lam: float) -> float:
    """L2 norm of ``a'''' + (2 + lam) a'' + (1 + lam) a`` over one period."""
    n = curve.modes.astype(np.float64)
    f = n**4 - (2.0 + lam) * n**2 + (1.0 + lam)
    f0 = 1.0 + lam
    sq = TWO_PI * (f0 * curve.a0) ** 2 + np.pi * np.sum(f**2 * (curve.a**2 + curve.b**2))
    return float(np.sqrt(sq))


def optimal_curve(Delta: float, N: int = 8, phase: float = 0.0) -> FourierCurve:
    """A member of the minimizer family: pure mode 2 with squared amplitude 2/3 Delta^2."""
    amp = np.sqrt(2.0 / 3.0) * Delta
    return FourierCurve.from_modes(N, cos={2: amp * np.cos(phase)}, sin={2: amp * np.sin(phase)})


def random_admissible_curve(Delta: float, N: int, rng: np.random.Generator) -> FourierCurve:
    """Coefficients uniform in ``[-Delta, Delta]``, rescaled onto the constraint."""
    target = TWO_PI * Delta**2
    while True:
        x = rng.uniform(-Delta, Delta, size=2 * N + 1)
        c = float(_constraint_weights(N) @ (x * x))
        if c > 1e-12 * max(target, 1e-300):
            return FourierCurve.from_vector(x * np.sqrt(target / c))


CIRCLE_SETTINGS = OptimSettings(
    max_outer=60,
    max_inner=20000,
    grad_tol=1e-6,
    constraint_tol=1e-7,
    penalty_init=1.0,
    penalty_growth=2.0,
)


def solve_circle_min(
    Delta: float,
    N: int = 8,
    tol: float = 1e-3,
    seed: int = 0,
    init: FourierCurve | None = None,
    settings: OptimSettings = CIRCLE_SETTINGS,
) -> tuple:
    """Augmented-Lagrangian minimization over all coefficients up to order ``N``.

    The problem is homogeneous in ``Delta``, so it is solved for the
    normalized curve ``alpha / Delta`` and rescaled. Returns
    ``(curve, energy)``; raises :class:`ConvergenceError` when the result
    misses the energy, spectral or feasibility tolerances.
    """
    if Delta < 0:
        raise ValueError("Delta must be non-negative")
    if N < 4:
        raise ValueError(f"N must be at least 4, got {N}")
    if Delta == 0:
        return FourierCurve.zeros(N), 0.0

    if init is None:
        unit = random_admissible_curve(1.0, N, np.random.default_rng(seed))
    else:
        if init.N != N:
            raise ValueError("init truncation order differs from N")
        unit = init.scaled(1.0 / Delta)

    ew, cw = _energy_weights(N), _constraint_weights(N)

    def objective(x):
        return ew @ (x * x), 2.0 * ew * x

    def constraint(x):
        return cw @ (x * x) - TWO_PI, 2.0 * cw * x

    # diagonal scale of the quadratic forms; mode 1 and a0 get the a0 floor
    scale = 1.0 / (ew + np.abs(cw) + TWO_PI)
    x, _, multiplier = augmented_lagrangian(
        objective, constraint, unit.to_vector(), settings, precondition=scale
    )
    # both functionals are quadratic: one rescale lands exactly on the constraint
    c = float(cw @ (x * x))
    if c > 0:
        x = x * np.sqrt(TWO_PI / c)
    curve = FourierCurve.from_vector(x).scaled(Delta)
    energy = circle_energy(curve)

    target = 3.0 * TWO_PI * Delta**2
    mass = spectral_mass(curve)
    outside = mass[0] + mass[3:].sum()
    residual = circle_constraint(curve) - TWO_PI * Delta**2
    if (
        abs(energy - target) > tol * target
        or outside > tol * mass.sum()
        or abs(residual) > tol * TWO_PI * Delta**2
    ):
        raise ConvergenceError(
            "circle minimization missed its tolerances",
            iterate=curve,
            residuals={"energy": energy, "outside_mass": outside, "constraint": residual},
        )
    return curve, energy
