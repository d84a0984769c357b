"""Gradient descent with Armijo backtracking, augmented Lagrangian, FD checks.

Objectives are callables ``f(x) -> (value, gradient)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], tuple]


class NumericError(ArithmeticError):
    """A non-finite value or gradient was produced."""

    def __init__(self, message, iterate=None):
        super().__init__(message)
        self.iterate = iterate


class ConvergenceError(RuntimeError):
    """The iteration budget or penalty limit was exhausted."""

    def __init__(self, message, iterate=None, residuals=None):
        super().__init__(message)
        self.iterate = iterate
        self.residuals = residuals


@dataclass(frozen=True)
class OptimSettings:
    max_outer: int = 60
    max_inner: int = 20000
    grad_tol: float = 1e-9
    constraint_tol: float = 1e-10
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    penalty_init: float = 1.0
    penalty_growth: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.max_outer < 1 or self.max_inner < 0:
            raise ValueError("iteration budgets must be positive")
        if not (self.grad_tol > 0 and self.constraint_tol > 0):
            raise ValueError("tolerances must be positive")
        if not 0.0 < self.armijo_c < 1.0:
            raise ValueError("armijo_c must lie in (0, 1)")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if not self.penalty_init > 0:
            raise ValueError("penalty_init must be positive")
        if not self.penalty_growth > 1:
            raise ValueError("penalty_growth must exceed 1")


@dataclass
class Trace:
    """Accepted objective values and step lengths, one entry per iteration."""

    values: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    slopes: list = field(default_factory=list)
    converged: bool = False

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)


class DescentResult(NamedTuple):
    x: np.ndarray
    value: float
    trace: Trace


class ALResult(NamedTuple):
    x: np.ndarray
    value: float
    multiplier: float


def _evaluate(objective, x):
    value, grad = objective(x)
    value = float(value)
    grad = np.asarray(grad, dtype=np.float64)
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise NumericError("non-finite objective or gradient", iterate=x.copy())
    return value, grad


def _armijo(objective, x, value, grad, direction, step, settings, trace):
    """Backtrack from ``step`` until the sufficient-decrease test passes."""
    slope = float(grad @ direction)
    while step > 1e-20:
        trial = x + step * direction
        try:
            v_trial, g_trial = _evaluate(objective, trial)
        except NumericError:
            step *= settings.backtrack_factor
            continue
        if v_trial <= value + settings.armijo_c * step * slope:
            trace.values.append(v_trial)
            trace.steps.append(step)
            trace.slopes.append(slope)
            return trial, v_trial, g_trial, step
        step *= settings.backtrack_factor
    return None


def descend(
    objective: Objective,
    init,
    settings: OptimSettings = OptimSettings(),
    precondition=None,
) -> DescentResult:
    """Steepest descent with Armijo backtracking.

    Stops when the gradient sup-norm drops below ``settings.grad_tol`` or
    after ``settings.max_inner`` iterations. The first trial step of each
    iteration is the previous accepted step enlarged by ``1/backtrack_factor``.
    ``precondition`` is an optional positive diagonal scaling applied to the
    gradient to form the search direction.
    """
    x = np.array(init, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite initial point", iterate=x)
    value, grad = _evaluate(objective, x)
    trace = Trace()
    step = 1.0
    stalled = 0
    for _ in range(settings.max_inner):
        if np.max(np.abs(grad), initial=0.0) < settings.grad_tol:
            trace.converged = True
            break
        direction = -grad if precondition is None else -precondition * grad
        prev = value
        accepted = _armijo(objective, x, value, grad, direction, step, settings, trace)
        if accepted is None:
            # no decrease possible at floating-point resolution
            break
        x, value, grad, step = accepted
        step /= settings.backtrack_factor
        stalled = stalled + 1 if value >= prev else 0
        if stalled >= 3:
            break
    else:
        trace.converged = bool(np.max(np.abs(grad), initial=0.0) < settings.grad_tol)
    return DescentResult(x, value, trace)


def newton_descend(
    objective: Objective,
    hessian: Callable,
    init,
    settings: OptimSettings = OptimSettings(),
) -> DescentResult:
    """Damped Newton iteration with Armijo backtracking.

    ``hessian(x)`` returns a sparse symmetric matrix. When the Newton system
    is singular or its solution is not a descent direction, a diagonal shift
    is added and doubled until it is. Every accepted step satisfies the same
    Armijo test as :func:`descend`, so the value trace is non-increasing.
    """
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    x = np.array(init, dtype=np.float64)
    value, grad = _evaluate(objective, x)
    trace = Trace()
    shift = 0.0
    stalled = 0
    for _ in range(settings.max_inner):
        gnorm = np.max(np.abs(grad), initial=0.0)
        if gnorm < settings.grad_tol:
            trace.converged = True
            break
        H = sp.csc_matrix(hessian(x))
        scale = max(float(np.max(np.abs(H.diagonal()))), 1e-300)
        eye = sp.identity(H.shape[0], format="csc")
        mu = shift
        direction = None
        for _attempt in range(60):
            try:
                with np.errstate(all="raise"):
                    p = spla.splu((H + mu * scale * eye).tocsc()).solve(-grad)
            except (RuntimeError, FloatingPointError):
                p = None
            if p is not None and np.all(np.isfinite(p)):
                slope = grad @ p
                if slope < -1e-14 * np.linalg.norm(grad) * np.linalg.norm(p):
                    direction = p
                    break
            mu = max(2.0 * mu, 1e-12)
        if direction is None:
            direction = -grad / scale
        # reuse a smaller shift next time if this one worked
        shift = 0.25 * mu if mu > 1e-12 else 0.0
        prev = value
        accepted = _armijo(objective, x, value, grad, direction, 1.0, settings, trace)
        if accepted is None:
            break
        x, value, grad, _ = accepted
        if prev - value <= 1e-15 * max(abs(prev), 1e-300):
            stalled += 1
            if stalled >= 5:
                break
        else:
            stalled = 0
    else:
        trace.converged = bool(np.max(np.abs(grad), initial=0.0) < settings.grad_tol)
    return DescentResult(x, value, trace)


def _multiplier_estimate(grad_f, grad_c):
    """Least-squares multiplier for ``grad_f + lam * grad_c = 0``."""
    denom = float(grad_c @ grad_c)
    if denom == 0.0:
        return 0.0
    return -float(grad_f @ grad_c) / denom


def augmented_lagrangian(
    objective: Objective,
    equality_constraint: Objective,
    init,
    settings: OptimSettings = OptimSettings(),
    multiplier: float | None = None,
    inner: Callable = descend,
    **inner_kwargs,
) -> ALResult:
    """Minimize ``f`` subject to ``c(x) = 0`` with one scalar constraint.

    The inner problems minimize ``f + lam*c + rho/2*c**2``. After each inner
    solve ``lam <- lam + rho*c``; ``rho`` grows by ``penalty_growth`` whenever
    ``|c|`` shrank by less than half. The starting multiplier defaults to the
    least-squares estimate at ``init``, so a KKT point is returned untouched.
    """
    x = np.array(init, dtype=np.float64)
    rho = settings.penalty_init
    f0, gf0 = _evaluate(objective, x)
    c0, gc0 = _evaluate(equality_constraint, x)
    lam = _multiplier_estimate(gf0, gc0) if multiplier is None else float(multiplier)
    c_prev = abs(c0)

    def augmented(z):
        f, gf = objective(z)
        c, gc = equality_constraint(z)
        return f + lam * c + 0.5 * rho * c * c, gf + (lam + rho * c) * np.asarray(gc)

    for outer in range(settings.max_outer):
        x, _, trace = inner(augmented, x, settings, **inner_kwargs)
        f, gf = _evaluate(objective, x)
        c, gc = _evaluate(equality_constraint, x)
        logger.debug("AL outer %d: f=%.12g c=%.3e lam=%.6g rho=%.3g inner=%d", outer, f, c, lam, rho, len(trace))
        lagrangian_grad = np.max(np.abs(gf + (lam + rho * c) * gc), initial=0.0)
        if abs(c) <= settings.constraint_tol and lagrangian_grad < settings.grad_tol:
            return ALResult(x, f, lam + rho * c)
        lam += rho * c
        if abs(c) > 0.5 * c_prev:
            rho *= settings.penalty_growth
        c_prev = abs(c)
        if rho > 1e12:
            raise ConvergenceError(
                "penalty exceeded 1e12 without reaching feasibility",
                iterate=x,
                residuals={"constraint": c, "lagrangian_grad": lagrangian_grad},
            )
    raise ConvergenceError(
        f"no convergence in {settings.max_outer} outer iterations",
        iterate=x,
        residuals={"constraint": c, "lagrangian_grad": lagrangian_grad},
    )


def gradient_check(objective: Objective, point, step: float) -> float:
    """Worst componentwise relative error of the analytic gradient.

    Each component is compared with a central difference of width ``2*step``.
    Components are normalized by ``max(|analytic|, |fd|, 1e-6*max|analytic|)``
    so entries that vanish analytically do not divide by zero.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.array(point, dtype=np.float64)
    _, grad = objective(x)
    grad = np.asarray(grad, dtype=np.float64)
    floor = max(1e-6 * np.max(np.abs(grad), initial=0.0), 1e-300)
    worst = 0.0
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        fd = (objective(x + e)[0] - objective(x - e)[0]) / (2.0 * step)
        denom = max(abs(grad[i]), abs(fd), floor)
        worst = max(worst, abs(fd - grad[i]) / denom)
    return worst
