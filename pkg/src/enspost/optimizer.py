"""Quasi-Newton (BFGS) minimization with a backtracking Armijo line search.

Sized for the low-dimensional coefficient fits in this package: dense
inverse-Hessian updates, gradient-free objectives handled by central
finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

ARMIJO_C1 = 1e-4
BACKTRACK_FACTOR = 0.5
MAX_BACKTRACKS = 60
# two consecutive accepted steps improving less than this (relative) stop
# the run: finite-difference gradients cannot resolve anything finer
STALL_TOL = 1e-12


class GradientMode(Enum):
    ANALYTIC = "analytic"
    FINITE_DIFFERENCE = "finite_difference"


class OptimizationError(RuntimeError):
    """Raised when the objective stays non-finite along a search direction."""

    def __init__(self, message: str, point: np.ndarray):
        super().__init__(message)
        self.point = point


@dataclass(frozen=True)
class ObjectiveSpec:
    """A minimization problem.

    ``evaluate`` maps a point to ``(value, gradient)``; the gradient may be
    ``None`` when ``gradient_mode`` is FINITE_DIFFERENCE, in which case
    central differences with step ``1e-6 * (1 + |x_i|)`` are used.
    """

    dimension: int
    evaluate: Callable
    initial_point: np.ndarray
    gradient_mode: GradientMode = GradientMode.FINITE_DIFFERENCE

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be at least 1")
        x0 = np.asarray(self.initial_point, dtype=float)
        if x0.shape != (self.dimension,):
            raise ValueError(
                f"initial_point must have length {self.dimension}, got shape {x0.shape}"
            )
        object.__setattr__(self, "initial_point", x0)


@dataclass(frozen=True)
class MinimizeResult:
    point: np.ndarray
    value: float
    converged: bool
    n_iterations: int
    gradient_norm: float
    # objective values at the accepted iterates, starting point included
    trace: tuple[float, ...] = field(default=())


def _value_of(raw) -> float:
    return float(raw[0]) if isinstance(raw, tuple) else float(raw)


def _fd_gradient(fn: Callable, x: np.ndarray) -> np.ndarray:
    grad = np.empty_like(x)
    for i in range(x.size):
        h = 1e-6 * (1.0 + abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (_value_of(fn(xp)) - _value_of(fn(xm))) / (2.0 * h)
    return grad


def minimize(spec: ObjectiveSpec, tol: float = 1e-8, max_iter: int = 200) -> MinimizeResult:
    """Minimize ``spec`` and return the best point found.

    Convergence means the gradient infinity-norm fell below ``tol``. The
    accepted objective values are non-increasing by construction of the
    Armijo condition. Non-finite trial values during the line search
    trigger further backtracking; if every trial along a direction is
    non-finite an :class:`OptimizationError` carrying the current point is
    raised.
    """

    def value_and_grad(x: np.ndarray) -> tuple[float, np.ndarray]:
        raw = spec.evaluate(x)
        if spec.gradient_mode is GradientMode.ANALYTIC:
            val, grad = raw
            return float(val), np.asarray(grad, dtype=float)
        return _value_of(raw), _fd_gradient(spec.evaluate, x)

    x = spec.initial_point.copy()
    f, g = value_and_grad(x)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise OptimizationError("objective is non-finite at the initial point", x)

    n = x.size
    identity = np.eye(n)
    h_inv = identity.copy()
    trace = [f]
    stalls = 0

    for iteration in range(max_iter):
        gnorm = float(np.max(np.abs(g)))
        if gnorm < tol:
            return MinimizeResult(x, f, True, iteration, gnorm, tuple(trace))

        direction = -h_inv @ g
        slope = float(g @ direction)
        if slope >= 0.0:
            # curvature information went stale; restart from steepest descent
            h_inv = identity.copy()
            direction = -g
            slope = float(g @ direction)

        step = 1.0
        f_new = np.inf
        saw_finite = False
        saw_distinct = False
        for _ in range(MAX_BACKTRACKS):
            trial = x + step * direction
            if np.array_equal(trial, x):
                # step underflowed below float resolution at x
                step *= BACKTRACK_FACTOR
                continue
            saw_distinct = True
            f_trial = _value_of(spec.evaluate(trial))
            if np.isfinite(f_trial):
                saw_finite = True
                if f_trial <= f + ARMIJO_C1 * step * slope:
                    f_new = f_trial
                    break
            step *= BACKTRACK_FACTOR
        else:
            if saw_distinct and not saw_finite:
                raise OptimizationError(
                    "objective non-finite along the search direction", x
                )
            gnorm = float(np.max(np.abs(g)))
            return MinimizeResult(x, f, False, iteration, gnorm, tuple(trace))

        x_new = x + step * direction
        _, g_new = value_and_grad(x_new)
        if not np.all(np.isfinite(g_new)):
            return MinimizeResult(x_new, f_new, False, iteration + 1, np.inf, tuple(trace + [f_new]))

        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            v = identity - rho * np.outer(s, y)
            h_inv = v @ h_inv @ v.T + rho * np.outer(s, s)

        stalls = stalls + 1 if f - f_new <= STALL_TOL * (1.0 + abs(f)) else 0
        x, f, g = x_new, f_new, g_new
        trace.append(f)
        if stalls >= 2:
            gnorm = float(np.max(np.abs(g)))
            return MinimizeResult(x, f, gnorm < tol, iteration + 1, gnorm, tuple(trace))

    gnorm = float(np.max(np.abs(g)))
    return MinimizeResult(x, f, gnorm < tol, max_iter, gnorm, tuple(trace))
