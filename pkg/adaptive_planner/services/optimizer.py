"""Unconstrained smooth minimization shared by both planning layers.

Limited-memory BFGS with a strong-Wolfe line search (bracketing phase followed
by a safeguarded interpolation zoom). Non-finite trial costs count as +inf so a
step that leaves the valid region is simply rejected.
"""
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Tuple

import numpy as np

from ..config import OptimizeOptions
from ..errors import NonFiniteObjectiveError

logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], Tuple[float, np.ndarray]]
Preconditioner = Callable[[np.ndarray], np.ndarray]


class Termination(str, Enum):
    GRADIENT = "gradient_tolerance"
    COST_STALL = "cost_stall"
    MAX_ITERATIONS = "max_iterations"
    TIME_LIMIT = "time_limit"
    LINE_SEARCH_FAILED = "line_search_failed"


@dataclass
class OptimizeReport:
    cost: float
    gradient_norm: float
    iterations: int
    evaluations: int
    termination: Termination
    costs: List[float] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.termination in (Termination.GRADIENT, Termination.COST_STALL)


class _Evaluator:
    """Counts evaluations and maps non-finite results to +inf."""

    def __init__(self, objective: Objective):
        self.objective = objective
        self.count = 0

    def __call__(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        self.count += 1
        cost, gradient = self.objective(x)
        cost = float(cost)
        gradient = np.asarray(gradient, dtype=float)
        if not math.isfinite(cost) or not np.all(np.isfinite(gradient)):
            return math.inf, gradient
        return cost, gradient


def _trial_step(a_lo: float, f_lo: float, d_lo: float, a_hi: float, f_hi: float) -> float:
    """Minimizer of the quadratic through (lo, f_lo, d_lo) and (hi, f_hi), safeguarded."""
    delta = a_hi - a_lo
    if math.isfinite(f_hi):
        curvature = 2.0 * (f_hi - f_lo - d_lo * delta)
        if curvature > 0:
            candidate = a_lo - d_lo * delta * delta / curvature
            lo, hi = sorted((a_lo + 0.1 * delta, a_hi - 0.1 * delta))
            if lo <= candidate <= hi:
                return candidate
    return a_lo + 0.5 * delta


def _strong_wolfe(
    evaluate: _Evaluator,
    x: np.ndarray,
    f0: float,
    g0: np.ndarray,
    direction: np.ndarray,
    alpha: float,
    options: OptimizeOptions,
) -> Optional[Tuple[float, float, np.ndarray]]:
    c1, c2 = options.sufficient_decrease, options.curvature
    d0 = float(g0 @ direction)
    budget = options.max_line_search

    def phi(a: float):
        f, g = evaluate(x + a * direction)
        return f, g, (float(g @ direction) if math.isfinite(f) else math.nan)

    def zoom(a_lo, f_lo, d_lo, g_lo, a_hi, f_hi, remaining):
        for _ in range(remaining):
            a_j = _trial_step(a_lo, f_lo, d_lo, a_hi, f_hi)
            f_j, g_j, d_j = phi(a_j)
            if not math.isfinite(f_j) or f_j > f0 + c1 * a_j * d0 or f_j >= f_lo:
                a_hi, f_hi = a_j, f_j
            else:
                if abs(d_j) <= -c2 * d0:
                    return a_j, f_j, g_j
                if d_j * (a_hi - a_lo) >= 0:
                    a_hi, f_hi = a_lo, f_lo
                a_lo, f_lo, d_lo, g_lo = a_j, f_j, d_j, g_j
        # sufficient decrease holds at every accepted lo end
        if a_lo > 0:
            return a_lo, f_lo, g_lo
        return None

    a_prev, f_prev, d_prev, g_prev = 0.0, f0, d0, g0
    for k in range(budget):
        f, g, d = phi(alpha)
        remaining = budget - k - 1
        if not math.isfinite(f) or f > f0 + c1 * alpha * d0 or (k > 0 and f >= f_prev):
            return zoom(a_prev, f_prev, d_prev, g_prev, alpha, f, remaining)
        if abs(d) <= -c2 * d0:
            return alpha, f, g
        if d >= 0:
            return zoom(alpha, f, d, g, a_prev, f_prev, remaining)
        a_prev, f_prev, d_prev, g_prev = alpha, f, d, g
        alpha *= 2.0
    if a_prev > 0:
        return a_prev, f_prev, g_prev
    return None


def _two_loop(gradient: np.ndarray, pairs: deque, preconditioner: Optional[Preconditioner] = None) -> np.ndarray:
    q = gradient.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * float(s @ q)
        q -= a * y
        alphas.append(a)
    r = preconditioner(q) if preconditioner is not None else q
    if pairs:
        s, y, _ = pairs[-1]
        hy = preconditioner(y) if preconditioner is not None else y
        r = r * (float(s @ y) / float(y @ hy))
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * float(y @ r)
        r = r + (a - b) * s
    return -r


def stationary(gradient: np.ndarray, cost: float, tolerance: float) -> bool:
    """Infinity-norm gradient test relative to the cost scale, absolute below |f| = 1."""
    return float(np.max(np.abs(gradient), initial=0.0)) <= tolerance * max(1.0, abs(cost))


def minimize(
    objective: Objective,
    x0,
    options: Optional[OptimizeOptions] = None,
    callback: Optional[Callable[[np.ndarray, float], None]] = None,
    preconditioner: Optional[Preconditioner] = None,
) -> Tuple[np.ndarray, OptimizeReport]:
    """Minimize ``objective`` (returning cost and gradient) from ``x0``.

    The accepted cost sequence is monotone non-increasing. The report names the
    reason the iteration stopped; a failed line search returns the best iterate.
    ``preconditioner`` applies a symmetric positive definite approximation of
    the inverse Hessian; it seeds every quasi-Newton update and makes the first
    step a unit step.
    """
    options = options or OptimizeOptions()
    evaluate = _Evaluator(objective)
    x = np.array(x0, dtype=float)
    f, g = evaluate(x)
    if not math.isfinite(f):
        raise NonFiniteObjectiveError(f)

    costs = [f]
    pairs: deque = deque(maxlen=options.history)
    started = time.perf_counter()
    iterations = 0
    termination = Termination.MAX_ITERATIONS

    if stationary(g, f, options.gradient_tolerance):
        termination = Termination.GRADIENT
    else:
        for iterations in range(1, options.max_iterations + 1):
            direction = _two_loop(g, pairs, preconditioner)
            if float(g @ direction) >= 0:
                pairs.clear()
                direction = _two_loop(g, pairs, preconditioner)
                if float(g @ direction) >= 0:
                    direction = -g
            if pairs or preconditioner is not None:
                alpha = 1.0
            else:
                alpha = min(1.0, 1.0 / max(float(np.linalg.norm(g)), 1e-12))

            step = _strong_wolfe(evaluate, x, f, g, direction, alpha, options)
            if step is None:
                iterations -= 1
                termination = Termination.LINE_SEARCH_FAILED
                break
            alpha, f_new, g_new = step
            s = alpha * direction
            y = g_new - g
            sy = float(s @ y)
            if sy > 1e-10 * float(np.linalg.norm(s) * np.linalg.norm(y)):
                pairs.append((s, y, 1.0 / sy))

            x = x + s
            f_old, f, g = f, f_new, g_new
            costs.append(f)
            if callback is not None:
                callback(x, f)

            if stationary(g, f, options.gradient_tolerance):
                termination = Termination.GRADIENT
                break
            if f_old - f <= options.relative_cost_tolerance * max(1.0, abs(f_old)):
                termination = Termination.COST_STALL
                break
            if options.max_wall_time is not None and time.perf_counter() - started > options.max_wall_time:
                termination = Termination.TIME_LIMIT
                break

    report = OptimizeReport(
        cost=f,
        gradient_norm=float(np.max(np.abs(g), initial=0.0)),
        iterations=iterations,
        evaluations=evaluate.count,
        termination=termination,
        costs=costs,
    )
    logger.debug(
        "minimize: %s after %d iterations (%d evaluations), cost %.6g",
        termination.value, iterations, evaluate.count, f,
    )
    return x, report


@dataclass
class GradientCheck:
    max_error: float
    index: int
    analytic: np.ndarray
    numeric: np.ndarray


def check_gradient(objective: Objective, x, step: float = 1e-6, floor: float = 1e-6) -> GradientCheck:
    """Compare the analytic gradient with central differences, coordinate by coordinate.

    The error of coordinate k is |a_k - n_k| / max(|a_k|, |n_k|, floor * max(1, |a|_inf)).
    """
    x = np.array(x, dtype=float)
    _, analytic = objective(x)
    analytic = np.asarray(analytic, dtype=float).copy()
    numeric = np.empty_like(analytic)
    for k in range(len(x)):
        forward = x.copy()
        forward[k] += step
        backward = x.copy()
        backward[k] -= step
        numeric[k] = (float(objective(forward)[0]) - float(objective(backward)[0])) / (2.0 * step)
    scale = np.maximum.reduce([
        np.abs(analytic),
        np.abs(numeric),
        np.full_like(analytic, floor * max(1.0, float(np.max(np.abs(analytic), initial=0.0)))),
    ])
    errors = np.abs(analytic - numeric) / scale
    index = int(np.argmax(errors)) if len(errors) else 0
    return GradientCheck(float(errors[index]) if len(errors) else 0.0, index, analytic, numeric)
