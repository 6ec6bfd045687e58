"""Reference layer: smooth the guiding path into a safe reference trajectory.

A first-order model with velocity inputs is optimized over M steps against
three terms: tracking the guide points, clearance below ``c_thr`` and input
smoothness. The resulting knots are joined by a C1 Hermite spline in time.
"""
import logging
import math
from dataclasses import dataclass, field as dataclass_field, replace
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from ..config import LowMpcConfig, OptimizeOptions
from ..errors import ContractError, GridBoundsError, NonFiniteCostError
from .esdf import EsdfField
from .integrator import cached_batch_map, first_bad_step
from .optimizer import OptimizeReport, minimize
from .search import GuidePath

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClearanceTerms:
    values: np.ndarray
    gradients: np.ndarray
    hessians: np.ndarray
    penalty: np.ndarray
    penalty_gradient: np.ndarray
    free: np.ndarray

    def below(self, c_thr: float) -> Tuple[np.ndarray, np.ndarray]:
        """Penalty ``(c - c_thr)^2`` and its position gradient at another threshold."""
        gap = self.values - c_thr
        inside = gap < 0
        penalty = np.where(inside, gap * gap, 0.0)
        slope = np.where(inside, 2.0 * gap, 0.0)
        return penalty, slope[:, None] * self.gradients * self.free


def clearance_terms(field: EsdfField, points, c_thr: float, clamp: bool = False) -> ClearanceTerms:
    """Collision penalty ``(c - c_thr)^2`` (zero at or above ``c_thr``) at each point.

    With ``clamp`` the ESDF is read at the point clipped into the valid box and
    the clipped coordinates get zero derivative; otherwise points outside the
    box raise ``GridBoundsError``.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if clamp:
        queried = field.clamp(points)
        free = queried == points
    else:
        queried = points
        free = np.ones(points.shape, dtype=bool)
    batch = field.query_many(queried)
    terms = ClearanceTerms(
        values=batch.values,
        gradients=batch.gradients,
        hessians=batch.hessians * free[:, :, None],
        penalty=np.empty(0),
        penalty_gradient=np.empty(0),
        free=free,
    )
    penalty, penalty_gradient = terms.below(c_thr)
    return replace(terms, penalty=penalty, penalty_gradient=penalty_gradient)


def _low_terms(inputs, guide: np.ndarray, field: EsdfField, s0, config: LowMpcConfig, clamp: bool):
    guide = np.asarray(guide, dtype=float).reshape(-1, 3)
    horizon = len(guide) - 1
    if horizon < 1:
        raise ContractError("guide must have at least two points")
    u = np.asarray(inputs, dtype=float).reshape(3, -1)
    if u.shape[1] != horizon:
        raise ContractError(f"expected {horizon} velocity inputs per axis, got {u.shape[1]}")
    s0 = np.asarray(s0, dtype=float).reshape(3)
    maps = cached_batch_map(1, config.dt, horizon)

    positions = maps.apply_many(u, s0[:, None])[:, 1:, 0].T
    step = first_bad_step(positions)
    if step is not None:
        raise NonFiniteCostError("rollout", step)

    k_s, k_c, k_u = config.weights
    error = positions - guide[1:]
    clearance = clearance_terms(field, positions, config.c_thr, clamp=clamp)
    du = np.diff(u, axis=1)

    terms = {
        "J_s": float(np.sum(error * error)),
        "J_c": float(np.sum(clearance.penalty)),
        "J_u": float(np.sum(du * du)),
    }
    for name, value in terms.items():
        if not math.isfinite(value):
            raise NonFiniteCostError(name, None)

    grad_p = 2.0 * k_s * error + k_c * clearance.penalty_gradient
    state_gradient = np.zeros((3, horizon + 1, 1))
    state_gradient[:, 1:, 0] = grad_p.T
    gradient = maps.adjoint(state_gradient)
    gradient[:, :-1] -= 2.0 * k_u * du
    gradient[:, 1:] += 2.0 * k_u * du

    total = k_s * terms["J_s"] + k_c * terms["J_c"] + k_u * terms["J_u"]
    return total, gradient, terms, positions


def low_cost_and_gradient(
    inputs, guide, field: EsdfField, s0, config: LowMpcConfig, clamp: bool = False
) -> Tuple[float, np.ndarray]:
    """Weighted reference cost and its gradient with respect to the (3, M) inputs."""
    total, gradient, _, _ = _low_terms(inputs, guide, field, s0, config, clamp)
    return total, gradient


def low_cost_breakdown(inputs, guide, field: EsdfField, s0, config: LowMpcConfig, clamp: bool = False) -> Dict[str, float]:
    return _low_terms(inputs, guide, field, s0, config, clamp)[2]


@dataclass(frozen=True, eq=False)
class ReferenceTrajectory:
    """Knots r_0..r_M spaced ``dt`` apart in time, joined by a C1 cubic Hermite spline.

    Tangents follow the uniform Catmull-Rom rule: central differences inside,
    one-sided differences at both ends.
    """
    knots: np.ndarray
    dt: float
    degraded: bool = False
    report: Optional[OptimizeReport] = None
    _spline: Optional[CubicHermiteSpline] = dataclass_field(init=False, repr=False, default=None)

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float).reshape(-1, 3)
        if len(knots) == 0:
            raise ContractError("a reference needs at least one knot")
        object.__setattr__(self, "knots", knots)
        if len(knots) >= 2:
            times = np.arange(len(knots)) * self.dt
            tangents = np.empty_like(knots)
            tangents[1:-1] = (knots[2:] - knots[:-2]) / (2.0 * self.dt)
            tangents[0] = (knots[1] - knots[0]) / self.dt
            tangents[-1] = (knots[-1] - knots[-2]) / self.dt
            object.__setattr__(self, "_spline", CubicHermiteSpline(times, knots, tangents, axis=0))

    @property
    def horizon(self) -> int:
        return len(self.knots) - 1

    @property
    def duration(self) -> float:
        return self.horizon * self.dt

    def evaluate_many(self, thetas) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Positions, first and second derivatives at each theta, each (K, 3).

        Theta is clamped to [0, duration]; outside that interval the reference
        is constant so both derivatives are zero.
        """
        thetas = np.asarray(thetas, dtype=float).ravel()
        if self._spline is None:
            zeros = np.zeros((len(thetas), 3))
            return np.tile(self.knots[0], (len(thetas), 1)), zeros, zeros.copy()
        clamped = np.clip(thetas, 0.0, self.duration)
        inside = ((thetas >= 0.0) & (thetas <= self.duration))[:, None]
        position = self._spline(clamped)
        velocity = np.where(inside, self._spline(clamped, 1), 0.0)
        acceleration = np.where(inside, self._spline(clamped, 2), 0.0)
        return position, velocity, acceleration

    def evaluate(self, theta: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        p, v, a = self.evaluate_many([theta])
        return p[0], v[0], a[0]

    def sample(self, count: int) -> np.ndarray:
        return self.evaluate_many(np.linspace(0.0, self.duration, count))[0]


def eval_reference(reference: ReferenceTrajectory, theta: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    return reference.evaluate(theta)


def initial_inputs(guide: np.ndarray, s0, dt: float) -> np.ndarray:
    """Velocity inputs whose rollout from ``s0`` passes through guide points 1..M."""
    points = np.asarray(guide, dtype=float).reshape(-1, 3).copy()
    points[0] = np.asarray(s0, dtype=float)
    return (np.diff(points, axis=0) / dt).T


def solve_low_mpc(
    guide: GuidePath,
    field: EsdfField,
    s0,
    config: LowMpcConfig,
    options: Optional[OptimizeOptions] = None,
) -> ReferenceTrajectory:
    """Optimize the reference knots from ``s0`` along ``guide``.

    A guide of two points skips the optimization. A result that did not
    converge or whose knots still sit inside an obstacle is flagged degraded.
    """
    points = np.asarray(guide.points, dtype=float).reshape(-1, 3)
    s0 = np.asarray(s0, dtype=float).reshape(3)
    horizon = len(points) - 1
    if horizon == 0:
        return ReferenceTrajectory(s0[None, :], config.dt)
    if horizon == 1:
        return ReferenceTrajectory(np.vstack([s0, points[1]]), config.dt)

    x0 = initial_inputs(points, s0, config.dt)

    def objective(x: np.ndarray):
        try:
            cost, gradient = low_cost_and_gradient(x, points, field, s0, config, clamp=True)
        except (GridBoundsError, NonFiniteCostError):
            return math.inf, np.zeros_like(x)
        return cost, gradient.ravel()

    x, report = minimize(objective, x0.ravel(), options)
    knots = cached_batch_map(1, config.dt, horizon).apply_many(x.reshape(3, horizon), s0[:, None])[:, :, 0].T
    lowest = float(np.min(field.query_many(field.clamp(knots[1:])).values))
    degraded = not report.converged or lowest < 0.0
    if degraded:
        logger.warning(
            "reference degraded: %s after %d iterations, lowest knot clearance %.3f",
            report.termination.value, report.iterations, lowest,
        )
    else:
        logger.debug("reference solved in %d iterations, cost %.4g", report.iterations, report.cost)
    return ReferenceTrajectory(knots, config.dt, degraded=degraded, report=report)
