"""Local contouring layer over the decoupled triple integrators x, y, z and theta.

The cost is ``l1 f_s + l2 f_p + l3 f_e + l4 f_c + l5 f_d``:

* ``f_s`` tracking of the reference point at progress theta,
* ``f_p`` progress reward ``-dt * sum(v_theta)``,
* ``f_e`` risk-weighted speed penalty ``eta(beta) F_c(c) (|v| - v_thr)^2`` with
  ``F_c`` read at ``risk_distance``,
* ``f_c`` collision penalty ``sum F_c(c)`` read at ``c_thr``,
* ``f_d`` one-sided cubic barriers on v, a, j per axis and on v_theta.

States are stored as (4, N+1, 3): dimension, step, derivative level.
"""
import logging
import math
import time
from functools import lru_cache
from dataclasses import dataclass, field as dataclass_field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from ..config import Bounds, EasaParams, HighMpccConfig, OptimizeOptions
from ..errors import ContractError, GridBoundsError, NonFiniteCostError
from . import risk
from .esdf import EsdfField
from .integrator import cached_batch_map, first_bad_step
from .optimizer import Preconditioner, Termination, minimize
from .reference import ReferenceTrajectory, clearance_terms

logger = logging.getLogger(__name__)

TERMS = ("f_s", "f_p", "f_e", "f_c", "f_d")
DIMENSIONS = 4
ORDER = 3
GRAM_REGULARIZATION = 1e-3


def mpcc_state(position, velocity=(0.0, 0.0, 0.0), acceleration=(0.0, 0.0, 0.0),
               theta: float = 0.0, v_theta: float = 0.0, a_theta: float = 0.0) -> np.ndarray:
    """Full (4, 3) initial state; rows are x, y, z, theta and columns p, v, a."""
    s0 = np.zeros((DIMENSIONS, ORDER))
    s0[:3, 0] = position
    s0[:3, 1] = velocity
    s0[:3, 2] = acceleration
    s0[3] = (theta, v_theta, a_theta)
    return s0


def _bounds(bounds: Union[Bounds, Sequence[float]]) -> Tuple[float, float]:
    if isinstance(bounds, Bounds):
        return bounds.min, bounds.max
    lo, hi = bounds
    if lo > hi:
        raise ContractError(f"bounds [{lo}, {hi}] are not ordered")
    return float(lo), float(hi)


def _barrier(values: np.ndarray, lo: float, hi: float) -> Tuple[np.ndarray, np.ndarray]:
    below = values < lo
    above = values > hi
    low_gap = values - lo
    high_gap = values - hi
    penalty = np.where(below, -low_gap ** 3, np.where(above, high_gap ** 3, 0.0))
    slope = np.where(below, -3.0 * low_gap ** 2, np.where(above, 3.0 * high_gap ** 2, 0.0))
    return penalty, slope


def feasibility_penalty(values, bounds: Union[Bounds, Sequence[float]]) -> float:
    """Sum of one-sided cubic barriers: zero inside [min, max], cubic outside."""
    lo, hi = _bounds(bounds)
    penalty, _ = _barrier(np.asarray(values, dtype=float), lo, hi)
    return float(np.sum(penalty))


def progress_coupling(theta: float, reference: ReferenceTrajectory) -> Tuple[np.ndarray, np.ndarray]:
    """Reference point at ``theta`` and its derivative along the reference."""
    position, slope, _ = reference.evaluate(theta)
    return position, slope


def _check_term(name: str, per_step: np.ndarray) -> float:
    step = first_bad_step(per_step)
    if step is not None:
        raise NonFiniteCostError(name, step)
    return float(np.sum(per_step))


def _high_terms(inputs, reference: ReferenceTrajectory, field: EsdfField, easa: EasaParams,
                s0, config: HighMpccConfig, clamp: bool):
    horizon, dt = config.horizon, config.dt
    u = np.asarray(inputs, dtype=float).reshape(DIMENSIONS, -1)
    if u.shape[1] != horizon:
        raise ContractError(f"expected {horizon} inputs per dimension, got {u.shape[1]}")
    s0 = np.asarray(s0, dtype=float).reshape(DIMENSIONS, ORDER)
    if not np.all(np.isfinite(s0)):
        raise ContractError("initial state must be finite")

    maps = cached_batch_map(ORDER, dt, horizon)
    states = maps.apply_many(u, s0)
    step = first_bad_step(np.moveaxis(states[:, 1:], 1, 0))
    if step is not None:
        raise NonFiniteCostError("rollout", step)

    p = states[:3, 1:, 0].T
    v = states[:3, 1:, 1].T
    a = states[:3, 1:, 2].T
    j = u[:3].T
    theta = states[3, 1:, 0]
    v_theta = states[3, 1:, 1]
    l_s, l_p, l_e, l_c, l_d = config.weights

    # tracking
    rho, rho_slope, _ = reference.evaluate_many(theta)
    error = p - rho
    f_s_steps = np.sum(error * error, axis=1)
    grad_p = 2.0 * l_s * error
    grad_theta = -2.0 * l_s * np.einsum("ki,ki->k", error, rho_slope)

    # progress
    f_p_steps = -dt * v_theta
    grad_v_theta = np.full(horizon, -l_p * dt)

    # collision
    clearance = clearance_terms(field, p, config.c_thr, clamp=clamp)
    f_c_steps = clearance.penalty
    grad_p += l_c * clearance.penalty_gradient

    # risk-weighted speed
    speed = np.sqrt(np.sum(v * v, axis=1) + config.speed_smoothing ** 2)
    excess = speed - config.v_thr
    beta = risk.beta_many(v, clearance.gradients, easa)
    weight = risk.eta(beta, easa)
    hazard, hazard_gradient = clearance.below(config.risk_distance)
    f_e_steps = weight * hazard * excess ** 2
    grad_v = np.zeros_like(v)
    if l_e > 0 and (hazard > 0).any():
        d_beta_v, d_beta_p = risk.beta_partials_many(v, clearance.gradients, clearance.hessians, easa)
        d_eta = risk.eta_derivative_wrt_beta(beta, easa)
        shared = (d_eta * hazard * excess ** 2)[:, None]
        grad_p += l_e * (shared * d_beta_p + (weight * excess ** 2)[:, None] * hazard_gradient)
        grad_v += l_e * (shared * d_beta_v + (2.0 * weight * hazard * excess / speed)[:, None] * v)

    # feasibility
    limits = config.limits
    pen_v, slope_v = _barrier(v, limits.velocity.min, limits.velocity.max)
    pen_a, slope_a = _barrier(a, limits.acceleration.min, limits.acceleration.max)
    pen_j, slope_j = _barrier(j, limits.jerk.min, limits.jerk.max)
    pen_t, slope_t = _barrier(v_theta, limits.progress_velocity.min, limits.progress_velocity.max)
    f_d_steps = pen_v.sum(axis=1) + pen_a.sum(axis=1) + pen_j.sum(axis=1) + pen_t
    grad_v += l_d * slope_v
    grad_a = l_d * slope_a
    grad_v_theta += l_d * slope_t

    terms = {
        "f_s": _check_term("f_s", f_s_steps),
        "f_p": _check_term("f_p", f_p_steps),
        "f_e": _check_term("f_e", f_e_steps),
        "f_c": _check_term("f_c", f_c_steps),
        "f_d": _check_term("f_d", f_d_steps),
    }
    total = weighted_total(terms, config.weights)

    state_gradient = np.zeros_like(states)
    state_gradient[:3, 1:, 0] = grad_p.T
    state_gradient[:3, 1:, 1] = grad_v.T
    state_gradient[:3, 1:, 2] = grad_a.T
    state_gradient[3, 1:, 0] = grad_theta
    state_gradient[3, 1:, 1] = grad_v_theta
    gradient = maps.adjoint(state_gradient)
    gradient[:3] += l_d * slope_j.T
    return total, gradient, terms, states


def weighted_total(terms: Dict[str, float], weights: Sequence[float]) -> float:
    total = 0.0
    for name, weight in zip(TERMS, weights):
        total += weight * terms[name]
    return total


def high_cost_and_gradient(
    inputs,
    reference: ReferenceTrajectory,
    field: EsdfField,
    easa: EasaParams,
    s0,
    config: HighMpccConfig,
    clamp: bool = False,
) -> Tuple[float, np.ndarray]:
    """Weighted contouring cost and its exact gradient over the (4, N) jerk inputs."""
    total, gradient, _, _ = _high_terms(inputs, reference, field, easa, s0, config, clamp)
    return total, gradient


def high_cost_breakdown(inputs, reference: ReferenceTrajectory, field: EsdfField, easa: EasaParams,
                        s0, config: HighMpccConfig, clamp: bool = False) -> Dict[str, float]:
    return _high_terms(inputs, reference, field, easa, s0, config, clamp)[2]


@dataclass
class MpccSolution:
    inputs: np.ndarray
    states: np.ndarray
    breakdown: Dict[str, float]
    weights: Tuple[float, ...]
    total: float
    iterations: int
    converged: bool
    termination: Termination
    solve_time: float
    infeasible_start: bool = False
    trace: List[Dict[str, float]] = dataclass_field(default_factory=list)

    @property
    def positions(self) -> np.ndarray:
        return self.states[:3, :, 0].T

    @property
    def velocities(self) -> np.ndarray:
        return self.states[:3, :, 1].T

    @property
    def accelerations(self) -> np.ndarray:
        return self.states[:3, :, 2].T

    @property
    def progress(self) -> np.ndarray:
        return self.states[3, :, 0]

    @property
    def progress_velocity(self) -> np.ndarray:
        return self.states[3, :, 1]


@lru_cache(maxsize=8)
def _position_gram_inverse(dt: float, horizon: int) -> np.ndarray:
    """Inverse of ``P^T P + mu I`` where ``P`` maps one dimension's jerks to positions p_1..p_N."""
    positions = cached_batch_map(ORDER, dt, horizon).A[ORDER::ORDER]
    gram = positions.T @ positions
    gram += GRAM_REGULARIZATION * np.trace(gram) / horizon * np.eye(horizon)
    return np.linalg.inv(gram)


def tracking_preconditioner(reference: ReferenceTrajectory, s0, config: HighMpccConfig) -> Preconditioner:
    """Inverse Hessian of the tracking term, block diagonal over x, y, z and theta.

    The jerk-to-position map spans many orders of magnitude across the horizon;
    solving against its Gram matrix equalizes the early and late inputs. The
    theta block is scaled by the squared reference slope at the current progress.
    """
    s0 = np.asarray(s0, dtype=float).reshape(DIMENSIONS, ORDER)
    slope = float(np.linalg.norm(reference.evaluate(s0[3, 0])[1]))
    curvature = 2.0 * max(config.weights[0], 1e-3) * np.array([1.0, 1.0, 1.0, max(slope * slope, 0.25)])
    blocks = _position_gram_inverse(config.dt, config.horizon)[None] / curvature[:, None, None]

    def apply(vector: np.ndarray) -> np.ndarray:
        return np.einsum("dij,dj->di", blocks, vector.reshape(DIMENSIONS, -1)).ravel()

    return apply


def initial_inputs(s0, config: HighMpccConfig) -> np.ndarray:
    """Cold start: no spatial jerk, progress speed ramped to half its maximum."""
    s0 = np.asarray(s0, dtype=float).reshape(DIMENSIONS, ORDER)
    inputs = np.zeros((DIMENSIONS, config.horizon))
    target = 0.5 * config.limits.progress_velocity.max
    change = target - s0[3, 1]
    ramp = max(1, config.horizon // 4)
    jerk = change / (ramp * config.dt) ** 2
    inputs[3, :ramp] = jerk
    inputs[3, ramp:2 * ramp] = -jerk
    return inputs


def shift_inputs(inputs: np.ndarray, steps: int) -> np.ndarray:
    """Drop the first ``steps`` inputs of every dimension and pad with zeros."""
    inputs = np.asarray(inputs, dtype=float)
    shifted = np.zeros_like(inputs)
    steps = max(0, int(steps))
    if steps < inputs.shape[1]:
        shifted[:, :inputs.shape[1] - steps] = inputs[:, steps:]
    return shifted


def solve_high_mpcc(
    reference: ReferenceTrajectory,
    field: EsdfField,
    s0,
    warm_start: Optional[MpccSolution],
    config: HighMpccConfig,
    easa: Optional[EasaParams] = None,
    options: Optional[OptimizeOptions] = None,
    shift: int = 0,
) -> MpccSolution:
    """Minimize the contouring cost from ``s0``.

    ``warm_start`` inputs are shifted by ``shift`` steps; without one the cold
    start of ``initial_inputs`` is used. ``options`` default to ``config.solver``.
    Planned positions are read from the ESDF clipped into its valid box, so the
    cost is defined everywhere.
    """
    easa = easa or EasaParams()
    s0 = np.asarray(s0, dtype=float).reshape(DIMENSIONS, ORDER)
    if warm_start is not None:
        x0 = shift_inputs(warm_start.inputs, shift)
    else:
        x0 = initial_inputs(s0, config)
    started = time.perf_counter()
    trace: List[Dict[str, float]] = []

    def objective(x: np.ndarray):
        try:
            cost, gradient = high_cost_and_gradient(x, reference, field, easa, s0, config, clamp=True)
        except (GridBoundsError, NonFiniteCostError):
            return math.inf, np.zeros_like(x)
        return cost, gradient.ravel()

    callback = None
    if config.trace:
        def callback(x: np.ndarray, cost: float) -> None:
            terms = high_cost_breakdown(x, reference, field, easa, s0, config, clamp=True)
            trace.append({"iteration": len(trace) + 1, "cost": cost, **terms})

    preconditioner = tracking_preconditioner(reference, s0, config)
    x, report = minimize(
        objective, x0.ravel(), options or config.solver, callback=callback, preconditioner=preconditioner
    )
    inputs = x.reshape(DIMENSIONS, config.horizon)
    total, _, terms, states = _high_terms(inputs, reference, field, easa, s0, config, clamp=True)
    start_clearance = float(field.query(field.clamp(s0[:3, 0])).value)
    solution = MpccSolution(
        inputs=inputs,
        states=states,
        breakdown=terms,
        weights=tuple(config.weights),
        total=total,
        iterations=report.iterations,
        converged=report.converged,
        termination=report.termination,
        solve_time=time.perf_counter() - started,
        infeasible_start=start_clearance <= 0.0,
        trace=trace,
    )
    if not solution.converged:
        logger.debug("contouring solve stopped on %s after %d iterations", report.termination.value, report.iterations)
    if solution.infeasible_start:
        logger.warning("contouring solve started inside an obstacle (clearance %.3f)", start_clearance)
    return solution


def dump_solution(solution: MpccSolution) -> str:
    """Human-readable YAML summary of a solution, including the per-iteration trace if recorded."""
    document: Dict[str, Any] = {
        "total": float(solution.total),
        "weights": [float(w) for w in solution.weights],
        "breakdown": {name: float(solution.breakdown[name]) for name in TERMS},
        "iterations": int(solution.iterations),
        "converged": bool(solution.converged),
        "termination": solution.termination.value,
        "solve_time": float(solution.solve_time),
        "infeasible_start": bool(solution.infeasible_start),
        "terminal_state": {
            "position": [float(c) for c in solution.positions[-1]],
            "velocity": [float(c) for c in solution.velocities[-1]],
            "progress": float(solution.progress[-1]),
            "progress_velocity": float(solution.progress_velocity[-1]),
        },
    }
    if solution.trace:
        document["trace"] = [{key: float(value) for key, value in row.items()} for row in solution.trace]
    return yaml.safe_dump(document, sort_keys=False)
