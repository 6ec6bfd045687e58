"""Finite-difference verification of every cost term's analytic gradient."""
import logging
from typing import Callable, Dict, Tuple

import numpy as np

from .config import Bounds, PlannerConfig
from .errors import PlannerError
from .services.contouring import ORDER, high_cost_and_gradient, mpcc_state
from .services.esdf import EsdfField, VoxelGrid, build_esdf
from .services.integrator import cached_batch_map
from .services.optimizer import GradientCheck, check_gradient
from .services.reference import ReferenceTrajectory, low_cost_and_gradient

logger = logging.getLogger(__name__)

LOW_TERMS = ("J_s", "J_c", "J_u")
HIGH_TERMS = ("f_s", "f_p", "f_e", "f_c", "f_d")
TOLERANCE = 1e-3
FD_STEP = 1e-5
MAX_DRAWS = 200


def probe_field(resolution: float = 0.1) -> EsdfField:
    """10 m x 6 m x 3 m box with two vertical cylinders and a wall segment."""
    dims = (int(round(10 / resolution)) + 1, int(round(6 / resolution)) + 1, int(round(3 / resolution)) + 1)
    grid = VoxelGrid.empty((0.0, 0.0, 0.0), resolution, dims)
    centers = grid.index_to_world(np.indices(dims).reshape(3, -1).T).reshape(dims + (3,))
    x, y, z = centers[..., 0], centers[..., 1], centers[..., 2]
    occupied = (x - 4.0) ** 2 + (y - 2.5) ** 2 <= 0.3 ** 2
    occupied |= (x - 6.0) ** 2 + (y - 3.8) ** 2 <= 0.25 ** 2
    occupied |= (np.abs(x - 5.0) <= 0.1) & (y <= 1.5) & (z <= 2.0)
    return build_esdf(grid.with_occupancy(occupied))


def _flip_one(objective: Callable, x: np.ndarray) -> Callable:
    """Negate the largest gradient coordinate at ``x``."""
    index = int(np.argmax(np.abs(objective(x)[1])))

    def flipped(y: np.ndarray):
        cost, gradient = objective(y)
        gradient = np.array(gradient, dtype=float)
        gradient[index] = -gradient[index]
        return cost, gradient

    return flipped


def _inside(field: EsdfField, points: np.ndarray, margin: float = 0.2) -> bool:
    return bool(np.all(points >= field.valid_lower + margin) and np.all(points <= field.valid_upper - margin))


def _near_obstacle(field: EsdfField, points: np.ndarray, c_thr: float) -> bool:
    values = field.query_many(points).values
    return bool(np.any((values < c_thr) & (values > 0.05)))


def _low_case(field: EsdfField, config: PlannerConfig, rng: np.random.Generator):
    low = config.low_mpc
    horizon = low.horizon
    for _ in range(MAX_DRAWS):
        s0 = rng.uniform((2.5, 1.0, 0.5), (7.5, 5.0, 2.5))
        steps = rng.normal(0.0, 0.35, size=(horizon, 3))
        positions = s0 + np.cumsum(steps, axis=0)
        if not _inside(field, positions) or not _near_obstacle(field, positions, low.c_thr):
            continue
        guide = np.vstack([s0, positions + rng.normal(0.0, 0.2, size=positions.shape)])
        inputs = (np.diff(np.vstack([s0, positions]), axis=0) / low.dt).T
        return s0, guide, inputs
    raise PlannerError("could not draw a reference case near the obstacles")


def _high_case(field: EsdfField, config: PlannerConfig, rng: np.random.Generator):
    high = config.high_mpcc
    maps = cached_batch_map(ORDER, high.dt, high.horizon)
    for _ in range(MAX_DRAWS):
        position = rng.uniform((3.0, 1.5, 0.8), (7.0, 4.5, 2.2))
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        velocity = rng.uniform(0.5, 1.5) * direction
        s0 = mpcc_state(position, velocity, rng.normal(0.0, 0.5, size=3), theta=0.3, v_theta=rng.uniform(0.5, 1.0))
        inputs = rng.normal(0.0, 2.0, size=(4, high.horizon))
        inputs[3] *= 0.2
        states = maps.apply_many(inputs, s0)
        positions = states[:3, 1:, 0].T
        theta = states[3, 1:, 0]
        near = min(high.c_thr, high.risk_distance)
        if not _inside(field, positions) or not _near_obstacle(field, positions, near):
            continue
        knots = position + np.cumsum(rng.normal(0.0, 0.3, size=(9, 3)), axis=0)
        knots = np.vstack([position, knots])
        reference = ReferenceTrajectory(knots, 0.4)
        if not (0.05 < theta.min() and theta.max() < reference.duration - 0.05):
            continue
        return s0, inputs, reference
    raise PlannerError("could not draw a contouring case near the obstacles")


def _unit_weights(count: int, index: int) -> Tuple[float, ...]:
    weights = [0.0] * count
    weights[index] = 1.0
    return tuple(weights)


def gradient_suite(
    config: PlannerConfig,
    trials: int = 50,
    seed: int = 0,
    inject_sign_flip: bool = False,
) -> Dict[str, GradientCheck]:
    """Worst finite-difference check per cost term over ``trials`` random states near obstacles."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    field = probe_field()
    worst: Dict[str, GradientCheck] = {}

    def keep(term: str, result: GradientCheck) -> None:
        if term not in worst or result.max_error > worst[term].max_error:
            worst[term] = result

    # tight limits so the feasibility barriers are active at the drawn states
    tight = config.high_mpcc.limits.model_copy(update={
        "velocity": Bounds(min=-0.8, max=0.8),
        "acceleration": Bounds(min=-1.0, max=1.0),
        "jerk": Bounds(min=-2.0, max=2.0),
        "progress_velocity": Bounds(min=0.0, max=0.6),
    })

    for trial in range(trials):
        s0, guide, inputs = _low_case(field, config, rng)
        for k, term in enumerate(LOW_TERMS):
            low = config.low_mpc.model_copy(update={"weights": _unit_weights(3, k)})

            def objective(x, low=low):
                cost, gradient = low_cost_and_gradient(x, guide, field, s0, low)
                return cost, gradient.ravel()

            x = inputs.ravel()
            if inject_sign_flip:
                objective = _flip_one(objective, x)
            keep(term, check_gradient(objective, x, step=FD_STEP))

        s0, inputs, reference = _high_case(field, config, rng)
        for k, term in enumerate(HIGH_TERMS):
            update = {"weights": _unit_weights(5, k)}
            if term == "f_d":
                update["limits"] = tight
            high = config.high_mpcc.model_copy(update=update)

            def objective(x, high=high):
                cost, gradient = high_cost_and_gradient(x, reference, field, config.easa, s0, high)
                return cost, gradient.ravel()

            x = inputs.ravel()
            if inject_sign_flip:
                objective = _flip_one(objective, x)
            keep(term, check_gradient(objective, x, step=FD_STEP))
        logger.debug("gradient suite trial %d done", trial)

    return {term: worst[term] for term in LOW_TERMS + HIGH_TERMS}
