"""Closed-loop episodes: two-rate replanning around an ideal triple-integrator vehicle.

Every tick the vehicle integrates the jerk of the current local plan, sensing
reveals nearby occupancy and the reference is checked against newly known
obstacles. The reference is replanned on a fixed period (or at once when it
collides with the known map); the local contouring plan every control period.
When no reference gets past a newly seen obstacle the vehicle holds position
and the replan is retried every control period.
"""
import logging
import math
import statistics
import time
from dataclasses import dataclass, field as dataclass_field
from enum import Enum
from io import StringIO
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import yaml

from ..config import PlannerConfig, Scenario, effective_config
from ..errors import InvalidEndpointError, PlannerError, UnreachableError
from . import risk
from .contouring import MpccSolution, mpcc_state, solve_high_mpcc
from .esdf import EsdfField, VoxelGrid, build_esdf, raycast_free
from .maps import generate_map, hazard_center, prior_occupancy
from .reference import ReferenceTrajectory, solve_low_mpc
from .search import GuidePath, astar, cells_to_world, resample, snap_to_traversable

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("t", "x", "y", "z", "vx", "vy", "vz", "ax", "ay", "az", "clearance", "eta")


class Outcome(str, Enum):
    GOAL = "goal"
    COLLISION = "collision"
    TIMEOUT = "timeout"
    OUT_OF_BOUNDS = "out_of_bounds"
    PLANNER_FAILURE = "planner_failure"


@dataclass
class ReplanEvent:
    t: float
    layer: str
    trigger: str
    solve_time: float
    converged: bool
    iterations: int


@dataclass
class FlightLog:
    rows: List[Tuple[float, ...]] = dataclass_field(default_factory=list)
    events: List[ReplanEvent] = dataclass_field(default_factory=list)

    def record(self, t: float, p, v, a, clearance: float, eta: float) -> None:
        self.rows.append((t, *map(float, p), *map(float, v), *map(float, a), float(clearance), float(eta)))

    def as_array(self) -> np.ndarray:
        return np.asarray(self.rows, dtype=float).reshape(-1, len(LOG_COLUMNS))

    @property
    def times(self) -> np.ndarray:
        return self.as_array()[:, 0]

    @property
    def positions(self) -> np.ndarray:
        return self.as_array()[:, 1:4]

    @property
    def velocities(self) -> np.ndarray:
        return self.as_array()[:, 4:7]

    @property
    def accelerations(self) -> np.ndarray:
        return self.as_array()[:, 7:10]

    @property
    def clearance(self) -> np.ndarray:
        return self.as_array()[:, 10]

    @property
    def eta(self) -> np.ndarray:
        return self.as_array()[:, 11]

    def to_csv(self) -> str:
        buffer = StringIO()
        np.savetxt(buffer, self.as_array(), fmt="%.6f", delimiter=",", header=",".join(LOG_COLUMNS), comments="")
        return buffer.getvalue()


@dataclass
class Metrics:
    scenario: str
    seed: int
    easa_enabled: bool
    outcome: Outcome
    success: bool
    flight_time: float
    path_length: float
    min_clearance: float  # capped at sim.sensing_radius
    max_speed: float
    max_axis_speed: float
    max_axis_acceleration: float
    hazard_min_speed: Optional[float] = None
    open_max_speed: Optional[float] = None
    approach_speed: Optional[float] = None
    depart_speed: Optional[float] = None
    reference_replans: int = 0
    collision_replans: int = 0
    local_replans: int = 0
    degraded_references: int = 0

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {}
        for key, value in self.__dict__.items():
            if isinstance(value, Enum):
                value = value.value
            elif isinstance(value, float):
                value = round(value, 6)
            data[key] = value
        return data


def dump_metrics(metrics: Metrics) -> str:
    return yaml.safe_dump(metrics.to_dict(), sort_keys=False)


def timing_summary(log: FlightLog) -> Dict[str, Dict[str, float]]:
    """Per-layer solve-time statistics in milliseconds (wall clock, not reproducible)."""
    summary = {}
    for layer in ("reference", "local"):
        times = [event.solve_time * 1e3 for event in log.events if event.layer == layer]
        if times:
            summary[layer] = {
                "count": len(times),
                "mean_ms": statistics.fmean(times),
                "median_ms": statistics.median(times),
                "max_ms": max(times),
            }
    return summary


def dump_timing(log: FlightLog) -> str:
    return yaml.safe_dump(timing_summary(log), sort_keys=False)


class _Sensor:
    """Known occupancy: everything at once, or prior walls plus obstacles within range."""

    def __init__(self, truth: VoxelGrid, prior: np.ndarray, radius: Optional[float]):
        self.truth = truth
        self.radius = radius
        if radius is None:
            self.known = truth.occupancy.copy()
            self.hidden = np.empty((0, 3), dtype=int)
        else:
            self.known = prior.copy()
            self.hidden = np.argwhere(truth.occupancy & ~prior)
        self._hidden_world = truth.index_to_world(self.hidden)

    def reveal(self, position: np.ndarray) -> bool:
        if self.radius is None or len(self.hidden) == 0:
            return False
        near = np.sum((self._hidden_world - position) ** 2, axis=1) <= self.radius ** 2
        if not near.any():
            return False
        cells = self.hidden[near]
        self.known[cells[:, 0], cells[:, 1], cells[:, 2]] = True
        self.hidden = self.hidden[~near]
        self._hidden_world = self._hidden_world[~near]
        return True

    def grid(self) -> VoxelGrid:
        return self.truth.with_occupancy(self.known.copy())


def _guide_window(grid: VoxelGrid, field: EsdfField, position, goal, config: PlannerConfig) -> GuidePath:
    low = config.low_mpc
    start = snap_to_traversable(grid, field, position, low.guide_clearance)
    cells = astar(grid, start, goal, low.guide_clearance, field)
    points = cells_to_world(grid, cells)
    points[0] = position
    if len(points) > 1:
        points[-1] = goal
    else:
        points = np.vstack([points, goal])
    guide = resample(points, low.guide_spacing)
    return GuidePath(guide.points[:low.horizon + 1], guide.spacing)


def _reference_collides(reference: ReferenceTrajectory, grid: VoxelGrid) -> bool:
    """Whether any cell swept by the sampled reference polyline is occupied."""
    samples = reference.sample(max(2, 4 * reference.horizon + 1))
    inside = [grid.contains(point) for point in samples]
    for a, b, a_inside, b_inside in zip(samples, samples[1:], inside, inside[1:]):
        if a_inside and b_inside:
            if not raycast_free(grid, a, b):
                return True
        elif (a_inside and grid.is_occupied(a)) or (b_inside and grid.is_occupied(b)):
            return True
    return False


def _integrate(state: np.ndarray, jerk: np.ndarray, h: float) -> np.ndarray:
    """Exact constant-jerk step of (p, v, a) rows for every dimension."""
    p, v, a = state[:, 0], state[:, 1], state[:, 2]
    out = np.empty_like(state)
    out[:, 0] = p + v * h + a * h * h / 2.0 + jerk * h ** 3 / 6.0
    out[:, 1] = v + a * h + jerk * h * h / 2.0
    out[:, 2] = a + jerk * h
    return out


def _band_means(speeds: np.ndarray, clearance: np.ndarray, alignment: np.ndarray,
                c_thr: float, band: float) -> Tuple[Optional[float], Optional[float]]:
    """Mean speeds approaching (beta < 0) and departing (beta > 0), over clearance bands holding both."""
    close = clearance < c_thr
    bands = np.floor(clearance / band).astype(int)
    approach, depart = [], []
    for b in np.unique(bands[close]):
        in_band = close & (bands == b)
        toward = in_band & (alignment < 0)
        away = in_band & (alignment > 0)
        if toward.any() and away.any():
            approach.append(float(np.mean(speeds[toward])))
            depart.append(float(np.mean(speeds[away])))
    if not approach:
        return None, None
    return float(np.mean(approach)), float(np.mean(depart))


def compute_metrics(
    log: FlightLog,
    scenario: Scenario,
    config: PlannerConfig,
    truth_field: EsdfField,
    outcome: Outcome,
) -> Metrics:
    data = log.as_array()
    positions, velocities, accelerations = data[:, 1:4], data[:, 4:7], data[:, 7:10]
    speeds = np.linalg.norm(velocities, axis=1)
    steps = np.linalg.norm(np.diff(positions, axis=0), axis=1)
    clearance = data[:, 10]

    metrics = Metrics(
        scenario=scenario.name,
        seed=scenario.map.seed,
        easa_enabled=config.high_mpcc.weights[2] > 0,
        outcome=outcome,
        success=outcome == Outcome.GOAL,
        flight_time=float(data[-1, 0]),
        path_length=float(steps.sum()),
        min_clearance=float(min(clearance.min(), config.sim.sensing_radius)),
        max_speed=float(speeds.max()),
        max_axis_speed=float(np.abs(velocities).max()),
        max_axis_acceleration=float(np.abs(accelerations).max()),
    )

    center = hazard_center(scenario.map)
    if center is not None:
        zone = np.abs(positions[:, 0] - center[0]) <= config.sim.hazard_radius
        if zone.any():
            metrics.hazard_min_speed = float(speeds[zone].min())
        if (~zone).any():
            metrics.open_max_speed = float(speeds[~zone].max())

    batch = truth_field.query_many(truth_field.clamp(positions))
    alignment = risk.beta_many(velocities, batch.gradients, config.easa)
    metrics.approach_speed, metrics.depart_speed = _band_means(
        speeds, clearance, alignment, config.high_mpcc.risk_distance, config.sim.clearance_band
    )

    for event in log.events:
        if event.layer == "reference":
            metrics.reference_replans += 1
            metrics.collision_replans += event.trigger == "collision"
            metrics.degraded_references += not event.converged
        else:
            metrics.local_replans += 1
    return metrics


def run_episode(
    scenario: Scenario, config: Optional[PlannerConfig] = None, easa: bool = True
) -> Tuple[FlightLog, Metrics]:
    """Fly ``scenario`` to the goal, a collision, a planner failure or the timeout.

    ``easa=False`` zeroes the risk-penalty weight after scenario overrides apply.
    """
    config = effective_config(config or PlannerConfig(), scenario)
    if not easa:
        config = config.without_easa()
    sim, low, high = config.sim, config.low_mpc, config.high_mpcc
    start = np.asarray(scenario.start, dtype=float)
    goal = np.asarray(scenario.goal, dtype=float)

    truth = generate_map(scenario.map, start, goal, clearance=low.guide_clearance)
    truth_field = build_esdf(truth)
    radius = None
    if scenario.sensing.mode == "range":
        radius = scenario.sensing.radius or sim.sensing_radius
    sensor = _Sensor(truth, prior_occupancy(scenario.map, truth), radius)
    sensor.reveal(start)
    known = sensor.grid()
    field = build_esdf(known) if radius is not None else truth_field
    field_stale = False
    unchecked = False
    # a collision replan found no way through; hold and retry every control period
    blocked = False

    ticks_per_step = max(1, int(round(high.dt / sim.tick)))
    ticks_per_control = max(1, int(round(sim.control_period / sim.tick)))
    ticks_per_reference = max(1, int(round(sim.reference_period / sim.tick)))
    max_ticks = int(math.ceil(sim.timeout / sim.tick))

    # rows x, y, z, theta; columns p, v, a
    state = mpcc_state(start)
    log = FlightLog()
    reference: Optional[ReferenceTrajectory] = None
    plan: Optional[MpccSolution] = None
    plan_tick = 0
    last_reference_tick = 0
    outcome = Outcome.TIMEOUT

    def clearance_and_eta(s: np.ndarray) -> Tuple[float, float]:
        q = truth_field.query(truth_field.clamp(s[:3, 0]))
        b = risk.beta(s[:3, 1], q.gradient, config.easa)
        return q.value, float(risk.eta(b, config.easa))

    def replan_reference(tick: int, trigger: str) -> bool:
        nonlocal reference, plan, blocked
        started = time.perf_counter()
        position = state[:3, 0].copy()
        try:
            guide = _guide_window(known, field, position, goal, config)
            candidate = solve_low_mpc(guide, field, position, low, config.optimizer)
        except (InvalidEndpointError, UnreachableError) as e:
            if reference is None:
                logger.warning("reference replan (%s) at t=%.2f failed: %s", trigger, tick * sim.tick, e)
                return False
            if trigger == "collision" or blocked:
                logger.warning(
                    "reference replan (%s) at t=%.2f failed: %s; holding position", trigger, tick * sim.tick, e
                )
                if not blocked:
                    reference = ReferenceTrajectory(position[None], low.dt)
                    state[3] = 0.0
                    plan = None
                    blocked = True
            else:
                logger.warning("reference replan (%s) at t=%.2f failed: %s", trigger, tick * sim.tick, e)
            return True
        blocked = False
        reference = candidate
        slope = np.linalg.norm(reference.evaluate(0.0)[1])
        speed = np.linalg.norm(state[:3, 1])
        state[3] = (0.0, speed / slope if slope > 1e-9 else 0.0, 0.0)
        plan = None
        report = reference.report
        log.events.append(ReplanEvent(
            t=tick * sim.tick,
            layer="reference",
            trigger=trigger,
            solve_time=time.perf_counter() - started,
            converged=not reference.degraded,
            iterations=report.iterations if report is not None else 0,
        ))
        return True

    def replan_local(tick: int) -> None:
        nonlocal plan, plan_tick
        shift = (tick - plan_tick) // ticks_per_step if plan is not None else 0
        plan = solve_high_mpcc(reference, field, state, plan, high, config.easa, shift=shift)
        plan_tick = tick
        log.events.append(ReplanEvent(
            t=tick * sim.tick,
            layer="local",
            trigger="control",
            solve_time=plan.solve_time,
            converged=plan.converged,
            iterations=plan.iterations,
        ))

    c0, eta0 = clearance_and_eta(state)
    log.record(0.0, state[:3, 0], state[:3, 1], state[:3, 2], c0, eta0)

    try:
        for tick in range(max_ticks):
            if tick % ticks_per_control == 0 and field_stale:
                known = sensor.grid()
                field = build_esdf(known)
                field_stale = False

            trigger = None
            if reference is None:
                trigger = "initial"
            elif tick - last_reference_tick >= ticks_per_reference:
                trigger = "periodic"
            elif unchecked:
                unchecked = False
                if _reference_collides(reference, sensor.grid()):
                    trigger = "collision"
                    if field_stale:
                        known = sensor.grid()
                        field = build_esdf(known)
                        field_stale = False
            elif blocked and tick % ticks_per_control == 0:
                trigger = "collision"
            if trigger is not None:
                if not replan_reference(tick, trigger):
                    outcome = Outcome.PLANNER_FAILURE
                    break
                last_reference_tick = tick

            if plan is None or tick - plan_tick >= ticks_per_control:
                replan_local(tick)

            step = min((tick - plan_tick) // ticks_per_step, high.horizon - 1)
            state = _integrate(state, plan.inputs[:, step], sim.tick)
            t = (tick + 1) * sim.tick

            c, eta_value = clearance_and_eta(state)
            log.record(t, state[:3, 0], state[:3, 1], state[:3, 2], c, eta_value)

            if sensor.reveal(state[:3, 0]):
                field_stale = True
                unchecked = True
            if not truth.contains(state[:3, 0]):
                outcome = Outcome.OUT_OF_BOUNDS
                break
            if c < sim.collision_distance:
                outcome = Outcome.COLLISION
                break
            if np.linalg.norm(state[:3, 0] - goal) <= sim.goal_tolerance:
                outcome = Outcome.GOAL
                break
    except PlannerError as e:
        logger.error("episode %s aborted: %s", scenario.name, e)
        outcome = Outcome.PLANNER_FAILURE

    metrics = compute_metrics(log, scenario, config, truth_field, outcome)
    logger.info(
        "episode %s (seed %d, easa %s): %s after %.2fs, min clearance %.3f",
        scenario.name, scenario.map.seed, "on" if metrics.easa_enabled else "off",
        outcome.value, metrics.flight_time, metrics.min_clearance,
    )
    return log, metrics


@dataclass
class AblationResult:
    easa_on: Tuple[FlightLog, Metrics]
    easa_off: Tuple[FlightLog, Metrics]

    def comparison(self) -> Dict[str, Any]:
        on, off = self.easa_on[1], self.easa_off[1]
        return {
            "success": {"on": on.success, "off": off.success},
            "hazard_min_speed": {"on": on.hazard_min_speed, "off": off.hazard_min_speed},
            "approach_speed": {"on": on.approach_speed, "off": off.approach_speed},
            "flight_time": {"on": round(on.flight_time, 6), "off": round(off.flight_time, 6)},
        }


def ablate_easa(scenario: Scenario, config: Optional[PlannerConfig] = None) -> AblationResult:
    """The same episode with and without the risk-weighted speed penalty."""
    config = config or PlannerConfig()
    return AblationResult(
        easa_on=run_episode(scenario, config),
        easa_off=run_episode(scenario, config, easa=False),
    )


@dataclass
class PlanSnapshot:
    guide: GuidePath
    reference: ReferenceTrajectory
    solution: MpccSolution


def plan_snapshot(scenario: Scenario, config: Optional[PlannerConfig] = None) -> PlanSnapshot:
    """One pass of all three layers from the scenario start on the fully known map."""
    config = effective_config(config or PlannerConfig(), scenario)
    start = np.asarray(scenario.start, dtype=float)
    goal = np.asarray(scenario.goal, dtype=float)
    grid = generate_map(scenario.map, start, goal, clearance=config.low_mpc.guide_clearance)
    field = build_esdf(grid)
    guide = _guide_window(grid, field, start, goal, config)
    reference = solve_low_mpc(guide, field, start, config.low_mpc, config.optimizer)
    solution = solve_high_mpcc(reference, field, mpcc_state(start), None, config.high_mpcc, config.easa)
    return PlanSnapshot(guide, reference, solution)
