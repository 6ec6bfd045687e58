"""Benchmark map generators: forest, gate, loop and corridor strips.

Every generated map covers a 40 m x 5 m x 2 m strip at 0.1 m resolution,
optionally bounded by side walls. Generation is deterministic in
(generator, params, seed); maps whose start and goal end up disconnected are
redrawn from the same random stream.
"""
import logging
from typing import Dict, Optional, Tuple, Type

import numpy as np
from pydantic import Field, ValidationError
from scipy import ndimage

from ..config import MapSpec, StrictModel
from ..errors import ConfigError, MapGenerationError
from .esdf import VoxelGrid, read_map_file

logger = logging.getLogger(__name__)

MAX_RETRIES = 10
DEFAULT_START = (1.0, 2.5, 1.0)
DEFAULT_GOAL = (39.0, 2.5, 1.0)


class StripParams(StrictModel):
    length: float = Field(40.0, gt=0)
    width: float = Field(5.0, gt=0)
    height: float = Field(2.0, gt=0)
    resolution: float = Field(0.1, gt=0)
    walls: bool = True


class ForestParams(StripParams):
    density: float = Field(0.16, ge=0, description="obstacles per square meter of strip")
    radius: float = Field(0.2, gt=0)
    margin: float = Field(3.0, ge=0, description="obstacle-free distance at both ends (m)")


class GateParams(StripParams):
    position: float = 20.0
    thickness: float = Field(0.2, gt=0)
    opening_width: float = Field(0.8, gt=0)
    opening_bottom: float = Field(0.5, ge=0)
    opening_top: float = Field(1.5, gt=0)
    hidden_obstacle: bool = False
    hidden_radius: float = Field(0.2, gt=0)


class LoopParams(StripParams):
    position: float = 20.0
    thickness: float = Field(0.2, gt=0)
    inner_radius: float = Field(0.6, gt=0)
    outer_radius: float = Field(0.9, gt=0)


class CorridorParams(StripParams):
    start: float = 15.0
    end: float = 25.0
    corridor_width: float = Field(1.2, gt=0)


PARAMS: Dict[str, Type[StripParams]] = {
    "forest": ForestParams,
    "gate": GateParams,
    "loop": LoopParams,
    "corridor": CorridorParams,
}


def map_params(spec: MapSpec) -> StripParams:
    try:
        return PARAMS[spec.generator].model_validate(spec.params)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(part) for part in first["loc"])
        raise ConfigError("map.params", 0, f"{spec.generator}.{where}: {first['msg']}")


def _strip_grid(params: StripParams) -> Tuple[VoxelGrid, np.ndarray]:
    """Empty grid covering the strip plus a half-meter margin, and its cell centers."""
    res = params.resolution
    origin = np.array([-0.5, -0.5, 0.0])
    dims = (
        int(round((params.length + 1.0) / res)) + 1,
        int(round((params.width + 1.0) / res)) + 1,
        int(round(params.height / res)) + 1,
    )
    grid = VoxelGrid.empty(origin, res, dims)
    centers = np.stack(np.meshgrid(*(origin[k] + res * np.arange(dims[k]) for k in range(3)), indexing="ij"), axis=-1)
    return grid, centers


def wall_mask(params: StripParams, centers: np.ndarray) -> np.ndarray:
    if not params.walls:
        return np.zeros(centers.shape[:3], dtype=bool)
    y = centers[..., 1]
    eps = 1e-9
    return (y < -eps) | (y > params.width + eps)


def _cylinder(centers: np.ndarray, x: float, y: float, radius: float) -> np.ndarray:
    return (centers[..., 0] - x) ** 2 + (centers[..., 1] - y) ** 2 <= radius ** 2 + 1e-9


def _forest(params: ForestParams, centers: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    count = int(np.floor(params.density * params.length * params.width + 1e-9))
    occupied = np.zeros(centers.shape[:3], dtype=bool)
    lo, hi = params.margin, params.length - params.margin
    for _ in range(count):
        x = rng.uniform(lo, hi)
        y = rng.uniform(0.0, params.width)
        occupied |= _cylinder(centers, x, y, params.radius)
    return occupied


def _gate(params: GateParams, centers: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    x, y, z = centers[..., 0], centers[..., 1], centers[..., 2]
    eps = 1e-9
    mid = params.width / 2.0
    in_wall = np.abs(x - params.position) <= params.thickness / 2.0 + eps
    in_opening = (
        (np.abs(y - mid) <= params.opening_width / 2.0 + eps)
        & (z >= params.opening_bottom - eps)
        & (z <= params.opening_top + eps)
    )
    occupied = in_wall & ~in_opening
    if params.hidden_obstacle:
        behind = params.position + rng.uniform(1.0, 2.0)
        lateral = mid + rng.uniform(-0.6, 0.6)
        occupied |= _cylinder(centers, behind, lateral, params.hidden_radius)
    return occupied


def _loop(params: LoopParams, centers: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    x, y, z = centers[..., 0], centers[..., 1], centers[..., 2]
    radial = np.hypot(y - params.width / 2.0, z - params.height / 2.0)
    in_plate = np.abs(x - params.position) <= params.thickness / 2.0 + 1e-9
    return in_plate & (radial >= params.inner_radius - 1e-9) & (radial <= params.outer_radius + 1e-9)


def _corridor(params: CorridorParams, centers: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    x, y = centers[..., 0], centers[..., 1]
    along = (x >= params.start - 1e-9) & (x <= params.end + 1e-9)
    return along & (np.abs(y - params.width / 2.0) > params.corridor_width / 2.0 + 1e-9)


GENERATORS = {
    "forest": _forest,
    "gate": _gate,
    "loop": _loop,
    "corridor": _corridor,
}


def connected(grid: VoxelGrid, start, goal, clearance: float = 0.0) -> bool:
    """Whether start and goal share a 26-connected component of cells with ``clearance``."""
    free = ~grid.occupancy
    if clearance > 0 and grid.occupancy.any():
        free = ndimage.distance_transform_edt(free, sampling=(grid.resolution,) * 3) >= clearance
    labels, _ = ndimage.label(free, structure=np.ones((3, 3, 3), dtype=bool))
    a = labels[grid.cell_of(start)]
    b = labels[grid.cell_of(goal)]
    return a != 0 and a == b


def generate_map(
    spec: MapSpec,
    start=DEFAULT_START,
    goal=DEFAULT_GOAL,
    clearance: float = 0.3,
) -> VoxelGrid:
    """Occupancy grid for ``spec``; map files are read as-is without a connectivity check."""
    if spec.file is not None:
        return read_map_file(spec.file)

    params = map_params(spec)
    grid, centers = _strip_grid(params)
    walls = wall_mask(params, centers)
    rng = np.random.default_rng(spec.seed)
    build = GENERATORS[spec.generator]
    for attempt in range(MAX_RETRIES + 1):
        candidate = grid.with_occupancy(walls | build(params, centers, rng))
        if connected(candidate, start, goal, clearance):
            if attempt:
                logger.info("%s map (seed %d) connected after %d retries", spec.generator, spec.seed, attempt)
            return candidate
        logger.debug("%s map (seed %d) disconnected, redrawing", spec.generator, spec.seed)
    raise MapGenerationError(spec.generator, MAX_RETRIES)


def prior_occupancy(spec: MapSpec, grid: VoxelGrid) -> np.ndarray:
    """Occupancy known before flight: the side walls of generated strips, nothing for map files."""
    if spec.file is not None:
        return np.zeros(grid.dims, dtype=bool)
    params = map_params(spec)
    centers = grid.index_to_world(np.indices(grid.dims).reshape(3, -1).T).reshape(grid.dims + (3,))
    return wall_mask(params, centers) & grid.occupancy


def hazard_center(spec: MapSpec) -> Optional[np.ndarray]:
    """Landmark the zone statistics are measured around; None for forests and files."""
    if spec.file is not None or spec.generator == "forest":
        return None
    params = map_params(spec)
    mid = (params.width / 2.0, params.height / 2.0)
    if isinstance(params, (GateParams, LoopParams)):
        return np.array([params.position, *mid])
    if isinstance(params, CorridorParams):
        return np.array([(params.start + params.end) / 2.0, *mid])
    return None


def obstacle_count(spec: MapSpec) -> int:
    """Number of obstacles a forest spec places; zero for the other generators."""
    if spec.generator != "forest":
        return 0
    params = map_params(spec)
    return int(np.floor(params.density * params.length * params.width + 1e-9))
