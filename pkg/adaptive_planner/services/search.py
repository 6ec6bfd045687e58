"""Guiding path search (grid A*) and uniform arc-length resampling."""
import heapq
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import ContractError, InvalidEndpointError, UnreachableError
from .esdf import EsdfField, VoxelGrid, build_esdf

logger = logging.getLogger(__name__)

Cell = Tuple[int, int, int]

NEIGHBORS = [
    (dx, dy, dz)
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dz in (-1, 0, 1)
    if (dx, dy, dz) != (0, 0, 0)
]


@dataclass(frozen=True, eq=False)
class GuidePath:
    points: np.ndarray
    spacing: float

    def __len__(self) -> int:
        return len(self.points)

    @property
    def length(self) -> float:
        return polyline_length(self.points)


def polyline_length(points: np.ndarray) -> float:
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum())


def traversable_mask(grid: VoxelGrid, field: EsdfField, clearance: float) -> np.ndarray:
    """Free cells whose ESDF distance is at least ``clearance``."""
    return ~grid.occupancy & (field.distance >= clearance)


def path_cost(grid: VoxelGrid, cells: Sequence[Cell]) -> float:
    cells = np.asarray(cells, dtype=float)
    if len(cells) < 2:
        return 0.0
    return float(grid.resolution * np.linalg.norm(np.diff(cells, axis=0), axis=1).sum())


def astar(
    grid: VoxelGrid,
    start,
    goal,
    clearance: float,
    field: Optional[EsdfField] = None,
) -> List[Cell]:
    """Minimal-cost 26-connected cell path from start to goal.

    Cells closer than ``clearance`` to an obstacle (by ESDF) are blocked. Ties on
    the open list break on (f, h, cell index) so paths are reproducible.
    """
    if field is None:
        field = build_esdf(grid)
    mask = traversable_mask(grid, field, clearance)

    start_cell = grid.cell_of(start)
    goal_cell = grid.cell_of(goal)
    if not mask[start_cell]:
        raise InvalidEndpointError("start", start)
    if not mask[goal_cell]:
        raise InvalidEndpointError("goal", goal)

    # a blocked border removes bounds checks from the inner loop
    padded = np.pad(mask, 1, constant_values=False)
    shape = padded.shape
    open_cells = padded.ravel(order="C").tobytes()
    stride_x, stride_y = shape[1] * shape[2], shape[2]
    res = grid.resolution
    moves = [
        (dx * stride_x + dy * stride_y + dz, res * math.sqrt(dx * dx + dy * dy + dz * dz))
        for dx, dy, dz in NEIGHBORS
    ]

    def flat(cell: Cell) -> int:
        return (cell[0] + 1) * stride_x + (cell[1] + 1) * stride_y + (cell[2] + 1)

    gx, gy, gz = (c + 1 for c in goal_cell)

    def heuristic(index: int) -> float:
        x, rem = divmod(index, stride_x)
        y, z = divmod(rem, stride_y)
        return res * math.sqrt((x - gx) ** 2 + (y - gy) ** 2 + (z - gz) ** 2)

    source, target = flat(start_cell), flat(goal_cell)
    g_score: Dict[int, float] = {source: 0.0}
    came_from: Dict[int, int] = {}
    closed = set()
    h0 = heuristic(source)
    heap = [(h0, h0, source)]
    expanded = 0

    while heap:
        _, _, current = heapq.heappop(heap)
        if current in closed:
            continue
        if current == target:
            break
        closed.add(current)
        expanded += 1
        g_current = g_score[current]
        for offset, cost in moves:
            neighbor = current + offset
            if not open_cells[neighbor] or neighbor in closed:
                continue
            tentative = g_current + cost
            if tentative < g_score.get(neighbor, math.inf):
                g_score[neighbor] = tentative
                came_from[neighbor] = current
                h = heuristic(neighbor)
                heapq.heappush(heap, (tentative + h, h, neighbor))
    else:
        raise UnreachableError(start_cell, goal_cell)

    logger.debug("A* expanded %d cells, cost %.3f", expanded, g_score[target])
    path = [target]
    while path[-1] != source:
        path.append(came_from[path[-1]])
    path.reverse()
    cells = []
    for index in path:
        x, rem = divmod(index, stride_x)
        y, z = divmod(rem, stride_y)
        cells.append((x - 1, y - 1, z - 1))
    return cells


def cells_to_world(grid: VoxelGrid, cells: Sequence[Cell]) -> np.ndarray:
    return grid.index_to_world(np.asarray(cells, dtype=float).reshape(-1, 3))


def resample(points, spacing: float) -> GuidePath:
    """Uniform arc-length resampling keeping both endpoints.

    Produces M + 1 points with M = ceil(length / spacing); only the last segment
    may be shorter than ``spacing``.
    """
    if spacing <= 0:
        raise ContractError(f"spacing must be positive, got {spacing}")
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        raise ContractError("cannot resample an empty path")

    segments = np.linalg.norm(np.diff(points, axis=0), axis=1)
    keep = np.concatenate([[True], segments > 0])
    points = points[keep]
    if len(points) < 2:
        return GuidePath(points[:1].copy(), spacing)

    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(points, axis=0), axis=1))])
    length = arc[-1]
    count = max(1, math.ceil(length / spacing - 1e-9))
    s = np.minimum(np.arange(count + 1) * spacing, length)
    s[-1] = length
    resampled = np.column_stack([np.interp(s, arc, points[:, k]) for k in range(3)])
    return GuidePath(resampled, spacing)


def snap_to_traversable(
    grid: VoxelGrid, field: EsdfField, position, clearance: float, radius: float = 1.0
) -> np.ndarray:
    """Center of the nearest traversable cell within ``radius`` of ``position``.

    Returns ``position`` unchanged when its own cell is traversable or nothing
    traversable lies within reach.
    """
    mask = traversable_mask(grid, field, clearance)
    center = np.asarray(grid.cell_of(position))
    if mask[tuple(center)]:
        return np.asarray(position, dtype=float)
    reach = int(math.ceil(radius / grid.resolution))
    lo = np.maximum(center - reach, 0)
    hi = np.minimum(center + reach + 1, grid.dims)
    window = mask[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    candidates = np.argwhere(window) + lo
    if len(candidates) == 0:
        return np.asarray(position, dtype=float)
    world = grid.index_to_world(candidates)
    best = int(np.argmin(np.linalg.norm(world - position, axis=1)))
    return world[best]
