"""Occupancy grids, Euclidean signed distance fields and their smooth queries.

Cell ``i`` of an axis is centered at ``origin + i * resolution`` and covers half
a cell on either side. Distances are interpolated with a tensor-product
Catmull-Rom cubic, which reproduces node values and is C1 across cells.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Tuple, Union

import numpy as np
from scipy import ndimage

from ..errors import ConfigError, ContractError, GridBoundsError

logger = logging.getLogger(__name__)

# all-free fields report this multiple of the grid diagonal everywhere
SENTINEL_SCALE = 10.0

MAP_FILE_MAGIC = "occupancy-grid"
MAP_FILE_VERSION = 1
RUNS_PER_LINE = 16


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    origin: np.ndarray
    resolution: float
    occupancy: np.ndarray

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=float).reshape(3)
        occupancy = np.asarray(self.occupancy, dtype=bool)
        if occupancy.ndim != 3 or min(occupancy.shape) < 1:
            raise ContractError(f"occupancy must be a non-empty 3D array, got shape {occupancy.shape}")
        if not self.resolution > 0:
            raise ContractError(f"resolution must be positive, got {self.resolution}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "resolution", float(self.resolution))
        object.__setattr__(self, "occupancy", occupancy)

    @classmethod
    def empty(cls, origin, resolution: float, dims: Tuple[int, int, int]) -> "VoxelGrid":
        return cls(origin, resolution, np.zeros(dims, dtype=bool))

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(n) for n in self.occupancy.shape)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(np.asarray(self.dims) * self.resolution))

    @property
    def lower(self) -> np.ndarray:
        """World corner of the grid's covered box."""
        return self.origin - 0.5 * self.resolution

    @property
    def upper(self) -> np.ndarray:
        return self.origin + (np.asarray(self.dims) - 0.5) * self.resolution

    def index_to_world(self, index) -> np.ndarray:
        return self.origin + np.asarray(index, dtype=float) * self.resolution

    def world_to_index(self, position) -> np.ndarray:
        return np.rint((np.asarray(position, dtype=float) - self.origin) / self.resolution).astype(int)

    def contains(self, position) -> bool:
        p = np.asarray(position, dtype=float)
        return bool(np.all(p >= self.lower) and np.all(p < self.upper))

    def cell_of(self, position) -> Tuple[int, int, int]:
        if not self.contains(position):
            raise GridBoundsError(position)
        index = np.clip(self.world_to_index(position), 0, np.asarray(self.dims) - 1)
        return tuple(int(i) for i in index)

    def is_occupied(self, position) -> bool:
        return bool(self.occupancy[self.cell_of(position)])

    def with_occupancy(self, occupancy: np.ndarray) -> "VoxelGrid":
        return VoxelGrid(self.origin, self.resolution, occupancy)


@dataclass(frozen=True)
class EsdfQuery:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray

    @property
    def second_derivative(self) -> np.ndarray:
        """Per-axis second derivative d2c/dmu2."""
        return np.diag(self.hessian).copy()


@dataclass(frozen=True)
class EsdfBatch:
    values: np.ndarray
    gradients: np.ndarray
    hessians: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, k: int) -> EsdfQuery:
        return EsdfQuery(float(self.values[k]), self.gradients[k], self.hessians[k])


def _catmull_rom(t: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Weights of the four stencil nodes and their first/second t-derivatives."""
    t2 = t * t
    t3 = t2 * t
    w = 0.5 * np.stack([-t3 + 2 * t2 - t, 3 * t3 - 5 * t2 + 2, -3 * t3 + 4 * t2 + t, t3 - t2], axis=-1)
    dw = 0.5 * np.stack([-3 * t2 + 4 * t - 1, 9 * t2 - 10 * t, -9 * t2 + 8 * t + 1, 3 * t2 - 2 * t], axis=-1)
    ddw = 0.5 * np.stack([-6 * t + 4, 18 * t - 10, -18 * t + 8, 6 * t - 2], axis=-1)
    return w, dw, ddw


def _valid_index_range(n: int) -> Tuple[float, float]:
    if n >= 3:
        return 1.0, float(n - 2)
    if n == 2:
        return 0.0, 1.0
    return -0.5, 0.5


@dataclass(frozen=True, eq=False)
class EsdfField:
    grid: VoxelGrid
    distance: np.ndarray

    @property
    def valid_lower(self) -> np.ndarray:
        lo = np.array([_valid_index_range(n)[0] for n in self.grid.dims])
        return self.grid.origin + lo * self.grid.resolution

    @property
    def valid_upper(self) -> np.ndarray:
        hi = np.array([_valid_index_range(n)[1] for n in self.grid.dims])
        return self.grid.origin + hi * self.grid.resolution

    def clamp(self, points: np.ndarray) -> np.ndarray:
        """Clip points into the box where queries are valid."""
        return np.clip(np.asarray(points, dtype=float), self.valid_lower, self.valid_upper)

    def value_at(self, index) -> float:
        return float(self.distance[tuple(index)])

    def query(self, position) -> EsdfQuery:
        return self.query_many(np.asarray(position, dtype=float).reshape(1, 3))[0]

    def query_many(self, points: np.ndarray) -> EsdfBatch:
        """Interpolated distance, gradient and Hessian at each row of ``points``."""
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        lower, upper = self.valid_lower, self.valid_upper
        outside = np.any((points < lower - 1e-12) | (points > upper + 1e-12), axis=1)
        if outside.any():
            raise GridBoundsError(points[np.argmax(outside)], "query outside interpolation bounds")

        res = self.grid.resolution
        dims = np.asarray(self.grid.dims)
        u = (points - self.grid.origin) / res
        base = np.clip(np.floor(u), 0, np.maximum(dims - 2, 0)).astype(int)
        t = u - base
        offsets = np.arange(-1, 3)
        # stencil indices per axis, clamped at the grid edge: (K, 3, 4)
        idx = np.clip(base[:, :, None] + offsets[None, None, :], 0, (dims - 1)[None, :, None])
        block = self.distance[
            idx[:, 0, :, None, None], idx[:, 1, None, :, None], idx[:, 2, None, None, :]
        ]

        w, dw, ddw = (np.stack(parts, axis=1) for parts in zip(*(_catmull_rom(t[:, a]) for a in range(3))))
        dw = dw / res
        ddw = ddw / (res * res)

        values = np.einsum("ka,kb,kc,kabc->k", w[:, 0], w[:, 1], w[:, 2], block)
        gradients = np.stack([
            np.einsum("ka,kb,kc,kabc->k", dw[:, 0], w[:, 1], w[:, 2], block),
            np.einsum("ka,kb,kc,kabc->k", w[:, 0], dw[:, 1], w[:, 2], block),
            np.einsum("ka,kb,kc,kabc->k", w[:, 0], w[:, 1], dw[:, 2], block),
        ], axis=1)

        hessians = np.empty((len(points), 3, 3))
        for i in range(3):
            for j in range(i, 3):
                factors = [w[:, 0], w[:, 1], w[:, 2]]
                if i == j:
                    factors[i] = ddw[:, i]
                else:
                    factors[i] = dw[:, i]
                    factors[j] = dw[:, j]
                h = np.einsum("ka,kb,kc,kabc->k", *factors, block)
                hessians[:, i, j] = h
                hessians[:, j, i] = h
        return EsdfBatch(values, gradients, hessians)


def build_esdf(grid: VoxelGrid) -> EsdfField:
    """Exact Euclidean distance transform over cell centers.

    Free cells hold the distance to the nearest occupied center; occupied cells
    hold ``resolution - d_free`` which is zero on the obstacle boundary and
    negative deeper inside.
    """
    occupied = grid.occupancy
    if not occupied.any():
        sentinel = SENTINEL_SCALE * grid.diagonal
        logger.debug("grid has no occupied cells, using sentinel distance %.3f", sentinel)
        return EsdfField(grid, np.full(occupied.shape, sentinel))
    if occupied.all():
        return EsdfField(grid, np.zeros(occupied.shape))

    sampling = (grid.resolution,) * 3
    outside = ndimage.distance_transform_edt(~occupied, sampling=sampling)
    inside = ndimage.distance_transform_edt(occupied, sampling=sampling)
    distance = np.where(occupied, grid.resolution - inside, outside)
    return EsdfField(grid, distance)


def query(field: EsdfField, position) -> EsdfQuery:
    return field.query(position)


def traverse_cells(grid: VoxelGrid, a, b) -> Iterator[Tuple[int, int, int]]:
    """Cells crossed by the segment a-b, in order (integer grid traversal)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    for point in (a, b):
        if not grid.contains(point):
            raise GridBoundsError(point, "ray endpoint outside grid")

    dims = np.asarray(grid.dims)
    # continuous coordinates in which cell i spans [i, i + 1)
    ga = (a - grid.origin) / grid.resolution + 0.5
    gb = (b - grid.origin) / grid.resolution + 0.5
    cell = np.clip(np.floor(ga).astype(int), 0, dims - 1)
    end = np.clip(np.floor(gb).astype(int), 0, dims - 1)
    delta = gb - ga
    step = np.sign(delta).astype(int)

    t_max = np.full(3, np.inf)
    t_delta = np.full(3, np.inf)
    for axis in range(3):
        if delta[axis] != 0.0:
            boundary = cell[axis] + (1 if step[axis] > 0 else 0)
            t_max[axis] = (boundary - ga[axis]) / delta[axis]
            t_delta[axis] = 1.0 / abs(delta[axis])

    yield tuple(int(c) for c in cell)
    remaining = int(np.abs(end - cell).sum())
    for _ in range(remaining):
        axis = int(np.argmin(t_max))
        cell[axis] += step[axis]
        t_max[axis] += t_delta[axis]
        yield tuple(int(c) for c in cell)


def raycast_free(grid: VoxelGrid, a, b) -> bool:
    """True iff every cell traversed by the segment a-b is free."""
    occupancy = grid.occupancy
    return not any(occupancy[cell] for cell in traverse_cells(grid, a, b))


def write_map_file(path: Union[str, Path], grid: VoxelGrid) -> None:
    """Write the header + run-length occupancy format documented in docs/formats.md."""
    flat = grid.occupancy.ravel(order="C").astype(np.uint8)
    starts = np.concatenate([[0], np.flatnonzero(flat[1:] != flat[:-1]) + 1])
    lengths = np.diff(np.concatenate([starts, [flat.size]]))
    runs = [f"{int(flat[s])}:{int(n)}" for s, n in zip(starts, lengths)]

    lines = [
        f"{MAP_FILE_MAGIC} {MAP_FILE_VERSION}",
        "origin " + " ".join(repr(float(c)) for c in grid.origin),
        f"resolution {float(grid.resolution)!r}",
        "dims " + " ".join(str(n) for n in grid.dims),
        f"runs {len(runs)}",
    ]
    lines += [" ".join(runs[i:i + RUNS_PER_LINE]) for i in range(0, len(runs), RUNS_PER_LINE)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_map_file(path: Union[str, Path]) -> VoxelGrid:
    source = str(path)
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise ConfigError(source, 0, f"cannot read: {e.strerror}")

    def header(lineno: int, key: str, count: int):
        if lineno >= len(lines):
            raise ConfigError(source, lineno + 1, f"missing '{key}' line")
        fields = lines[lineno].split()
        if not fields or fields[0] != key or len(fields) != count + 1:
            raise ConfigError(source, lineno + 1, f"expected '{key}' followed by {count} value(s)")
        return fields[1:]

    magic = header(0, MAP_FILE_MAGIC, 1)
    if magic[0] != str(MAP_FILE_VERSION):
        raise ConfigError(source, 1, f"unsupported map file version {magic[0]}")
    try:
        origin = [float(v) for v in header(1, "origin", 3)]
        resolution = float(header(2, "resolution", 1)[0])
        dims = tuple(int(v) for v in header(3, "dims", 3))
        n_runs = int(header(4, "runs", 1)[0])
    except ValueError as e:
        raise ConfigError(source, 1, f"malformed header value: {e}")

    values, lengths = [], []
    for lineno in range(5, len(lines)):
        for token in lines[lineno].split():
            value, sep, length = token.partition(":")
            if not sep or value not in ("0", "1") or not length.isdigit():
                raise ConfigError(source, lineno + 1, f"malformed run '{token}'")
            values.append(value == "1")
            lengths.append(int(length))
    if len(values) != n_runs:
        raise ConfigError(source, 5, f"header announces {n_runs} runs, found {len(values)}")
    total = int(np.prod(dims))
    if sum(lengths) != total:
        raise ConfigError(source, 4, f"runs cover {sum(lengths)} cells, dims need {total}")

    flat = np.repeat(np.asarray(values, dtype=bool), lengths)
    return VoxelGrid(np.asarray(origin), resolution, flat.reshape(dims, order="C"))
