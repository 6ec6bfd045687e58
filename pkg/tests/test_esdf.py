import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.spatial import cKDTree

from adaptive_planner.errors import ConfigError, GridBoundsError
from adaptive_planner.services.esdf import (
    SENTINEL_SCALE,
    EsdfField,
    VoxelGrid,
    build_esdf,
    query,
    raycast_free,
    read_map_file,
    traverse_cells,
    write_map_file,
)


def brute_force(grid: VoxelGrid) -> np.ndarray:
    cells = np.indices(grid.dims).reshape(3, -1).T * grid.resolution
    occupied = grid.occupancy.ravel()
    pairwise = np.linalg.norm(cells[:, None, :] - cells[None, :, :], axis=2)
    to_occupied = np.where(occupied[None, :], pairwise, np.inf).min(axis=1)
    to_free = np.where(~occupied[None, :], pairwise, np.inf).min(axis=1)
    return np.where(occupied, grid.resolution - to_free, to_occupied).reshape(grid.dims)


def random_grid(rng, max_side: int, resolution: float = 0.1) -> VoxelGrid:
    dims = tuple(int(n) for n in rng.integers(2, max_side + 1, size=3))
    occupancy = rng.random(dims) < rng.uniform(0.05, 0.5)
    if occupancy.all():
        occupancy.flat[0] = False
    if not occupancy.any():
        occupancy.flat[-1] = True
    return VoxelGrid(rng.normal(size=3), resolution, occupancy)


def test_matches_brute_force_on_random_grids(rng):
    for _ in range(20):
        grid = random_grid(rng, 9)
        assert_allclose(build_esdf(grid).distance, brute_force(grid), atol=1e-12)


@pytest.mark.slow
def test_matches_exact_nearest_neighbour_on_large_grids(rng):
    for _ in range(50):
        grid = random_grid(rng, 32)
        cells = np.indices(grid.dims).reshape(3, -1).T * grid.resolution
        occupied = grid.occupancy.ravel()
        to_occupied, _ = cKDTree(cells[occupied]).query(cells)
        to_free, _ = cKDTree(cells[~occupied]).query(cells)
        expected = np.where(occupied, grid.resolution - to_free, to_occupied).reshape(grid.dims)
        assert_allclose(build_esdf(grid).distance, expected, atol=1e-12)


def test_shifting_the_origin_shifts_the_field(pillar, rng):
    offset = rng.normal(size=3)
    field = build_esdf(pillar)
    moved = build_esdf(VoxelGrid(pillar.origin + offset, pillar.resolution, pillar.occupancy))
    assert np.array_equal(field.distance, moved.distance)
    points = rng.uniform(field.valid_lower + 1e-6, field.valid_upper - 1e-6, size=(200, 3))
    assert_allclose(moved.query_many(points + offset).values, field.query_many(points).values, atol=1e-9)


def test_shifting_obstacles_by_whole_cells_shifts_the_distances(rng):
    for _ in range(20):
        pattern = rng.random((4, 4, 4)) < 0.4
        pattern[0, 0, 0] = True
        first, second = (rng.integers(1, 12, size=3) for _ in range(2))
        grids = []
        for corner in (first, second):
            occupancy = np.zeros((18, 18, 18), dtype=bool)
            occupancy[corner[0]:corner[0] + 4, corner[1]:corner[1] + 4, corner[2]:corner[2] + 4] = pattern
            grids.append(build_esdf(VoxelGrid(np.zeros(3), 0.1, occupancy)).distance)
        # cells of the first grid that also exist in the second once moved by second - first
        shift = second - first
        src = tuple(slice(max(0, -s), 18 - max(0, s)) for s in shift)
        dst = tuple(slice(max(0, s), 18 - max(0, -s)) for s in shift)
        assert_allclose(grids[1][dst], grids[0][src], atol=1e-12)


def test_face_neighbours_differ_by_at_most_one_cell(rng):
    for _ in range(50):
        grid = random_grid(rng, 12)
        distance = build_esdf(grid).distance
        for axis in range(3):
            steps = np.abs(np.diff(distance, axis=axis))
            assert np.all(steps <= grid.resolution + 1e-12)


def test_single_obstacle_distances():
    occupancy = np.zeros((5, 5, 5), dtype=bool)
    occupancy[2, 2, 2] = True
    field = build_esdf(VoxelGrid(np.zeros(3), 1.0, occupancy))
    assert field.value_at((2, 2, 2)) == pytest.approx(0.0)
    assert field.value_at((3, 2, 2)) == pytest.approx(1.0)
    assert field.value_at((3, 3, 3)) == pytest.approx(np.sqrt(3.0))


def test_all_free_grid_uses_sentinel():
    grid = VoxelGrid.empty(np.zeros(3), 0.5, (4, 6, 3))
    field = build_esdf(grid)
    assert np.all(field.distance == SENTINEL_SCALE * grid.diagonal)


def test_all_occupied_grid_is_zero():
    grid = VoxelGrid(np.zeros(3), 0.5, np.ones((3, 3, 3), dtype=bool))
    assert np.all(build_esdf(grid).distance == 0.0)


def test_interior_cells_are_non_positive(pillar_field, pillar):
    assert np.all(pillar_field.distance[pillar.occupancy] <= 0.0)
    assert np.all(pillar_field.distance[~pillar.occupancy] > 0.0)


def test_query_reproduces_node_values(pillar_field, rng):
    dims = np.asarray(pillar_field.grid.dims)
    for _ in range(50):
        index = rng.integers(1, dims - 1)
        position = pillar_field.grid.index_to_world(index)
        assert query(pillar_field, position).value == pytest.approx(pillar_field.value_at(index), abs=1e-12)


def test_linear_field_is_reproduced_exactly():
    grid = VoxelGrid.empty((0.0, 0.0, 0.0), 0.2, (8, 7, 6))
    slope = np.array([0.3, -0.7, 0.5])
    centers = grid.index_to_world(np.indices(grid.dims).reshape(3, -1).T)
    field = EsdfField(grid, (centers @ slope + 1.0).reshape(grid.dims))
    for point in ([0.53, 0.41, 0.33], [1.01, 0.97, 0.77], [0.25, 0.9, 0.2]):
        result = field.query(point)
        assert result.value == pytest.approx(np.dot(slope, point) + 1.0, abs=1e-12)
        assert_allclose(result.gradient, slope, atol=1e-12)
        assert_allclose(result.hessian, np.zeros((3, 3)), atol=1e-10)


def away_from_cell_boundaries(field: EsdfField, rng, count: int, h: float) -> np.ndarray:
    points = []
    lower, upper = field.valid_lower, field.valid_upper
    while len(points) < count:
        p = rng.uniform(lower + 2 * h, upper - 2 * h)
        t = (p - field.grid.origin) / field.grid.resolution
        if np.all(np.abs(t - np.rint(t)) * field.grid.resolution > 2 * h):
            points.append(p)
    return np.asarray(points)


def test_gradient_and_hessian_match_finite_differences(pillar_field, rng):
    h = 1e-6
    for p in away_from_cell_boundaries(pillar_field, rng, 30, h):
        result = pillar_field.query(p)
        for axis in range(3):
            step = np.zeros(3)
            step[axis] = h
            forward, backward = pillar_field.query(p + step), pillar_field.query(p - step)
            assert (forward.value - backward.value) / (2 * h) == pytest.approx(result.gradient[axis], abs=1e-6)
            numeric = (forward.gradient - backward.gradient) / (2 * h)
            assert_allclose(result.hessian[axis], numeric, atol=1e-4)
        assert_allclose(result.second_derivative, np.diag(result.hessian))


def test_query_many_matches_single_queries(pillar_field, rng):
    points = rng.uniform(pillar_field.valid_lower, pillar_field.valid_upper, size=(20, 3))
    batch = pillar_field.query_many(points)
    for k, p in enumerate(points):
        single = pillar_field.query(p)
        assert batch.values[k] == pytest.approx(single.value)
        assert_allclose(batch.gradients[k], single.gradient)


def test_query_outside_valid_box_raises(pillar_field):
    with pytest.raises(GridBoundsError) as excinfo:
        pillar_field.query([-0.5, 1.0, 1.0])
    assert excinfo.value.coordinate[0] == -0.5
    clamped = pillar_field.clamp(np.array([[-0.5, 1.0, 1.0]]))
    assert np.all(clamped[0] >= pillar_field.valid_lower)


def test_cell_of_outside_grid_raises(pillar):
    with pytest.raises(GridBoundsError):
        pillar.cell_of([10.0, 0.0, 0.0])


def test_traverse_cells_along_axis(pillar):
    cells = list(traverse_cells(pillar, [0.0, 0.5, 0.5], [0.5, 0.5, 0.5]))
    assert cells == [(i, 5, 5) for i in range(6)]


def test_raycast(pillar):
    assert raycast_free(pillar, [0.5, 0.5, 1.0], [3.5, 0.5, 1.0])
    assert not raycast_free(pillar, [0.5, 2.0, 1.0], [3.5, 2.0, 1.0])
    with pytest.raises(GridBoundsError):
        raycast_free(pillar, [0.5, 0.5, 1.0], [9.0, 0.5, 1.0])


def test_map_file_round_trip(tmp_path, pillar):
    path = tmp_path / "pillar.map"
    write_map_file(path, pillar)
    header = path.read_text().splitlines()[:4]
    assert header[0] == "occupancy-grid 1"
    assert header[3] == "dims 41 41 21"
    loaded = read_map_file(path)
    assert np.array_equal(loaded.occupancy, pillar.occupancy)
    assert_allclose(loaded.origin, pillar.origin)
    assert loaded.resolution == pillar.resolution


def test_malformed_map_file_reports_line(tmp_path):
    path = tmp_path / "bad.map"
    path.write_text("occupancy-grid 1\norigin 0 0 0\nresolution 0.1\ndims 2 1 1\nruns 1\n1:x\n")
    with pytest.raises(ConfigError) as excinfo:
        read_map_file(path)
    assert excinfo.value.line == 6


def test_map_file_with_wrong_cell_count(tmp_path):
    path = tmp_path / "short.map"
    path.write_text("occupancy-grid 1\norigin 0 0 0\nresolution 0.1\ndims 2 2 1\nruns 1\n0:3\n")
    with pytest.raises(ConfigError):
        read_map_file(path)
