import os
import tempfile

# the service modules read these at import time
os.environ.setdefault("PLANNER_DB_URL", "sqlite://")
os.environ.setdefault("PLANNER_DATA_DIR", tempfile.mkdtemp(prefix="planner-test-"))

import numpy as np
import pytest

from adaptive_planner.config import MapSpec, PlannerConfig, Scenario
from adaptive_planner.services.esdf import VoxelGrid, build_esdf


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def config():
    return PlannerConfig()


def pillar_grid(resolution: float = 0.1) -> VoxelGrid:
    """4 m x 4 m x 2 m box with one vertical pillar of radius 0.3 m at (2, 2)."""
    dims = (int(round(4 / resolution)) + 1, int(round(4 / resolution)) + 1, int(round(2 / resolution)) + 1)
    grid = VoxelGrid.empty((0.0, 0.0, 0.0), resolution, dims)
    centers = grid.index_to_world(np.indices(dims).reshape(3, -1).T).reshape(dims + (3,))
    occupied = (centers[..., 0] - 2.0) ** 2 + (centers[..., 1] - 2.0) ** 2 <= 0.3 ** 2
    return grid.with_occupancy(occupied)


@pytest.fixture
def pillar():
    return pillar_grid()


@pytest.fixture
def pillar_field(pillar):
    return build_esdf(pillar)


@pytest.fixture
def free_field():
    return build_esdf(VoxelGrid.empty((0.0, 0.0, 0.0), 0.1, (61, 41, 21)))


def short_scenario(goal_x: float = 6.0, timeout: float = 15.0, name: str = "short") -> Scenario:
    return Scenario(
        name=name,
        map=MapSpec(generator="forest", params={"density": 0.0, "walls": False}, seed=0),
        start=(1.0, 2.5, 1.0),
        goal=(goal_x, 2.5, 1.0),
        planner={"sim": {"timeout": timeout}},
    )


@pytest.fixture
def short():
    return short_scenario()
