import logging

import numpy as np
import pytest
from numpy.testing import assert_allclose

from adaptive_planner.config import LowMpcConfig, OptimizeOptions
from adaptive_planner.errors import ContractError, GridBoundsError, NonFiniteCostError
from adaptive_planner.services.optimizer import check_gradient
from adaptive_planner.services.reference import (
    ReferenceTrajectory,
    clearance_terms,
    eval_reference,
    initial_inputs,
    low_cost_and_gradient,
    low_cost_breakdown,
    solve_low_mpc,
)
from adaptive_planner.services.search import GuidePath, resample

LOW = LowMpcConfig()


def grazing_guide() -> GuidePath:
    """Straight line passing 0.5 m from the pillar axis, inside the safe distance."""
    return resample([[0.5, 1.5, 1.0], [3.5, 1.5, 1.0]], LOW.guide_spacing)


def test_two_point_guide_is_returned_as_is(pillar_field):
    guide = GuidePath(np.array([[0.5, 0.5, 1.0], [1.3, 0.5, 1.0]]), 0.8)
    reference = solve_low_mpc(guide, pillar_field, guide.points[0], LOW)
    assert_allclose(reference.knots, guide.points)
    assert reference.report is None
    assert not reference.degraded


def test_single_point_guide(pillar_field):
    guide = GuidePath(np.array([[0.5, 0.5, 1.0]]), 0.8)
    reference = solve_low_mpc(guide, pillar_field, guide.points[0], LOW)
    assert reference.horizon == 0
    position, velocity, _ = reference.evaluate(1.0)
    assert_allclose(position, [0.5, 0.5, 1.0])
    assert_allclose(velocity, 0.0)


def test_straight_free_guide_is_reproduced(free_field):
    guide = resample([[0.5, 2.0, 1.0], [5.3, 2.0, 1.0]], LOW.guide_spacing)
    reference = solve_low_mpc(guide, free_field, guide.points[0], LOW)
    assert_allclose(reference.knots, guide.points, atol=1e-9)
    assert not reference.degraded
    terms = low_cost_breakdown(initial_inputs(guide.points, guide.points[0], LOW.dt), guide.points, free_field,
                               guide.points[0], LOW)
    assert terms["J_c"] == 0.0
    assert terms["J_s"] < 1e-20
    assert terms["J_u"] < 1e-20


def test_grazing_guide_is_pushed_outward(pillar_field):
    guide = grazing_guide()
    s0 = guide.points[0]
    before = low_cost_breakdown(initial_inputs(guide.points, s0, LOW.dt), guide.points, pillar_field, s0, LOW)
    reference = solve_low_mpc(guide, pillar_field, s0, LOW)
    after = low_cost_breakdown(initial_inputs(reference.knots, s0, LOW.dt), guide.points, pillar_field, s0, LOW)
    assert before["J_c"] > 0
    assert after["J_c"] < before["J_c"]
    middle = reference.knots[len(reference.knots) // 2]
    assert middle[1] < 1.5
    assert_allclose(reference.knots[0], s0)


def test_iteration_cap_flags_degraded(pillar_field, caplog):
    guide = grazing_guide()
    with caplog.at_level(logging.WARNING, logger="adaptive_planner.services.reference"):
        reference = solve_low_mpc(guide, pillar_field, guide.points[0], LOW, OptimizeOptions(max_iterations=1))
    assert reference.degraded
    assert not reference.report.converged
    assert "reference degraded" in caplog.text


def test_single_knot_below_threshold_contributes_square(pillar_field):
    point = np.array([2.5, 2.0, 1.0])
    c = pillar_field.value_at(pillar_field.grid.world_to_index(point))
    config = LowMpcConfig(weights=(0.0, 1.0, 0.0), c_thr=c + 0.5)
    s0 = np.array([2.5, 1.6, 1.0])
    guide = np.vstack([s0, point])
    inputs = initial_inputs(guide, s0, config.dt)
    cost, _ = low_cost_and_gradient(inputs, guide, pillar_field, s0, config)
    assert cost == pytest.approx(0.25, abs=1e-9)


def test_gradient_matches_finite_differences(pillar_field, rng):
    guide = grazing_guide()
    s0 = guide.points[0]
    config = LowMpcConfig(weights=(1.0, 10.0, 0.1))
    for _ in range(5):
        inputs = initial_inputs(guide.points, s0, config.dt) + rng.normal(0.0, 0.1, size=(3, len(guide) - 1))

        def objective(x):
            cost, gradient = low_cost_and_gradient(x, guide.points, pillar_field, s0, config)
            return cost, gradient.ravel()

        assert check_gradient(objective, inputs.ravel(), step=1e-5).max_error < 1e-4


def test_cost_rejects_bad_shapes(pillar_field):
    guide = grazing_guide().points
    with pytest.raises(ContractError):
        low_cost_and_gradient(np.zeros((3, 2)), guide, pillar_field, guide[0], LOW)
    with pytest.raises(ContractError):
        low_cost_and_gradient(np.zeros((3, 0)), guide[:1], pillar_field, guide[0], LOW)


def test_cost_outside_grid_raises_unless_clamped(pillar_field):
    s0 = np.array([3.5, 2.0, 1.0])
    guide = np.vstack([s0, [4.5, 2.0, 1.0]])
    inputs = initial_inputs(guide, s0, LOW.dt)
    with pytest.raises(GridBoundsError):
        low_cost_and_gradient(inputs, guide, pillar_field, s0, LOW)
    cost, gradient = low_cost_and_gradient(inputs, guide, pillar_field, s0, LOW, clamp=True)
    assert np.isfinite(cost)
    assert gradient.shape == (3, 1)


def test_non_finite_inputs_name_the_rollout(pillar_field):
    guide = grazing_guide().points
    inputs = initial_inputs(guide, guide[0], LOW.dt)
    inputs[1, 2] = np.nan
    with pytest.raises(NonFiniteCostError) as excinfo:
        low_cost_and_gradient(inputs, guide, pillar_field, guide[0], LOW)
    assert excinfo.value.term == "rollout"
    assert excinfo.value.step is not None


def test_clamped_coordinates_have_zero_derivative(pillar_field):
    terms = clearance_terms(pillar_field, [[-1.0, 2.0, 1.0]], c_thr=5.0, clamp=True)
    assert list(terms.free[0]) == [False, True, True]
    assert terms.penalty_gradient[0, 0] == 0.0
    assert_allclose(terms.hessians[0, 0], 0.0)


def test_collinear_knots_give_constant_velocity():
    knots = np.array([[0.0, 0.0, 1.0], [0.8, 0.4, 1.0], [1.6, 0.8, 1.0], [2.4, 1.2, 1.0]])
    reference = ReferenceTrajectory(knots, 0.4)
    _, velocity, acceleration = reference.evaluate_many(np.linspace(0.0, reference.duration, 13))
    assert_allclose(velocity, np.tile([2.0, 1.0, 0.0], (13, 1)), atol=1e-12)
    assert_allclose(acceleration, 0.0, atol=1e-10)


def test_reference_reproduces_knots_and_clamps():
    knots = np.array([[0.0, 0.0, 1.0], [1.0, 0.5, 1.0], [1.5, 1.5, 1.2], [1.5, 2.5, 1.0]])
    reference = ReferenceTrajectory(knots, 0.5)
    for k, knot in enumerate(knots):
        assert_allclose(eval_reference(reference, k * 0.5)[0], knot, atol=1e-12)
    position, velocity, acceleration = reference.evaluate(5.0)
    assert_allclose(position, knots[-1])
    assert_allclose(velocity, 0.0)
    assert_allclose(acceleration, 0.0)
    position, velocity, _ = reference.evaluate(-1.0)
    assert_allclose(position, knots[0])
    assert_allclose(velocity, 0.0)


def test_reference_is_c1_at_knots():
    knots = np.array([[0.0, 0.0, 1.0], [1.0, 0.5, 1.0], [1.5, 1.5, 1.2], [1.5, 2.5, 1.0]])
    reference = ReferenceTrajectory(knots, 0.5)
    for t in (0.5, 1.0):
        _, before, _ = reference.evaluate(t - 1e-9)
        _, after, _ = reference.evaluate(t + 1e-9)
        assert_allclose(before, after, atol=1e-6)
    assert reference.sample(7).shape == (7, 3)
