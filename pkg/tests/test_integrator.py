import numpy as np
import pytest
from numpy.testing import assert_allclose

from adaptive_planner.errors import ContractError
from adaptive_planner.services.integrator import (
    IntegratorModel,
    batch_map,
    cached_batch_map,
    first_bad_step,
    integrator_matrices,
    rollout,
    state_jacobian_rows,
)


@pytest.mark.parametrize("dt", [0.05, 0.1, 1.0])
def test_third_order_matrices(dt):
    a, b = integrator_matrices(3, dt)
    assert_allclose(a, [[1, dt, dt ** 2 / 2], [0, 1, dt], [0, 0, 1]], rtol=0, atol=1e-15)
    assert_allclose(b, [dt ** 3 / 6, dt ** 2 / 2, dt], rtol=0, atol=1e-15)


@pytest.mark.parametrize("dt", [0.05, 0.1, 1.0])
def test_first_order_matrices(dt):
    a, b = integrator_matrices(1, dt)
    assert_allclose(a, [[1.0]])
    assert_allclose(b, [dt])


def test_doubling_dt_substitutes_exactly():
    a1, b1 = integrator_matrices(3, 0.1)
    a2, b2 = integrator_matrices(3, 0.2)
    # two steps of the same input equal one step of twice the duration
    assert_allclose(a1 @ a1, a2, atol=1e-15)
    assert_allclose(a1 @ b1 + b1, b2, atol=1e-15)


def test_rollout_examples():
    states = rollout(IntegratorModel(3, 1.0, 1), [0, 0, 0], [6.0])
    assert_allclose(states[0], [1.0, 3.0, 6.0])

    states = rollout(IntegratorModel(3, 0.05, 2), [0, 0, 0], [1.0, 1.0])
    assert states[1, 0] == pytest.approx(8 * 0.05 ** 3 / 6)

    states = rollout(IntegratorModel(1, 0.1, 5), [2.5], np.zeros(5))
    assert_allclose(states, np.full((5, 1), 2.5))


def test_rollout_matches_constant_jerk_integration():
    # a constant jerk j from rest gives p = j t^3 / 6 exactly
    states = rollout(IntegratorModel(3, 0.05, 40), [0, 0, 0], np.full(40, 2.0))
    t = 2.0
    assert_allclose(states[-1], [2.0 * t ** 3 / 6, 2.0 * t ** 2 / 2, 2.0 * t], rtol=1e-12)


def test_rollout_length_mismatch():
    with pytest.raises(ContractError):
        rollout(IntegratorModel(3, 0.1, 4), [0, 0, 0], [1.0, 2.0])


def test_model_rejects_bad_parameters():
    with pytest.raises(ContractError):
        IntegratorModel(0, 0.1, 4)
    with pytest.raises(ContractError):
        IntegratorModel(3, 0.0, 4)
    with pytest.raises(ContractError):
        IntegratorModel(3, 0.1, 0)


def test_single_step_blocks():
    dt = 0.1
    a_d, b_d = integrator_matrices(3, dt)
    maps = batch_map(IntegratorModel(3, dt, 1))
    assert maps.A.shape == (6, 1)
    assert_allclose(maps.A[:3, 0], 0.0)
    assert_allclose(maps.A[3:, 0], b_d)
    assert_allclose(maps.B, np.vstack([np.eye(3), a_d]))


def test_first_order_map_is_lower_triangular():
    maps = batch_map(IntegratorModel(1, 0.1, 3))
    expected = np.vstack([np.zeros((1, 3)), np.tril(np.full((3, 3), 0.1))])
    assert_allclose(maps.A, expected, atol=1e-15)


@pytest.mark.parametrize("order", [1, 3])
def test_batch_matches_rollout(rng, order):
    for _ in range(1000):
        horizon = int(rng.integers(1, 41))
        dt = float(rng.choice([0.05, 0.1, 0.4]))
        model = IntegratorModel(order, dt, horizon)
        maps = cached_batch_map(order, dt, horizon)
        s0 = rng.normal(size=order)
        inputs = rng.normal(0.0, 5.0, size=horizon)
        states = maps.apply(inputs, s0)
        assert_allclose(states[0], s0)
        assert_allclose(states[1:], rollout(model, s0, inputs), rtol=1e-10, atol=1e-8)


def test_first_bad_step():
    assert first_bad_step(np.ones((4, 3))) is None
    values = np.ones((4, 3))
    values[2, 1] = np.nan
    assert first_bad_step(values) == 3
    assert first_bad_step([1.0, np.inf]) == 2


def test_apply_many_rolls_each_dimension(rng):
    maps = cached_batch_map(3, 0.05, 40)
    inputs = rng.normal(size=(4, 40))
    s0 = rng.normal(size=(4, 3))
    states = maps.apply_many(inputs, s0)
    assert states.shape == (4, 41, 3)
    for k in range(4):
        assert_allclose(states[k], maps.apply(inputs[k], s0[k]), atol=1e-12)


def test_adjoint_inner_product_identity(rng):
    maps = cached_batch_map(3, 0.1, 12)
    inputs = rng.normal(size=(3, 12))
    weights = rng.normal(size=(3, 13, 3))
    states = maps.apply_many(inputs, np.zeros((3, 3)))
    assert np.sum(weights * states) == pytest.approx(np.sum(maps.adjoint(weights) * inputs), rel=1e-12)


def test_state_jacobian_rows():
    dt = 0.1
    maps = batch_map(IntegratorModel(3, dt, 5))
    row = state_jacobian_rows(maps, 1, 2)
    assert_allclose(row, [dt, 0, 0, 0, 0])
    assert_allclose(state_jacobian_rows(maps, 2, 0)[:2], [7 * dt ** 3 / 6, dt ** 3 / 6])
    with pytest.raises(ContractError):
        state_jacobian_rows(maps, 1, 3)
    with pytest.raises(ContractError):
        state_jacobian_rows(maps, 0, 0)


def test_cached_maps_are_shared():
    assert cached_batch_map(3, 0.05, 40) is cached_batch_map(3, 0.05, 40)
    assert cached_batch_map(3, 0.05, 40) is not cached_batch_map(3, 0.1, 40)
