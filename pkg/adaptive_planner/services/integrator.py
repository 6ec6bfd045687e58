"""Discrete d-th order integrator algebra shared by both optimization layers.

Each spatial axis (and the progress dimension) is an independent scalar-input
chain ``s_{i+1} = A_d s_i + B_d u_i`` with the input held constant over ``dt``.
States are stacked as ``S = [s_0, s_1, ..., s_H]`` so that ``S = A U + B s_0``.
"""
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Optional, Tuple

import numpy as np

from ..errors import ContractError


def integrator_matrices(order: int, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold step matrices of a chain of ``order`` integrators."""
    if order < 1:
        raise ContractError(f"integrator order must be >= 1, got {order}")
    a = np.zeros((order, order))
    for i in range(order):
        for j in range(i, order):
            a[i, j] = dt ** (j - i) / math.factorial(j - i)
    b = np.array([dt ** (order - i) / math.factorial(order - i) for i in range(order)])
    return a, b


@dataclass(frozen=True)
class IntegratorModel:
    order: int
    dt: float
    horizon: int

    def __post_init__(self):
        if self.order < 1:
            raise ContractError(f"order must be >= 1, got {self.order}")
        if not self.dt > 0:
            raise ContractError(f"dt must be positive, got {self.dt}")
        if self.horizon < 1:
            raise ContractError(f"horizon must be >= 1, got {self.horizon}")

    @cached_property
    def step_matrix(self) -> np.ndarray:
        return integrator_matrices(self.order, self.dt)[0]

    @cached_property
    def input_matrix(self) -> np.ndarray:
        return integrator_matrices(self.order, self.dt)[1]


def rollout(model: IntegratorModel, s0, inputs) -> np.ndarray:
    """States s_1..s_H obtained by stepping the model, shape (H, d)."""
    s = np.asarray(s0, dtype=float).reshape(model.order)
    inputs = np.asarray(inputs, dtype=float).ravel()
    if len(inputs) != model.horizon:
        raise ContractError(f"expected {model.horizon} inputs, got {len(inputs)}")
    a, b = model.step_matrix, model.input_matrix
    states = np.empty((model.horizon, model.order))
    for i, u in enumerate(inputs):
        s = a @ s + b * u
        states[i] = s
    return states


@dataclass(frozen=True, eq=False)
class BatchMaps:
    """Input-to-state map ``A`` ((H+1)d x H) and initial-state map ``B`` ((H+1)d x d)."""
    A: np.ndarray
    B: np.ndarray
    order: int
    horizon: int

    def apply(self, inputs, s0) -> np.ndarray:
        """All states s_0..s_H, shape (H+1, d)."""
        flat = self.A @ np.asarray(inputs, dtype=float) + self.B @ np.asarray(s0, dtype=float)
        return flat.reshape(self.horizon + 1, self.order)

    def apply_many(self, inputs: np.ndarray, s0: np.ndarray) -> np.ndarray:
        """Rollout of several independent dimensions: inputs (m, H), s0 (m, d) -> (m, H+1, d)."""
        flat = inputs @ self.A.T + s0 @ self.B.T
        return flat.reshape(len(inputs), self.horizon + 1, self.order)

    def adjoint(self, state_gradient: np.ndarray) -> np.ndarray:
        """Pull a gradient over states ((..., H+1, d)) back to the inputs ((..., H))."""
        g = np.asarray(state_gradient, dtype=float)
        flat = g.reshape(g.shape[:-2] + ((self.horizon + 1) * self.order,))
        return flat @ self.A


def batch_map(model: IntegratorModel) -> BatchMaps:
    d, h = model.order, model.horizon
    a_d, b_d = model.step_matrix, model.input_matrix
    powers = [np.eye(d)]
    for _ in range(h):
        powers.append(a_d @ powers[-1])
    B = np.vstack(powers)
    # block (i, j) = A_d^(i-j-1) B_d for j < i; the matrix is block Toeplitz
    columns = [power @ b_d for power in powers[:h]]
    A = np.zeros(((h + 1) * d, h))
    for i in range(1, h + 1):
        for j in range(i):
            A[i * d:(i + 1) * d, j] = columns[i - 1 - j]
    return BatchMaps(A, B, d, h)


def state_jacobian_rows(maps: BatchMaps, step: int, level: int) -> np.ndarray:
    """Row of ``A`` giving d(state component ``level`` at ``step``)/dU."""
    if not 1 <= step <= maps.horizon:
        raise ContractError(f"step must be in [1, {maps.horizon}], got {step}")
    if not 0 <= level < maps.order:
        raise ContractError(f"derivative level {level} not available for order {maps.order}")
    return maps.A[step * maps.order + level].copy()


@lru_cache(maxsize=32)
def cached_batch_map(order: int, dt: float, horizon: int) -> BatchMaps:
    """Batch maps keyed by (order, dt, horizon); the arrays must be treated as read-only."""
    return batch_map(IntegratorModel(order, dt, horizon))


def first_bad_step(values) -> Optional[int]:
    """1-based index of the first row of ``values`` holding a non-finite entry, if any."""
    bad = ~np.isfinite(np.asarray(values, dtype=float))
    if bad.ndim > 1:
        bad = bad.reshape(len(bad), -1).any(axis=1)
    return int(np.argmax(bad)) + 1 if bad.any() else None
