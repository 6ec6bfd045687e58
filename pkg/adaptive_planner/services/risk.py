"""Environment-adaptive risk weight.

The alignment ``beta`` is the cosine between velocity and the ESDF gradient;
``eta(beta) = 2 / (1 + exp(alpha * beta))`` is large when flying toward
obstacles (beta < 0) and small when flying away from them.
"""
from typing import Tuple

import numpy as np

from ..config import EasaParams
from ..errors import ContractError


def _neutral(v_norm: np.ndarray, g_norm: np.ndarray, params: EasaParams) -> np.ndarray:
    return (v_norm <= params.speed_epsilon) | (g_norm <= params.gradient_epsilon)


def beta_many(velocities, gradients, params: EasaParams) -> np.ndarray:
    """Row-wise alignment of (K, 3) velocities with (K, 3) ESDF gradients."""
    v = np.asarray(velocities, dtype=float).reshape(-1, 3)
    g = np.asarray(gradients, dtype=float).reshape(-1, 3)
    v_norm = np.linalg.norm(v, axis=1)
    g_norm = np.linalg.norm(g, axis=1)
    neutral = _neutral(v_norm, g_norm, params)
    denom = np.where(neutral, 1.0, v_norm * g_norm)
    cosine = np.where(neutral, 0.0, np.einsum("ki,ki->k", v, g) / denom)
    return np.clip(cosine, -1.0, 1.0)


def beta(v, grad_c, params: EasaParams) -> float:
    return float(beta_many(v, grad_c, params)[0])


def eta(b, params: EasaParams):
    return 2.0 / (1.0 + np.exp(params.alpha * np.asarray(b, dtype=float)))


def eta_derivative_wrt_beta(b, params: EasaParams):
    e = np.exp(params.alpha * np.asarray(b, dtype=float))
    return -2.0 * params.alpha * e / (1.0 + e) ** 2


def beta_partials_many(velocities, gradients, hessians, params: EasaParams) -> Tuple[np.ndarray, np.ndarray]:
    """Row-wise (d beta/d v, d beta/d p), each (K, 3); zero rows where beta is neutral.

    The position term goes through the ESDF gradient: d beta/dp = H . d beta/d(grad c).
    """
    v = np.asarray(velocities, dtype=float).reshape(-1, 3)
    g = np.asarray(gradients, dtype=float).reshape(-1, 3)
    h = np.asarray(hessians, dtype=float).reshape(-1, 3, 3)
    v_norm = np.linalg.norm(v, axis=1)
    g_norm = np.linalg.norm(g, axis=1)
    neutral = _neutral(v_norm, g_norm, params)
    vn = np.where(neutral, 1.0, v_norm)[:, None]
    gn = np.where(neutral, 1.0, g_norm)[:, None]
    dot = np.einsum("ki,ki->k", v, g)[:, None]
    d_v = (g * vn ** 2 - v * dot) / (vn ** 3 * gn)
    d_g = (v * gn ** 2 - g * dot) / (vn * gn ** 3)
    d_p = np.einsum("kij,kj->ki", h, d_g)
    d_v[neutral] = 0.0
    d_p[neutral] = 0.0
    return d_v, d_p


def beta_partials(v, grad_c, hessian, params: EasaParams) -> Tuple[np.ndarray, np.ndarray]:
    d_v, d_p = beta_partials_many(v, grad_c, hessian, params)
    return d_v[0], d_p[0]


def beta_gradient(v, grad_c, hessian, position_row, velocity_row, params: EasaParams) -> np.ndarray:
    """d beta / d U_mu for each axis, shape (3, H).

    ``position_row`` / ``velocity_row`` are the rows of the batched input map
    giving dp_i/dU and dv_i/dU; every axis shares them.
    """
    position_row = np.asarray(position_row, dtype=float)
    velocity_row = np.asarray(velocity_row, dtype=float)
    if position_row.shape != velocity_row.shape:
        raise ContractError("position and velocity rows must have the same length")
    hessian = np.asarray(hessian, dtype=float)
    if hessian.shape == (3,):
        hessian = np.diag(hessian)
    d_v, d_p = beta_partials(v, grad_c, hessian, params)
    return d_v[:, None] * velocity_row[None, :] + d_p[:, None] * position_row[None, :]
