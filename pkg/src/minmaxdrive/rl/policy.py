"""Tanh-squashed Gaussian MLP policy with a value head, hand-rolled backprop.

Layout (flat parameter vector, row-major blocks):
    W1 (64, 34), b1, W2 (64, 64), b2, Wmu (2, 64), bmu, Wls (2, 64), bls, Wv (1, 64), bv
The value head shares the second hidden layer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..sim.core import OBS_DIM

HIDDEN = 64
ACT_DIM = 2
LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
INIT_LOG_STD = -1.0
_LOG_2PI = math.log(2.0 * math.pi)

SHAPES = (
    ("W1", (HIDDEN, OBS_DIM)),
    ("b1", (HIDDEN,)),
    ("W2", (HIDDEN, HIDDEN)),
    ("b2", (HIDDEN,)),
    ("Wmu", (ACT_DIM, HIDDEN)),
    ("bmu", (ACT_DIM,)),
    ("Wls", (ACT_DIM, HIDDEN)),
    ("bls", (ACT_DIM,)),
    ("Wv", (1, HIDDEN)),
    ("bv", (1,)),
)
_OFFSETS = {}
_n = 0
for _name, _shape in SHAPES:
    _size = int(np.prod(_shape))
    _OFFSETS[_name] = (_n, _n + _size, _shape)
    _n += _size
N_PARAMS = _n


def unpack(theta: np.ndarray) -> dict:
    """Named views into a flat parameter vector."""
    if theta.shape != (N_PARAMS,):
        raise ValueError(f"expected {N_PARAMS} parameters, got {theta.shape}")
    return {k: theta[a:b].reshape(s) for k, (a, b, s) in _OFFSETS.items()}


def init_params(rng, init_log_std: float = INIT_LOG_STD) -> np.ndarray:
    theta = np.zeros(N_PARAMS)
    p = unpack(theta)
    p["W1"][:] = rng.standard_normal((HIDDEN, OBS_DIM)) * math.sqrt(1.0 / OBS_DIM)
    p["W2"][:] = rng.standard_normal((HIDDEN, HIDDEN)) * math.sqrt(1.0 / HIDDEN)
    p["Wmu"][:] = rng.standard_normal((ACT_DIM, HIDDEN)) * 0.01
    p["Wv"][:] = rng.standard_normal((1, HIDDEN)) * 0.1
    p["bls"][:] = init_log_std
    return theta


@dataclass
class Forward:
    obs: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    mean: np.ndarray
    log_std_raw: np.ndarray
    log_std: np.ndarray
    value: np.ndarray


def policy_forward(theta: np.ndarray, obs: np.ndarray) -> Forward:
    """Batch forward pass; ``obs`` is (B, 34) or (34,)."""
    x = np.asarray(obs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != OBS_DIM:
        raise ValueError(f"observation must have {OBS_DIM} entries, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite observation")
    p = unpack(theta)
    h1 = np.tanh(x @ p["W1"].T + p["b1"])
    h2 = np.tanh(h1 @ p["W2"].T + p["b2"])
    mean = h2 @ p["Wmu"].T + p["bmu"]
    raw = h2 @ p["Wls"].T + p["bls"]
    value = (h2 @ p["Wv"].T + p["bv"])[:, 0]
    return Forward(x, h1, h2, mean, raw, np.clip(raw, LOG_STD_MIN, LOG_STD_MAX), value)


def gaussian_logp(u: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Diagonal Gaussian log-density of the pre-squash sample, summed over action dims."""
    z = (u - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * _LOG_2PI, axis=-1)


def tanh_log_det(u: np.ndarray) -> np.ndarray:
    """sum log(1 - tanh(u)^2), computed stably."""
    return np.sum(2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u)), axis=-1)


def squashed_logp(u: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Log-density of a = tanh(u) by change of variables."""
    return gaussian_logp(u, mean, log_std) - tanh_log_det(u)


def gaussian_entropy(log_std: np.ndarray) -> np.ndarray:
    return np.sum(0.5 * (1.0 + _LOG_2PI) + log_std, axis=-1)


def policy_backward(theta: np.ndarray, fw: Forward, d_mean: np.ndarray, d_log_std: np.ndarray,
                    d_value: np.ndarray | None = None) -> np.ndarray:
    """Gradient of a scalar loss given its partials w.r.t. the heads (summed over the batch)."""
    p = unpack(theta)
    grad = np.zeros(N_PARAMS)
    g = unpack(grad)
    # the clamp passes gradient only inside its range
    d_raw = d_log_std * ((fw.log_std_raw > LOG_STD_MIN) & (fw.log_std_raw < LOG_STD_MAX))
    g["Wmu"][:] = d_mean.T @ fw.h2
    g["bmu"][:] = d_mean.sum(0)
    g["Wls"][:] = d_raw.T @ fw.h2
    g["bls"][:] = d_raw.sum(0)
    d_h2 = d_mean @ p["Wmu"] + d_raw @ p["Wls"]
    if d_value is not None:
        dv = np.asarray(d_value, dtype=np.float64).reshape(-1, 1)
        g["Wv"][:] = dv.T @ fw.h2
        g["bv"][:] = dv.sum(0)
        d_h2 = d_h2 + dv @ p["Wv"]
    d_a2 = d_h2 * (1.0 - fw.h2 * fw.h2)
    g["W2"][:] = d_a2.T @ fw.h1
    g["b2"][:] = d_a2.sum(0)
    d_a1 = (d_a2 @ p["W2"]) * (1.0 - fw.h1 * fw.h1)
    g["W1"][:] = d_a1.T @ fw.obs
    g["b1"][:] = d_a1.sum(0)
    return grad


def dlogp_dheads(u: np.ndarray, mean: np.ndarray, log_std: np.ndarray):
    """Partials of the Gaussian log-density w.r.t. mean and (clamped) log-std."""
    inv_var = np.exp(-2.0 * log_std)
    diff = u - mean
    return diff * inv_var, diff * diff * inv_var - 1.0


class NetPolicy:
    """Simulator-facing wrapper: samples tanh(u), reports u, log-prob and value."""

    def __init__(self, theta: np.ndarray, deterministic: bool = False):
        self.theta = theta
        self.deterministic = deterministic

    def act(self, obs, state, scenario, rng):
        fw = policy_forward(self.theta, obs)
        mean, log_std = fw.mean[0], fw.log_std[0]
        if self.deterministic:
            u = mean.copy()
        else:
            u = mean + np.exp(log_std) * rng.standard_normal(ACT_DIM)
        logp = float(gaussian_logp(u, mean, log_std))
        return np.tanh(u), {"u": u, "logp": logp, "value": float(fw.value[0])}
