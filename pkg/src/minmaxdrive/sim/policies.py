"""Scripted ego policies.

A policy exposes ``act(obs, state, scenario, rng) -> (action[2], info)``.
"""
from __future__ import annotations

import math

import numpy as np

from ..geom import frenet_project_many
from .core import DT, MAX_ACCEL, MAX_STEER, WHEELBASE, route_pose


class ReplayPolicy:
    """Follows the route at the scenario's start speed (pure pursuit).

    Stands in for the logged ego: it never reacts to other agents.
    """

    def __init__(self, lookahead: float = 6.0, target_speed: float | None = None):
        self.lookahead = lookahead
        self.target_speed = target_speed

    def act(self, obs, state, scenario, rng):
        p = state.pose
        s = frenet_project_many(np.array([[p.x, p.y]]), scenario.ego_route)[0, 0]
        ld = max(self.lookahead, state.speed * 0.8)
        tx, ty, _ = route_pose(scenario.ego_route, s + ld)
        alpha = math.atan2(ty - p.y, tx - p.x) - p.yaw
        delta = math.atan2(2.0 * WHEELBASE * math.sin(alpha), ld)
        v_t = scenario.ego_speed if self.target_speed is None else self.target_speed
        accel = (v_t - state.speed) / (MAX_ACCEL * DT)
        return np.array([min(max(delta / MAX_STEER, -1.0), 1.0), min(max(accel, -1.0), 1.0)]), None


class ConstantPolicy:
    def __init__(self, steer: float = 0.0, accel: float = 0.0):
        self.action = np.array([steer, accel], dtype=np.float64)

    def act(self, obs, state, scenario, rng):
        return self.action.copy(), None


def BrakePolicy():
    return ConstantPolicy(0.0, -1.0)


class NoisyPolicy:
    """Adds Gaussian action noise to a base policy (the stochastic ego)."""

    def __init__(self, base, steer_std: float = 0.05, accel_std: float = 0.3):
        self.base = base
        self.std = np.array([steer_std, accel_std])

    def act(self, obs, state, scenario, rng):
        a, info = self.base.act(obs, state, scenario, rng)
        return np.clip(a + self.std * rng.standard_normal(2), -1.0, 1.0), info
