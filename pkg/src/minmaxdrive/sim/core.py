"""Deterministic 10 Hz driving environment on lane polylines."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Optional

import numpy as np

from .. import kernels
from ..geom import Polyline, Pose2D, frenet_project_many, normalize_angle

DT = 0.1
WHEELBASE = 2.8
MAX_STEER = 0.5
MAX_ACCEL = 4.0
MAX_SPEED = 25.0
GAMMA = 0.99

N_LIDAR = 30
LIDAR_RANGE = 50.0
OBS_DIM = 4 + N_LIDAR
LIDAR_ANGLES = 2.0 * math.pi * np.arange(N_LIDAR) / N_LIDAR

OFFROAD_METERS = 10.0
SUCCESS_FRACTION = 0.95
R_SUCCESS = 10.0
R_CRASH = -10.0
R_OFFROAD = -10.0
SPEED_REWARD = 0.1

EGO_LENGTH = 4.8
EGO_WIDTH = 2.0


class Terminal(str, enum.Enum):
    RUNNING = "running"
    SUCCESS = "success"
    CRASH = "crash"
    OFFROAD = "offroad"
    TIMEOUT = "timeout"


class PolicyError(RuntimeError):
    """The policy produced a non-finite action."""


@dataclass(eq=False)
class Trajectory:
    """Timestamped planar poses (T, 3) with optional speeds (T,)."""

    poses: np.ndarray
    speeds: Optional[np.ndarray] = None
    dt: float = DT

    def __post_init__(self):
        p = np.ascontiguousarray(np.asarray(self.poses, dtype=np.float64).reshape(-1, 3))
        if p.shape[0] == 0:
            raise ValueError("trajectory must be non-empty")
        if not np.all(np.isfinite(p)):
            raise ValueError("trajectory has non-finite poses")
        p[:, 2] = np.where(np.abs(p[:, 2]) > math.pi, _wrap(p[:, 2]), p[:, 2])
        self.poses = p
        if self.speeds is not None:
            v = np.asarray(self.speeds, dtype=np.float64).reshape(-1)
            if v.shape[0] != p.shape[0] or not np.all(np.isfinite(v)):
                raise ValueError("speeds must be finite and match poses")
            self.speeds = v

    def __len__(self):
        return self.poses.shape[0]

    def pose(self, t: int) -> Pose2D:
        x, y, yaw = self.poses[t]
        return Pose2D(float(x), float(y), float(yaw))

    def speed_profile(self) -> np.ndarray:
        if self.speeds is not None:
            return self.speeds
        step = np.hypot(*np.diff(self.poses[:, :2], axis=0).T) / self.dt
        return np.concatenate([[step[0] if step.size else 0.0], step])

    def to_dict(self) -> dict:
        d = {"poses": self.poses.tolist(), "dt": self.dt}
        if self.speeds is not None:
            d["speeds"] = self.speeds.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(np.array(d["poses"]), None if d.get("speeds") is None else np.array(d["speeds"]), d.get("dt", DT))


def _wrap(a):
    r = np.remainder(a + math.pi, 2.0 * math.pi) - math.pi
    return np.where(r <= -math.pi, math.pi, r)


@dataclass(eq=False)
class Agent:
    length: float
    width: float
    trajectory: Trajectory


@dataclass(eq=False)
class Scenario:
    id: str
    lanes: list
    ego_route: Polyline
    ego_start: Pose2D
    ego_speed: float
    agents: list
    adversary_index: int
    horizon_steps: int = 90
    template: str = "straight"
    ego_length: float = EGO_LENGTH
    ego_width: float = EGO_WIDTH

    def __post_init__(self):
        if not 0 <= self.adversary_index < len(self.agents):
            raise ValueError("adversary_index out of range")
        for a in self.agents:
            if len(a.trajectory) != self.horizon_steps + 1:
                raise ValueError(
                    f"logged trajectories need {self.horizon_steps + 1} poses, got {len(a.trajectory)}"
                )

    @property
    def adversary(self) -> Agent:
        return self.agents[self.adversary_index]

    @cached_property
    def log_boxes(self) -> np.ndarray:
        """(H+1, m, 5) box rows of every logged agent."""
        out = np.empty((self.horizon_steps + 1, len(self.agents), 5))
        for j, a in enumerate(self.agents):
            out[:, j, :3] = a.trajectory.poses
            out[:, j, 3] = a.length
            out[:, j, 4] = a.width
        return out

    def boxes_with_plan(self, plan: Optional[Trajectory]) -> np.ndarray:
        if plan is None:
            return self.log_boxes
        boxes = self.log_boxes.copy()
        n = min(len(plan), boxes.shape[0])
        boxes[:n, self.adversary_index, :3] = plan.poses[:n]
        if n < boxes.shape[0]:
            boxes[n:, self.adversary_index, :3] = plan.poses[-1]
        return boxes

    @cached_property
    def nominal_ego_poses(self) -> np.ndarray:
        """Constant-speed route following from the start state, (H+1, 3)."""
        out = np.empty((self.horizon_steps + 1, 3))
        for t in range(self.horizon_steps + 1):
            out[t] = route_pose(self.ego_route, self.ego_speed * DT * t)
        return out

    @cached_property
    def lane_stack(self) -> list:
        return [self.ego_route] + list(self.lanes)


def route_pose(route: Polyline, s: float) -> tuple:
    """Pose at arclength s, extrapolated straight past either end."""
    L = route.length
    if s <= L:
        return route.point_at(s)
    x, y, yaw = route.point_at(L)
    e = s - L
    return x + e * math.cos(yaw), y + e * math.sin(yaw), yaw


@dataclass(frozen=True)
class EgoState:
    pose: Pose2D
    speed: float
    step: int = 0


@dataclass(frozen=True)
class Action:
    steer: float
    accel: float

    def clamped(self) -> "Action":
        return Action(min(max(self.steer, -1.0), 1.0), min(max(self.accel, -1.0), 1.0))


def step_bicycle(state: EgoState, action: Action, dt: float = DT) -> EgoState:
    """Kinematic bicycle with midpoint integration; speed clamped to [0, MAX_SPEED]."""
    a = action.clamped()
    delta = a.steer * MAX_STEER
    v0 = state.speed
    v1 = min(max(v0 + a.accel * MAX_ACCEL * dt, 0.0), MAX_SPEED)
    vm = 0.5 * (v0 + v1)
    yaw_rate = vm * math.tan(delta) / WHEELBASE
    p = state.pose
    yaw_mid = p.yaw + 0.5 * yaw_rate * dt
    pose = Pose2D(
        p.x + vm * math.cos(yaw_mid) * dt,
        p.y + vm * math.sin(yaw_mid) * dt,
        p.yaw + yaw_rate * dt,
    )
    return EgoState(pose, v1, state.step + 1)


def ego_box(scenario: Scenario, pose: Pose2D) -> np.ndarray:
    return np.array([pose.x, pose.y, pose.yaw, scenario.ego_length, scenario.ego_width])


def lane_offsets(scenario: Scenario, x: float, y: float) -> tuple:
    """(s, d) on the route and min |d| over route and lanes."""
    pt = np.array([[x, y]])
    sd = frenet_project_many(pt, scenario.ego_route)[0]
    dmin = abs(sd[1])
    for lane in scenario.lanes:
        d = abs(kernels.frenet_project_points(pt, lane.points, lane.cumulative_arclength)[0, 1])
        if d < dmin:
            dmin = d
    return float(sd[0]), float(sd[1]), float(dmin)


def classify(scenario: Scenario, state: EgoState, boxes_t: np.ndarray, s: float, dmin: float) -> Terminal:
    if boxes_t.shape[0] and kernels.sat_overlap_one_many(ego_box(scenario, state.pose), boxes_t):
        return Terminal.CRASH
    if dmin > OFFROAD_METERS:
        return Terminal.OFFROAD
    if s / scenario.ego_route.length > SUCCESS_FRACTION:
        return Terminal.SUCCESS
    if state.step >= scenario.horizon_steps:
        return Terminal.TIMEOUT
    return Terminal.RUNNING


def check_termination(state: EgoState, scenario: Scenario, adversary: Optional[Trajectory] = None) -> Terminal:
    """Priority crash > offroad > success > timeout."""
    boxes = scenario.boxes_with_plan(adversary)
    t = min(state.step, boxes.shape[0] - 1)
    s, _, dmin = lane_offsets(scenario, state.pose.x, state.pose.y)
    return classify(scenario, state, np.ascontiguousarray(boxes[t]), s, dmin)


def terminal_bonus(outcome: Terminal) -> float:
    if outcome is Terminal.SUCCESS:
        return R_SUCCESS
    if outcome is Terminal.CRASH:
        return R_CRASH
    if outcome is Terminal.OFFROAD:
        return R_OFFROAD
    return 0.0


def step_reward(s_prev: float, s_next: float, v_next: float, outcome: Terminal) -> float:
    return (s_next - s_prev) + SPEED_REWARD * v_next + terminal_bonus(outcome)


def compute_reward(prev: EgoState, nxt: EgoState, outcome: Terminal, route: Polyline) -> float:
    pts = np.array([[prev.pose.x, prev.pose.y], [nxt.pose.x, nxt.pose.y]])
    s = frenet_project_many(pts, route)[:, 0]
    return step_reward(float(s[0]), float(s[1]), nxt.speed, Terminal(outcome))


def lidar(state: EgoState, boxes_t: np.ndarray) -> np.ndarray:
    p = state.pose
    angles = np.ascontiguousarray(p.yaw + LIDAR_ANGLES)
    return kernels.ray_cast_boxes(p.x, p.y, angles, LIDAR_RANGE, boxes_t) / LIDAR_RANGE


def observation_from(state: EgoState, scenario: Scenario, boxes_t: np.ndarray, s: float, d: float) -> np.ndarray:
    route = scenario.ego_route
    obs = np.empty(OBS_DIM)
    obs[0] = state.speed / MAX_SPEED
    obs[1] = normalize_angle(state.pose.yaw - route.tangent_yaw(s))
    obs[2] = d / OFFROAD_METERS
    obs[3] = 1.0 - s / route.length
    obs[4:] = lidar(state, boxes_t)
    return obs


def build_observation(state: EgoState, scenario: Scenario, adversary: Optional[Trajectory] = None) -> np.ndarray:
    """[speed/25, yaw error, d/10, remaining route fraction] + 30 lidar fractions."""
    boxes = scenario.boxes_with_plan(adversary)
    t = min(state.step, boxes.shape[0] - 1)
    sd = frenet_project_many(np.array([[state.pose.x, state.pose.y]]), scenario.ego_route)[0]
    return observation_from(state, scenario, np.ascontiguousarray(boxes[t]), float(sd[0]), float(sd[1]))


def initial_state(scenario: Scenario) -> EgoState:
    return EgoState(scenario.ego_start, float(scenario.ego_speed), 0)


@dataclass(eq=False)
class Episode:
    ego: Trajectory
    rewards: np.ndarray
    costs: np.ndarray
    terminal: Terminal
    ret: float
    route_completion: float
    obs: Optional[np.ndarray] = None
    infos: list = field(default_factory=list)

    @property
    def length(self) -> int:
        return int(self.rewards.shape[0])

    @property
    def crashed(self) -> bool:
        return self.terminal is Terminal.CRASH

    @property
    def cost(self) -> float:
        return float(self.costs.sum())


def rollout_episode(
    policy,
    scenario: Scenario,
    adversary_plan: Optional[Trajectory] = None,
    rng_seed: Any = 0,
    gamma: float = GAMMA,
    record: bool = False,
) -> Episode:
    """Run one episode; the adversary follows ``adversary_plan`` (its log if None)."""
    if adversary_plan is not None and len(adversary_plan) < scenario.horizon_steps + 1:
        raise ValueError("adversary plan shorter than the horizon")
    rng = np.random.default_rng(rng_seed)
    boxes = scenario.boxes_with_plan(adversary_plan)
    state = initial_state(scenario)
    s, d, _ = lane_offsets(scenario, state.pose.x, state.pose.y)
    poses = [(state.pose.x, state.pose.y, state.pose.yaw)]
    speeds = [state.speed]
    rewards, costs, obs_rec, infos = [], [], [], []
    terminal = Terminal.RUNNING
    for t in range(scenario.horizon_steps):
        bt = boxes[t]
        obs = observation_from(state, scenario, bt, s, d)
        act, info = policy.act(obs, state, scenario, rng)
        act = np.asarray(act, dtype=np.float64)
        if act.shape != (2,) or not np.all(np.isfinite(act)):
            raise PolicyError(f"non-finite policy output {act!r} at step {t} in {scenario.id}")
        nxt = step_bicycle(state, Action(float(act[0]), float(act[1])))
        s_next, d_next, dmin = lane_offsets(scenario, nxt.pose.x, nxt.pose.y)
        terminal = classify(scenario, nxt, boxes[nxt.step], s_next, dmin)
        rewards.append(step_reward(s, s_next, nxt.speed, terminal))
        costs.append(1.0 if terminal in (Terminal.CRASH, Terminal.OFFROAD) else 0.0)
        if record:
            obs_rec.append(obs)
            infos.append(info)
        state, s, d = nxt, s_next, d_next
        poses.append((state.pose.x, state.pose.y, state.pose.yaw))
        speeds.append(state.speed)
        if terminal is not Terminal.RUNNING:
            break
    r = np.array(rewards)
    ret = float(np.sum(r * gamma ** np.arange(r.shape[0])))
    rc = min(max(s / scenario.ego_route.length, 0.0), 1.0)
    return Episode(
        ego=Trajectory(np.array(poses), np.array(speeds)),
        rewards=r,
        costs=np.array(costs),
        terminal=terminal,
        ret=ret,
        route_completion=rc,
        obs=np.array(obs_rec) if record else None,
        infos=infos,
    )
