"""Synthetic scenario corpus and the scenario JSON format.

Every template logs benign traffic: no logged agent touches the ego's
constant-speed route-following path (checked with inflated footprints), so a
replay ego completes the route.  The flagged adversary always drives a lane
that neighbours or crosses the ego route.
"""
from __future__ import annotations

import json
import math
import os
from pathlib import Path

import numpy as np

from .. import kernels
from ..geom import Polyline, Pose2D
from .core import DT, SUCCESS_FRACTION, Agent, Scenario, Trajectory, route_pose

FORMAT_VERSION = 1
TEMPLATES = ("straight", "curve", "intersection", "merge")
LANE_WIDTH = 3.5
MAX_AGENT_SPEED = 20.0
HORIZON = 90


def _straight(x0, x1, y=0.0, direction=1.0):
    if direction > 0:
        return Polyline([[x0, y], [x1, y]])
    return Polyline([[x1, y], [x0, y]])


def _arc(radius, center, theta0, span, spacing=1.0, left=True):
    n = max(2, int(math.ceil(abs(span) * radius / spacing)) + 1)
    th = np.linspace(theta0, theta0 + (span if left else -span), n)
    return Polyline(np.column_stack([center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)]))


def lane_follow(lane: Polyline, s0: float, v0: float, accel: float = 0.0, steps: int = HORIZON) -> Trajectory:
    """Constant-acceleration drive along a lane (speed floored at 0, capped)."""
    poses = np.empty((steps + 1, 3))
    speeds = np.empty(steps + 1)
    s, v = s0, v0
    for t in range(steps + 1):
        poses[t] = route_pose(lane, s) if s >= 0 else _behind(lane, s)
        speeds[t] = v
        v_next = min(max(v + accel * DT, 0.0), MAX_AGENT_SPEED)
        s += 0.5 * (v + v_next) * DT
        v = v_next
    return Trajectory(poses, speeds)


def _behind(lane, s):
    x, y, yaw = lane.point_at(0.0)
    return x + s * math.cos(yaw), y + s * math.sin(yaw), yaw


def _benign(nominal: np.ndarray, traj: Trajectory, length, width, ego_dims, stop: int) -> bool:
    # inflated footprints keep the logged traffic clear of the replay ego
    el, ew = ego_dims[0] + 2.0, ego_dims[1] + 1.0
    return kernels.first_overlap(nominal[:stop], traj.poses[:stop], el, ew, length + 2.0, width + 1.0) < 0


def _sizes(rng):
    length = float(rng.uniform(4.2, 5.2))
    return length, float(rng.uniform(1.8, 2.1))


def make_synthetic_scenarios(seed: int, count: int, templates=TEMPLATES, horizon: int = HORIZON) -> list:
    """Deterministic corpus of ``count`` scenarios drawn from ``templates``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    bad = [t for t in templates if t not in TEMPLATES]
    if bad or not templates:
        raise ValueError(f"unknown templates {bad}; choose from {TEMPLATES}")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        template = templates[int(rng.integers(len(templates)))]
        sid = f"{template}-{seed}-{i:05d}"
        for _ in range(200):
            sc = _BUILDERS[template](sid, rng, horizon)
            if sc is not None:
                break
        else:  # pragma: no cover
            raise RuntimeError(f"could not build a benign {template} scenario")
        out.append(sc)
    return out


def _finish(sid, template, rng, lanes, route, v_e, adversary_agent, extra_lanes, horizon):
    """Add background traffic, check benignity and assemble the scenario."""
    start = Pose2D(*route.point_at(0.0))
    nominal = np.array([route_pose(route, v_e * DT * t) for t in range(horizon + 1)])
    stop = horizon + 1
    over = np.flatnonzero(v_e * DT * np.arange(horizon + 1) / route.length > SUCCESS_FRACTION)
    if over.size:
        stop = int(over[0]) + 1
    ego_dims = (4.8, 2.0)
    agents = [adversary_agent]
    if not _benign(nominal, adversary_agent.trajectory, adversary_agent.length, adversary_agent.width, ego_dims, stop):
        return None
    n_extra = int(rng.integers(0, 4))
    for _ in range(n_extra):
        lane, kind = extra_lanes[int(rng.integers(len(extra_lanes)))]
        length, width = _sizes(rng)
        if kind == "lead":
            traj = lane_follow(lane, float(rng.uniform(20.0, 45.0)), min(v_e + float(rng.uniform(1.0, 4.0)), MAX_AGENT_SPEED), 0.0, horizon)
        else:
            traj = lane_follow(lane, float(rng.uniform(-30.0, 60.0)), float(rng.uniform(4.0, 15.0)), float(rng.uniform(-0.3, 0.3)), horizon)
        if _benign(nominal, traj, length, width, ego_dims, stop):
            agents.append(Agent(length, width, traj))
    order = rng.permutation(len(agents))
    agents = [agents[k] for k in order]
    adv_index = int(np.flatnonzero(order == 0)[0])
    return Scenario(sid, lanes, route, start, v_e, agents, adv_index, horizon, template)


def _ego_params(rng):
    v_e = float(rng.uniform(8.0, 12.0))
    return v_e, v_e * 8.0 + 5.0


def _build_straight(sid, rng, horizon):
    v_e, L = _ego_params(rng)
    ego_lane = _straight(-60.0, L + 80.0)
    left = _straight(-60.0, L + 80.0, LANE_WIDTH)
    right = _straight(-60.0, L + 80.0, -LANE_WIDTH)
    route = _straight(0.0, L)
    adv_lane = left if rng.random() < 0.5 else right
    length, width = _sizes(rng)
    adv = Agent(length, width, lane_follow(adv_lane, 60.0 + float(rng.uniform(-20.0, 30.0)), float(rng.uniform(6.0, 14.0)), float(rng.uniform(-0.3, 0.3)), horizon))
    return _finish(sid, "straight", rng, [ego_lane, left, right], route, v_e, adv,
                   [(ego_lane, "lead"), (left, "free"), (right, "free")], horizon)


def _build_curve(sid, rng, horizon):
    v_e, L = _ego_params(rng)
    R = float(rng.uniform(50.0, 90.0))
    lead_in = 60.0
    th0 = -math.pi / 2 - lead_in / R
    span = (L + 80.0 + lead_in) / R
    center = (0.0, R)
    ego_lane = _arc(R, center, th0, span)
    inner = _arc(R - LANE_WIDTH, center, th0, span)
    outer = _arc(R + LANE_WIDTH, center, th0, span)
    route = _arc(R, center, -math.pi / 2, L / R)
    adv_lane = inner if rng.random() < 0.5 else outer
    length, width = _sizes(rng)
    adv = Agent(length, width, lane_follow(adv_lane, lead_in + float(rng.uniform(-20.0, 30.0)), float(rng.uniform(6.0, 14.0)), float(rng.uniform(-0.3, 0.3)), horizon))
    return _finish(sid, "curve", rng, [ego_lane, inner, outer], route, v_e, adv,
                   [(ego_lane, "lead"), (inner, "free"), (outer, "free")], horizon)


def _build_intersection(sid, rng, horizon):
    v_e, L = _ego_params(rng)
    x_c = float(rng.uniform(25.0, 50.0))
    ego_lane = _straight(-60.0, L + 80.0)
    cross = Polyline([[x_c, -150.0], [x_c, 150.0]])
    cross_back = Polyline([[x_c + LANE_WIDTH, 150.0], [x_c + LANE_WIDTH, -150.0]])
    route = _straight(0.0, L)
    v_a = float(rng.uniform(6.0, 12.0))
    t_c = x_c / v_e
    delay = float(rng.uniform(1.2, 2.0))
    arrive = t_c + delay if rng.random() < 0.6 else max(t_c - delay, 0.5)
    length, width = _sizes(rng)
    s0 = 150.0 - v_a * arrive
    adv = Agent(length, width, lane_follow(cross, s0, v_a, 0.0, horizon))
    return _finish(sid, "intersection", rng, [ego_lane, cross, cross_back], route, v_e, adv,
                   [(ego_lane, "lead"), (cross_back, "free")], horizon)


def _merge_lane(x_m, y0=7.0, ramp=40.0, x_start=-120.0, x_end=300.0):
    xs = np.arange(x_m - ramp, x_m + 1e-9, 1.0)
    ys = y0 * 0.5 * (1.0 + np.cos(math.pi * (xs - (x_m - ramp)) / ramp))
    pts = [[x_start, y0]] + np.column_stack([xs, ys]).tolist() + [[x_end, 0.0]]
    return Polyline(pts)


def _build_merge(sid, rng, horizon):
    v_e, L = _ego_params(rng)
    x_m = float(rng.uniform(30.0, 60.0))
    ego_lane = _straight(-60.0, L + 80.0)
    merge = _merge_lane(x_m, x_end=L + 80.0)
    left = _straight(-60.0, L + 80.0, -LANE_WIDTH)
    route = _straight(0.0, L)
    v_a = v_e * float(rng.uniform(0.75, 0.95))
    t_m = x_m / v_e
    delay = float(rng.uniform(1.5, 2.5))
    # arclength of the merge point on the merge lane
    s_m = float(merge.cumulative_arclength[np.argmin(np.abs(merge.points[:, 0] - x_m))])
    length, width = _sizes(rng)
    adv = Agent(length, width, lane_follow(merge, s_m - v_a * (t_m + delay), v_a, 0.0, horizon))
    return _finish(sid, "merge", rng, [ego_lane, merge, left], route, v_e, adv,
                   [(ego_lane, "lead"), (left, "free")], horizon)


_BUILDERS = {
    "straight": _build_straight,
    "curve": _build_curve,
    "intersection": _build_intersection,
    "merge": _build_merge,
}


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "format": FORMAT_VERSION,
        "id": sc.id,
        "template": sc.template,
        "horizon_steps": sc.horizon_steps,
        "dt": DT,
        "lanes": [lane.to_list() for lane in sc.lanes],
        "ego_route": sc.ego_route.to_list(),
        "ego_start": {"x": sc.ego_start.x, "y": sc.ego_start.y, "yaw": sc.ego_start.yaw},
        "ego_speed": sc.ego_speed,
        "ego_length": sc.ego_length,
        "ego_width": sc.ego_width,
        "adversary_index": sc.adversary_index,
        "agents": [
            {"length": a.length, "width": a.width, **a.trajectory.to_dict()} for a in sc.agents
        ],
    }


def scenario_from_dict(d: dict) -> Scenario:
    if d.get("format") != FORMAT_VERSION:
        raise ValueError(f"unsupported scenario format {d.get('format')!r}, expected {FORMAT_VERSION}")
    agents = [Agent(a["length"], a["width"], Trajectory.from_dict(a)) for a in d["agents"]]
    st = d["ego_start"]
    return Scenario(
        id=d["id"],
        lanes=[Polyline(np.array(p)) for p in d["lanes"]],
        ego_route=Polyline(np.array(d["ego_route"])),
        ego_start=Pose2D(st["x"], st["y"], st["yaw"]),
        ego_speed=d["ego_speed"],
        agents=agents,
        adversary_index=d["adversary_index"],
        horizon_steps=d["horizon_steps"],
        template=d.get("template", "straight"),
        ego_length=d.get("ego_length", 4.8),
        ego_width=d.get("ego_width", 2.0),
    )


def dumps_scenario(sc: Scenario) -> str:
    return json.dumps(scenario_to_dict(sc), sort_keys=True)


def save_corpus(scenarios, directory) -> dict:
    """Write ``scenarios/<id>.json`` files plus ``manifest.json``; returns the manifest."""
    root = Path(directory)
    (root / "scenarios").mkdir(parents=True, exist_ok=True)
    counts: dict = {}
    for sc in scenarios:
        path = root / "scenarios" / f"{sc.id}.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(dumps_scenario(sc))
        os.replace(tmp, path)
        counts[sc.template] = counts.get(sc.template, 0) + 1
    manifest = {
        "format": FORMAT_VERSION,
        "count": len(scenarios),
        "templates": dict(sorted(counts.items())),
        "ids": [sc.id for sc in scenarios],
    }
    (root / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return manifest


def load_corpus(directory) -> list:
    root = Path(directory)
    manifest_path = root / "manifest.json"
    if manifest_path.exists():
        ids = json.loads(manifest_path.read_text())["ids"]
        files = [root / "scenarios" / f"{i}.json" for i in ids]
    else:
        files = sorted((root / "scenarios").glob("*.json"))
    if not files:
        raise FileNotFoundError(f"no scenarios under {root}")
    return [scenario_from_dict(json.loads(f.read_text())) for f in files]
