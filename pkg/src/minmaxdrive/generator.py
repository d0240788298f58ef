"""The attacker: a per-scenario library of candidate adversary trajectories
scored by a linear head that defines a categorical distribution.

The library holds the logged trajectory (candidate 0) plus spline
trajectories from the adversary's logged start toward goals on its own lane,
on neighbouring lanes, and on the ego's nominal path (interception).  The
scorer maps fixed per-candidate features to logits; a frozen copy of its
weights serves as the reference distribution.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .geom import Polyline, frenet_project_many, normalize_angle
from .sim.core import DT, Scenario, Trajectory, route_pose

FEATURE_NAMES = (
    "is_logged",
    "end_s_frac",
    "end_d",
    "min_dist_ego",
    "mean_speed",
    "mean_abs_curvature",
    "lateral_var",
)
N_FEATURES = len(FEATURE_NAMES)
LOGGED_LOGIT = 2.0


@dataclass(frozen=True)
class SynthConfig:
    k: int = 32
    seed: int = 0
    nms_threshold: float = 0.5
    max_curvature: float = 0.2
    speed_factor: float = 1.5
    max_accel: float = 3.0
    pool_factor: int = 4
    family_weights: tuple = (0.3, 0.3, 0.4)  # own lane, other lanes, interception


@dataclass
class GeneratorParams:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if w.shape[0] != N_FEATURES or not np.all(np.isfinite(w)):
            raise ValueError(f"need {N_FEATURES} finite weights")
        self.weights = w

    def copy(self) -> "GeneratorParams":
        return GeneratorParams(self.weights.copy())

    def to_list(self) -> list:
        return self.weights.tolist()


def init_params() -> GeneratorParams:
    """Prior: logit +2 on the logged trajectory, 0 elsewhere."""
    w = np.zeros(N_FEATURES)
    w[0] = LOGGED_LOGIT
    return GeneratorParams(w)


def freeze_reference(params: GeneratorParams) -> GeneratorParams:
    w = params.weights.copy()
    w.setflags(write=False)
    ref = GeneratorParams.__new__(GeneratorParams)
    ref.weights = w
    return ref


# -- candidate synthesis ---------------------------------------------------

def _hermite(p0, yaw0, p1, yaw1, n=64):
    """Cubic Hermite points and max curvature between two oriented points."""
    chord = math.hypot(p1[0] - p0[0], p1[1] - p0[1])
    m0 = chord * np.array([math.cos(yaw0), math.sin(yaw0)])
    m1 = chord * np.array([math.cos(yaw1), math.sin(yaw1)])
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    u = np.linspace(0.0, 1.0, n)[:, None]
    u2, u3 = u * u, u * u * u
    pts = (2 * u3 - 3 * u2 + 1) * p0 + (u3 - 2 * u2 + u) * m0 + (-2 * u3 + 3 * u2) * p1 + (u3 - u2) * m1
    d1 = (6 * u2 - 6 * u) * p0 + (3 * u2 - 4 * u + 1) * m0 + (-6 * u2 + 6 * u) * p1 + (3 * u2 - 2 * u) * m1
    d2 = (12 * u - 6) * p0 + (6 * u - 4) * m0 + (-12 * u + 6) * p1 + (6 * u - 2) * m1
    speed = np.hypot(d1[:, 0], d1[:, 1])
    if np.any(speed < 1e-9):
        return pts, math.inf
    kappa = np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / speed**3
    return pts, float(kappa.max())


def _dedupe_points(pts: np.ndarray) -> np.ndarray:
    keep = np.concatenate([[True], np.hypot(*np.diff(pts, axis=0).T) > 1e-6])
    return pts[keep]


def speed_profile(v0: float, v_target: float, a_max: float, steps: int) -> np.ndarray:
    """Speeds (steps+1,) moving from v0 toward v_target at most a_max per second."""
    gap = v_target - v0
    return v0 + math.copysign(1.0, gap) * np.minimum(a_max * DT * np.arange(steps + 1), abs(gap))


def _arclength(v: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * DT)])


def _solve_speed(v0, v_max, a_max, steps, dist, t_idx):
    """Cruise speed whose profile covers ``dist`` by step ``t_idx`` (bisection)."""
    lo, hi = 0.0, v_max
    if _arclength(speed_profile(v0, hi, a_max, steps))[t_idx] < dist:
        return hi
    if _arclength(speed_profile(v0, lo, a_max, steps))[t_idx] > dist:
        return lo
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if _arclength(speed_profile(v0, mid, a_max, steps))[t_idx] < dist:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def poses_along(path: Polyline, s: np.ndarray) -> np.ndarray:
    """Vectorized route_pose: (n, 3) poses at arclengths s, straight past the end."""
    cum, pts = path.cumulative_arclength, path.points
    s = np.asarray(s, dtype=np.float64)
    k = np.clip(np.searchsorted(cum, np.clip(s, 0.0, cum[-1]), side="right") - 1, 0, len(cum) - 2)
    seg = pts[k + 1] - pts[k]
    yaw = np.arctan2(seg[:, 1], seg[:, 0])
    u = (s - cum[k]) / (cum[k + 1] - cum[k])
    u = np.where(s > cum[-1], (s - cum[k]) / (cum[k + 1] - cum[k]), np.maximum(u, 0.0))
    xy = pts[k] + u[:, None] * seg
    return np.column_stack([xy, yaw])


def _time_along(path: Polyline, speeds: np.ndarray) -> Trajectory:
    return Trajectory(poses_along(path, _arclength(speeds)), speeds.copy())


def _own_lane(scenario: Scenario, x, y, yaw):
    """Lane (heading-aligned) nearest to a pose, with the pose's arclength on it."""
    best, best_d, best_s = None, math.inf, 0.0
    for lane in scenario.lane_stack:
        s, d = frenet_project_many(np.array([[x, y]]), lane)[0]
        if abs(normalize_angle(lane.tangent_yaw(s) - yaw)) > math.pi / 2:
            continue
        if abs(d) < best_d:
            best, best_d, best_s = lane, abs(d), s
    return best, best_s


def _path_to_goal(start, goal, tail=None, tail_s=0.0, tail_len=200.0, max_kappa=0.2):
    pts, kappa = _hermite(start[:2], start[2], goal[:2], goal[2])
    if kappa > max_kappa:
        return None, 0.0
    if tail is not None:
        ext = poses_along(tail, np.arange(tail_s + 1.0, tail_s + tail_len, 1.0))[:, :2]
    else:
        ext = goal[:2] + np.outer(np.arange(1.0, tail_len, 5.0), [math.cos(goal[2]), math.sin(goal[2])])
    goal_s = float(np.sum(np.hypot(*np.diff(pts, axis=0).T)))
    return Polyline(_dedupe_points(np.vstack([pts, ext]))), goal_s


def synthesize_candidates(scenario: Scenario, k: int = 32, seed: int = 0, cfg: SynthConfig | None = None) -> list:
    """K candidate adversary trajectories; candidate 0 is the logged one."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if not scenario.lanes:
        raise ValueError(f"scenario {scenario.id} has no lanes")
    cfg = cfg or SynthConfig(k=k, seed=seed)
    log = scenario.adversary.trajectory
    H = scenario.horizon_steps
    x0, y0, yaw0 = log.poses[0]
    v0 = float(log.speed_profile()[0])
    v_max = cfg.speed_factor * max(float(log.speed_profile().max()), 1.0)
    own, own_s = _own_lane(scenario, x0, y0, yaw0)
    others = [ln for ln in scenario.lane_stack if ln is not own]
    seed_seq = np.random.SeedSequence([cfg.seed, _stable_hash(scenario.id)])
    rng = np.random.default_rng(seed_seq)
    start = np.array([x0, y0, yaw0])
    nominal = scenario.nominal_ego_poses
    weights = np.asarray(cfg.family_weights, float)
    weights = weights / weights.sum()

    pool = []
    for _ in range(cfg.pool_factor * k):
        fam = int(rng.choice(3, p=weights))
        traj = None
        if fam == 0 and own is not None:
            v_c = float(rng.uniform(0.0, v_max))
            lane_path, _ = _path_to_goal(start, np.array(route_pose(own, own_s + 5.0)), own, own_s + 5.0,
                                         max_kappa=cfg.max_curvature)
            if lane_path is not None:
                traj = _time_along(lane_path, speed_profile(v0, v_c, cfg.max_accel, H))
        elif fam == 1 and others:
            lane = others[int(rng.integers(len(others)))]
            s_l, _ = frenet_project_many(np.array([[x0, y0]]), lane)[0]
            ahead = float(rng.uniform(1.5, 5.0)) * max(v0, 3.0)
            goal = np.array(route_pose(lane, s_l + ahead))
            if abs(normalize_angle(goal[2] - yaw0)) < math.pi / 2:
                path, _ = _path_to_goal(start, goal, lane, s_l + ahead, max_kappa=cfg.max_curvature)
                if path is not None:
                    v_c = float(rng.uniform(0.3, 1.0)) * v_max
                    traj = _time_along(path, speed_profile(v0, v_c, cfg.max_accel, H))
        elif fam == 2:
            t_idx = int(rng.integers(15, 71))
            ex, ey, eyaw = nominal[t_idx]
            lon, lat = rng.uniform(-3.0, 3.0), rng.uniform(-1.0, 1.0)
            gx = ex + lon * math.cos(eyaw) - lat * math.sin(eyaw)
            gy = ey + lon * math.sin(eyaw) + lat * math.cos(eyaw)
            if math.hypot(gx - x0, gy - y0) > 1.0:
                chord = math.atan2(gy - y0, gx - x0)
                goal = np.array([gx, gy, chord])
                path, dist = _path_to_goal(start, goal, max_kappa=cfg.max_curvature)
                if path is not None:
                    v_c = _solve_speed(v0, v_max, cfg.max_accel, H, dist, t_idx)
                    traj = _time_along(path, speed_profile(v0, v_c, cfg.max_accel, H))
        if traj is not None and np.all(np.isfinite(traj.poses)):
            pool.append(traj)

    kept = [log]
    dropped = []
    for traj in pool:
        if len(kept) >= k:
            break
        gaps = [np.max(np.hypot(*(traj.poses[:, :2] - c.poses[:, :2]).T)) for c in kept]
        if min(gaps) < cfg.nms_threshold:
            dropped.append(traj)
        else:
            kept.append(traj)
    for traj in dropped + pool:
        if len(kept) >= k:
            break
        if not any(traj is c for c in kept):
            kept.append(traj)
    while len(kept) < k:  # degenerate library: pad with copies of the log
        kept.append(Trajectory(log.poses.copy(), None if log.speeds is None else log.speeds.copy()))
    return kept


def _stable_hash(text: str) -> int:
    h = 1469598103934665603
    for ch in text.encode():
        h = ((h ^ ch) * 1099511628211) & 0xFFFFFFFFFFFFFFFF
    return h & 0x7FFFFFFF


# -- features and the categorical head ---------------------------------------

def _curvature(poses: np.ndarray) -> np.ndarray:
    step = np.hypot(*np.diff(poses[:, :2], axis=0).T)
    dyaw = np.abs(np.array([normalize_angle(a) for a in np.diff(poses[:, 2])]))
    moving = step > 1e-3
    return np.where(moving, dyaw / np.where(moving, step, 1.0), 0.0)


def candidate_features(scenario: Scenario, traj: Trajectory) -> np.ndarray:
    log = scenario.adversary.trajectory
    route = scenario.ego_route
    is_log = float(traj.poses.shape == log.poses.shape and np.array_equal(traj.poses, log.poses))
    sd = frenet_project_many(traj.poses[:, :2], route)
    end_s, end_d = sd[-1]
    nominal = scenario.nominal_ego_poses
    n = min(len(nominal), len(traj))
    min_dist = float(np.min(np.hypot(*(nominal[:n, :2] - traj.poses[:n, :2]).T)))
    speed = traj.speed_profile()
    return np.array([
        is_log,
        end_s / route.length,
        np.clip(end_d / 10.0, -3.0, 3.0),
        min(min_dist / 10.0, 5.0),
        float(np.mean(speed)) / 10.0,
        float(np.mean(_curvature(traj.poses))),
        min(float(np.var(sd[:, 1])) / 100.0, 10.0),
    ])


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    m = np.max(z)
    return z - (m + math.log(np.sum(np.exp(z - m))))


@dataclass(eq=False)
class CandidateSet:
    scenario_id: str
    candidates: list
    features: np.ndarray
    logits_current: np.ndarray
    logits_ref: np.ndarray

    @property
    def k(self) -> int:
        return len(self.candidates)

    def logp_current(self) -> np.ndarray:
        return log_softmax(self.logits_current)

    def logp_ref(self) -> np.ndarray:
        return log_softmax(self.logits_ref)


def logits(params: GeneratorParams, features: np.ndarray) -> np.ndarray:
    return features @ params.weights


def log_probs(params: GeneratorParams, cset: CandidateSet) -> np.ndarray:
    return log_softmax(logits(params, cset.features))


def log_prob(params: GeneratorParams, cset: CandidateSet, index: int) -> float:
    if not 0 <= index < cset.k:
        raise IndexError(f"candidate index {index} out of range for K={cset.k}")
    return float(log_probs(params, cset)[index])


def sample_candidate(params: GeneratorParams, cset: CandidateSet, temperature: float, rng) -> int:
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    p = np.exp(log_softmax(logits(params, cset.features) / temperature))
    return int(rng.choice(cset.k, p=p / p.sum()))


def kl_categorical(logp: np.ndarray, logq: np.ndarray) -> float:
    p = np.exp(logp)
    return float(max(np.sum(p * (logp - logq)), 0.0))


# -- stateful wrapper with the per-scenario library cache ----------------------

@dataclass
class Generator:
    params: GeneratorParams = field(default_factory=init_params)
    ref: GeneratorParams = None
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        if self.ref is None:
            self.ref = freeze_reference(self.params)
        self._library: dict = {}

    def library(self, scenario: Scenario):
        """(candidates, features) for a scenario, synthesized once and cached."""
        hit = self._library.get(scenario.id)
        if hit is None:
            cands = synthesize_candidates(scenario, self.synth.k, self.synth.seed, self.synth)
            feats = np.stack([candidate_features(scenario, c) for c in cands])
            hit = (cands, feats)
            self._library[scenario.id] = hit
        return hit

    def candidate_set(self, scenario: Scenario) -> CandidateSet:
        cands, feats = self.library(scenario)
        return CandidateSet(scenario.id, cands, feats, logits(self.params, feats), logits(self.ref, feats))

    def clone(self) -> "Generator":
        g = Generator(self.params.copy(), self.ref, self.synth)
        g._library = self._library
        return g

    def to_dict(self) -> dict:
        synth = asdict(self.synth)
        synth["family_weights"] = list(synth["family_weights"])
        return {"format": 1, "params": self.params.to_list(), "ref": self.ref.to_list(), "synth": synth}

    @classmethod
    def from_dict(cls, d: dict) -> "Generator":
        if d.get("format") != 1:
            raise ValueError(f"unsupported generator format {d.get('format')!r}")
        synth = dict(d["synth"])
        synth["family_weights"] = tuple(synth["family_weights"])
        return cls(GeneratorParams(np.array(d["params"])), freeze_reference(GeneratorParams(np.array(d["ref"]))),
                   SynthConfig(**synth))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)
