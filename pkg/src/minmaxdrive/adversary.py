"""Inner-loop adversary sampling: rollout-free proxy returns against cached
ego trajectories, the per-context FIFO history, temperature-scaled Gibbs
selection and KL-to-prior monitoring.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .generator import CandidateSet, Generator, GeneratorParams, kl_categorical, log_softmax, logits
from .geom import frenet_project_many
from .sim.core import (
    GAMMA, OFFROAD_METERS, R_CRASH, R_OFFROAD, R_SUCCESS, SPEED_REWARD, SUCCESS_FRACTION,
    Scenario, Terminal, Trajectory, rollout_episode,
)

BUFFER_LENGTH = 5


@dataclass(frozen=True)
class ProxyConfig:
    r_success: float = R_SUCCESS
    r_crash: float = R_CRASH
    r_offroad: float = R_OFFROAD
    lambda_drive: float = 1.0
    speed_coef: float = SPEED_REWARD
    success_fraction: float = SUCCESS_FRACTION
    offroad_meters: float = OFFROAD_METERS
    gamma: float = GAMMA

    def __post_init__(self):
        if self.r_crash >= 0 or self.r_offroad >= 0 or self.r_success <= 0:
            raise ValueError("penalties must be negative and the success bonus positive")


@dataclass(frozen=True)
class SamplerConfig:
    temperature: float = 0.1
    k_candidates: int = 32
    hard_min_mode: bool = False

    def __post_init__(self):
        if not self.hard_min_mode and not self.temperature > 0:
            raise ValueError("temperature must be positive unless hard_min_mode")


# -- proxy return -------------------------------------------------------------

@dataclass(frozen=True)
class _EgoCache:
    """Per-(trajectory, scenario, config) quantities shared by every candidate."""

    dense_cum: np.ndarray  # dense_cum[t] = discounted dense reward of the first t steps
    first_bg: int          # first overlap with a non-adversary agent
    first_offroad: int
    first_success: int


def _first(mask: np.ndarray) -> int:
    idx = np.flatnonzero(mask)
    return int(idx[0]) if idx.size else -1


def _ego_cache(ego: Trajectory, scenario: Scenario, cfg: ProxyConfig) -> _EgoCache:
    store = ego.__dict__.setdefault("_proxy_cache", {})
    key = (scenario.id, cfg)
    hit = store.get(key)
    if hit is not None:
        return hit
    xy = np.ascontiguousarray(ego.poses[:, :2])
    sd = frenet_project_many(xy, scenario.ego_route)
    dmin = np.abs(sd[:, 1])
    for lane in scenario.lanes:
        dmin = np.minimum(dmin, np.abs(frenet_project_many(xy, lane)[:, 1]))
    v = ego.speed_profile()
    dense = cfg.lambda_drive * np.diff(sd[:, 0]) + cfg.speed_coef * v[1:]
    disc = cfg.gamma ** np.arange(dense.shape[0])
    dense_cum = np.concatenate([[0.0], np.cumsum(dense * disc)])
    n = min(len(ego), scenario.horizon_steps + 1)
    first_bg = -1
    for j, agent in enumerate(scenario.agents):
        if j == scenario.adversary_index:
            continue
        hit_j = kernels.first_overlap(ego.poses[:n], agent.trajectory.poses[:n], scenario.ego_length,
                                      scenario.ego_width, agent.length, agent.width)
        if hit_j >= 0 and (first_bg < 0 or hit_j < first_bg):
            first_bg = hit_j
    cache = _EgoCache(
        dense_cum,
        first_bg,
        _first(dmin > cfg.offroad_meters),
        _first(sd[:, 0] / scenario.ego_route.length > cfg.success_fraction),
    )
    store[key] = cache
    return cache


@dataclass(frozen=True)
class ProxyResult:
    value: float
    terminal: Terminal
    steps: int
    truncated: bool


def proxy_return_detail(ego: Trajectory, adv: Trajectory, scenario: Scenario,
                        cfg: ProxyConfig = ProxyConfig()) -> ProxyResult:
    """Discounted proxy return; summation stops at the first terminal event."""
    c = _ego_cache(ego, scenario, cfg)
    n = min(len(ego), len(adv))
    adv_dims = scenario.adversary
    first_adv = kernels.first_overlap(ego.poses[:n], adv.poses[:n], scenario.ego_length, scenario.ego_width,
                                      adv_dims.length, adv_dims.width)
    crash = [t for t in (first_adv, c.first_bg) if 0 <= t < n]
    events = (
        (min(crash) if crash else -1, Terminal.CRASH, cfg.r_crash),
        (c.first_offroad if c.first_offroad < n else -1, Terminal.OFFROAD, cfg.r_offroad),
        (c.first_success if c.first_success < n else -1, Terminal.SUCCESS, cfg.r_success),
    )
    best = None
    for t, kind, bonus in events:  # priority order, strict < keeps the earlier kind on ties
        if t >= 0 and (best is None or t < best[0]):
            best = (t, kind, bonus)
    if best is None:
        return ProxyResult(float(c.dense_cum[n - 1]), Terminal.TIMEOUT, n - 1, len(ego) != len(adv))
    t, kind, bonus = best
    value = c.dense_cum[t] + (cfg.gamma ** (t - 1) if t > 0 else 1.0) * bonus
    return ProxyResult(float(value), kind, t, False)


def proxy_return(ego: Trajectory, adv: Trajectory, scenario: Scenario, cfg: ProxyConfig = ProxyConfig()) -> float:
    return proxy_return_detail(ego, adv, scenario, cfg).value


# -- history buffer -------------------------------------------------------------

class EmptyBufferError(RuntimeError):
    pass


class EgoHistoryBuffer:
    """Per-context FIFO queues of recent ego trajectories."""

    def __init__(self, maxlen: int = BUFFER_LENGTH):
        if maxlen < 1:
            raise ValueError("maxlen must be >= 1")
        self.maxlen = maxlen
        self._q: dict = {}

    def __len__(self):
        return len(self._q)

    def get(self, scenario_id: str) -> list:
        return list(self._q.get(scenario_id, ()))

    def count(self, scenario_id: str) -> int:
        return len(self._q.get(scenario_id, ()))

    def add(self, scenario_id: str, ego: Trajectory):
        self._q.setdefault(scenario_id, deque(maxlen=self.maxlen)).append(ego)

    def ids(self) -> list:
        return sorted(self._q)

    def to_dict(self) -> dict:
        return {
            "format": 1,
            "maxlen": self.maxlen,
            "queues": {k: [t.to_dict() for t in q] for k, q in sorted(self._q.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EgoHistoryBuffer":
        if d.get("format") != 1:
            raise ValueError(f"unsupported buffer format {d.get('format')!r}")
        buf = cls(d["maxlen"])
        for k, items in d["queues"].items():
            for item in items:
                buf.add(k, Trajectory.from_dict(item))
        return buf

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def update_history(buffer: EgoHistoryBuffer, scenario_id: str, ego: Trajectory) -> EgoHistoryBuffer:
    buffer.add(scenario_id, ego)
    return buffer


def _seed_from(rng) -> int:
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(2**63))
    return int(rng)


def warmup_if_empty(buffer: EgoHistoryBuffer, scenario: Scenario, policy, rng) -> EgoHistoryBuffer:
    """Seed an empty context with one rollout against the logged adversary."""
    if buffer.count(scenario.id) == 0:
        ep = rollout_episode(policy, scenario, None, _seed_from(rng))
        buffer.add(scenario.id, ep.ego)
    return buffer


def estimate_expected_return(adv: Trajectory, buffer: EgoHistoryBuffer, scenario: Scenario,
                             cfg: ProxyConfig = ProxyConfig()) -> float:
    """Monte Carlo estimate of the ego's return against ``adv`` from the history."""
    egos = buffer.get(scenario.id)
    if not egos:
        raise EmptyBufferError(f"no cached ego trajectories for {scenario.id}; run warmup_if_empty first")
    return float(np.mean([proxy_return(e, adv, scenario, cfg) for e in egos]))


def estimate_many(cands, buffer, scenario, cfg: ProxyConfig = ProxyConfig()) -> np.ndarray:
    return np.array([estimate_expected_return(c, buffer, scenario, cfg) for c in cands])


# -- Gibbs selection -------------------------------------------------------------

@dataclass(frozen=True)
class Selection:
    probabilities: np.ndarray
    index: int


def selection_probs(j_hats, cfg: SamplerConfig) -> np.ndarray:
    j = np.asarray(j_hats, dtype=np.float64)
    if j.ndim != 1 or j.size == 0 or not np.all(np.isfinite(j)):
        raise ValueError("j_hats must be a non-empty finite vector")
    if cfg.hard_min_mode:
        p = np.zeros(j.size)
        p[int(np.argmin(j))] = 1.0
        return p
    return np.exp(log_softmax(-j / cfg.temperature))


def softmax_select(j_hats, cfg: SamplerConfig, rng) -> Selection:
    """p_k proportional to exp(-J_k / tau); hard mode picks the (lowest-index) argmin."""
    p = selection_probs(j_hats, cfg)
    if cfg.hard_min_mode:
        return Selection(p, int(np.argmax(p)))
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(p), u * p.sum(), side="right"))
    return Selection(p, min(idx, p.size - 1))


def kl_to_ref(gen_params: GeneratorParams, ref_params: GeneratorParams, candidate_sets) -> float:
    """Mean over contexts of KL(G_psi || G_ref) on each shared candidate set."""
    sets = list(candidate_sets)
    if not sets:
        return 0.0
    vals = [kl_categorical(log_softmax(logits(gen_params, cs.features)), log_softmax(logits(ref_params, cs.features)))
            for cs in sets]
    return float(np.mean(vals))


@dataclass
class AdversaryChoice:
    """One sampled attack: library index, plan and the sampler's bookkeeping."""

    index: int
    plan: Trajectory
    proposals: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    j_hats: np.ndarray = field(default_factory=lambda: np.zeros(0))
    probabilities: np.ndarray = field(default_factory=lambda: np.zeros(0))
    loglik: float = 0.0
    chosen_j: float = 0.0

    def record(self, scenario_id: str) -> dict:
        return {
            "scenario_id": scenario_id,
            "chosen": self.index,
            "j_hats": [round(float(x), 6) for x in self.j_hats],
            "probabilities": [round(float(x), 6) for x in self.probabilities],
        }


def sample_adversary(cset: CandidateSet, params: GeneratorParams, buffer: EgoHistoryBuffer, scenario: Scenario,
                     sampler: SamplerConfig, rng, proxy: ProxyConfig = ProxyConfig()) -> AdversaryChoice:
    """Draw K proposals from the categorical generator, then Gibbs-select among them."""
    logp = log_softmax(logits(params, cset.features))
    if sampler.hard_min_mode:
        j = estimate_many(cset.candidates, buffer, scenario, proxy)
        sel = softmax_select(j, sampler, rng)
        return AdversaryChoice(sel.index, cset.candidates[sel.index], np.arange(cset.k), j, sel.probabilities,
                               float(logp[sel.index]), float(j[sel.index]))
    proposals, j, sel = sir_select(
        logp, sampler.k_candidates, sampler, rng,
        lambda idx: estimate_many([cset.candidates[i] for i in idx], buffer, scenario, proxy))
    idx = int(proposals[sel.index])
    return AdversaryChoice(idx, cset.candidates[idx], proposals, j, sel.probabilities, float(logp[idx]),
                           float(j[sel.index]))


def sir_select(logp, k: int, sampler: SamplerConfig, rng, energy):
    """Draw ``k`` proposals from exp(logp), then Gibbs-select among them.

    ``energy(indices)`` returns J-hat for distinct library indices.  As ``k``
    grows the chosen index converges in law to prior * exp(-J / tau).
    """
    p = np.exp(logp)
    proposals = rng.choice(p.size, size=k, p=p / p.sum())
    uniq, inverse = np.unique(proposals, return_inverse=True)
    j = np.asarray(energy(uniq), dtype=np.float64)[inverse]
    return proposals, j, softmax_select(j, sampler, rng)


def sample_prior(cset: CandidateSet, params: GeneratorParams, rng) -> AdversaryChoice:
    logp = log_softmax(logits(params, cset.features))
    p = np.exp(logp)
    idx = int(rng.choice(cset.k, p=p / p.sum()))
    return AdversaryChoice(idx, cset.candidates[idx], loglik=float(logp[idx]))


def make_buffer(maxlen: Optional[int] = None) -> EgoHistoryBuffer:
    return EgoHistoryBuffer(maxlen or BUFFER_LENGTH)
