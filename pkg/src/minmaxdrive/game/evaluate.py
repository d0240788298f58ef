"""Cross-validation of policies against adversary modes, and the bound monitor."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..adversary import (
    EgoHistoryBuffer, ProxyConfig, SamplerConfig, kl_to_ref, sample_adversary, sample_prior,
)
from ..generator import Generator, GeneratorParams
from ..rl.policy import NetPolicy
from ..sim.core import GAMMA, LIDAR_RANGE, MAX_SPEED, R_SUCCESS, SPEED_REWARD, DT, Terminal, rollout_episode

ADVERSARY_MODES = ("replay", "prior-sample", "energy-sample", "ipl-energy-sample", "hard-min")
CSV_COLUMNS = ("policy", "adversary", "rc", "crash", "reward", "cost", "se_rc", "se_crash", "se_reward", "se_cost")


def as_policy(p, deterministic: bool = True):
    """Accept a parameter vector or anything with ``act``."""
    if isinstance(p, np.ndarray):
        return NetPolicy(p, deterministic=deterministic)
    return p


def _se(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0


def _episode_seed(seed: int, scenario_index: int, episode: int) -> int:
    return int(np.random.SeedSequence([seed, scenario_index, episode]).generate_state(1)[0])


def choose_plan(mode: str, sc, gen: Generator, ref_params: GeneratorParams, buffer, rng, sampler: SamplerConfig,
                proxy: ProxyConfig):
    if mode == "replay":
        return None
    cset = gen.candidate_set(sc)
    if mode == "prior-sample":
        return sample_prior(cset, ref_params, rng).plan
    if mode == "energy-sample":
        return sample_adversary(cset, ref_params, buffer, sc, sampler, rng, proxy).plan
    if mode == "ipl-energy-sample":
        return sample_adversary(cset, gen.params, buffer, sc, sampler, rng, proxy).plan
    if mode == "hard-min":
        hard = SamplerConfig(sampler.temperature, sampler.k_candidates, hard_min_mode=True)
        return sample_adversary(cset, gen.params, buffer, sc, hard, rng, proxy).plan
    raise ValueError(f"unknown adversary mode {mode!r}; choose from {ADVERSARY_MODES}")


def run_cell(policy, mode: str, corpus, episodes: int, gen: Generator, seed: int = 0,
             sampler: SamplerConfig = SamplerConfig(), proxy: ProxyConfig = ProxyConfig()) -> list:
    """Episodes of one policy x adversary cell (two-stage: ego reference, then attack)."""
    pol = as_policy(policy)
    out = []
    for e in range(episodes):
        i = e % len(corpus)
        sc = corpus[i]
        ep_seed = _episode_seed(seed, i, e // len(corpus))
        buffer = EgoHistoryBuffer()
        buffer.add(sc.id, rollout_episode(pol, sc, None, ep_seed).ego)
        rng = np.random.default_rng(ep_seed)
        plan = choose_plan(mode, sc, gen, gen.ref, buffer, rng, sampler, proxy)
        out.append(rollout_episode(pol, sc, plan, ep_seed))
    return out


def summarize(episodes) -> dict:
    rc = [e.route_completion for e in episodes]
    crash = [float(e.terminal is Terminal.CRASH) for e in episodes]
    ret = [e.ret for e in episodes]
    cost = [e.cost for e in episodes]
    return {
        "rc": float(np.mean(rc)), "crash": float(np.mean(crash)), "reward": float(np.mean(ret)),
        "cost": float(np.mean(cost)), "se_rc": _se(rc), "se_crash": _se(crash), "se_reward": _se(ret),
        "se_cost": _se(cost),
    }


def _cell_job(args):
    name, policy, mode, corpus, episodes, gen, seed, sampler, proxy = args
    return {"policy": name, "adversary": mode,
            **summarize(run_cell(policy, mode, corpus, episodes, gen, seed, sampler, proxy))}


def evaluate_cross(policies: dict, modes, corpus, episodes: int | None = None, gen: Generator | None = None,
                   seed: int = 0, sampler: SamplerConfig = SamplerConfig(), proxy: ProxyConfig = ProxyConfig(),
                   jobs: int = 1) -> list:
    """One summary row per (policy, adversary mode) cell, in input order."""
    gen = gen or Generator()
    episodes = episodes or len(corpus)
    for m in modes:
        if m not in ADVERSARY_MODES:
            raise ValueError(f"unknown adversary mode {m!r}; choose from {ADVERSARY_MODES}")
    jobs_list = [(name, pol, m, corpus, episodes, gen, seed, sampler, proxy)
                 for name, pol in policies.items() for m in modes]
    if jobs > 1 and len(jobs_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_cell_job, jobs_list))
    return [_cell_job(j) for j in jobs_list]


# -- bound monitor ---------------------------------------------------------------

def reward_bound(max_speed: float = MAX_SPEED) -> float:
    """Per-step |r| bound: max progress + speed term + terminal bonus magnitude."""
    return max_speed * DT + SPEED_REWARD * max_speed + R_SUCCESS


def bound_penalty(kl: float, gamma: float = GAMMA, v_max: float | None = None) -> float:
    v_max = reward_bound() / (1.0 - gamma) if v_max is None else v_max
    return gamma * v_max * math.sqrt(2.0) / (1.0 - gamma) * math.sqrt(max(kl, 0.0))


@dataclass
class BoundReport:
    robust_return: float
    mean_kl: float
    penalty: float
    certified_bound: float
    replay_return: float
    v_max: float

    @property
    def holds(self) -> bool:
        return self.replay_return >= self.certified_bound

    def to_dict(self) -> dict:
        return {**self.__dict__, "holds": self.holds}


def bound_report(policy, gen: Generator, corpus, episodes: int = 100, seed: int = 0,
                 gamma: float = GAMMA) -> BoundReport:
    """J(pi, P_psi) - penalty(KL) versus J(pi, P_ref), with shared episode seeds."""
    pol = as_policy(policy)
    v_max = reward_bound() / (1.0 - gamma)

    def mean_return(params):
        rets = []
        for e in range(episodes):
            i = e % len(corpus)
            sc = corpus[i]
            ep_seed = _episode_seed(seed, i, e // len(corpus))
            rng = np.random.default_rng(ep_seed)
            plan = sample_prior(gen.candidate_set(sc), params, rng).plan
            rets.append(rollout_episode(pol, sc, plan, ep_seed, gamma).ret)
        return float(np.mean(rets))

    robust = mean_return(gen.params)
    replay = mean_return(gen.ref)
    kl = kl_to_ref(gen.params, gen.ref, [gen.candidate_set(sc) for sc in corpus])
    pen = bound_penalty(kl, gamma, v_max)
    return BoundReport(robust, kl, pen, robust - pen, replay, v_max)
