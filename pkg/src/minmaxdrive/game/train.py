"""Closed-loop min-max training: ego updates alternate with IPL blocks.

Phase 2 (ego): pick a context, sample an attack from the current generator
by Gibbs selection over proxy returns (or replay the log, per the
curriculum), roll out, update the history, and step the policy once the
on-policy batch is full.  Phase 1 (adversary): every ``n_freq`` ego updates,
run ``k_ipl`` IPL rounds on fresh context batches.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..adversary import (
    AdversaryChoice, EgoHistoryBuffer, ProxyConfig, SamplerConfig, sample_adversary, update_history,
    warmup_if_empty,
)
from ..generator import Generator, SynthConfig
from ..ipl import IplConfig, run_ipl_round
from ..rl.grpo import GrpoConfig, group_batch, grpo_update
from ..rl.optim import Adam
from ..rl.policy import NetPolicy, init_params
from ..rl.ppo import PpoConfig, episode_batch, ppo_update
from ..sim.core import Terminal, rollout_episode
from .checkpoint import load_checkpoint, save_checkpoint

METRICS_FORMAT = 1


class TrainingDiverged(RuntimeError):
    """A parameter vector became non-finite; the last good state was checkpointed."""


@dataclass(frozen=True)
class TrainConfig:
    algorithm: str = "grpo"
    total_timesteps: int = 200_000
    seed: int = 0
    adversarial: bool = True
    ipl: bool = True
    n_freq: int = 5
    k_ipl: int = 5
    ipl_batch: int = 16
    replay_floor: float = 0.1
    curriculum_fraction: float = 0.2
    checkpoint_every: int = 0
    eval_every: int = 0
    eval_episodes: int = 20
    init_log_std: float = -1.0
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    proxy: ProxyConfig = field(default_factory=ProxyConfig)
    grpo: GrpoConfig = field(default_factory=GrpoConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    ipl_cfg: IplConfig = field(default_factory=IplConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        if self.algorithm not in ("grpo", "ppo"):
            raise ValueError("algorithm must be 'grpo' or 'ppo'")
        if self.n_freq < 1:
            raise ValueError("n_freq must be >= 1")
        if not 0.0 <= self.replay_floor <= 1.0:
            raise ValueError("replay_floor must lie in [0, 1]")
        if self.total_timesteps < 1:
            raise ValueError("total_timesteps must be positive")

    @property
    def update_timesteps(self) -> int:
        return self.grpo.update_timesteps if self.algorithm == "grpo" else self.ppo.update_timesteps

    def to_dict(self) -> dict:
        return config_to_dict(self)


def config_to_dict(cfg) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = config_to_dict(v) if is_dataclass(v) else (list(v) if isinstance(v, tuple) else v)
    return out


def config_from_dict(cls, d: dict):
    """Build a (nested) frozen config dataclass, rejecting unknown keys."""
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(d) - set(known))
    if unknown:
        raise KeyError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in d.items():
        cur = getattr(defaults, name)
        if is_dataclass(cur):
            kwargs[name] = config_from_dict(type(cur), value)
        elif isinstance(cur, tuple):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def replay_probability(cfg: TrainConfig, progress: float) -> float:
    """Chance of replaying the logged adversary: 1 -> floor over the first fraction of training."""
    if not cfg.adversarial:
        return 1.0
    if cfg.curriculum_fraction <= 0:
        return cfg.replay_floor
    sched = 1.0 - (1.0 - cfg.replay_floor) * min(progress / cfg.curriculum_fraction, 1.0)
    return max(cfg.replay_floor, sched)


@dataclass
class TrainState:
    theta: np.ndarray
    opt: Adam
    gen: Generator
    buffer: EgoHistoryBuffer
    rng: np.random.Generator
    timesteps: int = 0
    ego_updates: int = 0
    ipl_rounds: int = 0
    ipl_updates: int = 0
    episodes: int = 0
    metrics_lines: int = 0


def new_state(cfg: TrainConfig) -> TrainState:
    rng = np.random.default_rng(cfg.seed)
    theta = init_params(rng, cfg.init_log_std)
    lr = cfg.grpo.lr if cfg.algorithm == "grpo" else cfg.ppo.lr
    clip = cfg.grpo.max_grad_norm if cfg.algorithm == "grpo" else cfg.ppo.max_grad_norm
    return TrainState(theta, Adam(theta.size, lr, max_grad_norm=clip), Generator(synth=cfg.synth),
                      EgoHistoryBuffer(), rng)


def state_payload(state: TrainState, cfg: TrainConfig) -> dict:
    return {
        "policy": {"theta": state.theta.tolist(), "adam": state.opt.state_dict()},
        "generator": state.gen.to_dict(),
        "buffer": state.buffer.to_dict(),
        "rng": state.rng.bit_generator.state,
        "meta": {
            "timesteps": state.timesteps,
            "ego_updates": state.ego_updates,
            "ipl_rounds": state.ipl_rounds,
            "ipl_updates": state.ipl_updates,
            "episodes": state.episodes,
            "metrics_lines": state.metrics_lines,
            "config": cfg.to_dict(),
        },
    }


def state_from_payload(d: dict) -> TrainState:
    rng = np.random.default_rng()
    rng.bit_generator.state = d["rng"]
    m = d["meta"]
    gen = Generator.from_dict(d["generator"])
    return TrainState(
        theta=np.array(d["policy"]["theta"], dtype=np.float64),
        opt=Adam.from_state(d["policy"]["adam"]),
        gen=gen,
        buffer=EgoHistoryBuffer.from_dict(d["buffer"]),
        rng=rng,
        timesteps=m["timesteps"],
        ego_updates=m["ego_updates"],
        ipl_rounds=m["ipl_rounds"],
        ipl_updates=m["ipl_updates"],
        episodes=m["episodes"],
        metrics_lines=m["metrics_lines"],
    )


def load_policy(run_dir) -> np.ndarray:
    from .checkpoint import load_part

    return np.array(load_part(run_dir, "policy")["theta"], dtype=np.float64)


def load_generator(run_dir) -> Generator:
    from .checkpoint import load_part

    return Generator.from_dict(load_part(run_dir, "generator"))


class MetricsWriter:
    def __init__(self, path: Optional[Path], state: TrainState):
        self.path = path
        self.state = state
        self.records = []
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            lines = path.read_text().splitlines(keepends=True) if path.exists() else []
            path.write_text("".join(lines[: state.metrics_lines]))

    def write(self, rec: dict):
        rec = {"format": METRICS_FORMAT, **rec}
        self.records.append(rec)
        self.state.metrics_lines += 1
        if self.path is not None:
            with open(self.path, "a") as f:
                f.write(json.dumps(rec, sort_keys=True) + "\n")


def _seed(rng) -> int:
    return int(rng.integers(2**63))


def _finite(x: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(x)))


def _collect(cfg: TrainConfig, state: TrainState, corpus, p_replay: float):
    """Gather one on-policy batch; returns (episodes grouped, bookkeeping)."""
    policy = NetPolicy(state.theta)
    groups, logliks, j_chosen, attacks = [], [], [], 0
    steps = 0
    while steps < cfg.update_timesteps:
        sc = corpus[int(state.rng.integers(len(corpus)))]
        warmup_if_empty(state.buffer, sc, policy, state.rng)
        plan = None
        if state.rng.random() >= p_replay:
            cset = state.gen.candidate_set(sc)
            choice: AdversaryChoice = sample_adversary(cset, state.gen.params, state.buffer, sc, cfg.sampler,
                                                       state.rng, cfg.proxy)
            plan = choice.plan
            attacks += 1
            logliks.append(choice.loglik)
            j_chosen.append(choice.chosen_j)
        n_members = cfg.grpo.group_size if cfg.algorithm == "grpo" else 1
        eps = [rollout_episode(policy, sc, plan, _seed(state.rng), cfg.grpo.gamma, record=True)
               for _ in range(n_members)]
        for ep in eps:
            update_history(state.buffer, sc.id, ep.ego)
            steps += ep.length
        groups.append(eps)
    return groups, steps, logliks, j_chosen, attacks


def _episode_stats(episodes) -> dict:
    return {
        "mean_return": float(np.mean([e.ret for e in episodes])),
        "crash_rate": float(np.mean([e.terminal is Terminal.CRASH for e in episodes])),
        "route_completion": float(np.mean([e.route_completion for e in episodes])),
        "cost": float(np.mean([e.cost for e in episodes])),
        "episodes": len(episodes),
    }


def _checkpoint(run_dir, state, cfg):
    if run_dir is not None:
        save_checkpoint(run_dir, state_payload(state, cfg))


def train(cfg: TrainConfig, corpus, run_dir=None, resume: bool = False, eval_corpus=None,
          stop_after_updates: Optional[int] = None) -> dict:
    """Run training; returns {"theta", "generator", "records", "state"}."""
    if not corpus:
        raise ValueError("training corpus is empty")
    run_dir = Path(run_dir) if run_dir is not None else None
    if resume:
        if run_dir is None:
            raise ValueError("resume needs a run directory")
        state = state_from_payload(load_checkpoint(run_dir))
    else:
        state = new_state(cfg)
    metrics = MetricsWriter(run_dir / "metrics.jsonl" if run_dir else None, state)
    policy_cfg = cfg.grpo if cfg.algorithm == "grpo" else cfg.ppo
    updates_this_call = 0

    while state.timesteps < cfg.total_timesteps:
        if stop_after_updates is not None and updates_this_call >= stop_after_updates:
            break
        p_replay = replay_probability(cfg, state.timesteps / cfg.total_timesteps)
        groups, steps, logliks, j_chosen, attacks = _collect(cfg, state, corpus, p_replay)
        episodes = [e for g in groups for e in g]
        if cfg.algorithm == "grpo":
            batch = type(group_batch(groups[0], cfg.grpo)).concat(group_batch(g, cfg.grpo) for g in groups)
            new_theta, upd = grpo_update(state.theta, state.opt, batch, cfg.grpo, state.rng)
        else:
            batch = episode_batch(episodes, cfg.ppo)
            new_theta, upd = ppo_update(state.theta, state.opt, batch, cfg.ppo, state.rng)
        if not _finite(new_theta):
            _checkpoint(run_dir, state, cfg)
            raise TrainingDiverged(
                f"non-finite policy parameters after ego update {state.ego_updates + 1}; "
                f"last good checkpoint kept in {run_dir}"
            )
        state.theta = new_theta
        state.timesteps += steps
        state.episodes += len(episodes)
        state.ego_updates += 1
        updates_this_call += 1
        metrics.write({
            "type": "ego_update",
            "step": state.timesteps,
            "update": state.ego_updates,
            "replay_probability": p_replay,
            "attacks": attacks,
            "sampled_logliks": logliks,
            "chosen_j": j_chosen,
            **_episode_stats(episodes),
            **{k: v for k, v in upd.items()},
        })

        if cfg.adversarial and cfg.ipl and state.ego_updates % cfg.n_freq == 0:
            policy = NetPolicy(state.theta)
            for _ in range(cfg.k_ipl):
                idx = state.rng.choice(len(corpus), size=min(cfg.ipl_batch, len(corpus)), replace=False)
                rep = run_ipl_round(state.gen, state.buffer, policy, [corpus[i] for i in idx], cfg.ipl_cfg,
                                    state.rng, cfg.proxy, state.ipl_updates)
                if not _finite(state.gen.params.weights):
                    raise TrainingDiverged(f"non-finite generator parameters in IPL round {state.ipl_rounds + 1}")
                state.ipl_rounds += 1
                state.ipl_updates += rep.updates
                metrics.write({"type": "ipl_round", "step": state.timesteps, "round": state.ipl_rounds,
                               **rep.to_dict()})

        if cfg.eval_every and state.ego_updates % cfg.eval_every == 0:
            metrics.write(_budget_record(cfg, state, corpus, eval_corpus))
        if cfg.checkpoint_every and state.ego_updates % cfg.checkpoint_every == 0:
            _checkpoint(run_dir, state, cfg)
            if run_dir is not None:
                snap = run_dir / "snapshots" / f"u{state.ego_updates:05d}"
                save_checkpoint(snap, state_payload(state, cfg))

    _checkpoint(run_dir, state, cfg)
    return {"theta": state.theta, "generator": state.gen, "records": metrics.records, "state": state}


def _budget_record(cfg, state, corpus, eval_corpus) -> dict:
    """Train/eval return of the deterministic policy against logged adversaries."""
    pol = NetPolicy(state.theta, deterministic=True)
    n = cfg.eval_episodes

    def mean_ret(scs):
        return float(np.mean([rollout_episode(pol, s, None, 0).ret for s in scs[:n]]))

    train_ret = mean_ret(corpus)
    eval_ret = mean_ret(eval_corpus) if eval_corpus else None
    return {"type": "budget", "step": state.timesteps, "update": state.ego_updates,
            "train_return": train_ret, "eval_return": eval_ret,
            "gap": None if eval_ret is None else train_ret - eval_ret}
