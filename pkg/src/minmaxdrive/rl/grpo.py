"""GRPO with the step-aligned group advantage estimator.

All G members of a group start from the same scenario and adversary plan and
differ only in their action noise.  Advantages compare returns-to-go at the
same time step across the group; members that already terminated count as
zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .batch import Batch, episode_arrays, minibatches
from .optim import Adam
from .policy import dlogp_dheads, gaussian_logp, policy_backward, policy_forward


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 6
    clip_adv: float = 5.0
    kl_beta: float = 0.001
    clip_ratio: float = 0.2
    epochs: int = 10
    gamma: float = 0.99
    adv_eps: float = 1e-8
    lr: float = 3e-5
    minibatch: int = 256
    update_timesteps: int = 4096
    max_grad_norm: float = 0.5

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if not self.clip_adv > 0:
            raise ValueError("clip_adv must be positive")


def returns_to_go(rewards, gamma: float) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(r)
    acc = 0.0
    for t in range(r.shape[0] - 1, -1, -1):
        acc = r[t] + gamma * acc
        out[t] = acc
    return out


def grpo_advantages(rewards, gamma: float = 0.99, clip: float = 5.0, eps: float = 1e-8) -> list:
    """Per-member advantage arrays (same lengths as the inputs)."""
    seqs = [np.asarray(r, dtype=np.float64) for r in rewards]
    if len(seqs) < 2:
        raise ValueError("a group needs at least 2 members")
    T = max(s.shape[0] for s in seqs)
    R = np.zeros((len(seqs), T))
    for i, s in enumerate(seqs):
        R[i, : s.shape[0]] = returns_to_go(s, gamma)
    # centring on one member first keeps identical groups exactly zero under rounding
    D = R - R[0]
    mu = D.mean(axis=0)
    sigma = D.std(axis=0)
    A = np.clip((D - mu) / (sigma + eps), -clip, clip)
    return [A[i, : s.shape[0]] for i, s in enumerate(seqs)]


def group_batch(episodes, cfg: GrpoConfig) -> Batch:
    adv = grpo_advantages([ep.rewards for ep in episodes], cfg.gamma, cfg.clip_adv, cfg.adv_eps)
    parts = []
    for ep, a in zip(episodes, adv):
        obs, u, logp, _ = episode_arrays(ep)
        parts.append(Batch(obs, u, logp, a, np.zeros_like(a)))
    return Batch.concat(parts)


def grpo_loss_grad(theta: np.ndarray, mb: Batch, cfg: GrpoConfig):
    """Mean clipped-surrogate loss plus beta * k3 KL to the sampling policy, and its gradient."""
    fw = policy_forward(theta, mb.obs)
    logp = gaussian_logp(mb.u, fw.mean, fw.log_std)
    log_ratio = logp - mb.logp_old
    ratio = np.exp(log_ratio)
    A = mb.advantages
    clipped = np.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio)
    unclipped_active = ratio * A <= clipped * A
    surr = np.where(unclipped_active, ratio * A, clipped * A)
    # k3 estimator of KL(old || new): exp(-x) + x - 1 with x = logp_new - logp_old
    kl = np.exp(-log_ratio) + log_ratio - 1.0
    n = len(mb)
    loss = float(np.mean(-surr + cfg.kl_beta * kl))
    d_logp = (np.where(unclipped_active, -ratio * A, 0.0) + cfg.kl_beta * (1.0 - np.exp(-log_ratio))) / n
    dm, ds = dlogp_dheads(mb.u, fw.mean, fw.log_std)
    grad = policy_backward(theta, fw, d_logp[:, None] * dm, d_logp[:, None] * ds)
    stats = {"kl": float(np.mean(kl)), "clip_frac": float(np.mean(np.abs(ratio - 1.0) > cfg.clip_ratio))}
    return loss, grad, stats


def grpo_update(theta: np.ndarray, opt: Adam, batch: Batch, cfg: GrpoConfig, rng):
    """Epochs of minibatch descent on the GRPO loss; returns (theta, stats)."""
    losses, kls = [], []
    for _ in range(cfg.epochs):
        for idx in minibatches(len(batch), cfg.minibatch, rng):
            loss, grad, st = grpo_loss_grad(theta, batch.take(idx), cfg)
            theta = opt.step(theta, grad)
            losses.append(loss)
            kls.append(st["kl"])
    return theta, {"loss": float(np.mean(losses)), "kl": float(np.mean(kls))}
