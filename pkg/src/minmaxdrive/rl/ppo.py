"""Clipped PPO with GAE and an entropy bonus."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .batch import Batch, episode_arrays, minibatches
from .optim import Adam
from .policy import dlogp_dheads, gaussian_entropy, gaussian_logp, policy_backward, policy_forward


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_ratio: float = 0.2
    vf_coef: float = 0.5
    ent_coef: float = 0.01
    epochs: int = 10
    lr: float = 3e-5
    update_timesteps: int = 4096
    minibatch: int = 256
    max_grad_norm: float = 0.5
    normalize_adv: bool = True

    def __post_init__(self):
        if not 0 < self.lam <= 1:
            raise ValueError("lam must lie in (0, 1]")


def gae(rewards, values, gamma: float = 0.99, lam: float = 0.95, last_value: float = 0.0):
    """Generalized advantage estimates and value targets for one episode."""
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    v_next = np.append(v[1:], last_value)
    delta = r + gamma * v_next - v
    adv = np.empty_like(r)
    acc = 0.0
    for t in range(r.shape[0] - 1, -1, -1):
        acc = delta[t] + gamma * lam * acc
        adv[t] = acc
    return adv, adv + v


def episode_batch(episodes, cfg: PpoConfig) -> Batch:
    parts = []
    for ep in episodes:
        obs, u, logp, value = episode_arrays(ep)
        adv, ret = gae(ep.rewards, value, cfg.gamma, cfg.lam)
        parts.append(Batch(obs, u, logp, adv, ret))
    return Batch.concat(parts)


def ppo_loss_grad(theta: np.ndarray, mb: Batch, cfg: PpoConfig):
    fw = policy_forward(theta, mb.obs)
    logp = gaussian_logp(mb.u, fw.mean, fw.log_std)
    ratio = np.exp(logp - mb.logp_old)
    A = mb.advantages
    if cfg.normalize_adv and len(mb) > 1:
        A = (A - A.mean()) / (A.std() + 1e-8)
    clipped = np.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio)
    unclipped_active = ratio * A <= clipped * A
    surr = np.where(unclipped_active, ratio * A, clipped * A)
    v_err = fw.value - mb.returns
    ent = gaussian_entropy(fw.log_std)
    n = len(mb)
    loss = float(np.mean(-surr + cfg.vf_coef * v_err**2 - cfg.ent_coef * ent))
    d_logp = np.where(unclipped_active, -ratio * A, 0.0) / n
    dm, ds = dlogp_dheads(mb.u, fw.mean, fw.log_std)
    d_mean = d_logp[:, None] * dm
    d_ls = d_logp[:, None] * ds - cfg.ent_coef / n
    d_v = 2.0 * cfg.vf_coef * v_err / n
    grad = policy_backward(theta, fw, d_mean, d_ls, d_v)
    return loss, grad, {"value_loss": float(np.mean(v_err**2)), "entropy": float(np.mean(ent))}


def ppo_update(theta: np.ndarray, opt: Adam, batch: Batch, cfg: PpoConfig, rng):
    losses = []
    for _ in range(cfg.epochs):
        for idx in minibatches(len(batch), cfg.minibatch, rng):
            loss, grad, _ = ppo_loss_grad(theta, batch.take(idx), cfg)
            theta = opt.step(theta, grad)
            losses.append(loss)
    return theta, {"loss": float(np.mean(losses))}
