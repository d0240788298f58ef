"""On-policy sample storage shared by GRPO and PPO."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Batch:
    obs: np.ndarray        # (N, 34)
    u: np.ndarray          # (N, 2) pre-squash actions
    logp_old: np.ndarray   # (N,)
    advantages: np.ndarray  # (N,)
    returns: np.ndarray    # (N,) value targets (PPO only)

    def __len__(self):
        return int(self.obs.shape[0])

    def take(self, idx) -> "Batch":
        return Batch(self.obs[idx], self.u[idx], self.logp_old[idx], self.advantages[idx], self.returns[idx])

    @staticmethod
    def concat(parts) -> "Batch":
        parts = list(parts)
        return Batch(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                       ("obs", "u", "logp_old", "advantages", "returns")))


def episode_arrays(ep):
    """(obs, u, logp, value) arrays from an episode recorded with a NetPolicy."""
    if ep.obs is None or not ep.infos:
        raise ValueError("episode was not recorded with policy infos")
    u = np.array([i["u"] for i in ep.infos])
    logp = np.array([i["logp"] for i in ep.infos])
    value = np.array([i["value"] for i in ep.infos])
    return ep.obs, u, logp, value


def minibatches(n: int, size: int, rng):
    perm = rng.permutation(n)
    for start in range(0, n, size):
        yield perm[start:start + size]
