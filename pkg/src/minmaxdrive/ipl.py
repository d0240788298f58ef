"""Iterative preference learning for the adversary scorer.

Pairs come from proxy-labelled candidates of the current generator: the
lower-return candidate wins.  The loss is the DPO-style logistic loss on the
difference of policy/reference log-ratios, and since the scorer is linear
in fixed features its gradient is available in closed form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .adversary import EgoHistoryBuffer, ProxyConfig, estimate_many, kl_to_ref, warmup_if_empty
from .generator import CandidateSet, Generator, GeneratorParams, log_softmax, logits


@dataclass(frozen=True)
class IplConfig:
    tau_ipl: float = 0.05
    margin: float = 5.0
    diversity: float = 2.0
    pairs_per_scenario: int = 8
    accumulation: int = 16
    learning_rate: float = 1e-2
    rounds: int = 5
    cosine_steps: int = 0  # 0 keeps the learning rate constant

    def __post_init__(self):
        if not self.tau_ipl > 0:
            raise ValueError("tau_ipl must be positive")
        if self.margin < 0 or self.diversity < 0:
            raise ValueError("margin and diversity must be non-negative")
        if self.accumulation < 1 or self.pairs_per_scenario < 1:
            raise ValueError("accumulation and pairs_per_scenario must be >= 1")

    def lr_at(self, update_index: int) -> float:
        if self.cosine_steps <= 0:
            return self.learning_rate
        frac = min(update_index, self.cosine_steps) / self.cosine_steps
        return self.learning_rate * 0.5 * (1.0 + math.cos(math.pi * frac))


@dataclass(frozen=True)
class PreferencePair:
    scenario_id: str
    winner: int
    loser: int
    j_winner: float
    j_loser: float
    spatial_gap: float
    weight: float = 1.0

    def __post_init__(self):
        if self.winner == self.loser:
            raise ValueError("winner and loser must differ")


def spatial_gap(a, b) -> float:
    """Max pointwise distance between two time-aligned trajectories."""
    n = min(len(a), len(b))
    return float(np.max(np.hypot(*(a.poses[:n, :2] - b.poses[:n, :2]).T)))


def build_pairs(cset: CandidateSet, j_hats, cfg: IplConfig = IplConfig()) -> list:
    """Ordered pairs with margin > delta and gap > xi, largest margin first."""
    j = np.asarray(j_hats, dtype=np.float64)
    if j.shape[0] != cset.k:
        raise ValueError("j_hats must align with candidates")
    order = np.argsort(j, kind="stable")
    out = []
    for a in range(cset.k):
        w = int(order[a])
        for b in range(a + 1, cset.k):
            lo = int(order[b])
            if not j[lo] - j[w] > cfg.margin:
                continue
            gap = spatial_gap(cset.candidates[w], cset.candidates[lo])
            if gap > cfg.diversity:
                out.append(PreferencePair(cset.scenario_id, w, lo, float(j[w]), float(j[lo]), gap))
    out.sort(key=lambda p: (-(p.j_loser - p.j_winner), p.winner, p.loser))
    return out[: cfg.pairs_per_scenario]


def _pair_terms(params: GeneratorParams, ref: GeneratorParams, pairs, sets: dict, tau: float):
    """Per-pair logits z, weights and feature differences."""
    z, wts, dfeat = [], [], []
    cache = {}
    for p in pairs:
        cs = sets[p.scenario_id]
        if p.scenario_id not in cache:
            cache[p.scenario_id] = (
                log_softmax(logits(params, cs.features)) - log_softmax(logits(ref, cs.features))
            )
        ratio = cache[p.scenario_id]
        z.append(tau * (ratio[p.winner] - ratio[p.loser]))
        wts.append(p.weight)
        dfeat.append(cs.features[p.winner] - cs.features[p.loser])
    return np.array(z), np.array(wts), np.array(dfeat)


def _as_sets(sets) -> dict:
    if isinstance(sets, CandidateSet):
        return {sets.scenario_id: sets}
    if isinstance(sets, dict):
        return sets
    return {cs.scenario_id: cs for cs in sets}


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def ipl_loss(params: GeneratorParams, ref: GeneratorParams, pairs, sets, tau_ipl: float = 0.05) -> float:
    """Weighted mean of -log sigmoid(tau * (winner log-ratio - loser log-ratio))."""
    if not pairs:
        raise ValueError("empty preference batch")
    z, w, _ = _pair_terms(params, ref, pairs, _as_sets(sets), tau_ipl)
    return float(-np.sum(w * _log_sigmoid(z)) / np.sum(w))


def ipl_grad_sum(params: GeneratorParams, ref: GeneratorParams, pairs, sets, tau_ipl: float = 0.05):
    """Un-normalized (gradient sum, weight sum, loss sum) for streaming accumulation.

    The log-partition terms cancel inside each pair, so d z / d w is
    tau * (f_winner - f_loser).
    """
    if not pairs:
        return np.zeros_like(params.weights), 0.0, 0.0
    z, w, df = _pair_terms(params, ref, pairs, _as_sets(sets), tau_ipl)
    sig_neg = np.exp(_log_sigmoid(-z))
    g = -(w * sig_neg * tau_ipl) @ df
    return g, float(np.sum(w)), float(-np.sum(w * _log_sigmoid(z)))


def ipl_grad(params: GeneratorParams, ref: GeneratorParams, pairs, sets, tau_ipl: float = 0.05) -> np.ndarray:
    if not pairs:
        raise ValueError("empty preference batch")
    g, wsum, _ = ipl_grad_sum(params, ref, pairs, sets, tau_ipl)
    return g / wsum


def adversarial_utility(params: GeneratorParams, sets, j_hats: dict) -> float:
    """Mean over contexts of E_{Y ~ G}[-J(Y)]."""
    vals = []
    for sid, cs in _as_sets(sets).items():
        p = np.exp(log_softmax(logits(params, cs.features)))
        vals.append(-float(p @ j_hats[sid]))
    return float(np.mean(vals))


@dataclass
class IplRoundReport:
    scenarios: int
    pairs: int
    updates: int
    mean_loss: float | None
    kl_before: float
    kl_after: float
    utility_before: float
    utility_after: float
    learning_rate: float
    no_pairs: bool
    pair_counts: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def run_ipl_round(gen: Generator, buffer: EgoHistoryBuffer, policy, scenarios, cfg: IplConfig = IplConfig(),
                  rng=None, proxy: ProxyConfig = ProxyConfig(), update_index: int = 0) -> IplRoundReport:
    """Label, pair and update over a batch; one parameter step per ``cfg.accumulation`` scenarios."""
    rng = rng if rng is not None else np.random.default_rng(0)
    sets, labels, counts = {}, {}, []
    for sc in scenarios:
        warmup_if_empty(buffer, sc, policy, rng)
        cs = gen.candidate_set(sc)
        sets[sc.id] = cs
        labels[sc.id] = estimate_many(cs.candidates, buffer, sc, proxy)
    kl_before = kl_to_ref(gen.params, gen.ref, sets.values())
    util_before = adversarial_utility(gen.params, sets, labels)

    total_pairs, updates, loss_sum, wsum_all = 0, 0, 0.0, 0.0
    ids = [sc.id for sc in scenarios]
    lr = cfg.lr_at(update_index)
    for start in range(0, len(ids), cfg.accumulation):
        g_acc = np.zeros_like(gen.params.weights)
        w_acc = 0.0
        for sid in ids[start:start + cfg.accumulation]:
            pairs = build_pairs(sets[sid], labels[sid], cfg)
            counts.append(len(pairs))
            g, wsum, lsum = ipl_grad_sum(gen.params, gen.ref, pairs, sets[sid], cfg.tau_ipl)
            g_acc += g
            w_acc += wsum
            loss_sum += lsum
            total_pairs += len(pairs)
        if w_acc > 0:
            lr = cfg.lr_at(update_index + updates)
            gen.params = GeneratorParams(gen.params.weights - lr * g_acc / w_acc)
            updates += 1
        wsum_all += w_acc

    for sid, cs in sets.items():
        sets[sid] = CandidateSet(sid, cs.candidates, cs.features, logits(gen.params, cs.features), cs.logits_ref)
    return IplRoundReport(
        scenarios=len(ids),
        pairs=total_pairs,
        updates=updates,
        mean_loss=loss_sum / wsum_all if wsum_all > 0 else None,
        kl_before=kl_before,
        kl_after=kl_to_ref(gen.params, gen.ref, sets.values()),
        utility_before=util_before,
        utility_after=adversarial_utility(gen.params, sets, labels),
        learning_rate=lr,
        no_pairs=total_pairs == 0,
        pair_counts=counts,
    )
