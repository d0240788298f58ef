"""Tabular zero-sum Markov games: exact Gibbs adversaries, the soft-robust
Bellman operator, Nash value iteration and numeric checks of the divergence
bounds (value difference, generator divergence, generalization, safety).

The adversary picks an outcome Y from G(.|s,a); the next state is drawn from
P(.|s,a,Y).  Its per-step objective is E_G[Q] + tau * KL(G || prior), so the
inner minimum is the soft-min ``softmin_omega``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

VI_MAX_ITER = 100_000
VI_TOL = 1e-10


@dataclass
class TabularGame:
    reward: np.ndarray       # (S, A)
    transition: np.ndarray   # (S, A, Y, S)
    prior: np.ndarray        # (S, A, Y)
    gamma: float
    tau: float
    cost: Optional[np.ndarray] = None  # (S, A), values in [0, C_max]

    def __post_init__(self):
        S, A = self.reward.shape
        if self.transition.shape[:2] != (S, A) or self.transition.shape[3] != S:
            raise ValueError("transition must be (S, A, Y, S)")
        if self.prior.shape != self.transition.shape[:3]:
            raise ValueError("prior must be (S, A, Y)")
        if np.max(np.abs(self.transition.sum(-1) - 1.0)) > 1e-12 or np.any(self.transition < 0):
            raise ValueError("transition rows must be distributions")
        if np.max(np.abs(self.prior.sum(-1) - 1.0)) > 1e-12 or np.any(self.prior < 0):
            raise ValueError("prior rows must be distributions")
        if not 0.0 <= self.gamma < 1.0 or not self.tau > 0:
            raise ValueError("need 0 <= gamma < 1 and tau > 0")

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    @property
    def n_outcomes(self) -> int:
        return self.prior.shape[2]

    @property
    def r_max(self) -> float:
        return float(np.max(np.abs(self.reward)))


def _dirichlet(rng, shape, k):
    g = rng.gamma(1.0, size=tuple(shape) + (k,))
    g = np.maximum(g, 1e-300)
    out = g / g.sum(-1, keepdims=True)
    return out / out.sum(-1, keepdims=True)


def random_game(rng, n_states: int = 4, n_actions: int = 3, n_outcomes: int = 3, gamma: Optional[float] = None,
                tau: Optional[float] = None, with_cost: bool = False) -> TabularGame:
    """Rewards U[-1, 1]; transitions and priors Dirichlet(1)."""
    gamma = float(rng.choice([0.9, 0.99])) if gamma is None else gamma
    tau = float(rng.choice([0.1, 1.0])) if tau is None else tau
    S, A, Y = n_states, n_actions, n_outcomes
    cost = rng.uniform(0.0, 1.0, (S, A)) if with_cost else None
    return TabularGame(rng.uniform(-1.0, 1.0, (S, A)), _dirichlet(rng, (S, A, Y), S), _dirichlet(rng, (S, A), Y),
                       gamma, tau, cost)


# -- Gibbs posterior and soft-min ------------------------------------------------------

@dataclass(frozen=True)
class GibbsPosterior:
    probs: np.ndarray
    log_z: float


def gibbs_posterior(prior, energies, tau: float) -> GibbsPosterior:
    """p(Y) proportional to prior(Y) * exp(-J(Y) / tau)."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    prior = np.asarray(prior, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logits = np.log(prior) - np.asarray(energies, dtype=np.float64) / tau
    log_z = float(logsumexp(logits))
    return GibbsPosterior(np.exp(logits - log_z), log_z)


def softmin_omega(q, prior, tau: float) -> float:
    """-tau * log E_prior[exp(-Q / tau)]."""
    return -tau * gibbs_posterior(prior, q, tau).log_z


def _omega_all(game: TabularGame, V: np.ndarray) -> np.ndarray:
    """Omega_V(s, a) for every state-action pair, shape (S, A)."""
    Q = game.reward[:, :, None] + game.gamma * game.transition @ V
    with np.errstate(divide="ignore"):
        z = np.log(game.prior) - Q / game.tau
    return -game.tau * logsumexp(z, axis=-1)


def robust_bellman_apply(game: TabularGame, V: np.ndarray) -> np.ndarray:
    """(T_rob V)(s) = max_a Omega_V(s, a)."""
    V = np.asarray(V, dtype=np.float64)
    if not np.all(np.isfinite(V)):
        raise ValueError("V must be finite")
    return _omega_all(game, V).max(axis=1)


def contraction_ratio(game: TabularGame, V1, V2, operator: Optional[Callable] = None) -> float:
    op = operator or robust_bellman_apply
    den = float(np.max(np.abs(np.asarray(V1) - np.asarray(V2))))
    if den == 0.0:
        raise ValueError("V1 == V2: contraction ratio undefined")
    return float(np.max(np.abs(op(game, V1) - op(game, V2)))) / den


@dataclass
class NashSolution:
    V: np.ndarray
    policy: np.ndarray     # (S,) greedy action index
    adversary: np.ndarray  # (S, A, Y) Gibbs posterior at V
    iterations: int
    errors: list = field(default_factory=list)


class NotConverged(RuntimeError):
    pass


def solve_nash_vi(game: TabularGame, tol: float = VI_TOL, max_iter: int = VI_MAX_ITER,
                  operator: Optional[Callable] = None) -> NashSolution:
    """Value iteration with T_rob until successive iterates differ by < tol."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    op = operator or robust_bellman_apply
    V = np.zeros(game.n_states)
    deltas = []
    for it in range(1, max_iter + 1):
        V_new = op(game, V)
        if not np.all(np.isfinite(V_new)):
            raise NotConverged(f"value iteration diverged at iteration {it}")
        d = float(np.max(np.abs(V_new - V)))
        deltas.append(d)
        V = V_new
        if d < tol:
            break
    else:
        raise NotConverged(f"value iteration did not reach tol={tol} in {max_iter} iterations")
    return NashSolution(V, _omega_all(game, V).argmax(axis=1), gibbs_adversary(game, V), it, deltas)


def gibbs_adversary(game: TabularGame, V: np.ndarray) -> np.ndarray:
    Q = game.reward[:, :, None] + game.gamma * game.transition @ V
    with np.errstate(divide="ignore"):
        z = np.log(game.prior) - Q / game.tau
    return np.exp(z - logsumexp(z, axis=-1, keepdims=True))


# -- policy evaluation -----------------------------------------------------------------

def _policy_matrix(game: TabularGame, policy) -> np.ndarray:
    pi = np.asarray(policy)
    if pi.ndim == 1:
        out = np.zeros((game.n_states, game.n_actions))
        out[np.arange(game.n_states), pi.astype(int)] = 1.0
        return out
    return pi.astype(np.float64)


def _kl_rows(p, q) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return terms.sum(-1)


def induced_dynamics(game: TabularGame, adversary: np.ndarray) -> np.ndarray:
    """P(s' | s, a) = sum_Y G(Y | s, a) P(s' | s, a, Y)."""
    return np.einsum("say,sayt->sat", adversary, game.transition)


def regularized_value(game: TabularGame, policy, adversary) -> np.ndarray:
    """Exact J_tau(pi, G) per start state: reward plus tau * KL(G || prior) at every step."""
    pi = _policy_matrix(game, policy)
    r = game.reward + game.tau * _kl_rows(adversary, game.prior)
    P = induced_dynamics(game, adversary)
    r_pi = (pi * r).sum(1)
    P_pi = np.einsum("sa,sat->st", pi, P)
    return np.linalg.solve(np.eye(game.n_states) - game.gamma * P_pi, r_pi)


def policy_value(reward: np.ndarray, dynamics: np.ndarray, policy: np.ndarray, gamma: float) -> np.ndarray:
    r_pi = (policy * reward).sum(1)
    P_pi = np.einsum("sa,sat->st", policy, dynamics)
    return np.linalg.solve(np.eye(reward.shape[0]) - gamma * P_pi, r_pi)


def discounted_visits(dynamics: np.ndarray, policy: np.ndarray, rho0: np.ndarray, gamma: float) -> np.ndarray:
    """sum_t gamma^t Pr(s_t = s) under the policy, shape (S,)."""
    P_pi = np.einsum("sa,sat->st", policy, dynamics)
    return np.linalg.solve((np.eye(P_pi.shape[0]) - gamma * P_pi).T, rho0)


@dataclass(frozen=True)
class SaddleCheck:
    worst_policy_violation: float     # max of J(pi, G*) - J(pi*, G*)
    worst_adversary_violation: float  # max of J(pi*, G*) - J(pi*, G)
    holds: bool


def saddle_check(game: TabularGame, sol: NashSolution, rng, deviations: int = 100, tol: float = 1e-6) -> SaddleCheck:
    """J(pi, G*) <= J(pi*, G*) <= J(pi*, G) against random deviations."""
    v_star = regularized_value(game, sol.policy, sol.adversary)
    worst_p, worst_g = -math.inf, -math.inf
    for _ in range(deviations):
        pi = _dirichlet(rng, (game.n_states,), game.n_actions)
        worst_p = max(worst_p, float(np.max(regularized_value(game, pi, sol.adversary) - v_star)))
        G = _dirichlet(rng, (game.n_states, game.n_actions), game.n_outcomes)
        worst_g = max(worst_g, float(np.max(v_star - regularized_value(game, sol.policy, G))))
    return SaddleCheck(worst_p, worst_g, worst_p <= tol and worst_g <= tol)


# -- divergences ---------------------------------------------------------------------

@dataclass(frozen=True)
class TvKl:
    tv: float
    kl: float
    pinsker_ok: bool
    support_violation: bool


def tv_kl_checks(p, q) -> TvKl:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    tv = 0.5 * float(np.sum(np.abs(p - q)))
    violation = bool(np.any((p > 0) & (q <= 0)))
    kl = math.inf if violation else max(float(_kl_rows(p, q)), 0.0)
    return TvKl(tv, kl, tv <= math.sqrt(0.5 * kl) + 1e-12, violation)


def kl_dual_oracle(q, prior, tau: float) -> float:
    """min over the simplex of E_G[Q] + tau * KL(G || prior), by SLSQP."""
    q = np.asarray(q, dtype=np.float64)
    prior = np.asarray(prior, dtype=np.float64)
    k = q.size

    def obj(g):
        g = np.clip(g, 1e-300, None)
        return float(g @ q + tau * np.sum(g * (np.log(g) - np.log(prior))))

    def jac(g):
        g = np.clip(g, 1e-300, None)
        return q + tau * (np.log(g) - np.log(prior) + 1.0)

    res = minimize(obj, prior.copy(), jac=jac, method="SLSQP", bounds=[(1e-12, 1.0)] * k,
                   constraints=[{"type": "eq", "fun": lambda g: g.sum() - 1.0, "jac": lambda g: np.ones(k)}],
                   options={"ftol": 1e-15, "maxiter": 1000})
    return float(res.fun)


def gibbs_objective(g, prior, energies, tau: float) -> float:
    """E_G[-J] - tau * KL(G || prior), maximized by the Gibbs posterior."""
    g = np.asarray(g, dtype=np.float64)
    return float(-(g @ np.asarray(energies)) - tau * _kl_rows(g, np.asarray(prior)))


# -- value difference and the bounds --------------------------------------------------------

def value_diff_check(reward: np.ndarray, dyn_p: np.ndarray, dyn_q: np.ndarray, policy, rho0, gamma: float) -> dict:
    """Both sides of the telescoping value-difference identity for one policy."""
    pi = np.asarray(policy, dtype=np.float64)
    v_p = policy_value(reward, dyn_p, pi, gamma)
    v_q = policy_value(reward, dyn_q, pi, gamma)
    lhs = float(rho0 @ v_p - rho0 @ v_q)
    gap = np.einsum("sa,sat,t->s", pi, dyn_p - dyn_q, v_q)
    rhs = float(gamma * discounted_visits(dyn_p, pi, rho0, gamma) @ gap)
    return {"lhs": lhs, "rhs": rhs, "residual": abs(lhs - rhs)}


def occupancy_sa(dynamics, policy, rho0, gamma) -> np.ndarray:
    """Normalized discounted state-action occupancy, (S, A), sums to 1."""
    d = (1.0 - gamma) * discounted_visits(dynamics, policy, rho0, gamma)
    return d[:, None] * policy


@dataclass(frozen=True)
class BoundCheck:
    lhs: float
    rhs: float
    expected_kl: float
    holds: bool


def generalization_gap_check(game: TabularGame, adversary: np.ndarray, policy, rho0) -> BoundCheck:
    """J(pi, P_ref) >= J(pi, P_psi) - gamma V_max sqrt(2) / (1 - gamma) * sqrt(E[KL(G_psi || G_ref)]).

    The prior plays the real dynamics; the expectation over contexts uses the
    discounted state-action occupancy under them.
    """
    pi = _policy_matrix(game, policy)
    g = game.gamma
    dyn_ref = induced_dynamics(game, game.prior)
    dyn_psi = induced_dynamics(game, adversary)
    j_ref = float(rho0 @ policy_value(game.reward, dyn_ref, pi, g))
    j_psi = float(rho0 @ policy_value(game.reward, dyn_psi, pi, g))
    occ = occupancy_sa(dyn_ref, pi, rho0, g)
    e_kl = float(np.sum(occ * _kl_rows(adversary, game.prior)))
    v_max = game.r_max / (1.0 - g)
    rhs = j_psi - g * v_max * math.sqrt(2.0) / (1.0 - g) * math.sqrt(max(e_kl, 0.0))
    return BoundCheck(j_ref, rhs, e_kl, j_ref >= rhs - 1e-12)


def divergence_bound_check(game: TabularGame, adversary: np.ndarray, policy) -> float:
    """Worst slack of |E_P[V] - E_P'[V]| <= 2 V_max TV(G, G') over state-action pairs (>= 0 means holds)."""
    pi = _policy_matrix(game, policy)
    dyn_psi = induced_dynamics(game, adversary)
    v = policy_value(game.reward, dyn_psi, pi, game.gamma)
    dyn_ref = induced_dynamics(game, game.prior)
    lhs = np.abs(np.einsum("sat,t->sa", dyn_ref - dyn_psi, v))
    tv = 0.5 * np.abs(adversary - game.prior).sum(-1)
    v_max = game.r_max / (1.0 - game.gamma)
    return float(np.min(2.0 * v_max * tv - lhs))


def safety_bound_check(game: TabularGame, adversary: np.ndarray, policy, rho0, delta: Optional[float] = None,
                       c_max: Optional[float] = None) -> BoundCheck:
    """J_C(pi, P_ref) <= delta + gamma C_max sqrt(2) / (1 - gamma)^2 * sqrt(E[KL]) when J_C(pi, P_psi) <= delta."""
    if game.cost is None:
        raise ValueError("game has no cost channel")
    pi = _policy_matrix(game, policy)
    g = game.gamma
    c_max = float(np.max(game.cost)) if c_max is None else c_max
    dyn_ref = induced_dynamics(game, game.prior)
    dyn_psi = induced_dynamics(game, adversary)
    jc_ref = float(rho0 @ policy_value(game.cost, dyn_ref, pi, g))
    jc_psi = float(rho0 @ policy_value(game.cost, dyn_psi, pi, g))
    delta = jc_psi if delta is None else delta
    if jc_psi > delta:
        raise ValueError("premise J_C(pi, P_psi) <= delta does not hold")
    occ = occupancy_sa(dyn_ref, pi, rho0, g)
    e_kl = float(np.sum(occ * _kl_rows(adversary, game.prior)))
    bound = delta + g * c_max * math.sqrt(2.0) / (1.0 - g) ** 2 * math.sqrt(max(e_kl, 0.0))
    return BoundCheck(jc_ref, bound, e_kl, jc_ref <= bound + 1e-12)


# -- sweeps ----------------------------------------------------------------------------

def _sizes(rng):
    return int(rng.integers(1, 9)), int(rng.integers(1, 5)), int(rng.integers(2, 5))


def verify_all(seed: int = 0, n_contraction: int = 1000, n_pairs: int = 10_000, n_value_diff: int = 500,
               n_bounds: int = 200, n_saddle: int = 50, operator: Optional[Callable] = None) -> dict:
    """Run every sweep; returns {check: {"passed", "worst", "n"}}."""
    rng = np.random.default_rng(seed)
    op = operator or robust_bellman_apply
    report = {}

    worst = -math.inf
    for _ in range(n_contraction):
        game = random_game(rng, *_sizes(rng))
        V1 = rng.normal(0, 10, game.n_states)
        V2 = rng.normal(0, 10, game.n_states)
        worst = max(worst, contraction_ratio(game, V1, V2, op) - game.gamma)
    report["contraction"] = {"passed": worst <= 1e-9, "worst": worst, "n": n_contraction}

    worst = -math.inf
    for _ in range(n_pairs // 100):
        k = int(rng.integers(2, 8))
        prior = _dirichlet(rng, (100,), k)
        q1, q2 = rng.normal(0, 5, (100, k)), rng.normal(0, 5, (100, k))
        tau = float(rng.choice([0.1, 1.0]))
        with np.errstate(divide="ignore"):
            o1 = -tau * logsumexp(np.log(prior) - q1 / tau, axis=1)
            o2 = -tau * logsumexp(np.log(prior) - q2 / tau, axis=1)
        worst = max(worst, float(np.max(np.abs(o1 - o2) - np.max(np.abs(q1 - q2), axis=1))))
    report["softmin_nonexpansive"] = {"passed": worst <= 1e-9, "worst": worst, "n": n_pairs}

    worst = -math.inf
    for _ in range(n_pairs):
        k = int(rng.integers(2, 8))
        p, q = _dirichlet(rng, (), k), _dirichlet(rng, (), k)
        r = tv_kl_checks(p, q)
        worst = max(worst, r.tv - math.sqrt(0.5 * r.kl))
    report["pinsker"] = {"passed": worst <= 1e-12, "worst": worst, "n": n_pairs}

    worst = 0.0
    for _ in range(n_value_diff):
        S, A = 4, int(rng.integers(1, 4))
        gamma = float(rng.choice([0.9, 0.99]))
        dyn_p = _dirichlet(rng, (S, A), S)
        dyn_q = _dirichlet(rng, (S, A), S)
        pi = _dirichlet(rng, (S,), A)
        rho0 = _dirichlet(rng, (), S)
        res = value_diff_check(rng.uniform(-1, 1, (S, A)), dyn_p, dyn_q, pi, rho0, gamma)
        worst = max(worst, res["residual"])
    report["value_difference"] = {"passed": worst < 1e-9, "worst": worst, "n": n_value_diff}

    worst_gen, worst_div, worst_safe = -math.inf, -math.inf, -math.inf
    for _ in range(n_bounds):
        game = random_game(rng, *_sizes(rng), with_cost=True)
        adv = _dirichlet(rng, (game.n_states, game.n_actions), game.n_outcomes)
        pi = _dirichlet(rng, (game.n_states,), game.n_actions)
        rho0 = _dirichlet(rng, (), game.n_states)
        gen = generalization_gap_check(game, adv, pi, rho0)
        worst_gen = max(worst_gen, gen.rhs - gen.lhs)
        worst_div = max(worst_div, -divergence_bound_check(game, adv, pi))
        safe = safety_bound_check(game, adv, pi, rho0)
        worst_safe = max(worst_safe, safe.lhs - safe.rhs)
    report["generalization_bound"] = {"passed": worst_gen <= 1e-12, "worst": worst_gen, "n": n_bounds}
    report["generator_divergence"] = {"passed": worst_div <= 1e-12, "worst": worst_div, "n": n_bounds}
    report["safety_bound"] = {"passed": worst_safe <= 1e-12, "worst": worst_safe, "n": n_bounds}

    worst = -math.inf
    for _ in range(n_saddle):
        game = random_game(rng, *_sizes(rng))
        try:
            sol = solve_nash_vi(game, operator=op)
        except NotConverged:
            worst = math.inf
            break
        chk = saddle_check(game, sol, rng)
        worst = max(worst, chk.worst_policy_violation, chk.worst_adversary_violation)
    report["saddle"] = {"passed": worst <= 1e-6, "worst": worst, "n": n_saddle}

    report["all_passed"] = all(v["passed"] for v in report.values() if isinstance(v, dict))
    return report


def faulty_operator(game: TabularGame, V: np.ndarray) -> np.ndarray:
    """Deliberately expansive operator used to exercise the failure path."""
    return 2.0 * robust_bellman_apply(game, V)
