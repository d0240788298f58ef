import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from minmaxdrive.rl import Adam, Batch, GrpoConfig, PpoConfig, gae, grpo_advantages, grpo_loss_grad, grpo_update
from minmaxdrive.rl import init_params, ppo_loss_grad, ppo_update
from minmaxdrive.rl.policy import (LOG_STD_MAX, LOG_STD_MIN, N_PARAMS, NetPolicy, gaussian_entropy, gaussian_logp,
                                   policy_forward, squashed_logp, unpack)
from minmaxdrive.sim.core import OBS_DIM


def _batch(rng, n=12, theta=None, adv=None):
    theta = init_params(rng) if theta is None else theta
    obs = rng.standard_normal((n, OBS_DIM))
    fw = policy_forward(theta, obs)
    u = fw.mean + np.exp(fw.log_std) * rng.standard_normal(fw.mean.shape)
    logp = gaussian_logp(u, fw.mean, fw.log_std)
    adv = rng.standard_normal(n) if adv is None else adv
    return theta, Batch(obs, u, logp, adv, rng.standard_normal(n))


def _fd_check(loss_fn, theta, grad, rng, n_dirs=6, h=1e-5):
    for _ in range(n_dirs):
        d = rng.standard_normal(theta.shape)
        d /= np.linalg.norm(d)
        fd = (loss_fn(theta + h * d) - loss_fn(theta - h * d)) / (2 * h)
        an = float(grad @ d)
        assert abs(fd - an) <= 1e-4 * max(abs(an), 1e-3), (fd, an)


# --- policy -------------------------------------------------------------------

def test_zero_weights_give_zero_heads():
    fw = policy_forward(np.zeros(N_PARAMS), np.ones(OBS_DIM))
    assert np.all(fw.mean == 0.0) and np.all(fw.value == 0.0) and np.all(fw.log_std == 0.0)


def test_forward_finite_and_clamped(rng):
    theta = init_params(rng) * 20.0
    fw = policy_forward(theta, rng.standard_normal((10_000, OBS_DIM)) * 10)
    assert np.all(np.isfinite(fw.mean)) and np.all(np.isfinite(fw.value))
    assert fw.log_std.min() >= LOG_STD_MIN and fw.log_std.max() <= LOG_STD_MAX


def test_forward_errors(rng):
    theta = init_params(rng)
    with pytest.raises(ValueError):
        policy_forward(theta, np.zeros(33))
    bad = np.zeros(OBS_DIM)
    bad[3] = np.nan
    with pytest.raises(ValueError):
        policy_forward(theta, bad)
    with pytest.raises(ValueError):
        unpack(np.zeros(N_PARAMS + 1))


def test_squashed_density_matches_change_of_variables(rng):
    mean = rng.standard_normal((500, 2))
    log_std = rng.uniform(-2, 0.5, (500, 2))
    u = mean + np.exp(log_std) * rng.standard_normal((500, 2))
    a = np.tanh(u)
    # independent oracle: per-dim normal pdf at atanh(a) times |d atanh / da| = 1 / (1 - a^2)
    sd = np.exp(log_std)
    pdf_u = np.exp(-0.5 * ((np.arctanh(a) - mean) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
    oracle = np.sum(np.log(pdf_u / (1.0 - a * a)), axis=1)
    got = squashed_logp(u, mean, log_std)
    ok = np.abs(a).max(axis=1) < 0.999  # keep the oracle away from float cancellation at |a|->1
    np.testing.assert_allclose(got[ok], oracle[ok], rtol=1e-9, atol=1e-7)


def test_squashed_density_integrates_to_one():
    grid = np.linspace(-1 + 1e-9, 1 - 1e-9, 400_001)
    u = np.arctanh(grid)[:, None]
    dens = np.exp(squashed_logp(u, np.array([[0.3]]), np.array([[-0.4]])))
    assert abs(np.trapezoid(dens, grid) - 1.0) < 1e-4


def test_entropy_closed_form():
    ls = np.array([[-0.7, 0.2]])
    expect = sum(0.5 * math.log(2 * math.pi * math.e * math.exp(2 * s)) for s in ls[0])
    assert abs(gaussian_entropy(ls)[0] - expect) < 1e-12


def test_net_policy_deterministic_mode(rng):
    theta = init_params(rng)
    obs = rng.standard_normal(OBS_DIM)
    a, info = NetPolicy(theta, deterministic=True).act(obs, None, None, rng)
    np.testing.assert_array_equal(a, np.tanh(policy_forward(theta, obs).mean[0]))
    assert np.all(np.abs(a) <= 1.0)


# --- GRPO advantages ------------------------------------------------------------

def test_grpo_hand_example():
    adv = grpo_advantages([[1.0], [2.0], [3.0]])
    s = math.sqrt(2.0 / 3.0)
    np.testing.assert_allclose(np.concatenate(adv), [-1 / s, 0.0, 1 / s], atol=1e-7)
    assert abs(adv[0][0] + 1.2247) < 1e-4


def test_grpo_padding_walkthrough():
    A = [1.0, 1.0, 1.0]
    B = [5.0]
    adv = grpo_advantages([A, B], gamma=0.9)
    assert len(adv[0]) == 3 and len(adv[1]) == 1
    # at t=2 the group is (1, 0): the survivor sits one std above the mean
    assert adv[0][2] > 0 and abs(adv[0][2] - 1.0) < 1e-7


def test_grpo_identical_group_is_zero():
    seq = [0.3, -1.0, 2.5, 0.1]
    for a in grpo_advantages([seq] * 6):
        assert np.all(a == 0.0)


def test_grpo_requires_two_members():
    with pytest.raises(ValueError):
        grpo_advantages([[1.0, 2.0]])
    with pytest.raises(ValueError):
        GrpoConfig(group_size=1)
    with pytest.raises(ValueError):
        GrpoConfig(clip_adv=0.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.floats(-20, 20), min_size=1, max_size=8), min_size=2, max_size=6),
       st.floats(-50, 50))
def test_grpo_bounded_and_shift_invariant(seqs, c):
    gamma, clip = 0.99, 5.0
    adv = grpo_advantages(seqs, gamma, clip)
    for a in adv:
        assert np.all(np.abs(a) <= clip)
    # equal lengths: a constant added to every reward shifts each R_t by the same amount
    T = min(len(s) for s in seqs)
    same = [s[:T] for s in seqs]
    base = grpo_advantages(same, gamma, clip)
    shifted = grpo_advantages([[r + c for r in s] for s in same], gamma, clip)
    R = np.array([[sum(gamma ** (k - t) * s[k] for k in range(t, T)) for t in range(T)] for s in same])
    spread = R.std(axis=0)
    for b, s in zip(base, shifted):
        keep = spread > 1e-3  # below this the eps guard and rounding dominate
        np.testing.assert_allclose(b[keep], s[keep], atol=1e-6)


# --- GRPO / PPO losses ----------------------------------------------------------

def test_grpo_gradient_matches_finite_differences(rng):
    theta, mb = _batch(rng, n=2)  # two steps of a toy episode
    theta = theta + 0.05 * rng.standard_normal(N_PARAMS)  # move off the sampling policy so the ratio is not 1
    cfg = GrpoConfig(clip_ratio=10.0)  # keep every sample inside the unclipped branch
    _, grad, _ = grpo_loss_grad(theta, mb, cfg)
    _fd_check(lambda t: grpo_loss_grad(t, mb, cfg)[0], theta, grad, rng)


def test_ppo_gradient_matches_finite_differences(rng):
    theta, mb = _batch(rng, n=8)
    theta = theta + 0.05 * rng.standard_normal(N_PARAMS)
    cfg = PpoConfig(clip_ratio=10.0)
    _, grad, _ = ppo_loss_grad(theta, mb, cfg)
    _fd_check(lambda t: ppo_loss_grad(t, mb, cfg)[0], theta, grad, rng)


def test_grpo_zero_advantage_leaves_params(rng):
    theta, mb = _batch(rng, n=20, adv=np.zeros(20))
    _, grad, _ = grpo_loss_grad(theta, mb, GrpoConfig())
    assert np.abs(grad).max() <= 1e-12
    new, _ = grpo_update(theta, Adam(N_PARAMS, lr=1e-3), mb, GrpoConfig(epochs=1), np.random.default_rng(0))
    # Adam divides by sqrt(v)+eps, so a zero gradient yields a zero step
    assert np.abs(new - theta).max() <= 1e-12


def test_grpo_clipped_samples_contribute_nothing(rng):
    theta, mb = _batch(rng, n=6, adv=np.ones(6))
    # ratio far above 1 + eps with positive advantage sits on the clip plateau
    mb.logp_old = mb.logp_old - 5.0
    cfg = GrpoConfig(kl_beta=0.0)
    _, grad, st_ = grpo_loss_grad(theta, mb, cfg)
    assert st_["clip_frac"] == 1.0
    assert np.all(grad == 0.0)


def test_updates_are_deterministic(rng):
    theta, mb = _batch(rng, n=40)
    outs = []
    for _ in range(2):
        t1, _ = grpo_update(theta.copy(), Adam(N_PARAMS, lr=1e-3), mb, GrpoConfig(epochs=2, minibatch=16),
                            np.random.default_rng(5))
        t2, _ = ppo_update(theta.copy(), Adam(N_PARAMS, lr=1e-3), mb, PpoConfig(epochs=2, minibatch=16),
                           np.random.default_rng(5))
        outs.append((t1, t2))
    np.testing.assert_array_equal(outs[0][0], outs[1][0])
    np.testing.assert_array_equal(outs[0][1], outs[1][1])


def test_grpo_bandit_improves():
    """Single-step bandit with reward -(a - 0.6)^2: the mean action should drift to 0.6."""
    rng = np.random.default_rng(3)
    theta = init_params(rng)
    obs = np.zeros((1, OBS_DIM))
    cfg = GrpoConfig(epochs=1, minibatch=64)
    opt = Adam(N_PARAMS, lr=3e-3)
    dist = []
    for _ in range(200):
        fw = policy_forward(theta, np.repeat(obs, 16, axis=0))
        u = fw.mean + np.exp(fw.log_std) * rng.standard_normal(fw.mean.shape)
        r = -np.sum((np.tanh(u) - 0.6) ** 2, axis=1)
        adv = np.concatenate(grpo_advantages([[x] for x in r]))
        mb = Batch(fw.obs, u, gaussian_logp(u, fw.mean, fw.log_std), adv, np.zeros(16))
        theta, _ = grpo_update(theta, opt, mb, cfg, rng)
        dist.append(float(np.abs(np.tanh(policy_forward(theta, obs).mean[0]) - 0.6).mean()))
    ma = np.convolve(dist, np.ones(10) / 10, mode="valid")
    assert ma[-1] < 0.5 * ma[0]
    assert np.polyfit(np.arange(ma.size), ma, 1)[0] < 0


# --- GAE ----------------------------------------------------------------------

def test_gae_hand_case_exact_values():
    r = np.array([1.0, 2.0, 3.0])
    g = 0.9
    # a value head that fits the discounted returns exactly
    v = np.array([1 + g * 2 + g * g * 3, 2 + g * 3, 3.0])
    adv, ret = gae(r, v, gamma=g, lam=0.95)
    np.testing.assert_allclose(adv, 0.0, atol=1e-12)
    np.testing.assert_allclose(ret, v, atol=1e-12)


def test_gae_hand_case_residuals():
    r = np.array([1.0, 0.0, 2.0])
    v = np.array([0.5, 0.2, 1.0])
    g, lam = 0.9, 0.8
    d = [1.0 + g * 0.2 - 0.5, 0.0 + g * 1.0 - 0.2, 2.0 - 1.0]
    expect = [d[0] + g * lam * d[1] + (g * lam) ** 2 * d[2], d[1] + g * lam * d[2], d[2]]
    adv, _ = gae(r, v, g, lam)
    np.testing.assert_allclose(adv, expect, atol=1e-12)


def test_gae_lambda_one_is_return_minus_baseline(rng):
    r = rng.standard_normal(15)
    v = rng.standard_normal(15)
    adv, _ = gae(r, v, 0.97, 1.0)
    R = np.array([sum(0.97 ** (k - t) * r[k] for k in range(t, 15)) for t in range(15)])
    np.testing.assert_allclose(adv, R - v, atol=1e-10)


def test_ppo_config_validation():
    with pytest.raises(ValueError):
        PpoConfig(lam=0.0)
    with pytest.raises(ValueError):
        PpoConfig(lam=1.5)


# --- optimizer ----------------------------------------------------------------

def test_adam_first_step_and_clip():
    opt = Adam(3, lr=0.1, max_grad_norm=1.0)
    g = np.array([30.0, 40.0, 0.0])  # norm 50, clipped to 1
    new = opt.step(np.zeros(3), g)
    # the first bias-corrected Adam step has magnitude lr per nonzero coordinate
    np.testing.assert_allclose(new, [-0.1, -0.1, 0.0], atol=1e-6)
    again = Adam.from_state(opt.state_dict())
    np.testing.assert_array_equal(again.m, opt.m)
    assert again.t == 1
