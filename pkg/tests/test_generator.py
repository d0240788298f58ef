import math

import numpy as np
import pytest

from minmaxdrive.generator import (
    N_FEATURES, CandidateSet, Generator, GeneratorParams, SynthConfig, candidate_features, freeze_reference,
    init_params, kl_categorical, log_prob, log_probs, log_softmax, sample_candidate, synthesize_candidates,
)
from minmaxdrive.sim import Scenario, make_synthetic_scenarios


def _windowed_curvature(poses, window=3.0):
    cum = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(poses[:, :2], axis=0).T))])
    yaw = np.unwrap(poses[:, 2])
    out = 0.0
    for i in range(len(poses)):
        j = int(np.searchsorted(cum, cum[i] + window))
        if j >= len(poses):
            break
        out = max(out, abs(yaw[j] - yaw[i]) / (cum[j] - cum[i]))
    return out


def toy_set(logits_cur, logits_ref=None, k=None):
    logits_cur = np.asarray(logits_cur, float)
    k = logits_cur.size
    return CandidateSet("toy", [None] * k, np.eye(k, N_FEATURES) if k <= N_FEATURES else np.zeros((k, N_FEATURES)),
                        logits_cur, logits_cur if logits_ref is None else np.asarray(logits_ref, float))


def test_candidates_contract(small_corpus):
    for sc in small_corpus:
        cands = synthesize_candidates(sc, 32, 0)
        assert len(cands) == 32
        assert cands[0] is sc.adversary.trajectory
        log = sc.adversary.trajectory
        v_cap = 1.5 * max(float(log.speed_profile().max()), 1.0)
        for c in cands:
            assert len(c) == sc.horizon_steps + 1
            assert np.all(np.isfinite(c.poses))
            assert np.allclose(c.poses[0, :2], log.poses[0, :2], atol=1e-9)
            assert abs(math.remainder(c.poses[0, 2] - log.poses[0, 2], 2 * math.pi)) < 0.05  # chord vs tangent
        for c in cands[1:]:
            assert float(c.speed_profile().max()) <= v_cap + 1e-9
            assert _windowed_curvature(c.poses) <= 0.2 + 1e-9


def test_candidates_deterministic_and_deduped(small_corpus):
    sc = small_corpus[1]
    a = synthesize_candidates(sc, 32, 5)
    b = synthesize_candidates(sc, 32, 5)
    assert all(np.array_equal(x.poses, y.poses) for x, y in zip(a, b))
    c = synthesize_candidates(sc, 32, 6)
    assert not all(np.array_equal(x.poses[-1], y.poses[-1]) for x, y in zip(a[1:], c[1:]))
    gaps = [np.max(np.hypot(*(a[i].poses[:, :2] - a[j].poses[:, :2]).T)) for i in range(32) for j in range(i)]
    assert np.mean(np.array(gaps) >= 0.5) > 0.95


def test_synthesis_errors(small_corpus):
    sc = small_corpus[0]
    with pytest.raises(ValueError):
        synthesize_candidates(sc, 1)
    bare = Scenario("bare", [], sc.ego_route, sc.ego_start, sc.ego_speed, sc.agents, sc.adversary_index,
                    sc.horizon_steps)
    with pytest.raises(ValueError):
        synthesize_candidates(bare, 8)


def test_features(small_corpus):
    lens = set()
    for sc in small_corpus:
        log = sc.adversary.trajectory
        f = candidate_features(sc, log)
        assert np.all(np.isfinite(f)) and f[0] == 1.0
        assert np.array_equal(f, candidate_features(sc, log))
        lens.add(f.size)
    assert lens == {N_FEATURES}


def test_log_prob_examples():
    cs = toy_set([1.0, 0.0, -1.0])
    zero = GeneratorParams(np.zeros(N_FEATURES))
    assert np.allclose(np.exp(log_probs(zero, cs)), 1 / 3)
    assert log_prob(zero, cs, 2) == pytest.approx(math.log(1 / 3))
    w = np.zeros(N_FEATURES)
    w[:3] = [1.0, 0.0, -1.0]
    lp = log_probs(GeneratorParams(w), cs)
    assert lp == pytest.approx([-0.40760596, -1.40760596, -2.40760596], abs=1e-8)
    assert np.sum(np.exp(lp)) == pytest.approx(1.0, abs=1e-12)
    assert log_softmax(np.array([1.0, 0.0, -1.0]) + 123.0) == pytest.approx(lp)
    with pytest.raises(IndexError):
        log_prob(zero, cs, 3)


def test_distribution_validity_random_logits():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        z = rng.normal(0, 50, int(rng.integers(1, 40)))
        p = np.exp(log_softmax(z))
        assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-9


def test_sample_candidate():
    rng = np.random.default_rng(0)
    one = toy_set([0.3])
    assert all(sample_candidate(GeneratorParams(np.ones(N_FEATURES)), one, 1.0, rng) == 0 for _ in range(20))
    cs = toy_set([0.0] * 4)
    zero = GeneratorParams(np.zeros(N_FEATURES))
    n = 100_000
    counts = np.bincount([sample_candidate(zero, cs, 1.0, rng) for _ in range(n)], minlength=4)
    sigma = math.sqrt(n * 0.25 * 0.75)
    assert np.all(np.abs(counts - n / 4) < 3 * sigma)
    w = np.zeros(N_FEATURES)
    w[:4] = [0.1, 0.5, 0.2, 0.0]
    picks = [sample_candidate(GeneratorParams(w), cs, 1e-4, rng) for _ in range(1000)]
    assert np.mean(np.array(picks) == 1) == 1.0
    with pytest.raises(ValueError):
        sample_candidate(zero, cs, 0.0, rng)


def test_freeze_reference_and_kl(small_corpus):
    gen = Generator()
    cs = gen.candidate_set(small_corpus[0])
    assert np.allclose(cs.logp_current() - cs.logp_ref(), 0.0)
    with pytest.raises(ValueError):
        gen.ref.weights[0] = 5.0
    ref = freeze_reference(init_params())
    before = log_probs(ref, cs).copy()
    for _ in range(100):
        gen.params.weights += 0.01
    assert np.array_equal(log_probs(gen.ref, cs), before)
    assert kl_categorical(cs.logp_current(), cs.logp_ref()) == pytest.approx(0.0, abs=1e-12)
    cs2 = gen.candidate_set(small_corpus[0])
    assert kl_categorical(cs2.logp_current(), cs2.logp_ref()) > 0
    rng = np.random.default_rng(1)
    for _ in range(1000):
        a, b = rng.normal(0, 3, 6), rng.normal(0, 3, 6)
        assert kl_categorical(log_softmax(a), log_softmax(b)) >= 0


def test_prior_concentrates_on_log(small_corpus):
    cs = Generator().candidate_set(small_corpus[0])
    p = np.exp(cs.logp_ref())
    assert np.argmax(p) == 0
    assert p[0] == pytest.approx(math.exp(2) / (math.exp(2) + cs.k - 1), rel=1e-2)


def test_generator_roundtrip(small_corpus):
    gen = Generator(synth=SynthConfig(k=16, seed=3))
    gen.params.weights[:] = np.random.default_rng(0).normal(size=N_FEATURES)
    back = Generator.from_dict(gen.to_dict())
    assert np.array_equal(back.params.weights, gen.params.weights)
    assert np.array_equal(back.ref.weights, gen.ref.weights) and not back.ref.weights.flags.writeable
    assert back.synth == gen.synth
    assert back.dumps() == gen.dumps()
    a, b = gen.candidate_set(small_corpus[2]), back.candidate_set(small_corpus[2])
    assert np.array_equal(a.logits_current, b.logits_current) and np.array_equal(a.features, b.features)
    bad = gen.to_dict()
    bad["format"] = 2
    with pytest.raises(ValueError):
        Generator.from_dict(bad)
