import json
import math

import numpy as np
import pytest

from minmaxdrive.game import (
    ADVERSARY_MODES, CheckpointError, TrainConfig, bound_penalty, bound_report, config_from_dict, evaluate_cross,
    load_checkpoint, replay_probability, reward_bound, train,
)
from minmaxdrive.game.train import load_generator, load_policy
from minmaxdrive.generator import Generator
from minmaxdrive.rl.grpo import GrpoConfig
from minmaxdrive.rl.ppo import PpoConfig
from minmaxdrive.sim import ReplayPolicy, Terminal, rollout_episode


def _cfg(**kw):
    base = dict(total_timesteps=2000, grpo=GrpoConfig(update_timesteps=400, epochs=2),
                ppo=PpoConfig(update_timesteps=400, epochs=2), n_freq=2, k_ipl=2, ipl_batch=3,
                curriculum_fraction=0.0)
    base.update(kw)
    return TrainConfig(**base)


def _lines(path):
    return path.read_text().splitlines()


# --- config and curriculum ----------------------------------------------------

def test_replay_probability_schedule():
    cfg = TrainConfig(replay_floor=0.1, curriculum_fraction=0.2)
    assert replay_probability(cfg, 0.0) == 1.0
    assert abs(replay_probability(cfg, 0.1) - 0.55) < 1e-12
    assert replay_probability(cfg, 0.2) == pytest.approx(0.1)
    assert replay_probability(cfg, 0.9) == pytest.approx(0.1)
    assert replay_probability(TrainConfig(adversarial=False), 0.5) == 1.0
    assert replay_probability(TrainConfig(replay_floor=1.0), 0.7) == 1.0


def test_config_validation_and_unknown_keys():
    with pytest.raises(ValueError):
        TrainConfig(n_freq=0)
    with pytest.raises(ValueError):
        TrainConfig(replay_floor=1.5)
    with pytest.raises(ValueError):
        TrainConfig(algorithm="sac")
    with pytest.raises(KeyError):
        config_from_dict(TrainConfig, {"n_frq": 3})
    with pytest.raises(KeyError):
        config_from_dict(TrainConfig, {"grpo": {"group": 4}})
    cfg = config_from_dict(TrainConfig, {"seed": 4, "grpo": {"group_size": 4}})
    assert cfg.seed == 4 and cfg.grpo.group_size == 4
    assert config_from_dict(TrainConfig, cfg.to_dict()) == cfg


# --- training loop ------------------------------------------------------------

def test_training_is_deterministic(small_corpus, tmp_path):
    train(_cfg(), small_corpus, tmp_path / "a")
    train(_cfg(), small_corpus, tmp_path / "b")
    assert _lines(tmp_path / "a" / "metrics.jsonl") == _lines(tmp_path / "b" / "metrics.jsonl")
    np.testing.assert_array_equal(load_policy(tmp_path / "a"), load_policy(tmp_path / "b"))


def test_metrics_stream_and_phase_alternation(small_corpus):
    out = train(_cfg(), small_corpus)
    recs = out["records"]
    steps = [r["step"] for r in recs]
    assert steps == sorted(steps)
    kinds = [r["type"] for r in recs]
    n_ego = kinds.count("ego_update")
    assert kinds.count("ipl_round") == (n_ego // 2) * 2
    # each IPL block of k_ipl rounds follows every second ego update, never in between
    for i, r in enumerate(recs):
        if r["type"] == "ipl_round":
            prev = [x for x in recs[:i] if x["type"] == "ego_update"]
            assert len(prev) % 2 == 0
    for r in recs:
        if r["type"] == "ego_update":
            for key in ("mean_return", "crash_rate", "route_completion", "cost"):
                assert isinstance(r[key], float)
            assert len(r["chosen_j"]) == r["attacks"] == len(r["sampled_logliks"])


def test_replay_floor_one_is_pure_replay(small_corpus):
    recs = train(_cfg(replay_floor=1.0, ipl=False), small_corpus)["records"]
    assert all(r["attacks"] == 0 for r in recs)
    assert all(r["type"] == "ego_update" for r in recs)


def test_huge_n_freq_never_runs_ipl(small_corpus):
    out = train(_cfg(n_freq=10**9), small_corpus)
    assert all(r["type"] == "ego_update" for r in out["records"])
    assert sum(r["attacks"] for r in out["records"]) > 0
    np.testing.assert_array_equal(out["generator"].params.weights, Generator().params.weights)


def test_ppo_path_runs(small_corpus):
    recs = train(_cfg(algorithm="ppo", total_timesteps=900), small_corpus)["records"]
    assert recs[0]["type"] == "ego_update" and math.isfinite(recs[0]["loss"])


def test_resume_matches_uninterrupted(small_corpus, tmp_path):
    train(_cfg(), small_corpus, tmp_path / "full")
    train(_cfg(), small_corpus, tmp_path / "part", stop_after_updates=2)
    train(_cfg(), small_corpus, tmp_path / "part", resume=True)
    assert _lines(tmp_path / "full" / "metrics.jsonl") == _lines(tmp_path / "part" / "metrics.jsonl")
    np.testing.assert_array_equal(load_policy(tmp_path / "full"), load_policy(tmp_path / "part"))
    np.testing.assert_array_equal(load_generator(tmp_path / "full").params.weights,
                                  load_generator(tmp_path / "part").params.weights)


def test_checkpoint_roundtrip_is_exact(small_corpus, tmp_path):
    out = train(_cfg(total_timesteps=900), small_corpus, tmp_path)
    ck = load_checkpoint(tmp_path)
    np.testing.assert_array_equal(np.array(ck["policy"]["theta"]), out["theta"])
    assert ck["rng"] == out["state"].rng.bit_generator.state
    assert ck["meta"]["ego_updates"] == out["state"].ego_updates


def test_checkpoint_corruption_and_version(small_corpus, tmp_path):
    train(_cfg(total_timesteps=500), small_corpus, tmp_path)
    path = tmp_path / "policy.json"
    good = path.read_text()
    doc = json.loads(good)
    doc["payload"]["theta"][0] += 1.0
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError, match="checksum"):
        load_checkpoint(tmp_path)
    doc = json.loads(good)
    doc["format"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError, match="format"):
        load_checkpoint(tmp_path)
    path.write_text("{not json")
    with pytest.raises(CheckpointError, match="corrupted"):
        load_checkpoint(tmp_path)
    path.write_text(good)
    load_checkpoint(tmp_path)


def test_empty_corpus_rejected():
    with pytest.raises(ValueError):
        train(_cfg(), [])


# --- evaluation ---------------------------------------------------------------

def test_evaluate_cross_shape_and_determinism(small_corpus, rng):
    from minmaxdrive.rl import init_params

    pols = {"net": init_params(rng), "replay": ReplayPolicy()}
    a = evaluate_cross(pols, ADVERSARY_MODES, small_corpus[:4], episodes=4)
    b = evaluate_cross(pols, ADVERSARY_MODES, small_corpus[:4], episodes=4)
    assert len(a) == 10 and a == b
    assert [(r["policy"], r["adversary"]) for r in a][:5] == [("net", m) for m in ADVERSARY_MODES]
    with pytest.raises(ValueError):
        evaluate_cross(pols, ["nope"], small_corpus)


def test_replay_vs_replay_matches_corpus_baseline(small_corpus):
    base = np.mean([rollout_episode(ReplayPolicy(), sc, None, 0).terminal is Terminal.CRASH for sc in small_corpus])
    row = evaluate_cross({"replay": ReplayPolicy()}, ["replay"], small_corpus)[0]
    assert row["crash"] == base == 0.0


def test_hard_min_dominates_energy_sampling(small_corpus):
    rows = evaluate_cross({"replay": ReplayPolicy()}, ["energy-sample", "hard-min"], small_corpus)
    assert rows[1]["reward"] <= rows[0]["reward"]


def test_bound_penalty_hand_value():
    v_max = reward_bound() / 0.01
    # max progress 25 m/s * 0.1 s, speed term 0.1 * 25, terminal bonus 10
    assert reward_bound() == pytest.approx(2.5 + 2.5 + 10.0, rel=1e-12)
    expect = 0.99 * v_max * math.sqrt(2.0) / 0.01 * 0.1
    assert bound_penalty(0.01, 0.99) == pytest.approx(expect, rel=1e-12)
    assert bound_penalty(0.0) == 0.0


def test_bound_report_at_reference_has_no_penalty(small_corpus):
    rep = bound_report(ReplayPolicy(), Generator(), small_corpus[:4], episodes=4)
    assert rep.mean_kl == pytest.approx(0.0, abs=1e-12)
    assert rep.penalty == pytest.approx(0.0, abs=1e-9)
    assert rep.certified_bound == pytest.approx(rep.robust_return, abs=1e-9)
    assert rep.replay_return == pytest.approx(rep.robust_return)
    assert rep.holds
