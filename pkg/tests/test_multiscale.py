import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swapregret import (ConfigurationError, LifecycleError, MultiScaleConfig, MultiScaleLearner,
                        MwuLearner, ParameterError, PlayRecord, StructuralError,
                        WidthViolationError, eq3_bound, msmwu_from_epsilon, swap_regret)
from swapregret.adversaries import BestResponseAdversary, RandomAdversary
from swapregret.harness import play

import oracles


def test_epsilon_half_n2():
    c = msmwu_from_epsilon(0.5, 2)
    assert (c.S, c.H, c.T) == (2, 45, 4_100_625)


def test_epsilon_one():
    c = msmwu_from_epsilon(1.0, 5)
    assert c.S == 1
    assert c.H == math.ceil(16 * math.log(5))
    assert c.T == c.H ** 2


def test_base_two_sensitivity_arithmetic():
    # with a base-2 log the same formula would give H = 4 * 1 * 16
    H = math.ceil(4 * math.log2(2) * 16)
    assert (H, H ** 4) == (64, 16_777_216)


def test_overflow_reports_magnitude():
    with pytest.raises(ConfigurationError, match="10\\^"):
        msmwu_from_epsilon(0.2, 4)


def test_config_invariants(tmp_path):
    with pytest.raises(ParameterError):
        MultiScaleConfig(2, 1.0, 1, 4, 15)
    with pytest.raises(ParameterError):
        MultiScaleConfig.from_blocks(2, 1.0, 1, 1)
    c = MultiScaleConfig.from_blocks(3, 1.0, 2, 4)
    c.to_json(tmp_path / "c.json")
    assert MultiScaleConfig.from_json(tmp_path / "c.json") == c


def test_first_day_uniform():
    lr = MultiScaleLearner(MultiScaleConfig.from_blocks(5, 1.0, 2, 4))
    np.testing.assert_allclose(lr.act(), np.full(5, 0.2))


def test_s0_equals_plain_mwu_bitwise():
    rng = np.random.default_rng(0)
    cfg = MultiScaleConfig.from_blocks(4, 1.0, 0, 50)
    ms, mwu = MultiScaleLearner(cfg), MwuLearner(4, 50, 1.0)
    for _ in range(50):
        assert np.array_equal(ms.act(), mwu.act())
        r = rng.random(4)
        ms.update(r)
        mwu.update(r)


def test_two_thread_trace():
    rng = np.random.default_rng(1)
    rewards = rng.random((16, 2))
    lr = MultiScaleLearner(MultiScaleConfig.from_blocks(2, 1.0, 1, 4))
    got = []
    for r in rewards:
        got.append(lr.act().copy())
        lr.update(r)
    np.testing.assert_allclose(np.array(got), oracles.multiscale_trace(rewards.tolist(), 4, 1),
                               atol=1e-13)


@settings(max_examples=15, deadline=None)
@given(st.sampled_from([(2, 1), (3, 1), (2, 2), (3, 2)]), st.integers(2, 4), st.integers(0, 999))
def test_trace_matches_reference(hs, n, seed):
    H, S = hs
    cfg = MultiScaleConfig.from_blocks(n, 1.0, S, H)
    rewards = np.random.default_rng(seed).random((cfg.T, n))
    lr = MultiScaleLearner(cfg)
    got = []
    for r in rewards:
        got.append(lr.act().copy())
        lr.update(r)
    np.testing.assert_allclose(np.array(got), oracles.multiscale_trace(rewards.tolist(), H, S),
                               atol=1e-12)


def test_schedule_counts_and_constancy():
    cfg = MultiScaleConfig.from_blocks(3, 1.0, 2, 3)  # 4 threads, T = 81
    rng = np.random.default_rng(2)
    lr = MultiScaleLearner(cfg)
    history = []
    for _ in range(cfg.T):
        history.append(lr.thread_strategies.copy())
        lr.update(rng.random(3))
    # thread k inner-updates T / H^k times (k from 0); the top one exactly H times
    assert lr.inner_updates == [81, 27, 9, 3]
    for k, meta in enumerate(lr.meta):
        for start in range(0, cfg.T, meta):
            block = np.array([history[t][k] for t in range(start, start + meta)])
            assert np.all(block == block[0])
    # restart: thread 0 (period 3) is uniform at days 1, 4, 7, ...
    for t in range(0, cfg.T, 3):
        np.testing.assert_allclose(history[t][0], np.full(3, 1 / 3))


def test_meta_day_aggregate_is_forwarded():
    cfg = MultiScaleConfig.from_blocks(2, 1.0, 1, 4)
    lr = MultiScaleLearner(cfg)
    rng = np.random.default_rng(3)
    rewards = rng.random((8, 2))
    for r in rewards[:8]:
        lr.update(r)
    # thread 1 has seen meta-days [0:4] and [4:8] since its start at day 1
    np.testing.assert_allclose(lr.mwus[1].cumulative, rewards.sum(axis=0), atol=1e-15)


def test_lifecycle_and_width():
    cfg = MultiScaleConfig.from_blocks(2, 1.0, 0, 2)
    lr = MultiScaleLearner(cfg)
    with pytest.raises(WidthViolationError):
        lr.update([2.0, 0.0])
    lr.update([0, 1])
    lr.update([1, 0])
    assert lr.finished
    with pytest.raises(LifecycleError):
        lr.act()
    with pytest.raises(LifecycleError):
        lr.update([0, 0])


def test_offset_rewards_are_shifted():
    cfg = MultiScaleConfig.from_blocks(2, 1 + 1 / 16, 1, 2)
    a, b = MultiScaleLearner(cfg, lo=-1.0), MultiScaleLearner(cfg, lo=0.0)
    rng = np.random.default_rng(4)
    for _ in range(cfg.T):
        np.testing.assert_allclose(a.act(), b.act(), atol=1e-14)
        r = rng.random(2) * cfg.B
        a.update(r - 1.0)
        b.update(r)


def test_eq3_identical_days():
    r = np.tile([0.2, 0.7, 0.1], (16, 1))
    rec = PlayRecord(np.full((16, 3), 1 / 3), r)
    assert eq3_bound(rec, 1, 4, 1.0) == pytest.approx(2 * math.sqrt(math.log(3) / 4) * 16)


def test_eq3_single_day():
    rec = PlayRecord([[0.5, 0.5]], [[0.3, 0.9]])
    assert eq3_bound(rec, 0, 1, 1.0) == pytest.approx(2 * math.sqrt(math.log(2)))


def test_eq3_length_mismatch():
    with pytest.raises(StructuralError):
        eq3_bound(PlayRecord(np.full((5, 2), 0.5), np.zeros((5, 2))), 1, 4, 1.0)


def test_eq3_adaptive_h4_s2():
    cfg = MultiScaleConfig.from_blocks(4, 1.0, 2, 4)
    rec = play(MultiScaleLearner(cfg), BestResponseAdversary(4), cfg.T)
    assert swap_regret(rec)[0] <= eq3_bound(rec, 2, 4, 1.0)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([(4, 1), (4, 2), (8, 1)]), st.sampled_from([2, 4, 8]),
       st.integers(0, 2**31), st.sampled_from(["uniform", "bernoulli"]))
def test_eq3_holds_random(hs, n, seed, kind):
    H, S = hs
    cfg = MultiScaleConfig.from_blocks(n, 1.0, S, H)
    rec = play(MultiScaleLearner(cfg), RandomAdversary(n, np.random.default_rng(seed), kind),
               cfg.T)
    assert swap_regret(rec)[0] <= eq3_bound(rec, S, H, 1.0)


def test_compensated_path_agrees(monkeypatch):
    import swapregret.multiscale as ms

    cfg = MultiScaleConfig.from_blocks(3, 1.0, 1, 8)
    rng = np.random.default_rng(5)
    rewards = rng.random((cfg.T, 3))
    plain = MultiScaleLearner(cfg)
    monkeypatch.setattr(ms, "COMPENSATED_THRESHOLD", 0)
    comp = MultiScaleLearner(cfg)
    assert comp._compensated and not plain._compensated
    for r in rewards:
        np.testing.assert_allclose(plain.act(), comp.act(), atol=1e-13)
        plain.update(r)
        comp.update(r)
