import numpy as np
import pytest

from agentbandit.adaptation import (
    AdaptationOptions,
    DecayingPosterior,
    HistoryBuffer,
    InteractionRecord,
    rebuild_decayed,
    rebuild_window,
    replay,
    warmstart_select,
)
from agentbandit.bandit_core import STRATEGY_ACTIONS, TOOL_ACTIONS, init_posterior, update
from agentbandit.errors import InvalidArgument, UnsupportedMode

SPACE = STRATEGY_ACTIONS


def rec(step, x, action="direct", reward=1.0):
    return InteractionRecord(step=step, context=np.asarray(x, dtype=float), action=action, reward=reward)


class TestWarmStart:
    def test_complex_query(self):
        assert warmstart_select([0.5, 0.6, 0, 0, 0], 3, SPACE) == "chain_of_thought"

    def test_threshold_is_strict(self):
        assert warmstart_select([0.5, 0.5, 0, 0, 0], 3, SPACE) == "direct"

    def test_past_horizon(self):
        assert warmstart_select([0.5, 0.9, 0, 0, 0], 6, SPACE) is None
        assert warmstart_select([0.5, 0.9, 0, 0, 0], 5, SPACE) == "chain_of_thought"

    def test_other_modes_unsupported(self):
        with pytest.raises(UnsupportedMode):
            warmstart_select([0.5, 0.9, 0, 0, 0], 1, TOOL_ACTIONS)


class TestHistory:
    def test_steps_must_increase(self):
        h = HistoryBuffer([rec(1, [1])])
        with pytest.raises(InvalidArgument):
            h.append(rec(1, [1]))

    def test_bounded(self):
        h = HistoryBuffer((rec(i, [1]) for i in range(1, 8)), capacity=3)
        assert [r.step for r in h] == [5, 6, 7]

    def test_record_roundtrip(self):
        r = rec(4, [0.25, 1.0], "chain_of_thought", 0.5)
        back = InteractionRecord.from_dict(r.to_dict())
        assert back.step == 4 and back.action == r.action and back.reward == 0.5
        assert np.array_equal(back.context, r.context)


class TestWindow:
    def test_covers_all(self):
        h = HistoryBuffer(rec(i, [0.2 * i, 1.0], "direct", i % 2) for i in range(1, 5))
        assert rebuild_window(h, 10, SPACE, 2).equals(replay(h, SPACE, 2))
        assert rebuild_window(h, None, SPACE, 2).equals(replay(h, SPACE, 2))

    def test_window_of_one(self):
        h = HistoryBuffer([rec(1, [1, 0], "direct", 1), rec(2, [0.3, 0.7], "chain_of_thought", 0)])
        p = rebuild_window(h, 1, SPACE, 2)
        assert np.all(p.alpha == 1.0)
        assert p.beta[1].tolist() == [1.3, 1.7] and p.beta[0].tolist() == [1.0, 1.0]

    def test_successes_then_failures(self):
        xs = [[1, 0], [0.5, 0.5], [0, 1], [0.2, 0.4], [0.6, 0.1], [1, 1]]
        h = HistoryBuffer(rec(i + 1, x, "direct", 1.0 if i < 3 else 0.0) for i, x in enumerate(xs))
        p = rebuild_window(h, 3, SPACE, 2)
        assert p.alpha[0].tolist() == [1.0, 1.0]
        assert np.allclose(p.beta[0], 1.0 + np.sum(xs[3:], axis=0), atol=1e-12)

    def test_invalid(self):
        with pytest.raises(InvalidArgument):
            rebuild_window(HistoryBuffer(), 0, SPACE, 2)


class TestDecay:
    def test_gamma_one_is_full_replay(self):
        h = HistoryBuffer(rec(i, [0.1 * i, 0.5], "direct", 1.0 if i % 3 else 0.0) for i in range(1, 9))
        assert rebuild_decayed(h, 1.0, SPACE, 2).equals(replay(h, SPACE, 2))

    def test_newest_weight_one(self):
        h = HistoryBuffer([rec(7, [1, 0])])
        assert rebuild_decayed(h, 0.5, SPACE, 2).alpha[0, 0] == 2.0

    def test_geometric_sum(self):
        h = HistoryBuffer([rec(1, [1, 0]), rec(2, [1, 0])])
        p = rebuild_decayed(h, 0.95, SPACE, 2)
        assert p.alpha[0, 0] - 1.0 == pytest.approx(1.95, abs=1e-12)

    def test_explicit_now(self):
        h = HistoryBuffer([rec(1, [1, 0])])
        assert rebuild_decayed(h, 0.5, SPACE, 2, now=3).alpha[0, 0] == 1.25

    def test_incremental_matches_rebuild(self):
        rng = np.random.default_rng(3)
        post = init_posterior(SPACE, 3)
        dp = DecayingPosterior(post, 0.9)
        h = HistoryBuffer()
        for t in range(1, 30):
            x = rng.random(3) * 0.9 + 0.05
            a = SPACE.actions[int(rng.integers(2))]
            r = float(rng.random() < 0.6)
            dp.update(a, x, r, t)
            h.append(rec(t, x, a, r))
        ref = rebuild_decayed(h, 0.9, SPACE, 3)
        assert np.allclose(post.alpha, ref.alpha, atol=1e-12)
        assert np.allclose(post.beta, ref.beta, atol=1e-12)

    def test_skips_missing_rewards(self):
        h = HistoryBuffer([rec(1, [1, 0], reward=None), rec(2, [1, 0], reward=1.0)])
        assert replay(h, SPACE, 2).alpha[0, 0] == 2.0

    @pytest.mark.parametrize("g", [0.0, 1.5])
    def test_bad_gamma(self, g):
        with pytest.raises(InvalidArgument):
            rebuild_decayed(HistoryBuffer(), g, SPACE, 2)


def test_options_exclusive():
    with pytest.raises(InvalidArgument):
        AdaptationOptions(window=5, gamma=0.9).validate()
    AdaptationOptions(window=5).validate()


def test_replay_equals_incremental_updates():
    rng = np.random.default_rng(11)
    post = init_posterior(SPACE, 4)
    h = HistoryBuffer()
    for t in range(1, 40):
        x = rng.random(4) * 0.99 + 0.01
        a = SPACE.actions[int(rng.integers(2))]
        r = float(rng.integers(2))
        update(post, a, x, r)
        h.append(rec(t, x, a, r))
    assert replay(h, SPACE, 4).equals(post)


def test_incremental_discounts_late_feedback():
    post = init_posterior(SPACE, 2)
    dp = DecayingPosterior(post, 0.5)
    dp.advance(4)
    dp.update("direct", [1, 0], 1.0, step=2)  # two steps late
    assert post.alpha[0, 0] == 1.25
    h = HistoryBuffer([rec(2, [1, 0])])
    assert rebuild_decayed(h, 0.5, SPACE, 2, now=4).equals(post)
