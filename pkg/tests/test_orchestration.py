import numpy as np
import pytest

from agentbandit.adaptation import HistoryBuffer, InteractionRecord
from agentbandit.bandit_core import STRATEGY_ACTIONS, TOOL_ACTIONS, PolicyConfig, expected_reward, init_posterior, update
from agentbandit.errors import AlreadyResolved, LoadError, NotFound
from agentbandit.orchestration import (
    ActionCatalog,
    FeedbackQueue,
    MockResponder,
    config_for_action,
    load_state,
    save_state,
)
from agentbandit.simulation import RunOptions, load_environment, run_experiment


class TestCatalog:
    def test_temperatures(self):
        cat = ActionCatalog()
        assert config_for_action(cat, "strategy", "direct").temperature == 0.5
        assert config_for_action(cat, "strategy", "chain_of_thought").temperature == 0.7

    def test_tools(self):
        assert "pubmed" in config_for_action(ActionCatalog(), "tool", "pubmed").tools
        assert ActionCatalog().covers(TOOL_ACTIONS)

    def test_missing(self):
        with pytest.raises(NotFound):
            config_for_action(ActionCatalog(), "strategy", "web")


class TestMock:
    def test_contract(self):
        cat = ActionCatalog()
        cfg = cat.config_for_action("strategy", "direct")
        r1 = MockResponder().respond(cfg, "What is aspirin?", "direct")
        r2 = MockResponder().respond(cfg, "What is aspirin?", "direct")
        assert "[direct]" in r1.text and r1 == r2
        assert 0 < r1.tokens <= cfg.max_tokens


class TestQueue:
    def _queue(self, expiry=100.0):
        applied = []

        def apply(payload, event):
            applied.append((payload, event))
            return float(event)

        return FeedbackQueue(apply, expiry), applied

    def test_resolve_applies(self):
        q, applied = self._queue()
        q.enqueue("i1", 0.0, "payload")
        assert q.resolve("i1", 1, 10.0) == 1.0
        assert applied == [("payload", 1)] and q.applied == 1

    def test_expired_dropped(self):
        q, applied = self._queue(expiry=5.0)
        q.enqueue("i1", 0.0, "p")
        assert q.resolve("i1", 1, 6.0) is None
        assert q.dropped == 1 and applied == []

    def test_at_most_once(self):
        q, _ = self._queue()
        q.enqueue("i1", 0.0, "p")
        q.resolve("i1", 0, 1.0)
        with pytest.raises(AlreadyResolved):
            q.resolve("i1", 1, 2.0)
        with pytest.raises(NotFound):
            q.resolve("nope", 1, 2.0)

    def test_expire_sweep(self):
        q, _ = self._queue(expiry=5.0)
        q.enqueue("a", 0.0, None)
        q.enqueue("b", 4.0, None)
        assert q.expire(7.0) == 1 and len(q) == 1


class TestState:
    def _trained(self):
        post = init_posterior(STRATEGY_ACTIONS, 5)
        hist = HistoryBuffer()
        rng = np.random.default_rng(0)
        for t in range(1, 12):
            x = rng.random(5) * 0.9 + 0.1 / 3
            a = STRATEGY_ACTIONS.actions[t % 2]
            update(post, a, x, t % 3 == 0)
            hist.append(InteractionRecord(t, x, a, float(t % 3 == 0), 0.5, t * 60.0))
        return post, hist

    def test_roundtrip(self, tmp_path):
        post, hist = self._trained()
        save_state(tmp_path / "s.json", post, hist, "abc")
        back = load_state(tmp_path / "s.json")
        assert back.posterior.equals(post) and back.lexicon_hash == "abc"
        assert [r.step for r in back.history] == [r.step for r in hist]
        assert np.array_equal(back.history[3].context, hist[3].context)

    def test_dimension_mismatch(self, tmp_path):
        post, _ = self._trained()
        save_state(tmp_path / "s.json", post)
        with pytest.raises(LoadError):
            load_state(tmp_path / "s.json", expect_d=3)
        with pytest.raises(LoadError):
            load_state(tmp_path / "s.json", expect_actions=TOOL_ACTIONS)

    def test_missing_and_bad_version(self, tmp_path):
        with pytest.raises(LoadError):
            load_state(tmp_path / "none.json")
        p = tmp_path / "v.json"
        p.write_text('{"version": 99}')
        with pytest.raises(LoadError, match="version"):
            load_state(p)

    def test_warm_prior_keeps_expected_rewards(self, tmp_path):
        env = load_environment("strategy")
        tr = run_experiment(env, PolicyConfig(), 30, 4)
        saved = tr.extra["posterior"]
        save_state(tmp_path / "s.json", saved)
        loaded = load_state(tmp_path / "s.json", expect_d=5, expect_actions=env.actions).posterior
        tr2 = run_experiment(env, PolicyConfig(), 1, 9, RunOptions(initial_posterior=loaded))
        first = tr2.records[0]
        for a in env.actions.actions:
            assert expected_reward(loaded, a, first.context) == expected_reward(saved, a, first.context)
        # the run starts from a copy, the loaded state is untouched
        assert loaded.equals(load_state(tmp_path / "s.json").posterior)
