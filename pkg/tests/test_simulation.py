import json

import numpy as np
import pytest

from agentbandit.adaptation import AdaptationOptions
from agentbandit.bandit_core import PolicyConfig
from agentbandit.errors import InvalidArgument
from agentbandit.features import extract, load_lexicon
from agentbandit.metrics import cumulative_regret, rolling_success, success_rate, trace_csv
from agentbandit.simulation import (
    ENV_NAMES,
    EnvironmentSpec,
    RunOptions,
    SimulatedUser,
    compare_policies,
    generate_query,
    load_environment,
    run_experiment,
    summary_csv,
)

LEX = load_lexicon()


def tiny_env(weights=(0.5, 0.5), table=None, noise=0.0):
    data = {
        "mode": "strategy",
        "archetypes": [
            {"name": "short", "templates": ["{drug} dose?"], "slots": {"drug": ["aspirin", "warfarin"]}},
            {"name": "long", "templates": ["Explain how p53 and brca1 cooperate in repair"]},
        ],
        "success_table": table or {
            "short": {"direct": 0.9, "chain_of_thought": 0.2},
            "long": {"direct": 0.2, "chain_of_thought": 0.9},
        },
        "weights": list(weights),
        "noise": noise,
    }
    return EnvironmentSpec.from_dict(data, "tiny")


class TestEnvironment:
    @pytest.mark.parametrize("name", ENV_NAMES)
    def test_shipped_envs_load(self, name):
        env = load_environment(name)
        assert env.mode == name and len(env.archetypes) == 4
        assert abs(env.weights.sum() - 1) < 1e-12
        for arch in env.archetypes:
            row = env.success_table[arch.name]
            assert row[env.optimal_action(arch.name)] == 0.85
            assert sorted(row.values())[:-1] == [0.30] * (len(row) - 1)

    def test_expected_preference_directions(self):
        s, t, d = (load_environment(n) for n in ENV_NAMES)
        assert s.optimal_action("simple_factoid") == "direct"
        assert s.optimal_action("complex_mechanism") == "chain_of_thought"
        assert t.optimal_action("recent_research") == "pubmed"
        assert t.optimal_action("drug_interaction") == "drugdb"
        assert d.optimal_action("drug_mechanisms") == "pharma"
        assert d.optimal_action("protein_functions") == "molbio"

    def test_simple_factoid_has_no_complexity(self):
        env = load_environment("strategy")
        sub = EnvironmentSpec.from_dict({**env.to_dict(), "weights": [1.0 if a.name == "simple_factoid" else 0.0 for a in env.archetypes]})
        rng = np.random.default_rng(0)
        for _ in range(50):
            assert extract(generate_query(sub, rng), LEX)[1] == 0.0

    def test_probabilities_validated(self):
        with pytest.raises(InvalidArgument):
            tiny_env(table={"short": {"direct": 1.2, "chain_of_thought": 0.1}, "long": {"direct": 0.1, "chain_of_thought": 0.9}})
        with pytest.raises(InvalidArgument):
            tiny_env(weights=(0.7, 0.7))

    def test_undeclared_tie_rejected(self):
        with pytest.raises(InvalidArgument):
            tiny_env(table={"short": {"direct": 0.5, "chain_of_thought": 0.5}, "long": {"direct": 0.1, "chain_of_thought": 0.9}})

    def test_bad_files(self, tmp_path):
        with pytest.raises(InvalidArgument):
            load_environment(tmp_path / "missing.json")
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(InvalidArgument):
            load_environment(p)
        p.write_text(json.dumps({"mode": "strategy"}))
        with pytest.raises(InvalidArgument, match="malformed"):
            load_environment(p)

    def test_roundtrip(self, tmp_path):
        env = load_environment("tool")
        p = tmp_path / "tool.json"
        p.write_text(json.dumps(env.to_dict()))
        again = load_environment(p)
        assert again.success_table == env.success_table and again.actions == env.actions

    def test_closed_forms(self):
        env = tiny_env()
        assert env.random_policy_value() == pytest.approx(0.55)
        assert env.oracle_value() == pytest.approx(0.9)


class TestQueriesAndUser:
    def test_degenerate_weights(self):
        env = tiny_env(weights=(1.0, 0.0))
        rng = np.random.default_rng(1)
        assert {generate_query(env, rng).archetype for _ in range(200)} == {"short"}

    def test_weight_frequencies(self):
        env, rng = tiny_env(), np.random.default_rng(2)
        n = sum(generate_query(env, rng).archetype == "short" for _ in range(10_000))
        assert abs(n / 10_000 - 0.5) <= 0.02

    def test_certain_success(self):
        env = tiny_env(table={"short": {"direct": 1.0, "chain_of_thought": 0.2}, "long": {"direct": 0.2, "chain_of_thought": 0.9}})
        user, rng = SimulatedUser(env), np.random.default_rng(3)
        assert all(user.give_feedback("short", "direct", rng) == 1 for _ in range(500))

    def test_bernoulli_rate(self):
        env = tiny_env(table={"short": {"direct": 0.85, "chain_of_thought": 0.2}, "long": {"direct": 0.2, "chain_of_thought": 0.9}})
        user, rng = SimulatedUser(env), np.random.default_rng(4)
        v = [user.give_feedback("short", "direct", rng) for _ in range(10_000)]
        assert abs(np.mean(v) - 0.85) <= 0.01

    def test_feedback_rate(self):
        user, rng = SimulatedUser(tiny_env(), feedback_rate=0.5), np.random.default_rng(5)
        missing = sum(user.give_feedback("short", "direct", rng) is None for _ in range(10_000))
        assert abs(missing / 10_000 - 0.5) <= 0.02


class TestRunExperiment:
    def test_fixed_optimal_has_zero_regret(self):
        env = tiny_env(table={"short": {"direct": 0.9, "chain_of_thought": 0.2}, "long": {"direct": 0.8, "chain_of_thought": 0.3}})
        tr = run_experiment(env, PolicyConfig("fixed", fixed_action="direct"), 40, 0, lexicon=LEX)
        assert np.all(cumulative_regret(tr) == 0)

    def test_same_seed_same_trace(self):
        env = load_environment("strategy")
        a = run_experiment(env, PolicyConfig(), 30, 7, lexicon=LEX)
        b = run_experiment(env, PolicyConfig(), 30, 7, lexicon=LEX)
        assert trace_csv(a) == trace_csv(b)
        assert [r.propensity for r in a.records] == [r.propensity for r in b.records]

    def test_common_query_stream_across_policies(self):
        env = load_environment("tool")
        a = run_experiment(env, PolicyConfig(), 25, 3, lexicon=LEX)
        b = run_experiment(env, PolicyConfig("random"), 25, 3, lexicon=LEX)
        assert [r.archetype for r in a.records] == [r.archetype for r in b.records]
        assert all(np.array_equal(x.context, y.context) for x, y in zip(a.records, b.records))

    def test_thompson_learns_tiny_env(self):
        env = tiny_env()
        rates = [success_rate(run_experiment(env, PolicyConfig(), 100, s, lexicon=LEX)) for s in range(10)]
        assert np.mean(rates) > 0.75

    def test_default_strategy_final_rolling_success(self):
        env = load_environment("strategy")
        finals = [rolling_success(run_experiment(env, PolicyConfig(), 30, s, lexicon=LEX), 10)[-1] for s in range(50)]
        share = np.mean([f >= 0.7 - 1e-12 for f in finals])
        assert share >= 0.8, f"final rolling success >= 0.7 in only {share:.0%} of seeds"

    def test_warm_start_uses_heuristic_first(self):
        env = load_environment("strategy")
        tr = run_experiment(env, PolicyConfig(), 20, 1, RunOptions(adaptation=AdaptationOptions(warm_start=True)), LEX)
        assert [r.source for r in tr.records[:5]] == ["warmstart"] * 5
        assert all(r.source == "policy" for r in tr.records[5:])

    def test_sparse_delayed_feedback(self):
        env = load_environment("strategy")
        opts = RunOptions(feedback_rate=0.5, feedback_delay=3, importance_correction=True)
        tr = run_experiment(env, PolicyConfig(), 40, 2, opts, LEX)
        assert tr.extra["pending"] == 3
        assert tr.extra["applied"] == tr.extra["updates"] < 37
        assert all(r.outcome is not None for r in tr.records)

    @pytest.mark.parametrize("mode", ["composite", "multi_objective"])
    def test_reward_modes_run(self, mode):
        tr = run_experiment(load_environment("strategy"), PolicyConfig(), 20, 0, RunOptions(reward_mode=mode), LEX)
        assert all(r.reward is None or 0 <= r.reward <= 1 for r in tr.records)
        assert tr.extra["updates"] == 20

    def test_window_and_decay_runs(self):
        env = load_environment("strategy")
        a = run_experiment(env, PolicyConfig(), 30, 0, RunOptions(adaptation=AdaptationOptions(window=10)), LEX)
        assert a.extra["rebuilds"] == 29
        b = run_experiment(env, PolicyConfig(), 30, 0, RunOptions(adaptation=AdaptationOptions(gamma=0.9)), LEX)
        c = run_experiment(env, PolicyConfig(), 30, 0, RunOptions(adaptation=AdaptationOptions(gamma=0.9, extra={"incremental": True})), LEX)
        assert b.chosen == c.chosen

    def test_jsonl_log(self, tmp_path):
        path = tmp_path / "log.jsonl"
        run_experiment(load_environment("strategy"), PolicyConfig(), 5, 0, RunOptions(log_path=path), LEX)
        lines = [json.loads(l) for l in path.read_text().splitlines()]
        assert len(lines) == 5
        assert {"id", "query", "context", "action", "policy", "propensity", "reward_final", "updated"} <= set(lines[0])

    def test_invalid_T(self):
        with pytest.raises(InvalidArgument):
            run_experiment(tiny_env(), PolicyConfig(), 0, 0)


class TestCompare:
    def test_random_matches_closed_form(self):
        env = load_environment("domain")
        (s,) = compare_policies(env, [PolicyConfig("random")], 30, range(100), lexicon=LEX)
        assert abs(s.success_mean - env.random_policy_value()) < 0.03

    def test_improvement_column(self):
        out = compare_policies(tiny_env(), [PolicyConfig(), PolicyConfig("random")], 30, range(5), lexicon=LEX)
        assert out[1].improvement_vs_random == 0.0
        assert out[0].improvement_vs_random == pytest.approx(out[0].success_mean - out[1].success_mean)
        assert summary_csv(out).splitlines()[0].startswith("policy,success_mean")

    def test_epsilon_label(self):
        out = compare_policies(tiny_env(), [PolicyConfig("epsilon_greedy")], 10, [0], lexicon=LEX)
        assert out[0].label == "epsilon_greedy(0.1)"


def test_incremental_decay_matches_rebuild_with_delays():
    env = load_environment("strategy")
    base = dict(feedback_rate=0.7, feedback_delay=2)
    b = run_experiment(env, PolicyConfig(), 40, 5, RunOptions(adaptation=AdaptationOptions(gamma=0.8), **base), LEX)
    c = run_experiment(env, PolicyConfig(), 40, 5, RunOptions(adaptation=AdaptationOptions(gamma=0.8, extra={"incremental": True}), **base), LEX)
    assert b.chosen == c.chosen
