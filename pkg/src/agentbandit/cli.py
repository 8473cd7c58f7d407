"""Command-line harness: simulate, compare, ablate and inspect."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .adaptation import AdaptationOptions
from .bandit_core import POLICY_KINDS, PolicyConfig, expected_reward, feature_importance
from .errors import BanditError, InvalidArgument
from .features import DEFAULT_FEATURES, extract, load_lexicon
from .metrics import ExperimentTrace, trace_csv
from .orchestration import load_state, save_state
from .rewards import REWARD_MODES
from .simulation import (
    EnvironmentSpec,
    RunOptions,
    load_environment,
    generate_query,
    render_table,
    run_experiment,
    summarize,
    summary_csv,
    summary_text,
)

log = logging.getLogger("agentbandit")

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG = 0, 1, 2


@dataclass
class RunManifest:
    env: str = "strategy"
    policies: list[str] = field(default_factory=lambda: ["thompson"])
    T: int = 30
    seeds: list[int] = field(default_factory=lambda: list(range(5)))
    warm_start: bool = False
    window: int | None = None
    gamma: float | None = None
    reward_mode: str = "binary"
    epsilon: float = 0.1
    ucb_c: float = 1.0
    rolling_window: int = 10
    threshold: float = 0.7
    out: str | None = None
    jobs: int = 1

    def validate(self) -> None:
        if self.T < 1:
            raise InvalidArgument("T must be >= 1")
        if not self.seeds:
            raise InvalidArgument("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise InvalidArgument("seeds must be distinct")
        if self.reward_mode not in REWARD_MODES:
            raise InvalidArgument(f"reward mode must be one of {REWARD_MODES}")
        if self.rolling_window < 1:
            raise InvalidArgument("rolling window must be >= 1")
        if not 0.0 < self.threshold <= 1.0:
            raise InvalidArgument("threshold must lie in (0, 1]")
        if self.jobs < 1:
            raise InvalidArgument("jobs must be >= 1")
        self.adaptation().validate()
        for p in self.policies:
            policy_config(p, self)

    def adaptation(self) -> AdaptationOptions:
        return AdaptationOptions(warm_start=self.warm_start, window=self.window, gamma=self.gamma)

    def run_options(self) -> RunOptions:
        return RunOptions(adaptation=self.adaptation(), reward_mode=self.reward_mode)


def parse_seeds(spec) -> list[int]:
    """``5`` means seeds 0..4; ``3-7`` is an inclusive range; ``1,4,9`` an explicit list."""
    if isinstance(spec, int):
        return list(range(spec))
    if isinstance(spec, list):
        return [int(s) for s in spec]
    s = str(spec).strip()
    try:
        if "," in s:
            return [int(v) for v in s.split(",") if v.strip()]
        if "-" in s[1:]:
            lo, hi = s.split("-", 1) if not s.startswith("-") else (s, "")
            lo_i, hi_i = int(lo), int(hi)
            if hi_i < lo_i:
                raise InvalidArgument(f"empty seed range {s!r}")
            return list(range(lo_i, hi_i + 1))
        n = int(s)
    except ValueError:
        raise InvalidArgument(f"cannot parse seeds {spec!r}") from None
    if n < 1:
        raise InvalidArgument("seed count must be >= 1")
    return list(range(n))


def policy_config(name: str, m: RunManifest) -> PolicyConfig:
    kind, _, arg = name.partition(":")
    if kind not in POLICY_KINDS:
        raise InvalidArgument(f"unknown policy {name!r}; expected one of {POLICY_KINDS}")
    if kind == "fixed":
        if not arg:
            raise InvalidArgument("fixed policy needs an action, e.g. fixed:direct")
        return PolicyConfig("fixed", fixed_action=arg)
    try:
        if kind == "epsilon_greedy":
            return PolicyConfig(kind, epsilon=float(arg) if arg else m.epsilon)
        if kind == "ucb":
            return PolicyConfig(kind, ucb_c=float(arg) if arg else m.ucb_c)
    except ValueError:
        raise InvalidArgument(f"bad policy parameter in {name!r}") from None
    if arg:
        raise InvalidArgument(f"policy {kind!r} takes no parameter")
    return PolicyConfig(kind)


_MANIFEST_KEYS = {
    "env", "policy", "policies", "T", "seeds", "warm_start", "window", "gamma",
    "reward_mode", "epsilon", "ucb_c", "rolling_window", "threshold", "out", "jobs",
}


def build_manifest(args: argparse.Namespace) -> RunManifest:
    m = RunManifest()
    if getattr(args, "manifest", None):
        path = Path(args.manifest)
        try:
            data = json.loads(path.read_text("utf-8"))
        except OSError as exc:
            raise InvalidArgument(f"{path}: cannot read manifest ({exc.strerror})") from None
        except json.JSONDecodeError as exc:
            raise InvalidArgument(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise InvalidArgument(f"{path}: manifest must be a JSON object")
        unknown = set(data) - _MANIFEST_KEYS
        if unknown:
            raise InvalidArgument(f"{path}: unknown manifest keys {sorted(unknown)}")
        for k, v in data.items():
            if k == "policy":
                m.policies = [v]
            elif k == "policies":
                m.policies = list(v)
            elif k == "seeds":
                m.seeds = parse_seeds(v)
            else:
                setattr(m, k, v)
    for k in ("env", "T", "window", "gamma", "reward_mode", "epsilon", "ucb_c", "rolling_window", "threshold", "out", "jobs"):
        v = getattr(args, k, None)
        if v is not None:
            setattr(m, k, v)
    if getattr(args, "policy", None):
        m.policies = [p for p in args.policy.split(",") if p]
    if getattr(args, "seeds", None) is not None:
        m.seeds = parse_seeds(args.seeds)
    if getattr(args, "warm_start", None) is not None:
        m.warm_start = args.warm_start
    m.validate()
    return m


def _run_one(job) -> ExperimentTrace:
    env, cfg, T, seed, opts = job
    return run_experiment(env, cfg, T, seed, opts)


def run_traces(m: RunManifest, env: EnvironmentSpec, cfg: PolicyConfig, opts: RunOptions) -> list[ExperimentTrace]:
    jobs = [(env, cfg, m.T, s, opts) for s in m.seeds]
    if m.jobs == 1 or len(jobs) == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=m.jobs) as pool:
        return list(pool.map(_run_one, jobs))


def _out_dir(m: RunManifest) -> Path | None:
    if m.out is None:
        return None
    p = Path(m.out)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InvalidArgument(f"{p}: cannot create output directory ({exc.strerror})") from None
    return p


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8", newline="")
    except OSError as exc:
        raise InvalidArgument(f"{path}: cannot write ({exc.strerror})") from None


def _slug(label: str) -> str:
    return "".join(c if c.isalnum() or c in "._-" else "_" for c in label).strip("_")


def _run_policies(m: RunManifest, env: EnvironmentSpec, save_state_to: str | None = None):
    out = _out_dir(m)
    opts = m.run_options()
    summaries = []
    for name in m.policies:
        cfg = policy_config(name, m)
        traces = run_traces(m, env, cfg, opts)
        if out is not None:
            sub = out if len(m.policies) == 1 else out / _slug(cfg.label)
            sub.mkdir(parents=True, exist_ok=True)
            for tr in traces:
                _write(sub / f"seed_{tr.seed}.csv", trace_csv(tr, m.rolling_window))
        if save_state_to is not None and name == m.policies[0]:
            tr = traces[0]
            save_state(save_state_to, tr.extra["posterior"], tr.extra["history"], load_lexicon().digest())
        summaries.append(summarize(cfg.label, traces, m.threshold, m.rolling_window))
    rand = next((s for s in summaries if s.label == "random"), None)
    if rand is not None:
        for s in summaries:
            s.improvement_vs_random = s.success_mean - rand.success_mean
    if out is not None:
        _write(out / "summary.csv", summary_csv(summaries))
    return summaries


def _check_asserts(args, summaries) -> int:
    failed = []
    learners = [s for s in summaries if s.label != "random"]
    if getattr(args, "assert_min_success", None) is not None:
        for s in learners:
            if s.success_mean < args.assert_min_success:
                failed.append(f"{s.label}: success {s.success_mean:.4f} < {args.assert_min_success}")
    if getattr(args, "assert_gap", None) is not None:
        for s in learners:
            if s.improvement_vs_random is None:
                failed.append("--assert-gap needs 'random' among the policies")
                break
            if s.improvement_vs_random < args.assert_gap:
                failed.append(f"{s.label}: gap {s.improvement_vs_random:.4f} < {args.assert_gap}")
    for f in failed:
        print(f"ASSERT FAILED {f}", file=sys.stderr)
    return EXIT_ASSERT if failed else EXIT_OK


def cmd_simulate(args) -> int:
    m = build_manifest(args)
    env = load_environment(m.env)
    summaries = _run_policies(m, env, getattr(args, "save_state", None))
    print(summary_text(summaries), end="")
    return _check_asserts(args, summaries)


def cmd_compare(args) -> int:
    m = build_manifest(args)
    if len(m.policies) < 2:
        raise InvalidArgument("compare needs at least two policies")
    env = load_environment(m.env)
    summaries = _run_policies(m, env)
    print(f"env={env.name} T={m.T} seeds={len(m.seeds)} threshold={m.threshold} window={m.rolling_window}")
    print(summary_text(summaries), end="")
    return _check_asserts(args, summaries)


ABLATION_HEADER = ("configuration", "success_mean", "success_std", "qtt_censored_mean", "reach_rate")


def ablation_configs(m: RunManifest, env: EnvironmentSpec) -> list[tuple[str, PolicyConfig, RunOptions]]:
    base = m.run_options()
    warm_ok = env.mode == "strategy"
    full_opts = replace(base, adaptation=replace(base.adaptation, warm_start=warm_ok))
    off_opts = replace(base, adaptation=replace(base.adaptation, warm_start=False))
    ts = PolicyConfig("thompson")
    return [
        ("full", ts, full_opts),
        ("no_context_features", ts, replace(full_opts, context_override="all_ones")),
        ("epsilon_greedy", PolicyConfig("epsilon_greedy", epsilon=m.epsilon), full_opts),
        ("warm_start_off", ts, off_opts),
    ]


def cmd_ablate(args) -> int:
    m = build_manifest(args)
    env = load_environment(m.env)
    rows, summaries = [], []
    for label, cfg, opts in ablation_configs(m, env):
        s = summarize(label, run_traces(m, env, cfg, opts), m.threshold, m.rolling_window)
        summaries.append(s)
        rows.append([label, f"{s.success_mean:.4f}", f"{s.success_std:.4f}", f"{s.qtt_censored_mean:.4f}", f"{s.reach_rate:.4f}"])
    text = render_table(ABLATION_HEADER, rows)
    out = _out_dir(m)
    if out is not None:
        _write(out / "ablation.csv", "\n".join(",".join(r) for r in [list(ABLATION_HEADER), *rows]) + "\n")
    print(f"env={env.name} T={m.T} seeds={len(m.seeds)}")
    print(text, end="")
    return _check_asserts(args, summaries)


def _vec(v) -> str:
    return "[" + ", ".join(f"{x:.4f}" for x in v) + "]"


def cmd_inspect(args) -> int:
    state = load_state(args.state)
    post = state.posterior
    names = DEFAULT_FEATURES if post.dim == len(DEFAULT_FEATURES) else tuple(f"f{i}" for i in range(post.dim))
    print(f"mode={post.actions.mode} d={post.dim} history={len(state.history)} prior=({post.alpha0:g}, {post.beta0:g})")
    print("features: " + ", ".join(names))
    for i, a in enumerate(post.actions.actions):
        print(f"{a}:")
        print(f"  alpha      {_vec(post.alpha[i])}")
        print(f"  beta       {_vec(post.beta[i])}")
        print(f"  importance {_vec(feature_importance(post, a))}")
    if args.env:
        env = load_environment(args.env)
        if env.actions.actions != post.actions.actions:
            raise InvalidArgument(f"environment {env.name!r} actions do not match the state")
        lex = load_lexicon()
        rng = np.random.default_rng(0)
        header = ("archetype", *post.actions.actions)
        rows = []
        for arch in env.archetypes:
            sub = EnvironmentSpec(env.mode, env.actions, (arch,), {arch.name: env.success_table[arch.name]}, (1.0,), env.noise, env.ties, env.name)
            xs = np.array([extract(generate_query(sub, rng), lex) for _ in range(args.samples)])
            x = xs.mean(axis=0)
            rows.append([arch.name, *(f"{expected_reward(post, a, x):.4f}" for a in post.actions.actions)])
        print("expected reward at mean archetype context:")
        print(render_table(header, rows), end="")
    return EXIT_OK


def _common(p: argparse.ArgumentParser, policy_default_help: str) -> None:
    p.add_argument("--manifest", help="JSON manifest; explicit flags override its values")
    p.add_argument("--env", help="strategy, tool, domain, or a path to an environment JSON file")
    p.add_argument("--policy", help=policy_default_help)
    p.add_argument("--T", type=int, help="steps per run (default 30)")
    p.add_argument("--seeds", help="count (5), inclusive range (0-49) or list (1,2,3); default 5")
    p.add_argument("--window", type=int, help="sliding-window size W")
    p.add_argument("--gamma", type=float, help="forgetting factor")
    p.add_argument("--warm-start", dest="warm_start", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--reward-mode", dest="reward_mode", choices=REWARD_MODES)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--ucb-c", dest="ucb_c", type=float)
    p.add_argument("--rolling-window", dest="rolling_window", type=int, help="default 10")
    p.add_argument("--threshold", type=float, help="success threshold (default 0.7)")
    p.add_argument("--out", help="output directory for CSVs")
    p.add_argument("--jobs", type=int, help="worker processes for seed fan-out (default 1)")
    p.add_argument("--assert-min-success", dest="assert_min_success", type=float)
    p.add_argument("--assert-gap", dest="assert_gap", type=float, help="minimum success gap over random")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agentbandit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one or more policies and write per-seed CSVs")
    _common(p, "comma-separated policies (default thompson)")
    p.add_argument("--save-state", dest="save_state", help="write the first seed's final posterior here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="compare policies on success, queries-to-threshold and regret")
    _common(p, "comma-separated policies, at least two")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("ablate", help="full system against its ablations")
    _common(p, "ignored")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("inspect", help="print a saved posterior")
    p.add_argument("state")
    p.add_argument("--env", help="also print expected rewards per archetype of this environment")
    p.add_argument("--samples", type=int, default=200, help="queries sampled per archetype (default 200)")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except BanditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
