"""Synthetic environments and the seeded experiment runner.

An environment is a set of hidden query archetypes, each with text templates
and a per-action Bernoulli success table. The runner feeds generated queries
through featurization, selection, a mock responder, a simulated user and the
reward pipeline, and records the oracle expected rewards needed for regret.

Each run splits its seed into independent streams (queries, user feedback,
policy), so two policies run with the same seed see the same query sequence.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .adaptation import (
    AdaptationOptions,
    DecayingPosterior,
    HistoryBuffer,
    InteractionRecord,
    rebuild_decayed,
    rebuild_window,
    warmstart_select,
)
from .bandit_core import (
    DEFAULT_ACTION_SPACES,
    ActionSpace,
    Policy,
    PolicyConfig,
    PosteriorState,
    SelectionResult,
    init_posterior,
)
from .errors import InvalidArgument, ResponderError
from .features import FeatureSpec, Lexicon, Query, extract, load_lexicon
from .metrics import (
    ExperimentTrace,
    cumulative_regret,
    mean_std,
    queries_to_threshold,
    success_rate,
)
from .orchestration import ActionCatalog, FeedbackQueue, InteractionLog, MockResponder
from .rewards import FeedbackEvent, RewardPipeline, RewardWeights

SECONDS_PER_STEP = 60.0
ENV_NAMES = ("strategy", "tool", "domain")


@dataclass(frozen=True)
class Archetype:
    name: str
    templates: tuple[str, ...]
    slots: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def fields(self) -> set[str]:
        names = set()
        for t in self.templates:
            names |= {f for _, f, _, _ in string.Formatter().parse(t) if f}
        return names


@dataclass
class EnvironmentSpec:
    mode: str
    actions: ActionSpace
    archetypes: list[Archetype]
    success_table: dict[str, dict[str, float]]
    weights: np.ndarray
    noise: float = 0.0
    ties: dict[str, list[str]] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self) -> None:
        names = [a.name for a in self.archetypes]
        if not names:
            raise InvalidArgument("environment needs at least one archetype")
        if len(set(names)) != len(names):
            raise InvalidArgument("archetype names must be unique")
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(names),) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise InvalidArgument(f"archetype weights must be {len(names)} non-negative values summing to 1")
        self.weights = w
        if not 0.0 <= self.noise <= 1.0:
            raise InvalidArgument("noise must lie in [0, 1]")
        for arch in self.archetypes:
            if not arch.templates:
                raise InvalidArgument(f"archetype {arch.name!r} has no templates")
            missing = arch.fields() - set(arch.slots)
            if missing:
                raise InvalidArgument(f"archetype {arch.name!r} templates use undefined slots {sorted(missing)}")
            row = self.success_table.get(arch.name)
            if row is None or set(row) != set(self.actions.actions):
                raise InvalidArgument(f"success_table row for {arch.name!r} must cover actions {self.actions.actions}")
            if any(not 0.0 <= p <= 1.0 for p in row.values()):
                raise InvalidArgument(f"success probabilities for {arch.name!r} must lie in [0, 1]")
            best = max(row.values())
            argmax = sorted(a for a, p in row.items() if p == best)
            if len(argmax) > 1 and sorted(self.ties.get(arch.name, [])) != argmax:
                raise InvalidArgument(f"archetype {arch.name!r} has an undeclared tie between {argmax}")
        extra = set(self.success_table) - set(names)
        if extra:
            raise InvalidArgument(f"success_table has rows for unknown archetypes {sorted(extra)}")

    def archetype(self, name: str) -> Archetype:
        for a in self.archetypes:
            if a.name == name:
                return a
        raise InvalidArgument(f"unknown archetype {name!r}")

    def p(self, archetype: str, action: str) -> float:
        try:
            return self.success_table[archetype][action]
        except KeyError:
            raise InvalidArgument(f"no success probability for ({archetype!r}, {action!r})") from None

    def optimal_value(self, archetype: str) -> float:
        return max(self.success_table[archetype].values())

    def optimal_action(self, archetype: str) -> str:
        row = self.success_table[archetype]
        return max(self.actions.actions, key=lambda a: (row[a], -self.actions.index(a)))

    def random_policy_value(self) -> float:
        """Closed-form expected per-step success of uniform random selection."""
        per_arch = [np.mean([row[a] for a in self.actions.actions]) for row in
                    (self.success_table[a.name] for a in self.archetypes)]
        return float(np.dot(self.weights, per_arch))

    def oracle_value(self) -> float:
        return float(np.dot(self.weights, [self.optimal_value(a.name) for a in self.archetypes]))

    @classmethod
    def from_dict(cls, data: dict, name: str = "") -> "EnvironmentSpec":
        try:
            mode = data["mode"]
            if "actions" in data:
                space = ActionSpace(tuple(data["actions"]), mode)
            elif mode in DEFAULT_ACTION_SPACES:
                space = DEFAULT_ACTION_SPACES[mode]
            else:
                raise InvalidArgument(f"mode {mode!r} needs an explicit actions list")
            archetypes = [
                Archetype(
                    a["name"],
                    tuple(a["templates"]),
                    {k: tuple(v) for k, v in a.get("slots", {}).items()},
                )
                for a in data["archetypes"]
            ]
            table = {k: {a: float(p) for a, p in row.items()} for k, row in data["success_table"].items()}
            weights = data.get("weights")
            if weights is None:
                weights = [1.0 / len(archetypes)] * len(archetypes)
            return cls(
                mode=mode,
                actions=space,
                archetypes=archetypes,
                success_table=table,
                weights=np.asarray(weights, dtype=float),
                noise=float(data.get("noise", 0.0)),
                ties={k: list(v) for k, v in data.get("ties", {}).items()},
                name=name,
            )
        except InvalidArgument:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidArgument(f"malformed environment spec: {exc!r}") from exc

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "actions": list(self.actions.actions),
            "archetypes": [
                {"name": a.name, "templates": list(a.templates), "slots": {k: list(v) for k, v in a.slots.items()}}
                for a in self.archetypes
            ],
            "success_table": self.success_table,
            "weights": [float(w) for w in self.weights],
            "noise": self.noise,
            "ties": self.ties,
        }


def load_environment(path_or_name: str | Path) -> EnvironmentSpec:
    """Load an environment JSON file, or a shipped default by name (strategy, tool, domain)."""
    key = str(path_or_name)
    if key in ENV_NAMES:
        text = resources.files("agentbandit.data").joinpath("envs", f"{key}.json").read_text("utf-8")
        name = key
    else:
        p = Path(path_or_name)
        try:
            text = p.read_text("utf-8")
        except OSError as exc:
            raise InvalidArgument(f"{p}: cannot read environment file ({exc.strerror})") from None
        name = p.stem
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidArgument(f"{key}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise InvalidArgument(f"{key}: environment must be a JSON object")
    return EnvironmentSpec.from_dict(data, name)


def generate_query(env: EnvironmentSpec, rng: np.random.Generator, qid: str = "") -> Query:
    """Draw an archetype by weight and instantiate one of its templates."""
    k = int(rng.choice(len(env.archetypes), p=env.weights))
    arch = env.archetypes[k]
    template = arch.templates[int(rng.integers(len(arch.templates)))]
    fills = {}
    for slot in sorted(arch.fields()):
        options = arch.slots[slot]
        fills[slot] = options[int(rng.integers(len(options)))]
    return Query(template.format(**fills), qid, arch.name)


@dataclass
class SimulatedUser:
    env: EnvironmentSpec
    feedback_rate: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.feedback_rate <= 1.0:
            raise InvalidArgument("feedback_rate must lie in (0, 1]")

    def outcome_and_feedback(self, archetype: str, action: str, rng: np.random.Generator) -> tuple[int, int | None]:
        """Latent satisfaction and the (possibly absent, possibly flipped) rating shown to the system.

        Always consumes exactly three uniforms so streams stay aligned across policies.
        """
        p = self.env.p(archetype, action)
        u_obs, u_out, u_flip = rng.random(3)
        outcome = int(u_out < p)
        if u_obs >= self.feedback_rate:
            return outcome, None
        rating = 1 - outcome if u_flip < self.env.noise else outcome
        return outcome, rating

    def give_feedback(self, archetype: str, action: str, rng: np.random.Generator) -> int | None:
        return self.outcome_and_feedback(archetype, action, rng)[1]

    def implicit_signals(self, outcome: int, rng: np.random.Generator) -> dict:
        """Engagement signals loosely tied to latent satisfaction (fixed draw count)."""
        u = rng.random(3)
        if outcome:
            return {"read_time": 0.5 + 0.5 * u[0], "followups": int(u[1] < 0.5), "rephrases": 0}
        return {"read_time": 0.4 * u[0], "followups": 0, "rephrases": int(u[2] < 0.6)}


def give_feedback(user: SimulatedUser, archetype: str, action: str, rng: np.random.Generator) -> int | None:
    return user.give_feedback(archetype, action, rng)


@dataclass
class RunOptions:
    adaptation: AdaptationOptions = field(default_factory=AdaptationOptions)
    reward_mode: str = "binary"
    feedback_rate: float = 1.0
    feedback_delay: int = 0
    importance_correction: bool = False
    alpha0: float = 1.0
    beta0: float = 1.0
    # "all_ones" replaces every context with 1_d (no-context ablation)
    context_override: str | None = None
    initial_posterior: PosteriorState | None = None
    weights: RewardWeights = field(default_factory=RewardWeights)
    log_path: str | Path | None = None


def _fixed_selection(posterior: PosteriorState, action: str, source: str) -> SelectionResult:
    n = posterior.num_actions
    idx = posterior.actions.index(action)
    return SelectionResult(action, idx, np.eye(n)[idx], np.full(n, np.nan), 1.0, 0, source)


def run_experiment(
    env: EnvironmentSpec,
    config: PolicyConfig,
    T: int,
    seed: int,
    options: RunOptions | None = None,
    lexicon: Lexicon | None = None,
    spec: FeatureSpec = FeatureSpec(),
    responder: MockResponder | None = None,
    catalog: ActionCatalog | None = None,
) -> ExperimentTrace:
    """Run one seeded interaction loop of ``T`` steps and return its trace."""
    if T < 1:
        raise InvalidArgument("T must be >= 1")
    opts = options or RunOptions()
    adapt = opts.adaptation
    adapt.validate()
    lexicon = lexicon or load_lexicon()
    responder = responder or MockResponder()
    catalog = catalog or ActionCatalog()
    space = env.actions
    d = spec.d

    if opts.initial_posterior is not None:
        post = opts.initial_posterior.copy()
        if post.dim != d or post.actions.actions != space.actions:
            raise InvalidArgument("initial posterior does not match the environment's actions and d")
    else:
        post = init_posterior(space, d, opts.alpha0, opts.beta0)
    a0, b0 = post.alpha0, post.beta0

    q_seq, user_seq, policy_seq = np.random.SeedSequence(seed).spawn(3)
    q_rng, user_rng = np.random.default_rng(q_seq), np.random.default_rng(user_seq)
    policy = Policy(post, config, policy_seq)
    user = SimulatedUser(env, opts.feedback_rate)
    pipeline = RewardPipeline(
        opts.reward_mode, space.actions, opts.weights, importance_correction=opts.importance_correction
    )
    history = HistoryBuffer()
    decaying = DecayingPosterior(policy.posterior, adapt.gamma) if adapt.gamma is not None and adapt.extra.get("incremental") else None
    log = InteractionLog(opts.log_path) if opts.log_path else None
    records: list[InteractionRecord] = []
    rebuilds = 0

    def apply(payload, event: FeedbackEvent):
        rec, x, response, query_text, entry = payload
        breakdown = pipeline.compute(x, rec.action, event, response, query_text)
        entry.update(breakdown.as_log())
        r = breakdown.reward_final
        if r is None:
            return None
        rec.reward = r
        if decaying is not None:
            decaying.update(rec.action, x, r, rec.step)
            policy.updates += 1
        else:
            policy.update(rec.action, x, r)
        entry["updated"] = True
        return r

    queue = FeedbackQueue(apply)
    due: dict[int, list[tuple[str, FeedbackEvent]]] = {}
    log_entries: list[dict] = []

    try:
        for t in range(1, T + 1):
            now = t * SECONDS_PER_STEP
            if decaying is not None and t > 1:
                decaying.advance(t - 1)
            for iid, event in due.pop(t, []):
                queue.resolve(iid, event, now)

            if adapt.window is not None or (adapt.gamma is not None and decaying is None):
                if (t - 1) % adapt.rebuild_every == 0 and len(history):
                    if adapt.window is not None:
                        policy.posterior = rebuild_window(history, adapt.window, space, d, a0, b0)
                    else:
                        policy.posterior = rebuild_decayed(history, adapt.gamma, space, d, a0, b0, now=t - 1)
                    rebuilds += 1

            iid = f"{seed}-{t}"
            query = generate_query(env, q_rng, iid)
            if opts.context_override == "all_ones":
                x = np.ones(d)
            elif opts.context_override is None:
                x = extract(query, lexicon, spec)
            else:
                raise InvalidArgument(f"unknown context override {opts.context_override!r}")

            warm = None
            if adapt.warm_start:
                warm = warmstart_select(x, t, space, adapt.warm_threshold, adapt.n_warm)
            sel = _fixed_selection(policy.posterior, warm, "warmstart") if warm else policy.select(x)

            arch = query.archetype
            rec = InteractionRecord(
                step=t,
                context=x,
                action=sel.action,
                reward=None,
                propensity=sel.propensity,
                timestamp=now,
                optimal_expected=env.optimal_value(arch),
                chosen_expected=env.p(arch, sel.action),
                archetype=arch,
                source=sel.source,
            )
            entry = {
                "id": iid,
                "step": t,
                "query": query.text,
                "context": [float(v) for v in x],
                "action": sel.action,
                "policy": config.label if sel.source == "policy" else sel.source,
                "sampled_scores": [float(v) for v in sel.sampled_scores],
                "propensity": sel.propensity,
                "response_meta": None,
                "updated": False,
            }
            log_entries.append(entry)

            agent = catalog.config_for_action(space.mode, sel.action)
            try:
                response = responder.respond(agent, query.text, sel.action)
            except ResponderError as exc:
                entry["response_meta"] = {"error": str(exc)}
                rec.outcome = 0.0
                records.append(rec)
                history.append(rec)
                user_rng.random(6)  # keep the feedback stream aligned
                continue
            entry["response_meta"] = {"latency": response.latency, "tokens": response.tokens, "citations": response.citations}

            outcome, rating = user.outcome_and_feedback(arch, sel.action, user_rng)
            implicit = user.implicit_signals(outcome, user_rng)
            rec.outcome = float(outcome)
            event = FeedbackEvent(
                explicit=rating,
                latency=response.latency,
                tokens_used=response.tokens,
                received_at=now + opts.feedback_delay * SECONDS_PER_STEP,
                **implicit,
            )
            queue.enqueue(iid, now, (rec, x, response, query.text, entry))
            if opts.feedback_delay == 0:
                queue.resolve(iid, event, now)
            else:
                due.setdefault(t + opts.feedback_delay, []).append((iid, event))
            records.append(rec)
            history.append(rec)
        if log is not None:
            for e in log_entries:
                log.write(e)
    finally:
        if log is not None:
            log.close()

    trace = ExperimentTrace(records, space.actions, config.label, seed, env.mode)
    trace.extra.update(
        posterior=policy.posterior,
        history=history,
        updates=policy.updates,
        resolved=queue.resolved,
        applied=queue.applied,
        dropped=queue.dropped,
        pending=len(queue),
        rebuilds=rebuilds,
    )
    return trace


@dataclass
class PolicySummary:
    label: str
    success_mean: float
    success_std: float
    qtt_mean: float
    qtt_std: float
    qtt_censored_mean: float
    reach_rate: float
    regret_mean: float
    regret_std: float
    improvement_vs_random: float | None = None
    per_seed_success: list[float] = field(default_factory=list)
    per_seed_qtt: list[int | None] = field(default_factory=list)
    per_seed_regret: list[float] = field(default_factory=list)


SUMMARY_COLUMNS = (
    "policy",
    "success_mean",
    "success_std",
    "improvement_vs_random",
    "qtt_mean",
    "qtt_std",
    "qtt_censored_mean",
    "reach_rate",
    "regret_mean",
    "regret_std",
)


def summarize(label: str, traces: Sequence[ExperimentTrace], threshold: float = 0.7, w: int = 10) -> PolicySummary:
    succ = [success_rate(t) for t in traces]
    qtt = [queries_to_threshold(t, threshold, w) for t in traces]
    reg = [float(cumulative_regret(t)[-1]) for t in traces]
    T = len(traces[0])
    s_m, s_s = mean_std(succ)
    q_m, q_s = mean_std([q for q in qtt if q is not None])
    r_m, r_s = mean_std(reg)
    censored = float(np.mean([T + 1 if q is None else q for q in qtt]))
    reach = sum(q is not None for q in qtt) / len(qtt)
    return PolicySummary(label, s_m, s_s, q_m, q_s, censored, reach, r_m, r_s, None, succ, qtt, reg)


def compare_policies(
    env: EnvironmentSpec,
    configs: Sequence[PolicyConfig] | dict[str, PolicyConfig],
    T: int,
    seeds: Sequence[int],
    options: RunOptions | dict[str, RunOptions] | None = None,
    threshold: float = 0.7,
    w: int = 10,
    lexicon: Lexicon | None = None,
    on_trace: Callable[[str, ExperimentTrace], None] | None = None,
) -> list[PolicySummary]:
    """Run every policy on every seed and aggregate mean/stddev per policy."""
    if not seeds:
        raise InvalidArgument("need at least one seed")
    lexicon = lexicon or load_lexicon()
    items = list(configs.items()) if isinstance(configs, dict) else [(c.label, c) for c in configs]
    out = []
    for label, cfg in items:
        opts = options.get(label) if isinstance(options, dict) else options
        traces = []
        for s in seeds:
            tr = run_experiment(env, cfg, T, s, opts, lexicon)
            if on_trace is not None:
                on_trace(label, tr)
            traces.append(tr)
        out.append(summarize(label, traces, threshold, w))
    rand = next((s for s in out if s.label == "random"), None)
    if rand is not None:
        for s in out:
            s.improvement_vs_random = s.success_mean - rand.success_mean
    return out


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if np.isnan(v) else f"{v:.4f}"
    return str(v)


def summary_rows(summaries: Sequence[PolicySummary]) -> list[list[str]]:
    rows = []
    for s in summaries:
        rows.append(
            [
                s.label,
                _cell(s.success_mean),
                _cell(s.success_std),
                _cell(s.improvement_vs_random),
                _cell(s.qtt_mean),
                _cell(s.qtt_std),
                _cell(s.qtt_censored_mean),
                _cell(s.reach_rate),
                _cell(s.regret_mean),
                _cell(s.regret_std),
            ]
        )
    return rows


def summary_csv(summaries: Sequence[PolicySummary]) -> str:
    lines = [",".join(SUMMARY_COLUMNS)]
    lines += [",".join(r) for r in summary_rows(summaries)]
    return "\n".join(lines) + "\n"


def render_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h)) for i, h in enumerate(header)]
    fmt = lambda r: "  ".join(str(c).ljust(w) if i == 0 else str(c).rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
    sep = "  ".join("-" * w for w in widths)
    return "\n".join([fmt(header), sep, *(fmt(r) for r in rows)]) + "\n"


def summary_text(summaries: Sequence[PolicySummary]) -> str:
    return render_table(SUMMARY_COLUMNS, summary_rows(summaries))
