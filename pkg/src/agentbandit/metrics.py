"""Metric series over experiment traces."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .adaptation import InteractionRecord
from .errors import InvalidArgument, UnsupportedMode

# float slack for ``rolling >= threshold`` comparisons (0.7 is not exact in binary)
_EPS = 1e-12

CSV_COLUMNS = ("step", "reward", "cum_reward", "rolling_success", "cum_regret", "entropy")


@dataclass
class ExperimentTrace:
    records: list[InteractionRecord]
    actions: tuple[str, ...]
    policy: str = ""
    seed: int = 0
    mode: str = ""
    extra: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def rewards(self) -> np.ndarray:
        """Realized satisfaction per step (latent outcome when simulated, else the applied reward)."""
        out = []
        for r in self.records:
            v = r.outcome if r.outcome is not None else r.reward
            out.append(0.0 if v is None else float(v))
        return np.array(out, dtype=float)

    @property
    def optimal_expected(self) -> np.ndarray | None:
        if not self.records or any(r.optimal_expected is None for r in self.records):
            return None
        return np.array([r.optimal_expected for r in self.records], dtype=float)

    @property
    def chosen_expected(self) -> np.ndarray | None:
        if not self.records or any(r.chosen_expected is None for r in self.records):
            return None
        return np.array([r.chosen_expected for r in self.records], dtype=float)

    @property
    def chosen(self) -> list[str]:
        return [r.action for r in self.records]


def _rewards(trace_or_rewards) -> np.ndarray:
    if isinstance(trace_or_rewards, ExperimentTrace):
        return trace_or_rewards.rewards
    return np.asarray(trace_or_rewards, dtype=float)


def cumulative_reward(trace) -> np.ndarray:
    r = _rewards(trace)
    if r.size == 0:
        raise InvalidArgument("trace is empty")
    return np.cumsum(r)


def rolling_success(trace, w: int = 10) -> np.ndarray:
    """Mean of the last ``min(t, w)`` rewards at each step t."""
    if w < 1:
        raise InvalidArgument("window must be >= 1")
    r = _rewards(trace)
    c = np.concatenate([[0.0], np.cumsum(r)])
    t = np.arange(1, r.size + 1)
    lo = np.maximum(t - w, 0)
    return (c[t] - c[lo]) / (t - lo)


def cumulative_regret(trace) -> np.ndarray:
    """Prefix sums of the expected-reward gap between the optimal and the chosen action."""
    if isinstance(trace, ExperimentTrace):
        opt, chosen = trace.optimal_expected, trace.chosen_expected
    else:
        opt, chosen = trace
    if opt is None or chosen is None:
        raise UnsupportedMode("regret needs oracle expected values (simulation only)")
    return np.cumsum(np.asarray(opt, dtype=float) - np.asarray(chosen, dtype=float))


def action_entropy(trace, upto: int | None = None) -> float:
    """Natural-log entropy of the empirical action frequencies over the first ``upto`` steps."""
    actions = trace.chosen if isinstance(trace, ExperimentTrace) else list(trace)
    n = len(actions) if upto is None else upto
    if n < 1 or n > len(actions):
        raise InvalidArgument(f"upto must lie in [1, {len(actions)}]")
    _, counts = np.unique(np.asarray(actions[:n], dtype=object).astype(str), return_counts=True)
    p = counts / n
    return float(-np.sum(p * np.log(p)))


def entropy_series(trace) -> np.ndarray:
    actions = trace.chosen if isinstance(trace, ExperimentTrace) else list(trace)
    counts: dict[str, int] = {}
    out = np.empty(len(actions))
    for t, a in enumerate(actions, 1):
        counts[a] = counts.get(a, 0) + 1
        p = np.fromiter(counts.values(), dtype=float) / t
        out[t - 1] = -np.sum(p * np.log(p))
    return out


def queries_to_threshold(trace, threshold: float = 0.7, w: int = 10) -> int | None:
    """First 1-based step t >= w whose full-window success rate reaches ``threshold``."""
    if not 0.0 < threshold <= 1.0:
        raise InvalidArgument("threshold must lie in (0, 1]")
    if w < 1:
        raise InvalidArgument("window must be >= 1")
    roll = rolling_success(trace, w)
    for t in range(w, roll.size + 1):
        if roll[t - 1] >= threshold - _EPS:
            return t
    return None


def success_rate(trace) -> float:
    """Fraction of successful steps over the whole trace (CR(T) / T)."""
    r = _rewards(trace)
    return float(r.mean()) if r.size else math.nan


def selection_frequencies(trace: ExperimentTrace, last: int | None = None) -> dict[str, dict[str, float]]:
    """Per-archetype empirical action frequencies over the final ``last`` steps."""
    recs = trace.records if last is None else trace.records[-last:]
    by_arch: dict[str, dict[str, int]] = {}
    for r in recs:
        arch = r.archetype or "all"
        by_arch.setdefault(arch, {a: 0 for a in trace.actions})[r.action] += 1
    return {
        arch: {a: c / max(sum(cs.values()), 1) for a, c in cs.items()} for arch, cs in by_arch.items()
    }


def metric_table(trace: ExperimentTrace, w: int = 10) -> list[dict]:
    rewards = trace.rewards
    cum = cumulative_reward(trace)
    roll = rolling_success(trace, w)
    try:
        regret = cumulative_regret(trace)
    except UnsupportedMode:
        regret = None
    ent = entropy_series(trace)
    rows = []
    for i in range(len(trace)):
        rows.append(
            {
                "step": trace.records[i].step,
                "reward": rewards[i],
                "cum_reward": cum[i],
                "rolling_success": roll[i],
                "cum_regret": None if regret is None else regret[i],
                "entropy": ent[i],
            }
        )
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def trace_csv(trace: ExperimentTrace, w: int = 10) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in metric_table(trace, w):
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray([v for v in values if v is not None and not math.isnan(v)], dtype=float)
    if arr.size == 0:
        return math.nan, math.nan
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0
