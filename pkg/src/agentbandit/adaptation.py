"""Cold-start warm-starting and non-stationarity handling over interaction history.

Sliding-window and forgetting-factor posteriors are rebuilt from history as
definitional sums; :class:`DecayingPosterior` is the equivalent incremental
fast path for the forgetting factor.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .bandit_core import ActionRef, ActionSpace, PosteriorState, as_context, init_posterior
from .errors import InvalidArgument, UnsupportedMode


@dataclass
class InteractionRecord:
    step: int
    context: np.ndarray
    action: str
    reward: float | None
    propensity: float = 1.0
    timestamp: float = 0.0
    # simulation-only fields
    outcome: float | None = None
    optimal_expected: float | None = None
    chosen_expected: float | None = None
    archetype: str | None = None
    source: str = "policy"

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "context": [float(v) for v in self.context],
            "action": self.action,
            "reward": self.reward,
            "propensity": self.propensity,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InteractionRecord":
        return cls(
            step=int(d["step"]),
            context=np.array(d["context"], dtype=float),
            action=str(d["action"]),
            reward=None if d.get("reward") is None else float(d["reward"]),
            propensity=float(d.get("propensity", 1.0)),
            timestamp=float(d.get("timestamp", 0.0)),
        )


class HistoryBuffer:
    """Ordered interaction records; a ring of the last ``capacity`` entries when bounded."""

    def __init__(self, records: Iterable[InteractionRecord] = (), capacity: int | None = None) -> None:
        if capacity is not None and capacity < 1:
            raise InvalidArgument("capacity must be >= 1")
        self.capacity = capacity
        self._records: collections.deque[InteractionRecord] = collections.deque(maxlen=capacity)
        for r in records:
            self.append(r)

    def append(self, record: InteractionRecord) -> None:
        if self._records and record.step <= self._records[-1].step:
            raise InvalidArgument(
                f"history steps must strictly increase ({record.step} after {self._records[-1].step})"
            )
        self._records.append(record)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[InteractionRecord]:
        return iter(self._records)

    def __getitem__(self, i: int) -> InteractionRecord:
        return self._records[i]

    def last(self, w: int | None) -> list[InteractionRecord]:
        recs = list(self._records)
        return recs if w is None or w >= len(recs) else recs[len(recs) - w:]


def warmstart_select(
    x,
    t: int,
    actions: ActionSpace,
    threshold: float = 0.5,
    n_warm: int = 5,
    complexity_index: int = 1,
) -> str | None:
    """Keyword heuristic for the first ``n_warm`` steps (1-based ``t``) of a strategy run."""
    if actions.mode != "strategy" or not {"direct", "chain_of_thought"} <= set(actions.actions):
        raise UnsupportedMode(f"warm start needs the strategy action space, got mode {actions.mode!r}")
    if t > n_warm:
        return None
    return "chain_of_thought" if float(np.asarray(x)[complexity_index]) > threshold else "direct"


def _replay(
    records: Iterable[InteractionRecord],
    actions: ActionSpace,
    d: int,
    alpha0: float,
    beta0: float,
    weights: Iterable[float] | None = None,
) -> PosteriorState:
    post = init_posterior(actions, d, alpha0, beta0)
    recs = list(records)
    ws = [1.0] * len(recs) if weights is None else list(weights)
    for rec, w in zip(recs, ws):
        if rec.reward is None:
            continue
        i = actions.index(rec.action)
        x = as_context(rec.context, d)
        post.alpha[i] += (w * rec.reward) * x
        post.beta[i] += (w * (1.0 - rec.reward)) * x
    return post


def replay(history: Iterable[InteractionRecord], actions: ActionSpace, d: int, alpha0: float = 1.0, beta0: float = 1.0) -> PosteriorState:
    """Full replay of every record onto a fresh posterior."""
    return _replay(history, actions, d, alpha0, beta0)


def rebuild_window(
    history: HistoryBuffer,
    W: int | None,
    actions: ActionSpace,
    d: int,
    alpha0: float = 1.0,
    beta0: float = 1.0,
) -> PosteriorState:
    """Posterior from only the last ``W`` records (``None`` means all)."""
    if W is not None and W < 1:
        raise InvalidArgument("window must be >= 1")
    return _replay(history.last(W), actions, d, alpha0, beta0)


def rebuild_decayed(
    history: HistoryBuffer,
    gamma: float,
    actions: ActionSpace,
    d: int,
    alpha0: float = 1.0,
    beta0: float = 1.0,
    now: int | None = None,
) -> PosteriorState:
    """Posterior with each record weighted by ``gamma ** (now - step)``.

    ``now`` defaults to the step of the newest record, so that record has weight 1.
    """
    if not 0.0 < gamma <= 1.0:
        raise InvalidArgument("gamma must lie in (0, 1]")
    recs = list(history)
    if not recs:
        return init_posterior(actions, d, alpha0, beta0)
    t = recs[-1].step if now is None else now
    weights = [1.0 if gamma == 1.0 else gamma ** (t - r.step) for r in recs]
    return _replay(recs, actions, d, alpha0, beta0, weights)


class DecayingPosterior:
    """Incremental forgetting factor: shrink accumulated evidence by ``gamma`` per step, then add.

    Matches :func:`rebuild_decayed` with ``now`` equal to the latest step passed
    to :meth:`advance` or :meth:`update`. Evidence for an older step (delayed
    feedback) enters already discounted by its age.
    """

    def __init__(self, posterior: PosteriorState, gamma: float) -> None:
        if not 0.0 < gamma <= 1.0:
            raise InvalidArgument("gamma must lie in (0, 1]")
        self.posterior = posterior
        self.gamma = gamma
        self._step: int | None = None

    def advance(self, step: int) -> None:
        if self._step is not None and step <= self._step:
            return
        if self._step is not None and self.gamma != 1.0:
            f = self.gamma ** (step - self._step)
            p = self.posterior
            p.alpha[:] = p.alpha0 + f * (p.alpha - p.alpha0)
            p.beta[:] = p.beta0 + f * (p.beta - p.beta0)
        self._step = step

    def update(self, action: ActionRef, x, reward: float, step: int) -> None:
        self.advance(step)
        w = 1.0 if self.gamma == 1.0 else self.gamma ** (self._step - step)
        i = self.posterior.actions.index(action)
        x = as_context(x, self.posterior.dim)
        self.posterior.alpha[i] += (w * reward) * x
        self.posterior.beta[i] += (w * (1.0 - reward)) * x


@dataclass
class AdaptationOptions:
    """How the running posterior is maintained; at most one of window/gamma is active."""

    warm_start: bool = False
    warm_threshold: float = 0.5
    n_warm: int = 5
    window: int | None = None
    gamma: float | None = None
    rebuild_every: int = 1
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        if self.window is not None and self.gamma is not None:
            raise InvalidArgument("choose either a sliding window or a forgetting factor, not both")
        if self.window is not None and self.window < 1:
            raise InvalidArgument("window must be >= 1")
        if self.gamma is not None and not 0.0 < self.gamma <= 1.0:
            raise InvalidArgument("gamma must lie in (0, 1]")
        if self.rebuild_every < 1:
            raise InvalidArgument("rebuild_every must be >= 1")
