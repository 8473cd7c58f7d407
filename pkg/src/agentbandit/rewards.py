"""Rewards from explicit, implicit, quality and multi-objective signals.

Every value that reaches a posterior update is in [0, 1]: z-scored rewards
are squashed with a sigmoid and importance-corrected rewards are clamped,
while the raw values stay available for logging.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .errors import InvalidArgument
from .features import tokenize

_SIMPLEX_TOL = 1e-9
NORMALIZATION_EPS = 0.01


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@dataclass(frozen=True)
class FeedbackEvent:
    explicit: int | None = None
    read_time: float = 0.0  # already normalized to [0, 1] by the caller
    followups: int = 0
    rephrases: int = 0
    latency: float = 0.0
    tokens_used: int = 0
    received_at: float = 0.0

    def __post_init__(self) -> None:
        if self.explicit is not None and self.explicit not in (0, 1):
            raise InvalidArgument(f"explicit rating must be 0 or 1, got {self.explicit!r}")
        if self.followups < 0 or self.rephrases < 0 or self.tokens_used < 0:
            raise InvalidArgument("counts must be non-negative")
        if self.read_time < 0 or self.latency < 0:
            raise InvalidArgument("times must be non-negative")


@dataclass(frozen=True)
class QualitySignals:
    response_length: float
    target_length: float
    sigma_l: float
    citations: int = 0
    citations_expected: int = 1
    query_embedding: np.ndarray | None = None
    response_embedding: np.ndarray | None = None
    unsafe_probs: Sequence[float] = ()

    def __post_init__(self) -> None:
        if not self.sigma_l > 0:
            raise InvalidArgument("sigma_l must be positive")
        if self.citations_expected < 1:
            raise InvalidArgument("citations_expected must be >= 1")
        if self.citations < 0:
            raise InvalidArgument("citations must be non-negative")
        if any(not 0.0 <= p <= 1.0 for p in self.unsafe_probs):
            raise InvalidArgument("unsafe category probabilities must lie in [0, 1]")


def _check_simplex(name: str, ws: Sequence[float]) -> None:
    if any(w < 0 for w in ws) or abs(sum(ws) - 1.0) > _SIMPLEX_TOL:
        raise InvalidArgument(f"{name} weights must be non-negative and sum to 1, got {tuple(ws)}")


@dataclass(frozen=True)
class RewardWeights:
    composite: tuple[float, float, float] = (0.6, 0.25, 0.15)
    implicit: tuple[float, float, float] = (1.0, 0.5, 1.0)
    quality: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    objectives: tuple[float, float, float] = (0.8, 0.1, 0.1)
    latency_decay: float = 0.5
    max_tokens: int = 1000

    def __post_init__(self) -> None:
        _check_simplex("composite", self.composite)
        _check_simplex("quality", self.quality)
        _check_simplex("multi-objective", self.objectives)
        if any(a < 0 for a in self.implicit):
            raise InvalidArgument("implicit coefficients must be non-negative")
        if not self.latency_decay > 0:
            raise InvalidArgument("latency decay must be positive")
        if self.max_tokens < 1:
            raise InvalidArgument("max_tokens must be >= 1")


def explicit_reward(event: FeedbackEvent) -> int | None:
    return event.explicit


def implicit_reward(event: FeedbackEvent, weights: RewardWeights = RewardWeights()) -> float:
    a1, a2, a3 = weights.implicit
    return sigmoid(a1 * event.read_time + a2 * event.followups - a3 * event.rephrases)


def cosine(u, v) -> float:
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise InvalidArgument("cosine of a zero vector is undefined")
    return float(u @ v / (nu * nv))


@dataclass(frozen=True)
class QualityBreakdown:
    length: float
    citations: float
    coherence: float
    safety: float
    score: float


def quality_score(sig: QualitySignals, weights: RewardWeights = RewardWeights()) -> QualityBreakdown:
    b1, b2, b3, b4 = weights.quality
    q_len = math.exp(-((sig.response_length - sig.target_length) ** 2) / (2.0 * sig.sigma_l**2))
    q_cit = min(sig.citations / sig.citations_expected, 1.0)
    if b3 > 0:
        if sig.query_embedding is None or sig.response_embedding is None:
            raise InvalidArgument("coherence weight is positive but embeddings are missing")
        q_coh = max(cosine(sig.query_embedding, sig.response_embedding), 0.0)
    else:
        q_coh = 0.0
    q_safe = 1.0 - max(sig.unsafe_probs, default=0.0)
    score = b1 * q_len + b2 * q_cit + b3 * q_coh + b4 * q_safe
    return QualityBreakdown(q_len, q_cit, q_coh, q_safe, min(max(score, 0.0), 1.0))


def composite_reward(
    explicit: float | None,
    implicit: float,
    quality: float,
    weights: RewardWeights = RewardWeights(),
) -> float:
    """Weighted blend; with no explicit rating the other two weights are rescaled to sum to 1."""
    for name, v in (("implicit", implicit), ("quality", quality)):
        if not 0.0 <= v <= 1.0:
            raise InvalidArgument(f"{name} component must lie in [0, 1], got {v}")
    w1, w2, w3 = weights.composite
    if explicit is None:
        if w2 + w3 == 0:
            raise InvalidArgument("no explicit feedback and zero weight on the other components")
        return (w2 * implicit + w3 * quality) / (w2 + w3)
    if not 0.0 <= explicit <= 1.0:
        raise InvalidArgument(f"explicit component must lie in [0, 1], got {explicit}")
    return w1 * explicit + w2 * implicit + w3 * quality


@dataclass(frozen=True)
class NeighborhoodStats:
    mean: float
    std: float
    count: int
    epsilon: float = NORMALIZATION_EPS


def normalize_reward(r: float, stats: NeighborhoodStats) -> float:
    """z-score of ``r`` against rewards observed in similar contexts."""
    if stats.count < 1:
        raise InvalidArgument("neighborhood stats need at least one sample")
    return (r - stats.mean) / (stats.std + stats.epsilon)


class NeighborhoodTracker:
    """Rewards keyed by context; stats pool every past context within a cosine threshold."""

    def __init__(self, threshold: float = 0.9, epsilon: float = NORMALIZATION_EPS) -> None:
        self.threshold = threshold
        self.epsilon = epsilon
        self._contexts: list[np.ndarray] = []
        self._rewards: list[float] = []

    def add(self, x, r: float) -> None:
        x = np.asarray(x, dtype=float)
        self._contexts.append(x / np.linalg.norm(x))
        self._rewards.append(float(r))

    def stats(self, x) -> NeighborhoodStats | None:
        if not self._contexts:
            return None
        x = np.asarray(x, dtype=float)
        sims = np.stack(self._contexts) @ (x / np.linalg.norm(x))
        near = np.asarray(self._rewards)[sims >= self.threshold - 1e-12]
        if near.size == 0:
            return None
        return NeighborhoodStats(float(near.mean()), float(near.std()), int(near.size), self.epsilon)


def importance_correct(r_observed: float, p_feedback: float) -> tuple[float, float]:
    """Inverse-propensity correction; returns (raw, clamped to [0, 1])."""
    if not p_feedback > 0:
        raise InvalidArgument(f"feedback propensity must be positive, got {p_feedback}")
    raw = r_observed / p_feedback
    return raw, min(max(raw, 0.0), 1.0)


class FeedbackPropensityEstimator:
    """Exponentially smoothed per-action rate at which feedback is actually observed."""

    def __init__(self, actions: Sequence[str], smoothing: float = 0.1, floor: float = 0.05) -> None:
        if not 0 < smoothing <= 1:
            raise InvalidArgument("smoothing must lie in (0, 1]")
        if not 0 < floor <= 1:
            raise InvalidArgument("floor must lie in (0, 1]")
        self.smoothing = smoothing
        self.floor = floor
        self._rate = {a: 1.0 for a in actions}

    def observe(self, action: str, got_feedback: bool) -> None:
        s = self.smoothing
        self._rate[action] = (1 - s) * self._rate[action] + s * (1.0 if got_feedback else 0.0)

    def __call__(self, action: str) -> float:
        return max(self._rate[action], self.floor)


def multi_objective_reward(
    accuracy: int,
    latency: float,
    tokens: int,
    weights: RewardWeights = RewardWeights(),
) -> float:
    if accuracy not in (0, 1):
        raise InvalidArgument("accuracy must be 0 or 1")
    if latency < 0:
        raise InvalidArgument("latency must be non-negative")
    if not 0 <= tokens <= weights.max_tokens:
        raise InvalidArgument(f"tokens {tokens} outside [0, {weights.max_tokens}]")
    w_acc, w_speed, w_cost = weights.objectives
    return (
        w_acc * accuracy
        + w_speed * math.exp(-weights.latency_decay * latency)
        + w_cost * (1.0 - tokens / weights.max_tokens)
    )


class Embedder(Protocol):
    def __call__(self, text: str) -> np.ndarray: ...


class SafetyScorer(Protocol):
    def __call__(self, text: str) -> Sequence[float]: ...


def default_embedding(text: str, dim: int = 64) -> np.ndarray:
    """Signed hashed bag-of-words, L2-normalized. Returns a zero vector when there are no tokens."""
    if dim < 8:
        raise InvalidArgument("embedding dimension must be >= 8")
    vec = np.zeros(dim)
    for tok in tokenize(text):
        h = int.from_bytes(hashlib.blake2b(tok.encode("utf-8"), digest_size=8).digest(), "little")
        vec[h % dim] += 1.0 if (h >> 63) & 1 else -1.0
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def no_unsafe_content(text: str) -> Sequence[float]:
    return (0.0,)


@dataclass
class RewardBreakdown:
    """Every component computed for one interaction; field names match the JSONL log."""

    reward_explicit: float | None = None
    reward_implicit: float | None = None
    reward_quality: float | None = None
    reward_composite: float | None = None
    reward_z: float | None = None
    reward_corrected_raw: float | None = None
    reward_final: float | None = None
    propensity: float | None = None
    quality_parts: dict = field(default_factory=dict)

    def as_log(self) -> dict:
        return {
            "reward_explicit": self.reward_explicit,
            "reward_implicit": self.reward_implicit,
            "reward_quality": self.reward_quality,
            "reward_composite": self.reward_composite,
            "reward_z": self.reward_z,
            "reward_final": self.reward_final,
            "propensity": self.propensity,
        }


REWARD_MODES = ("binary", "composite", "multi_objective")


class RewardPipeline:
    """Turns one feedback event into the reward applied to the posterior.

    binary: the explicit rating. composite: explicit/implicit/quality blend,
    optionally z-scored against similar contexts and squashed with a sigmoid.
    multi_objective: accuracy/speed/cost blend. Any mode can apply
    inverse-propensity correction for sparse feedback. Returns a breakdown
    whose ``reward_final`` is None when there is nothing to update with.
    """

    def __init__(
        self,
        mode: str = "binary",
        actions: Sequence[str] = (),
        weights: RewardWeights = RewardWeights(),
        normalize: bool | None = None,
        importance_correction: bool = False,
        similarity: float = 0.9,
        embedder: Embedder = default_embedding,
        safety: SafetyScorer = no_unsafe_content,
        target_length: float = 300.0,
        sigma_length: float = 200.0,
        citations_expected: int = 2,
    ) -> None:
        if mode not in REWARD_MODES:
            raise InvalidArgument(f"unknown reward mode {mode!r}; expected one of {REWARD_MODES}")
        self.mode = mode
        self.weights = weights
        self.normalize = (mode == "composite") if normalize is None else normalize
        self.importance_correction = importance_correction
        self.neighborhood = NeighborhoodTracker(similarity)
        self.feedback_rate = FeedbackPropensityEstimator(actions)
        self.embedder = embedder
        self.safety = safety
        self.target_length = target_length
        self.sigma_length = sigma_length
        self.citations_expected = citations_expected

    def compute(self, x, action: str, event: FeedbackEvent, response=None, query: str = "") -> RewardBreakdown:
        out = RewardBreakdown()
        out.reward_explicit = explicit_reward(event)
        self.feedback_rate.observe(action, out.reward_explicit is not None)

        if self.mode == "binary":
            r = None if out.reward_explicit is None else float(out.reward_explicit)
        elif self.mode == "multi_objective":
            r = None
            if out.reward_explicit is not None:
                r = multi_objective_reward(out.reward_explicit, event.latency, event.tokens_used, self.weights)
        else:
            out.reward_implicit = implicit_reward(event, self.weights)
            sig = QualitySignals(
                response_length=float(getattr(response, "tokens", 0)),
                target_length=self.target_length,
                sigma_l=self.sigma_length,
                citations=int(getattr(response, "citations", 0)),
                citations_expected=self.citations_expected,
                query_embedding=self.embedder(query or "empty"),
                response_embedding=self.embedder(getattr(response, "text", "") or "empty"),
                unsafe_probs=tuple(self.safety(getattr(response, "text", ""))),
            )
            q = quality_score(sig, self.weights)
            out.reward_quality = q.score
            out.quality_parts = {"length": q.length, "citations": q.citations, "coherence": q.coherence, "safety": q.safety}
            r = composite_reward(out.reward_explicit, out.reward_implicit, q.score, self.weights)
            out.reward_composite = r
            if self.normalize:
                stats = self.neighborhood.stats(x)
                self.neighborhood.add(x, r)
                if stats is not None:
                    out.reward_z = normalize_reward(r, stats)
                    r = sigmoid(out.reward_z)

        if r is not None and self.importance_correction and out.reward_explicit is not None:
            p = self.feedback_rate(action)
            out.propensity = p
            out.reward_corrected_raw, r = importance_correct(r, p)
        out.reward_final = r
        return out
