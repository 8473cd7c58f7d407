"""Pipeline glue: action-to-agent configuration, responders, delayed feedback, persistence."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol

import numpy as np

from .adaptation import HistoryBuffer, InteractionRecord
from .bandit_core import ActionSpace, PosteriorState, DEFAULT_ACTION_SPACES
from .errors import AlreadyResolved, InvalidArgument, LoadError, NotFound, ResponderError

log = logging.getLogger(__name__)

STATE_VERSION = 1
DEFAULT_EXPIRY = 24 * 3600.0


@dataclass(frozen=True)
class AgentConfig:
    system_prompt: str
    temperature: float = 0.5
    tools: frozenset[str] = frozenset()
    max_tokens: int = 1000

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise InvalidArgument(f"temperature {self.temperature} outside [0, 2]")
        if self.max_tokens <= 0:
            raise InvalidArgument("max_tokens must be positive")


_BASE = "You are a life sciences assistant."

DEFAULT_CATALOG: dict[str, dict[str, AgentConfig]] = {
    "strategy": {
        "direct": AgentConfig(f"{_BASE} Provide a concise, direct answer.", 0.5),
        "chain_of_thought": AgentConfig(f"{_BASE} Think step-by-step and show your reasoning.", 0.7),
    },
    "tool": {
        "none": AgentConfig(f"{_BASE} Answer from your own knowledge.", 0.5),
        "pubmed": AgentConfig(f"{_BASE} Search the literature and cite sources.", 0.5, frozenset({"pubmed"})),
        "drugdb": AgentConfig(f"{_BASE} Consult drug databases for drug facts.", 0.5, frozenset({"drugdb"})),
        "calculator": AgentConfig(f"{_BASE} Use the calculator for numeric work.", 0.5, frozenset({"calculator"})),
        "web": AgentConfig(f"{_BASE} Search the web for background.", 0.5, frozenset({"web"})),
    },
    "domain": {
        "general": AgentConfig(f"{_BASE} Give comprehensive, balanced answers across domains.", 0.5),
        "pharma": AgentConfig(
            "You are a pharmacology specialist. Focus on drug mechanisms, safety and contraindications.", 0.5
        ),
        "molbio": AgentConfig(
            "You are a molecular biology specialist. Explain molecular processes and protein function.", 0.5
        ),
        "clinical": AgentConfig(
            "You are a clinical specialist. Follow evidence-based guidelines and include medical disclaimers.", 0.5
        ),
        "research": AgentConfig(
            "You are a research specialist. Critically evaluate evidence and recent findings.", 0.5
        ),
    },
}


class ActionCatalog:
    def __init__(self, configs: dict[str, dict[str, AgentConfig]] | None = None) -> None:
        self.configs = configs if configs is not None else DEFAULT_CATALOG

    def covers(self, space: ActionSpace) -> bool:
        return set(space.actions) <= set(self.configs.get(space.mode, {}))

    def config_for_action(self, mode: str, action: str) -> AgentConfig:
        try:
            return self.configs[mode][action]
        except KeyError:
            raise NotFound(f"no agent config for action {action!r} in mode {mode!r}") from None


def config_for_action(catalog: ActionCatalog, mode: str, action: str) -> AgentConfig:
    return catalog.config_for_action(mode, action)


@dataclass(frozen=True)
class Response:
    text: str
    latency: float
    tokens: int
    citations: int = 0


class Responder(Protocol):
    def respond(self, config: AgentConfig, query: str, action: str) -> Response: ...


class MockResponder:
    """Deterministic stand-in for an LLM agent: canned text, hashed latency and token counts."""

    def __init__(self, fail_on: Callable[[str, str], bool] | None = None) -> None:
        self.fail_on = fail_on

    def respond(self, config: AgentConfig, query: str, action: str) -> Response:
        if self.fail_on is not None and self.fail_on(action, query):
            raise ResponderError(f"mock responder failure for action {action!r}")
        digest = hashlib.blake2b(
            f"{action}\x00{config.system_prompt}\x00{config.temperature!r}\x00{query}".encode("utf-8"),
            digest_size=8,
        ).digest()
        u = int.from_bytes(digest, "little") / 2.0**64
        verbose = "step-by-step" in config.system_prompt
        lo, hi = (300, 700) if verbose else (60, 250)
        tokens = min(int(lo + u * (hi - lo)), config.max_tokens)
        latency = 0.5 + tokens * 0.01 + 0.8 * len(config.tools)
        citations = 3 if config.tools & {"pubmed", "web"} else 0
        text = f"[{action}] Response to: {query}"
        return Response(text, round(latency, 6), tokens, citations)


@dataclass
class PendingFeedback:
    id: str
    issued_at: float
    payload: Any
    expiry: float = DEFAULT_EXPIRY
    resolved: bool = False
    reward: float | None = None


class FeedbackQueue:
    """Interactions awaiting (possibly late) feedback.

    ``apply`` receives ``(payload, event)``, computes the reward and performs
    the posterior update, returning the applied reward or ``None`` when no
    update was made. Each entry is applied at most once.
    """

    def __init__(self, apply: Callable[[Any, Any], float | None], expiry: float = DEFAULT_EXPIRY) -> None:
        self.apply = apply
        self.expiry = expiry
        self._pending: dict[str, PendingFeedback] = {}
        self._done: set[str] = set()
        self.resolved = 0
        self.dropped = 0
        self.applied = 0

    def __len__(self) -> int:
        return len(self._pending)

    def enqueue(self, id: str, issued_at: float, payload: Any) -> PendingFeedback:
        if id in self._pending or id in self._done:
            raise InvalidArgument(f"interaction {id!r} already enqueued")
        entry = PendingFeedback(id, issued_at, payload, self.expiry)
        self._pending[id] = entry
        return entry

    def resolve(self, id: str, event: Any, now: float) -> float | None:
        if id in self._done:
            raise AlreadyResolved(f"feedback for {id!r} already resolved")
        entry = self._pending.pop(id, None)
        if entry is None:
            raise NotFound(f"no pending interaction {id!r}")
        self._done.add(id)
        if now - entry.issued_at > entry.expiry:
            self.dropped += 1
            log.info("feedback for %s arrived after expiry; dropped", id)
            return None
        entry.resolved = True
        self.resolved += 1
        entry.reward = self.apply(entry.payload, event)
        if entry.reward is not None:
            self.applied += 1
        return entry.reward

    def expire(self, now: float) -> int:
        """Drop every entry older than its expiry; returns how many were dropped."""
        stale = [k for k, e in self._pending.items() if now - e.issued_at > e.expiry]
        for k in stale:
            del self._pending[k]
            self._done.add(k)
        self.dropped += len(stale)
        return len(stale)


def enqueue_feedback(queue: FeedbackQueue, id: str, issued_at: float, payload: Any) -> PendingFeedback:
    return queue.enqueue(id, issued_at, payload)


def resolve_feedback(queue: FeedbackQueue, id: str, event: Any, now: float) -> float | None:
    return queue.resolve(id, event, now)


# -- state files ------------------------------------------------------------

def _enc(v: float) -> str:
    return format(float(v), ".17g")


def _dec(s) -> float:
    return float(s)


@dataclass
class SavedState:
    posterior: PosteriorState
    history: HistoryBuffer
    lexicon_hash: str
    mode: str = "custom"
    extra: dict = field(default_factory=dict)


def state_to_dict(posterior: PosteriorState, history: HistoryBuffer | None = None, lexicon_hash: str = "") -> dict:
    hist = []
    for r in history or ():
        hist.append(
            {
                "step": r.step,
                "context": [_enc(v) for v in r.context],
                "action": r.action,
                "reward": None if r.reward is None else _enc(r.reward),
                "propensity": _enc(r.propensity),
                "timestamp": _enc(r.timestamp),
            }
        )
    return {
        "version": STATE_VERSION,
        "mode": posterior.actions.mode,
        "d": posterior.dim,
        "actions": list(posterior.actions.actions),
        "alpha": [[_enc(v) for v in row] for row in posterior.alpha],
        "beta": [[_enc(v) for v in row] for row in posterior.beta],
        "priors": [_enc(posterior.alpha0), _enc(posterior.beta0)],
        "history": hist,
        "lexicon_hash": lexicon_hash,
    }


def save_state(
    path: str | Path,
    posterior: PosteriorState,
    history: HistoryBuffer | None = None,
    lexicon_hash: str = "",
) -> None:
    data = state_to_dict(posterior, history, lexicon_hash)
    Path(path).write_text(json.dumps(data, indent=1) + "\n", encoding="utf-8")


def state_from_dict(data: dict, expect_d: int | None = None, expect_actions: ActionSpace | None = None) -> SavedState:
    try:
        version = data["version"]
        if version != STATE_VERSION:
            raise LoadError(f"unsupported state schema version {version!r} (expected {STATE_VERSION})")
        d = int(data["d"])
        mode = data.get("mode", "custom")
        space = ActionSpace(tuple(data["actions"]), mode if mode in DEFAULT_ACTION_SPACES or mode == "custom" else "custom")
        alpha = np.array([[_dec(v) for v in row] for row in data["alpha"]], dtype=float)
        beta = np.array([[_dec(v) for v in row] for row in data["beta"]], dtype=float)
        a0, b0 = (_dec(v) for v in data["priors"])
        hist = HistoryBuffer(
            InteractionRecord(
                step=int(h["step"]),
                context=np.array([_dec(v) for v in h["context"]], dtype=float),
                action=str(h["action"]),
                reward=None if h["reward"] is None else _dec(h["reward"]),
                propensity=_dec(h["propensity"]),
                timestamp=_dec(h["timestamp"]),
            )
            for h in data.get("history", [])
        )
        lex = str(data.get("lexicon_hash", ""))
    except LoadError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise LoadError(f"malformed state: {exc}") from exc
    if alpha.shape != (len(space), d) or beta.shape != (len(space), d):
        raise LoadError(f"parameter shape {alpha.shape} does not match {len(space)} actions x d={d}")
    if expect_d is not None and d != expect_d:
        raise LoadError(f"state has d={d} but the configuration expects d={expect_d}")
    if expect_actions is not None and space.actions != expect_actions.actions:
        raise LoadError(f"state actions {space.actions} differ from configured {expect_actions.actions}")
    if not (a0 > 0 and b0 > 0) or np.any(alpha <= 0) or np.any(beta <= 0):
        raise LoadError("state parameters must be positive")
    return SavedState(PosteriorState(space, alpha, beta, a0, b0), hist, lex, mode)


def load_state(
    path: str | Path,
    expect_d: int | None = None,
    expect_actions: ActionSpace | None = None,
) -> SavedState:
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise LoadError(f"{p}: no such state file") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise LoadError(f"{p}: {exc}") from exc
    try:
        return state_from_dict(data, expect_d, expect_actions)
    except LoadError as exc:
        raise LoadError(f"{p}: {exc}") from None


class InteractionLog:
    """Append-only JSONL log, one object per interaction."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._fh = self.path.open("w", encoding="utf-8")

    def write(self, entry: dict) -> None:
        self._fh.write(json.dumps(entry, default=_json_default, sort_keys=False) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "InteractionLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
