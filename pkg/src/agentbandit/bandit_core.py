"""Context-weighted Beta-Bernoulli posteriors and the selection policies built on them.

Each action keeps two length-``d`` vectors, ``alpha`` (success mass) and
``beta`` (failure mass). For a context ``x`` the action's belief is
``Beta(alpha @ x, beta @ x)``. Thompson Sampling draws one score per action
from that belief and plays the argmax; the baselines (random, fixed,
epsilon-greedy, UCB) reuse the same posterior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import DegenerateContext, InvalidArgument, NotFound

ActionRef = Union[str, int]

MODES = ("strategy", "tool", "domain", "custom")
POLICY_KINDS = ("thompson", "epsilon_greedy", "ucb", "random", "fixed")


@dataclass(frozen=True)
class ActionSpace:
    actions: tuple[str, ...]
    mode: str = "custom"

    def __post_init__(self) -> None:
        object.__setattr__(self, "actions", tuple(str(a) for a in self.actions))
        if not self.actions:
            raise InvalidArgument("action space must be non-empty")
        if len(set(self.actions)) != len(self.actions):
            raise InvalidArgument(f"duplicate action ids in {self.actions}")
        if self.mode not in MODES:
            raise InvalidArgument(f"unknown mode {self.mode!r}; expected one of {MODES}")

    def __len__(self) -> int:
        return len(self.actions)

    def index(self, action: ActionRef) -> int:
        if isinstance(action, (int, np.integer)) and not isinstance(action, bool):
            if 0 <= int(action) < len(self.actions):
                return int(action)
            raise NotFound(f"action index {action} out of range")
        try:
            return self.actions.index(action)
        except ValueError:
            raise NotFound(f"unknown action {action!r}") from None


STRATEGY_ACTIONS = ActionSpace(("direct", "chain_of_thought"), "strategy")
TOOL_ACTIONS = ActionSpace(("none", "pubmed", "drugdb", "calculator", "web"), "tool")
DOMAIN_ACTIONS = ActionSpace(("general", "pharma", "molbio", "clinical", "research"), "domain")
DEFAULT_ACTION_SPACES = {s.mode: s for s in (STRATEGY_ACTIONS, TOOL_ACTIONS, DOMAIN_ACTIONS)}


@dataclass
class PosteriorState:
    """Per-action success/failure mass. Mutated in place by :func:`update`."""

    actions: ActionSpace
    alpha: np.ndarray
    beta: np.ndarray
    alpha0: float = 1.0
    beta0: float = 1.0

    @property
    def dim(self) -> int:
        return int(self.alpha.shape[1])

    @property
    def num_actions(self) -> int:
        return int(self.alpha.shape[0])

    def copy(self) -> "PosteriorState":
        return PosteriorState(self.actions, self.alpha.copy(), self.beta.copy(), self.alpha0, self.beta0)

    def equals(self, other: "PosteriorState") -> bool:
        """Exact (bitwise) equality of parameters, priors and action ids."""
        return (
            self.actions == other.actions
            and self.alpha0 == other.alpha0
            and self.beta0 == other.beta0
            and np.array_equal(self.alpha, other.alpha)
            and np.array_equal(self.beta, other.beta)
        )


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = "thompson"
    epsilon: float = 0.1
    ucb_c: float = 1.0
    fixed_action: str | None = None
    clamp_floor: float = 0.1
    # auxiliary Thompson draws used only to estimate the propensity
    propensity_samples: int = 1000

    def validate(self, actions: ActionSpace | None = None) -> None:
        if self.kind not in POLICY_KINDS:
            raise InvalidArgument(f"unknown policy kind {self.kind!r}")
        if not self.clamp_floor > 0:
            raise InvalidArgument("clamp_floor must be > 0")
        if self.kind == "epsilon_greedy" and not 0.0 <= self.epsilon <= 1.0:
            raise InvalidArgument("epsilon must lie in [0, 1]")
        if self.kind == "ucb" and not self.ucb_c > 0:
            raise InvalidArgument("ucb_c must be > 0")
        if self.kind == "fixed":
            if self.fixed_action is None:
                raise InvalidArgument("fixed policy requires fixed_action")
            if actions is not None and self.fixed_action not in actions.actions:
                raise InvalidArgument(f"fixed_action {self.fixed_action!r} not in action space")
        if self.kind == "thompson" and self.propensity_samples < 1:
            raise InvalidArgument("propensity_samples must be >= 1")

    @property
    def label(self) -> str:
        if self.kind == "epsilon_greedy":
            return f"epsilon_greedy({self.epsilon:g})"
        if self.kind == "ucb":
            return f"ucb({self.ucb_c:g})"
        if self.kind == "fixed":
            return f"fixed({self.fixed_action})"
        return self.kind


@dataclass
class SelectionResult:
    action: str
    index: int
    sampled_scores: np.ndarray
    expected_rewards: np.ndarray
    propensity: float
    rng_draws_consumed: int
    source: str = "policy"
    extra: dict = field(default_factory=dict)


def init_posterior(
    actions: int | Sequence[str] | ActionSpace,
    d: int,
    alpha0: float = 1.0,
    beta0: float = 1.0,
) -> PosteriorState:
    """Fresh posterior with every component set to the priors.

    ``actions`` may be an :class:`ActionSpace`, a sequence of ids, or a count
    (ids then default to ``"0"``, ``"1"``, ...).
    """
    if isinstance(actions, ActionSpace):
        space = actions
    elif isinstance(actions, (int, np.integer)):
        if actions < 2:
            raise InvalidArgument(f"need at least 2 actions, got {actions}")
        space = ActionSpace(tuple(str(i) for i in range(int(actions))))
    else:
        space = ActionSpace(tuple(actions))
    if len(space) < 2:
        raise InvalidArgument(f"need at least 2 actions, got {len(space)}")
    if int(d) < 1:
        raise InvalidArgument(f"context dimension must be >= 1, got {d}")
    if not (alpha0 > 0 and beta0 > 0):
        raise InvalidArgument(f"priors must be positive, got ({alpha0}, {beta0})")
    shape = (len(space), int(d))
    return PosteriorState(
        space,
        np.full(shape, float(alpha0)),
        np.full(shape, float(beta0)),
        float(alpha0),
        float(beta0),
    )


def as_context(x, d: int | None = None) -> np.ndarray:
    """Validate and coerce a context vector. Zero vectors are rejected."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise InvalidArgument("context must be a 1-D vector")
    if d is not None and arr.shape[0] != d:
        raise InvalidArgument(f"context has length {arr.shape[0]}, expected {d}")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise InvalidArgument(f"context components must lie in [0, 1]: {arr.tolist()}")
    if not np.any(arr > 0.0):
        raise DegenerateContext("context vector is all zeros")
    return arr


def weighted_params(posterior: PosteriorState, action: ActionRef, x) -> tuple[float, float]:
    i = posterior.actions.index(action)
    x = np.asarray(x, dtype=float)
    if x.shape != (posterior.dim,):
        raise InvalidArgument(f"context has shape {x.shape}, expected ({posterior.dim},)")
    return float(posterior.alpha[i] @ x), float(posterior.beta[i] @ x)


def _beta_from_gammas(g_a: np.ndarray, g_b: np.ndarray) -> np.ndarray:
    total = g_a + g_b
    # Both gammas can underflow to 0 for tiny shapes; fall back to the midpoint.
    with np.errstate(invalid="ignore"):
        theta = np.where(total > 0, g_a / np.where(total > 0, total, 1.0), 0.5)
    return theta


def sample_score(alpha_tilde: float, beta_tilde: float, clamp_floor: float, rng: np.random.Generator) -> float:
    """One draw from ``Beta(max(a, floor), max(b, floor))`` via two Gamma variates."""
    if not clamp_floor > 0:
        raise InvalidArgument("clamp_floor must be > 0")
    g = rng.standard_gamma([max(alpha_tilde, clamp_floor), max(beta_tilde, clamp_floor)])
    return float(_beta_from_gammas(g[0:1], g[1:2])[0])


def _weighted_all(posterior: PosteriorState, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return posterior.alpha @ x, posterior.beta @ x


def _argmax_lowest(values: np.ndarray) -> int:
    # np.argmax already returns the first maximal index
    return int(np.argmax(values))


def _thompson_propensity(a_t: np.ndarray, b_t: np.ndarray, chosen: int, k: int, rng: np.random.Generator) -> float:
    shapes = np.broadcast_to(np.stack([a_t, b_t]), (k, 2, a_t.shape[0]))
    g = rng.standard_gamma(shapes)
    theta = _beta_from_gammas(g[:, 0, :], g[:, 1, :])
    wins = np.count_nonzero(np.argmax(theta, axis=1) == chosen)
    # The chosen arm won the real draw, so count it as one more auxiliary win.
    return (wins + 1) / (k + 1)


def _aux_rng(rng: np.random.Generator) -> np.random.Generator:
    # Spawning derives an independent child stream without advancing ``rng``.
    return rng.spawn(1)[0]


def select(
    posterior: PosteriorState,
    x,
    config: PolicyConfig,
    rng: np.random.Generator,
    aux_rng: np.random.Generator | None = None,
) -> SelectionResult:
    """Choose an action for context ``x`` under ``config``.

    Ties in any argmax go to the lowest arm index. For Thompson Sampling the
    propensity is estimated from ``config.propensity_samples`` auxiliary
    posterior draws taken from ``aux_rng`` (or a child stream spawned from
    ``rng``), so the main stream only ever pays two Gamma draws per arm.
    """
    config.validate(posterior.actions)
    x = as_context(x, posterior.dim)
    a_t, b_t = _weighted_all(posterior, x)
    means = a_t / (a_t + b_t)
    n = posterior.num_actions
    kind = config.kind

    if kind == "thompson":
        floor = config.clamp_floor
        a_c, b_c = np.maximum(a_t, floor), np.maximum(b_t, floor)
        shapes = np.empty(2 * n)
        shapes[0::2], shapes[1::2] = a_c, b_c
        g = rng.standard_gamma(shapes)
        scores = _beta_from_gammas(g[0::2], g[1::2])
        idx = _argmax_lowest(scores)
        prop = _thompson_propensity(a_c, b_c, idx, config.propensity_samples, aux_rng or _aux_rng(rng))
        draws = 2 * n
    elif kind == "random":
        idx = int(rng.integers(n))
        scores, prop, draws = np.full(n, 1.0 / n), 1.0 / n, 1
    elif kind == "fixed":
        idx = posterior.actions.index(config.fixed_action)
        scores, prop, draws = np.eye(n)[idx], 1.0, 0
    elif kind == "epsilon_greedy":
        greedy = _argmax_lowest(means)
        explore = rng.random() < config.epsilon
        draws = 1
        if explore:
            idx = int(rng.integers(n))
            draws += 1
        else:
            idx = greedy
        scores = means
        prop = config.epsilon / n + (1.0 - config.epsilon if idx == greedy else 0.0)
    else:  # ucb
        var = (a_t * b_t) / ((a_t + b_t) ** 2 * (a_t + b_t + 1.0))
        scores = means + config.ucb_c * np.sqrt(var)
        idx = _argmax_lowest(scores)
        prop, draws = 1.0, 0

    return SelectionResult(
        action=posterior.actions.actions[idx],
        index=idx,
        sampled_scores=np.asarray(scores, dtype=float),
        expected_rewards=means,
        propensity=float(prop),
        rng_draws_consumed=draws,
    )


def update(posterior: PosteriorState, action: ActionRef, x, reward: float) -> PosteriorState:
    """Add ``reward * x`` to the action's success mass and ``(1 - reward) * x`` to its failure mass.

    Binary rewards reproduce the classic conjugate update exactly. Mutates and
    returns ``posterior``.
    """
    r = float(reward)
    if not 0.0 <= r <= 1.0 or math.isnan(r):
        raise InvalidArgument(f"reward must lie in [0, 1], got {reward}")
    i = posterior.actions.index(action)
    x = as_context(x, posterior.dim)
    if r == 1.0:
        posterior.alpha[i] += x
    elif r == 0.0:
        posterior.beta[i] += x
    else:
        posterior.alpha[i] += r * x
        posterior.beta[i] += (1.0 - r) * x
    return posterior


def _checked_mass(posterior: PosteriorState, action: ActionRef, x) -> tuple[float, float]:
    a, b = weighted_params(posterior, action, x)
    if not a + b > 0:
        raise DegenerateContext("context-weighted mass is zero")
    return a, b


def expected_reward(posterior: PosteriorState, action: ActionRef, x) -> float:
    a, b = _checked_mass(posterior, action, x)
    return a / (a + b)


def reward_variance(posterior: PosteriorState, action: ActionRef, x) -> float:
    a, b = _checked_mass(posterior, action, x)
    s = a + b
    return (a * b) / (s * s * (s + 1.0))


def uncertainty_gate(posterior: PosteriorState, action: ActionRef, x, tau: float) -> bool:
    """True when the belief is uncertain enough that explicit feedback should be requested."""
    return reward_variance(posterior, action, x) > tau


def feature_importance(posterior: PosteriorState, action: ActionRef) -> np.ndarray:
    i = posterior.actions.index(action)
    a, b = posterior.alpha[i], posterior.beta[i]
    return (a - b) / (a + b)


class Policy:
    """Stateful wrapper: a posterior, a config, and the seeded streams that drive selection."""

    def __init__(
        self,
        posterior: PosteriorState,
        config: PolicyConfig,
        seed: int | np.random.SeedSequence = 0,
    ) -> None:
        config.validate(posterior.actions)
        self.posterior = posterior
        self.config = config
        seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        main, aux = seq.spawn(2)
        self.rng = np.random.default_rng(main)
        self.aux_rng = np.random.default_rng(aux)
        self.updates = 0

    def select(self, x) -> SelectionResult:
        return select(self.posterior, x, self.config, self.rng, self.aux_rng)

    def update(self, action: ActionRef, x, reward: float) -> None:
        update(self.posterior, action, x, reward)
        self.updates += 1
