"""Contextual Thompson-sampling routing for LLM agents, with a simulation harness."""

from .bandit_core import (
    DOMAIN_ACTIONS,
    STRATEGY_ACTIONS,
    TOOL_ACTIONS,
    ActionSpace,
    Policy,
    PolicyConfig,
    PosteriorState,
    SelectionResult,
    expected_reward,
    feature_importance,
    init_posterior,
    reward_variance,
    select,
    uncertainty_gate,
    update,
)
from .errors import (
    AlreadyResolved,
    BanditError,
    DegenerateContext,
    InvalidArgument,
    LoadError,
    NotFound,
    ResponderError,
    UnsupportedMode,
)
from .features import FeatureSpec, Lexicon, Query, extract, load_lexicon
from .simulation import RunOptions, compare_policies, load_environment, run_experiment

__version__ = "0.1.0"

__all__ = [
    "ActionSpace", "AlreadyResolved", "BanditError", "DOMAIN_ACTIONS", "DegenerateContext",
    "FeatureSpec", "InvalidArgument", "Lexicon", "LoadError", "NotFound", "Policy", "PolicyConfig",
    "PosteriorState", "Query", "ResponderError", "RunOptions", "STRATEGY_ACTIONS", "SelectionResult",
    "TOOL_ACTIONS", "UnsupportedMode", "compare_policies", "expected_reward", "extract",
    "feature_importance", "init_posterior", "load_environment", "load_lexicon", "reward_variance",
    "run_experiment", "select", "uncertainty_gate", "update",
]
