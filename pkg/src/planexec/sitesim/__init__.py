"""Simulated multi-party websites, the attack corpus, and the susceptible
reactive baseline."""

from .attacks import (
    AttackCase,
    AttackCorpus,
    ReactPattern,
    hijack_occurred,
    inject,
    load_corpus,
    outcome_score,
    react_baseline_run,
)
from .sites import FORUM_HEADER, SimConnector
from .state import (
    Comment,
    ForumInfo,
    Post,
    Product,
    Repo,
    Review,
    SimState,
    build_state,
    snapshot_dump,
)

__all__ = [
    "AttackCase",
    "AttackCorpus",
    "Comment",
    "ForumInfo",
    "FORUM_HEADER",
    "Post",
    "Product",
    "ReactPattern",
    "Repo",
    "Review",
    "SimConnector",
    "SimState",
    "build_state",
    "hijack_occurred",
    "inject",
    "load_corpus",
    "outcome_score",
    "react_baseline_run",
    "snapshot_dump",
]
