"""The GENSPEC meta-policy: choose per query between logging, feature-based and tabular models.

Initialisation splits the log into a training part and a selection part,
fits primed copies of both learned models on the training part, and decides
deployment using only selection-part statistics of the primed copies. The
full-data models are fitted afterwards and never enter a bound.

Deployment decision text format::

    activated <0|1>
    override <qid>        (one line per overridden query, sorted)
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, TextIO

import numpy as np

from .core import Policy, Query, RankWeightFn, dcg_weight
from .estimate import BoundConfig, RelativeEstimate, relative_bound, sea_decision
from .models import NoClicksError
from .simulate import LogSlice, split_log

BOUND_MODES = ("relative", "sea", "none")

Trainer = Callable[[LogSlice], Policy]


@dataclass(frozen=True)
class DeploymentDecision:
    activated: bool = False
    overrides: frozenset = field(default_factory=frozenset)

    def to_text(self, stream: TextIO) -> None:
        stream.write(f"activated {int(self.activated)}\n")
        for qid in sorted(self.overrides):
            stream.write(f"override {qid}\n")

    @classmethod
    def from_text(cls, stream: TextIO) -> "DeploymentDecision":
        activated, overrides = None, set()
        for line in stream:
            if not line.strip():
                continue
            key, _, value = line.strip().partition(" ")
            if key == "activated":
                activated = value == "1"
            elif key == "override":
                overrides.add(value)
            else:
                raise ValueError(f"unexpected line {line.strip()!r}")
        if activated is None:
            raise ValueError("missing activated line")
        return cls(activated, frozenset(overrides))


def model_to_serve(decision: DeploymentDecision, qid: str, logging: Policy, feature: Policy | None, tabular: Policy | None) -> Policy:
    if qid in decision.overrides:
        return tabular
    if decision.activated:
        return feature
    return logging


class GenSpecPolicy(Policy):
    """Dispatches every query to the model chosen by a :class:`DeploymentDecision`."""

    def __init__(self, logging: Policy, feature: Policy | None, tabular: Policy | None, decision: DeploymentDecision):
        if decision.activated and feature is None:
            raise ValueError("activated decision needs a feature-based model")
        if decision.overrides and tabular is None:
            raise ValueError("overrides need a tabular model")
        self.logging = logging
        self.feature = feature
        self.tabular = tabular
        self.decision = decision

    def model_to_serve(self, qid: str) -> Policy:
        return model_to_serve(self.decision, qid, self.logging, self.feature, self.tabular)

    def probability(self, y, q: Query) -> float:
        return self.model_to_serve(q.qid).probability(y, q)

    def sample(self, q: Query, rng: np.random.Generator) -> np.ndarray:
        return self.model_to_serve(q.qid).sample(q, rng)

    def valid_set_size(self, q: Query) -> int:
        return self.model_to_serve(q.qid).valid_set_size(q)

    def expected_weights(self, q: Query, weight_fn: RankWeightFn = dcg_weight) -> np.ndarray:
        return self.model_to_serve(q.qid).expected_weights(q, weight_fn)


@dataclass(frozen=True)
class PrimedModels:
    """Models fitted on the training part, plus the held-out selection part."""

    train: LogSlice
    selection: LogSlice
    feature: Optional[Policy]
    tabular: Policy


def prime(
    log: LogSlice,
    beta: float,
    rng: np.random.Generator,
    train_feature: Trainer,
    infer_tabular: Trainer,
) -> PrimedModels:
    train, selection = split_log(log, beta, rng)
    try:
        feature = train_feature(train)
    except NoClicksError:
        feature = None
    return PrimedModels(train, selection, feature, infer_tabular(train))


def _beats(pi1: Policy, pi2: Policy, log: LogSlice, epsilon: float, mode: str, weight_fn) -> bool:
    """Whether the selection slice supports deploying ``pi1`` over ``pi2``."""
    if len(log) * log.slice_docs() <= 1:
        return False
    cfg = BoundConfig.for_slice(log, epsilon, weight_fn)
    if mode == "sea":
        return sea_decision(pi1, pi2, log, cfg, weight_fn)
    est = relative_bound(pi1, pi2, log, cfg, weight_fn)
    if mode == "none":
        return est.delta > 0
    return est.lcb > 0


def decide(
    primed: PrimedModels,
    logging: Policy,
    epsilon: float,
    mode: str = "relative",
    weight_fn: RankWeightFn = dcg_weight,
    queries: Sequence[str] | None = None,
) -> DeploymentDecision:
    """Activation flag and override set from selection-part statistics.

    ``queries`` are the unique queries of the full log; only those with
    selection interactions can be overridden.
    """
    if mode not in BOUND_MODES:
        raise ValueError(f"unknown bound mode {mode!r}")
    if not 0.0 <= epsilon < 1.0:
        raise ValueError("epsilon must lie in [0, 1)")
    sel = primed.selection
    activated = primed.feature is not None and _beats(primed.feature, logging, sel, epsilon, mode, weight_fn)
    baseline = primed.feature if activated else logging
    groups = sel.by_query()
    if queries is None:
        queries = list(groups)
    overrides = set()
    for qid in queries:
        rows = groups.get(qid)
        if rows is None:
            continue
        if _beats(primed.tabular, baseline, sel.take(rows), epsilon, mode, weight_fn):
            overrides.add(qid)
    return DeploymentDecision(activated, frozenset(overrides))


def initialize(
    logging: Policy,
    log: LogSlice,
    epsilon: float,
    beta: float,
    rng: np.random.Generator,
    train_feature: Trainer,
    infer_tabular: Trainer,
    mode: str = "relative",
    weight_fn: RankWeightFn = dcg_weight,
) -> tuple[GenSpecPolicy, DeploymentDecision]:
    """Split, prime, decide, then fit the full-data models."""
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    if not 0.0 <= epsilon < 1.0:
        raise ValueError("epsilon must lie in [0, 1)")
    if len(log) == 0:
        decision = DeploymentDecision()
        return GenSpecPolicy(logging, None, None, decision), decision
    primed = prime(log, beta, rng, train_feature, infer_tabular)
    decision = decide(primed, logging, epsilon, mode, weight_fn, queries=list(log.by_query()))
    try:
        feature = train_feature(log)
    except NoClicksError:
        feature = None
    tabular = infer_tabular(log)
    return GenSpecPolicy(logging, feature, tabular, decision), decision


# Contextual bandits. Policies are (n_contexts, n_actions) probability matrices.


@dataclass(frozen=True)
class ContextualLog:
    rewards: np.ndarray
    actions: np.ndarray
    propensities: np.ndarray
    contexts: np.ndarray

    def __post_init__(self):
        n = len(self.rewards)
        if not (len(self.actions) == len(self.propensities) == len(self.contexts) == n):
            raise ValueError("log columns have different lengths")
        if np.any(np.asarray(self.propensities) <= 0):
            raise ValueError("propensities must be positive")

    def __len__(self):
        return len(self.rewards)

    def take(self, idx) -> "ContextualLog":
        idx = np.asarray(idx, dtype=np.int64)
        return ContextualLog(self.rewards[idx], self.actions[idx], self.propensities[idx], self.contexts[idx])

    def for_context(self, z: int) -> "ContextualLog":
        return self.take(np.flatnonzero(self.contexts == z))


def log_contextual(
    logging: np.ndarray, reward_fn: Callable[[np.ndarray, np.ndarray, np.random.Generator], np.ndarray],
    n: int, rng: np.random.Generator, context_probs: np.ndarray | None = None,
) -> ContextualLog:
    """Draw ``n`` rounds: ``z ~ P(Z)``, ``a ~ logging[z]``, ``r = reward_fn(z, a, rng)``."""
    n_ctx, n_act = logging.shape
    p = np.full(n_ctx, 1.0 / n_ctx) if context_probs is None else context_probs
    z = rng.choice(n_ctx, size=n, p=p)
    cum = np.cumsum(logging[z], axis=1)
    a = np.minimum((rng.random(n)[:, None] > cum).sum(axis=1), n_act - 1)
    return ContextualLog(np.asarray(reward_fn(z, a, rng), dtype=np.float64), a, logging[z, a], z)


def contextual_ips(policy: np.ndarray, log: ContextualLog) -> float:
    if len(log) == 0:
        raise ValueError("empty log")
    return float(np.mean(log.rewards / log.propensities * policy[log.contexts, log.actions]))


def contextual_bound(pi1: np.ndarray, pi2: np.ndarray, log: ContextualLog, epsilon: float, reward_max: float = 1.0) -> RelativeEstimate:
    """High-confidence interval on the reward difference of two contextual policies."""
    n = len(log)
    if n <= 1:
        raise ValueError("bound needs at least two rounds")
    if not 0.0 <= epsilon < 1.0:
        raise ValueError("epsilon must lie in [0, 1)")
    terms = log.rewards / log.propensities * (pi1[log.contexts, log.actions] - pi2[log.contexts, log.actions])
    b = reward_max / float(np.min(log.propensities))
    log_term = math.log(2.0 / (1.0 - epsilon))
    delta = float(np.sum(terms) / n)
    nu = 2.0 * n * log_term / (n - 1) * float(np.sum((terms - delta) ** 2))
    cb = 7.0 * b * log_term / (3.0 * (n - 1)) + math.sqrt(nu) / n
    return RelativeEstimate(delta, nu, cb)


def _greedy_rows(values: np.ndarray) -> np.ndarray:
    best = values == values.max(axis=1, keepdims=True)
    return best / best.sum(axis=1, keepdims=True)


def greedy_general(log: ContextualLog, n_contexts: int, n_actions: int) -> np.ndarray:
    """One action for all contexts: highest pooled IPS reward (ties split uniformly)."""
    value = np.zeros(n_actions)
    if len(log):
        np.add.at(value, log.actions, log.rewards / log.propensities)
    return np.repeat(_greedy_rows(value[None, :]), n_contexts, axis=0)


def greedy_per_context(log: ContextualLog, n_contexts: int, n_actions: int) -> np.ndarray:
    """Per-context action with the highest IPS reward; unseen contexts uniform."""
    value = np.zeros((n_contexts, n_actions))
    if len(log):
        np.add.at(value, (log.contexts, log.actions), log.rewards / log.propensities)
    return _greedy_rows(value)


@dataclass(frozen=True)
class ContextualGenSpec:
    logging: np.ndarray
    general: np.ndarray
    specialized: np.ndarray
    decision: DeploymentDecision

    def serve(self, z: int) -> np.ndarray:
        if str(z) in self.decision.overrides:
            return self.specialized[z]
        if self.decision.activated:
            return self.general[z]
        return self.logging[z]

    def matrix(self) -> np.ndarray:
        return np.stack([self.serve(z) for z in range(self.logging.shape[0])])


def contextual_initialize(
    logging: np.ndarray,
    log: ContextualLog,
    epsilon: float,
    beta: float,
    rng: np.random.Generator,
    train_general=greedy_general,
    train_specialized=greedy_per_context,
    reward_max: float = 1.0,
) -> ContextualGenSpec:
    """Same two-level safe deployment for contextual bandits; override ids are ``str(z)``."""
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    n_ctx, n_act = logging.shape
    n = len(log)
    n_sel = int(np.floor(beta * n + 0.5))
    perm = rng.permutation(n)
    train, sel = log.take(np.sort(perm[n_sel:])), log.take(np.sort(perm[:n_sel]))
    general_p = train_general(train, n_ctx, n_act)
    special_p = train_specialized(train, n_ctx, n_act)

    activated = len(sel) > 1 and contextual_bound(general_p, logging, sel, epsilon, reward_max).lcb > 0
    baseline = general_p if activated else logging
    overrides = set()
    for z in np.unique(log.contexts):
        sel_z = sel.for_context(z)
        if len(sel_z) > 1 and contextual_bound(special_p, baseline, sel_z, epsilon, reward_max).lcb > 0:
            overrides.add(str(int(z)))
    decision = DeploymentDecision(bool(activated), frozenset(overrides))
    return ContextualGenSpec(logging, train_general(log, n_ctx, n_act), train_specialized(log, n_ctx, n_act), decision)
