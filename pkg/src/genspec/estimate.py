"""IPS reward estimation and high-confidence bounds on policy differences.

Per-document terms are evaluated through each policy's expected rank weight
per candidate (see :func:`genspec.core.expected_rank_weights`), so no
estimator enumerates rankings. Sums over interactions and documents use
``numpy.sum`` on contiguous float64 arrays (pairwise summation), which is
deterministic for a given log.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .core import Policy, Query, RankingError, RankWeightFn, dcg_weight, ranks_of

if TYPE_CHECKING:
    from .simulate import LoggedInteraction, LogSlice


def ips_delta(y, record: "LoggedInteraction", weight_fn: RankWeightFn = dcg_weight) -> float:
    """IPS estimate of the quality of ranking ``y`` from one interaction."""
    y = np.asarray(y, dtype=np.int64)
    clicked = np.flatnonzero(record.clicks)
    if len(clicked) == 0:
        return 0.0
    k = len(record.clicks)
    if len(y) != k or not np.array_equal(np.sort(y), np.arange(k)):
        raise RankingError(f"evaluated ranking does not cover the candidates of {record.qid}")
    ranks = ranks_of(y)
    w = np.asarray(weight_fn(ranks[clicked]), dtype=np.float64)
    return float(np.sum(w / record.propensities[clicked]))


def expected_weight_matrix(
    policy: Policy, queries: Sequence[Query], indices, width: int, weight_fn: RankWeightFn = dcg_weight
) -> np.ndarray:
    """Rows of expected rank weights for ``queries[j]``, ``j`` in ``indices``; zero padded to ``width``."""
    out = np.zeros((len(queries), width))
    for j in indices:
        q = queries[j]
        out[j, : q.n_docs] = policy.expected_weights(q, weight_fn)
    return out


def ips_reward(policy: Policy, log: "LogSlice", weight_fn: RankWeightFn = dcg_weight) -> float:
    """Mean IPS-estimated ranking quality of ``policy`` over the interactions in ``log``."""
    if len(log) == 0:
        raise ValueError("cannot estimate reward from an empty log")
    mass, _ = log.click_mass()
    present = np.flatnonzero(mass.sum(axis=1) > 0)
    if len(present) == 0:
        return 0.0
    e = expected_weight_matrix(policy, log.queries, present, log.max_docs, weight_fn)
    return float(np.sum(mass[present] * e[present]) / len(log))


def per_document_relative(
    pi1: Policy, pi2: Policy, record: "LoggedInteraction", q: Query, weight_fn: RankWeightFn = dcg_weight
) -> np.ndarray:
    """``R_{i,d}`` for every candidate of one interaction (candidate order)."""
    if q.qid != record.qid:
        raise ValueError(f"record is for query {record.qid!r}, not {q.qid!r}")
    diff = pi1.expected_weights(q, weight_fn) - pi2.expected_weights(q, weight_fn)
    ratio = np.where(record.clicks, 1.0 / record.propensities, 0.0)
    return ratio * diff


@dataclass(frozen=True)
class BoundConfig:
    """Confidence ``epsilon``, term range ``b`` and documents per interaction ``k``."""

    epsilon: float
    b: float
    k: int

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in [0, 1), got {self.epsilon}")
        if self.b <= 0:
            raise ValueError("b must be positive")
        if self.k < 1:
            raise ValueError("k must be positive")

    @property
    def log_term(self) -> float:
        return math.log(2.0 / (1.0 - self.epsilon))

    @classmethod
    def for_slice(cls, log: "LogSlice", epsilon: float, weight_fn: RankWeightFn = dcg_weight) -> "BoundConfig":
        """``b = max weight over ranks 1..K / min stored propensity``, with K the slice's largest candidate count."""
        k = log.slice_docs()
        if k == 0:
            raise ValueError("cannot configure a bound on an empty log")
        w = np.asarray(weight_fn(np.arange(1, k + 1)), dtype=np.float64)
        return cls(epsilon, float(np.max(np.abs(w)) / log.min_propensity()), k)


@dataclass(frozen=True)
class RelativeEstimate:
    delta: float
    nu: float
    cb: float

    @property
    def lcb(self) -> float:
        return self.delta - self.cb

    @property
    def ucb(self) -> float:
        return self.delta + self.cb


def _policy_terms(policies, log: "LogSlice", k: int, weight_fn) -> list[np.ndarray]:
    present = log.logged_query_indices()
    wc = log.weighted_clicks()[:, :k]
    out = []
    for coeffs in policies:
        e = sum(
            c * expected_weight_matrix(p, log.queries, present, log.max_docs, weight_fn) for c, p in coeffs
        )
        out.append(wc * e[log.query_idx][:, :k])
    return out


def bound_from_terms(terms: np.ndarray, cfg: BoundConfig) -> RelativeEstimate:
    """Confidence bound on the mean of ``terms`` (shape ``(N, K)``, each scaled by K internally)."""
    n, k = terms.shape[0], cfg.k
    nk = n * k
    if nk <= 1:
        raise ValueError(f"bound needs |D|*K > 1, got {nk}")
    if terms.shape[1] < k:
        terms = np.pad(terms, ((0, 0), (0, k - terms.shape[1])))
    scaled = k * terms
    mean = float(np.sum(scaled) / nk)
    sq = float(np.sum((scaled - mean) ** 2))
    log_term = cfg.log_term
    nu = 2.0 * nk * log_term / (nk - 1) * sq
    cb = 7.0 * k * cfg.b * log_term / (3.0 * (nk - 1)) + math.sqrt(nu) / nk
    return RelativeEstimate(mean, nu, cb)


def relative_bound(
    pi1: Policy,
    pi2: Policy,
    log: "LogSlice",
    cfg: BoundConfig | None = None,
    weight_fn: RankWeightFn = dcg_weight,
    epsilon: float | None = None,
) -> RelativeEstimate:
    """Estimated reward difference ``pi1 - pi2`` with its high-confidence interval."""
    if cfg is None:
        if epsilon is None:
            raise ValueError("pass either cfg or epsilon")
        cfg = BoundConfig.for_slice(log, epsilon, weight_fn)
    (terms,) = _policy_terms([[(1.0, pi1), (-1.0, pi2)]], log, cfg.k, weight_fn)
    return bound_from_terms(terms, cfg)


def sea_bound(
    policy: Policy,
    log: "LogSlice",
    cfg: BoundConfig | None = None,
    weight_fn: RankWeightFn = dcg_weight,
    epsilon: float | None = None,
) -> tuple[float, float]:
    """Single-policy estimate and its confidence width ``(reward, cb)``."""
    if cfg is None:
        if epsilon is None:
            raise ValueError("pass either cfg or epsilon")
        cfg = BoundConfig.for_slice(log, epsilon, weight_fn)
    (terms,) = _policy_terms([[(1.0, policy)]], log, cfg.k, weight_fn)
    est = bound_from_terms(terms, cfg)
    return est.delta, est.cb


def sea_decision(
    pi1: Policy,
    pi2: Policy,
    log: "LogSlice",
    cfg: BoundConfig | None = None,
    weight_fn: RankWeightFn = dcg_weight,
    epsilon: float | None = None,
) -> bool:
    """True iff the lower bound of ``pi1`` exceeds the upper bound of ``pi2``."""
    if cfg is None:
        if epsilon is None:
            raise ValueError("pass either cfg or epsilon")
        cfg = BoundConfig.for_slice(log, epsilon, weight_fn)
    r1, cb1 = sea_bound(pi1, log, cfg, weight_fn)
    r2, cb2 = sea_bound(pi2, log, cfg, weight_fn)
    return r1 - cb1 > r2 + cb2
