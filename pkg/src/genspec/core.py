"""Rankings, policies, and the ranking-metric machinery shared by every module.

Documents are identified by their candidate index within a query (``0..K-1``).
A ranking is an integer array listing candidate indices from the top position
down. Every concrete policy in this package ranks documents by sorting a
per-document score and picking uniformly among the orderings that agree with
the strict score order, so expectations over a policy are computed per tie
group rather than by enumerating rankings.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

RankWeightFn = Callable[[np.ndarray], np.ndarray]


class RankingError(ValueError):
    """A ranking is not a permutation of the query's candidates."""


def dcg_weight(rank):
    """DCG rank weight ``1 / log2(1 + rank)``; accepts a scalar or an array of ranks."""
    r = np.asarray(rank)
    if np.any(r < 1):
        raise ValueError(f"ranks must be >= 1, got {rank!r}")
    w = 1.0 / np.log2(1.0 + r.astype(np.float64))
    if np.ndim(w) == 0:
        return float(w)
    return w


def inverse_rank(rank):
    """Examination probability ``1 / rank`` of the position-based click model."""
    r = np.asarray(rank)
    if np.any(r < 1):
        raise ValueError(f"ranks must be >= 1, got {rank!r}")
    w = 1.0 / r.astype(np.float64)
    if np.ndim(w) == 0:
        return float(w)
    return w


@dataclass(frozen=True, eq=False)
class Query:
    """One query with its candidate documents.

    ``features`` has shape ``(K, F)`` and ``labels`` holds the graded relevance
    labels (0..4). Both may be absent for purely synthetic test queries, in
    which case ``n_docs`` must be given.
    """

    qid: str
    features: np.ndarray | None = None
    labels: np.ndarray | None = None
    n_docs: int = field(default=-1)

    def __post_init__(self):
        k = self.n_docs
        if self.features is not None:
            object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
            k = self.features.shape[0]
        if self.labels is not None:
            object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
            if k >= 0 and self.labels.shape[0] != k:
                raise ValueError(f"query {self.qid}: {self.labels.shape[0]} labels for {k} documents")
            k = self.labels.shape[0]
        if k < 1:
            raise ValueError(f"query {self.qid} has no candidate documents")
        object.__setattr__(self, "n_docs", int(k))

    def __eq__(self, other):
        if not isinstance(other, Query):
            return NotImplemented
        return (
            self.qid == other.qid
            and self.n_docs == other.n_docs
            and _array_eq(self.features, other.features)
            and _array_eq(self.labels, other.labels)
        )

    def __hash__(self):
        return hash((self.qid, self.n_docs))


def _array_eq(a, b):
    if a is None or b is None:
        return a is None and b is None
    return a.shape == b.shape and bool(np.array_equal(a, b))


def check_ranking(y: Sequence[int], n_docs: int) -> np.ndarray:
    """Return ``y`` as an int array, raising RankingError unless it is a permutation."""
    y = np.asarray(y, dtype=np.int64)
    if y.ndim != 1 or y.shape[0] != n_docs or not np.array_equal(np.sort(y), np.arange(n_docs)):
        raise RankingError(f"not a permutation of {n_docs} candidates: {y.tolist()}")
    return y


def ranks_of(y: np.ndarray) -> np.ndarray:
    """Inverse permutation: ``ranks_of(y)[d]`` is the 1-based rank of document ``d``."""
    ranks = np.empty(len(y), dtype=np.int64)
    ranks[y] = np.arange(1, len(y) + 1)
    return ranks


class RelevanceTable:
    """Mapping ``(qid, doc) -> r(q, d)`` stored as one array per query."""

    def __init__(self, rows: Mapping[str, np.ndarray], check_unit: bool = True):
        self._rows = {q: np.asarray(v, dtype=np.float64) for q, v in rows.items()}
        if check_unit:
            for q, v in self._rows.items():
                if np.any(v < 0.0) or np.any(v > 1.0):
                    raise ValueError(f"relevance for query {q} outside [0, 1]")

    def row(self, qid: str) -> np.ndarray:
        try:
            return self._rows[qid]
        except KeyError:
            raise KeyError(f"no relevance values for query {qid!r}") from None

    def value(self, qid: str, doc: int) -> float:
        row = self.row(qid)
        if not 0 <= doc < len(row):
            raise KeyError(f"no relevance value for document {doc} of query {qid!r}")
        return float(row[doc])

    def __contains__(self, qid):
        return qid in self._rows

    def qids(self):
        return list(self._rows)


def label_table(queries: Iterable[Query]) -> RelevanceTable:
    """Relevance table holding the raw graded labels, used for (N)DCG evaluation."""
    return RelevanceTable({q.qid: q.labels.astype(np.float64) for q in queries}, check_unit=False)


def tie_groups(scores: np.ndarray) -> list[np.ndarray]:
    """Split candidates into groups of exactly equal score, best group first."""
    scores = np.asarray(scores)
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    cuts = np.flatnonzero(s[1:] != s[:-1]) + 1
    return np.split(order, cuts)


def expected_rank_weights(scores: np.ndarray, weight_fn: RankWeightFn = dcg_weight) -> np.ndarray:
    """Expected ``weight_fn(rank(d))`` per document under uniform-over-valid-rankings.

    A tie group occupying ranks ``a..b`` gives each member the mean weight over
    ``a..b``; no ranking is enumerated.
    """
    scores = np.asarray(scores)
    k = scores.shape[0]
    w = np.asarray(weight_fn(np.arange(1, k + 1)), dtype=np.float64)
    out = np.empty(k, dtype=np.float64)
    start = 0
    for group in tie_groups(scores):
        end = start + len(group)
        out[group] = w[start:end].mean()
        start = end
    return out


class Policy(ABC):
    """A distribution over rankings for each query."""

    @abstractmethod
    def probability(self, y: Sequence[int], q: Query) -> float:
        ...

    @abstractmethod
    def sample(self, q: Query, rng: np.random.Generator) -> np.ndarray:
        ...

    @abstractmethod
    def valid_set_size(self, q: Query) -> int:
        ...

    @abstractmethod
    def expected_weights(self, q: Query, weight_fn: RankWeightFn = dcg_weight) -> np.ndarray:
        """Expected ``weight_fn(rank(d | y))`` for every candidate, with ``y ~ pi(.|q)``."""


class ScoreSortPolicy(Policy):
    """Policy ranking by a per-document score, uniform over tie orderings."""

    @abstractmethod
    def scores(self, q: Query) -> np.ndarray:
        ...

    def valid_set_size(self, q: Query) -> int:
        return math.prod(math.factorial(len(g)) for g in tie_groups(self.scores(q)))

    def probability(self, y, q: Query) -> float:
        y = check_ranking(y, q.n_docs)
        s = self.scores(q)[y]
        if np.any(s[1:] > s[:-1]):
            return 0.0
        return 1.0 / self.valid_set_size(q)

    def sample(self, q: Query, rng: np.random.Generator) -> np.ndarray:
        return self.sample_many(q, 1, rng)[0]

    def sample_many(self, q: Query, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` independent rankings, shape ``(n, K)``; ties broken by uniform keys."""
        s = self.scores(q)
        keys = rng.random((n, q.n_docs))
        primary = np.broadcast_to(-s, (n, q.n_docs))
        return np.lexsort((keys, primary), axis=-1)

    def expected_weights(self, q: Query, weight_fn: RankWeightFn = dcg_weight) -> np.ndarray:
        return expected_rank_weights(self.scores(q), weight_fn)


class FixedScorePolicy(ScoreSortPolicy):
    """Score-sort policy over explicitly given per-query scores (unknown queries all-tied)."""

    def __init__(self, scores: Mapping[str, Sequence[float]]):
        self._scores = {q: np.asarray(s, dtype=np.float64) for q, s in scores.items()}

    def scores(self, q: Query) -> np.ndarray:
        s = self._scores.get(q.qid)
        if s is None:
            return np.zeros(q.n_docs)
        if len(s) != q.n_docs:
            raise ValueError(f"query {q.qid}: {len(s)} scores for {q.n_docs} documents")
        return s


class UniformPolicy(ScoreSortPolicy):
    """Every permutation equally likely."""

    def scores(self, q: Query) -> np.ndarray:
        return np.zeros(q.n_docs)


def ranking_quality(y, q: Query, r: RelevanceTable, weight_fn: RankWeightFn = dcg_weight) -> float:
    """Rank-weighted relevance sum of a single ranking."""
    row = r.row(q.qid)
    y = np.asarray(y, dtype=np.int64)
    if np.any(y < 0) or np.any(y >= len(row)):
        raise KeyError(f"ranking for query {q.qid!r} contains documents without relevance")
    w = np.asarray(weight_fn(np.arange(1, len(y) + 1)), dtype=np.float64)
    return float(np.dot(w, row[y]))


def expected_quality(policy: Policy, q: Query, r: RelevanceTable, weight_fn: RankWeightFn = dcg_weight) -> float:
    row = r.row(q.qid)
    if len(row) != q.n_docs:
        raise KeyError(f"relevance row for query {q.qid!r} does not match its candidates")
    return float(np.dot(policy.expected_weights(q, weight_fn), row))


def true_reward(
    policy: Policy,
    queries: Sequence[tuple[Query, float]],
    r: RelevanceTable,
    weight_fn: RankWeightFn = dcg_weight,
) -> float:
    """Query-weighted expected ranking quality of ``policy``."""
    total_weight = sum(w for _, w in queries)
    if not math.isclose(total_weight, 1.0, rel_tol=1e-9, abs_tol=1e-9):
        raise ValueError(f"query weights sum to {total_weight}, expected 1")
    return float(sum(w * expected_quality(policy, q, r, weight_fn) for q, w in queries))


def ideal_quality(q: Query, r: RelevanceTable, weight_fn: RankWeightFn = dcg_weight) -> float:
    row = r.row(q.qid)
    w = np.asarray(weight_fn(np.arange(1, len(row) + 1)), dtype=np.float64)
    return float(np.dot(w, np.sort(row)[::-1]))


def ndcg(policy: Policy, queries: Sequence[Query], r: RelevanceTable, weight_fn: RankWeightFn = dcg_weight) -> float:
    """Mean expected NDCG over the full ranking; queries with zero ideal DCG are skipped."""
    values = []
    for q in queries:
        ideal = ideal_quality(q, r, weight_fn)
        if ideal > 0.0:
            values.append(expected_quality(policy, q, r, weight_fn) / ideal)
    if not values:
        raise ValueError("no query has a relevant document; NDCG is undefined")
    return float(np.mean(values))
