"""Logging policy, position-biased click simulation, and interaction logs.

Log text format (one interaction per line, tab separated)::

    qid <TAB> ranking <TAB> clicks <TAB> propensities

``ranking`` lists the displayed document ids top to bottom, ``clicks`` lists
the clicked document ids (possibly empty), and ``propensities`` gives one
float per candidate in document-id order. Document ids are candidate indices.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from .core import Policy, Query, RelevanceTable, ScoreSortPolicy, inverse_rank, ranks_of
from .models import LinearRanker


class ZeroPropensityError(ValueError):
    pass


@dataclass(frozen=True)
class ClickModel:
    """Position-based clicks: examine with ``1/rank``, click with ``offset + alpha*label``."""

    alpha: float
    offset: float = 0.2

    def __post_init__(self):
        if self.alpha < 0 or self.offset < 0:
            raise ValueError("alpha and offset must be non-negative")
        if self.offset + 4 * self.alpha > 1.0 + 1e-12:
            raise ValueError("click probability would exceed 1 for label 4")

    @staticmethod
    def examination(ranks):
        return inverse_rank(ranks)

    def click_probability(self, labels) -> np.ndarray:
        return np.minimum(self.offset + self.alpha * np.asarray(labels, dtype=np.float64), 1.0)

    def relevance(self, queries: Iterable[Query]) -> RelevanceTable:
        return RelevanceTable({q.qid: self.click_probability(q.labels) for q in queries})


@dataclass(frozen=True)
class LoggedInteraction:
    qid: str
    ranking: np.ndarray
    clicks: np.ndarray
    propensities: np.ndarray

    def __post_init__(self):
        if np.any(self.propensities <= 0):
            raise ZeroPropensityError(f"non-positive propensity in interaction for {self.qid}")


@dataclass(frozen=True, eq=False)
class LogSlice:
    """Column-oriented interaction log.

    Row ``i`` holds interaction ``i``: ``query_idx`` indexes ``queries``,
    ``rankings`` is padded with -1, ``clicks`` and ``propensities`` are in
    candidate order and padded with False / inf beyond a query's candidates.
    """

    queries: tuple[Query, ...]
    query_idx: np.ndarray
    rankings: np.ndarray
    clicks: np.ndarray
    propensities: np.ndarray

    @classmethod
    def empty(cls, queries: Sequence[Query]) -> "LogSlice":
        k = max(q.n_docs for q in queries)
        return cls(
            tuple(queries),
            np.zeros(0, dtype=np.int64),
            np.zeros((0, k), dtype=np.int64),
            np.zeros((0, k), dtype=bool),
            np.zeros((0, k)),
        )

    @classmethod
    def from_records(cls, queries: Sequence[Query], records: Sequence[LoggedInteraction]) -> "LogSlice":
        queries = tuple(queries)
        index = {q.qid: j for j, q in enumerate(queries)}
        out = cls.empty(queries)
        n, k = len(records), out.max_docs
        qi = np.zeros(n, dtype=np.int64)
        rankings = np.full((n, k), -1, dtype=np.int64)
        clicks = np.zeros((n, k), dtype=bool)
        props = np.full((n, k), np.inf)
        for i, rec in enumerate(records):
            j = index[rec.qid]
            m = queries[j].n_docs
            qi[i] = j
            rankings[i, :m] = rec.ranking
            clicks[i, :m] = rec.clicks
            props[i, :m] = rec.propensities
        return cls(queries, qi, rankings, clicks, props)

    @property
    def max_docs(self) -> int:
        return self.rankings.shape[1]

    def __len__(self):
        return self.query_idx.shape[0]

    def __getitem__(self, i) -> LoggedInteraction:
        q = self.queries[self.query_idx[i]]
        k = q.n_docs
        return LoggedInteraction(q.qid, self.rankings[i, :k].copy(), self.clicks[i, :k].copy(), self.propensities[i, :k].copy())

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def take(self, indices) -> "LogSlice":
        idx = np.asarray(indices, dtype=np.int64)
        return LogSlice(self.queries, self.query_idx[idx], self.rankings[idx], self.clicks[idx], self.propensities[idx])

    def head(self, n: int) -> "LogSlice":
        return self.take(np.arange(min(n, len(self))))

    def restrict(self, qids: Iterable[str]) -> "LogSlice":
        """Interactions whose query is in ``qids``."""
        wanted = set(qids)
        member = np.array([q.qid in wanted for q in self.queries], dtype=bool)
        return self.take(np.flatnonzero(member[self.query_idx]))

    def by_query(self) -> dict[str, np.ndarray]:
        """Row indices per logged query, in first-seen query order."""
        order = np.argsort(self.query_idx, kind="stable")
        qi = self.query_idx[order]
        cuts = np.flatnonzero(qi[1:] != qi[:-1]) + 1
        groups = np.split(order, cuts) if len(order) else []
        first_seen = sorted(groups, key=lambda g: g[0])
        return {self.queries[self.query_idx[g[0]]].qid: g for g in first_seen}

    def for_query(self, qid: str) -> "LogSlice":
        return self.restrict([qid])

    def logged_query_indices(self) -> np.ndarray:
        return np.unique(self.query_idx)

    def slice_docs(self) -> int:
        """Largest candidate count among the queries present in this slice."""
        idx = self.logged_query_indices()
        if len(idx) == 0:
            return 0
        return max(self.queries[j].n_docs for j in idx)

    def weighted_clicks(self) -> np.ndarray:
        """``c_i(d) / rho_i(d)`` per row, zero on padding."""
        return np.where(self.clicks, 1.0 / self.propensities, 0.0)

    def click_mass(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-query sums of ``c/rho`` (shape ``(Q, K)``) and interaction counts (``(Q,)``)."""
        nq = len(self.queries)
        w = self.weighted_clicks()
        mass = np.stack(
            [np.bincount(self.query_idx, weights=w[:, j], minlength=nq) for j in range(self.max_docs)], axis=1
        ) if len(self) else np.zeros((nq, self.max_docs))
        counts = np.bincount(self.query_idx, minlength=nq)
        return mass, counts

    @property
    def n_clicks(self) -> int:
        return int(self.clicks.sum())

    def min_propensity(self) -> float:
        if len(self) == 0:
            raise ValueError("empty log slice")
        return float(self.propensities.min())


def concat(slices: Sequence[LogSlice]) -> LogSlice:
    first = slices[0]
    for s in slices[1:]:
        if s.queries is not first.queries and s.queries != first.queries:
            raise ValueError("cannot concatenate slices over different query sets")
    return LogSlice(
        first.queries,
        np.concatenate([s.query_idx for s in slices]),
        np.concatenate([s.rankings for s in slices]),
        np.concatenate([s.clicks for s in slices]),
        np.concatenate([s.propensities for s in slices]),
    )


def train_logging_policy(
    queries: Sequence[Query],
    fraction: float,
    seed: int = 0,
    epochs: int = 20,
    learning_rate: float = 0.01,
) -> LinearRanker:
    """Linear ranker fit by pairwise hinge loss on a ``fraction`` of the training queries."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    rng = np.random.Generator(np.random.PCG64(seed))
    n = max(1, int(np.floor(fraction * len(queries) + 0.5)))
    chosen = [queries[i] for i in np.sort(rng.choice(len(queries), size=n, replace=False))]
    usable = [q for q in chosen if len(np.unique(q.labels)) >= 2]
    if not usable:
        raise ValueError("subsample has no query with two distinct labels")

    dim = usable[0].features.shape[1]
    theta = rng.normal(scale=0.01, size=dim)
    pairs = []
    for q in usable:
        hi, lo = np.nonzero(q.labels[:, None] > q.labels[None, :])
        pairs.append(q.features[hi] - q.features[lo])
    for _ in range(epochs):
        for j in rng.permutation(len(usable)):
            diff = pairs[j]
            violated = diff @ theta < 1.0
            if violated.any():
                theta = theta + learning_rate * diff[violated].sum(axis=0) / len(diff)
    return LinearRanker(theta)


def propensities(logging_policy: Policy, q: Query) -> np.ndarray:
    """Policy-aware examination propensity of every candidate of ``q``."""
    rho = logging_policy.expected_weights(q, inverse_rank)
    if np.any(rho <= 0):
        raise ZeroPropensityError(f"zero propensity for a candidate of query {q.qid}")
    return rho


def propensity(logging_policy: Policy, q: Query, d: int) -> float:
    if not 0 <= d < q.n_docs:
        raise IndexError(f"document {d} is not a candidate of query {q.qid}")
    return float(propensities(logging_policy, q)[d])


def _simulate(logging_policy: ScoreSortPolicy, queries, click_model, n, rng):
    queries = tuple(queries)
    if not queries:
        raise ValueError("cannot simulate clicks on an empty partition")
    if n < 0:
        raise ValueError("n_interactions must be non-negative")
    out = LogSlice.empty(queries)
    k = out.max_docs
    qi = rng.integers(0, len(queries), size=n)
    rankings = np.full((n, k), -1, dtype=np.int64)
    clicks = np.zeros((n, k), dtype=bool)
    examined = np.zeros((n, k), dtype=bool)
    props = np.full((n, k), np.inf)
    for j in np.unique(qi):
        q = queries[j]
        rows = np.flatnonzero(qi == j)
        m, kq = len(rows), q.n_docs
        y = logging_policy.sample_many(q, m, rng)
        ranks = np.empty_like(y)
        np.put_along_axis(ranks, y, np.arange(1, kq + 1)[None, :].repeat(m, axis=0), axis=1)
        o = rng.random((m, kq)) < click_model.examination(ranks)
        c = o & (rng.random((m, kq)) < click_model.click_probability(q.labels)[None, :])
        rankings[rows, :kq] = y
        examined[rows, :kq] = o
        clicks[rows, :kq] = c
        props[rows, :kq] = propensities(logging_policy, q)
    return LogSlice(queries, qi.astype(np.int64), rankings, clicks, props), examined


def simulate_clicks(
    logging_policy: ScoreSortPolicy,
    queries: Sequence[Query],
    click_model: ClickModel,
    n_interactions: int,
    rng: np.random.Generator,
) -> LogSlice:
    """Log ``n_interactions`` interactions, queries drawn uniformly from ``queries``."""
    log, _ = _simulate(logging_policy, queries, click_model, n_interactions, rng)
    return log


def simulate_until_clicks(
    logging_policy: ScoreSortPolicy,
    queries: Sequence[Query],
    click_model: ClickModel,
    n_clicks: int,
    rng: np.random.Generator,
    chunk: int = 20000,
) -> LogSlice:
    """Shortest log prefix containing ``n_clicks`` clicks.

    Interactions are generated in fixed-size chunks, so for a given generator
    state the log for a smaller click budget is a prefix of the log for a
    larger one.
    """
    parts, total = [], 0
    while total < n_clicks:
        part = simulate_clicks(logging_policy, queries, click_model, chunk, rng)
        parts.append(part)
        total += part.n_clicks
    if not parts:
        return LogSlice.empty(tuple(queries))
    log = concat(parts)
    return log.head(clicks_prefix_length(log, n_clicks))


def clicks_prefix_length(log: LogSlice, n_clicks: int) -> int:
    """Number of leading interactions needed to accumulate ``n_clicks`` clicks."""
    if n_clicks <= 0:
        return 0
    cum = np.cumsum(log.clicks.sum(axis=1))
    pos = int(np.searchsorted(cum, n_clicks))
    if pos >= len(log):
        raise ValueError(f"log holds only {int(cum[-1]) if len(cum) else 0} clicks, {n_clicks} requested")
    return pos + 1


def split_log(log: LogSlice, beta: float, rng: np.random.Generator) -> tuple[LogSlice, LogSlice]:
    """Random interaction-level split into ``(train, selection)``; ``round(beta*N)`` go to selection."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    n = len(log)
    n_sel = int(np.floor(beta * n + 0.5))
    perm = rng.permutation(n)
    return log.take(np.sort(perm[n_sel:])), log.take(np.sort(perm[:n_sel]))


def write_log(log: LogSlice, stream: TextIO) -> None:
    for rec in log:
        ranking = ",".join(str(int(d)) for d in rec.ranking)
        clicked = ",".join(str(int(d)) for d in np.flatnonzero(rec.clicks))
        props = ",".join(repr(float(p)) for p in rec.propensities)
        stream.write(f"{rec.qid}\t{ranking}\t{clicked}\t{props}\n")


def read_log(stream: TextIO, queries: Sequence[Query]) -> LogSlice:
    index = {q.qid: q for q in queries}
    records = []
    for lineno, line in enumerate(stream, start=1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 4:
            raise ValueError(f"line {lineno}: expected 4 tab-separated fields")
        qid, ranking, clicked, props = cols
        if qid not in index:
            raise ValueError(f"line {lineno}: unknown query {qid!r}")
        k = index[qid].n_docs
        y = np.array([int(t) for t in ranking.split(",")], dtype=np.int64)
        c = np.zeros(k, dtype=bool)
        if clicked:
            c[[int(t) for t in clicked.split(",")]] = True
        rho = np.array([float(t) for t in props.split(",")])
        if len(y) != k or len(rho) != k:
            raise ValueError(f"line {lineno}: field lengths do not match {k} candidates")
        records.append(LoggedInteraction(qid, y, c, rho))
    return LogSlice.from_records(queries, records)


def interaction_ranks(log: LogSlice) -> np.ndarray:
    """Displayed 1-based rank of every candidate per row (0 on padding)."""
    out = np.zeros_like(log.rankings)
    for i in range(len(log)):
        k = log.queries[log.query_idx[i]].n_docs
        out[i, :k] = ranks_of(log.rankings[i, :k])
    return out
