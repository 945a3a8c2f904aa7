"""Simplified online tabular bandit baselines.

``PbmBandit`` keeps an IPS relevance estimate per (query, document), using the
known examination probability ``1/rank`` of the displayed position, and shows
the ranking it currently expects to be best. To keep learning it gives one
document per step (round robin) an optimistic bonus
``sqrt(2 K ln(1 + t) / (1 + t))``, sized by the examination rate ``1/K`` of
the last position. This is a desk-scale stand-in for PBM-PIE, not a
reimplementation.

``HotfixBandit`` shuffles the top-``n`` of a base ranking uniformly, counts
pairwise click preferences inside the shuffled block, and reports the block
ordered by Copeland score (pairwise wins minus losses), ties kept in base
order. Only the reported ranking is evaluated.
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .core import FixedScorePolicy, Query, ScoreSortPolicy
from .simulate import ClickModel


class PbmBandit:
    def __init__(self, queries: Sequence[Query]):
        self.queries = {q.qid: q for q in queries}
        self.mass = {q.qid: np.zeros(q.n_docs) for q in queries}
        self.count = {q.qid: 0 for q in queries}

    def estimates(self, qid: str) -> np.ndarray:
        n = self.count[qid]
        return self.mass[qid] / n if n else np.zeros_like(self.mass[qid])

    def step(self, q: Query, rng: np.random.Generator) -> np.ndarray:
        est = self.estimates(q.qid).copy()
        t = self.count[q.qid]
        if t > 0:
            k = q.n_docs
            est[t % k] += math.sqrt(2.0 * k * math.log1p(t) / (1.0 + t))
        return np.lexsort((rng.random(q.n_docs), -est))

    def update(self, q: Query, ranking: np.ndarray, clicks: np.ndarray) -> None:
        ranks = np.empty(q.n_docs)
        ranks[ranking] = np.arange(1, q.n_docs + 1)
        self.mass[q.qid] += clicks * ranks
        self.count[q.qid] += 1

    def reported_policy(self) -> ScoreSortPolicy:
        return FixedScorePolicy({qid: self.estimates(qid) for qid in self.queries})


class HotfixBandit:
    def __init__(self, queries: Sequence[Query], base: ScoreSortPolicy, n: int):
        self.queries = {q.qid: q for q in queries}
        self.n = n
        self.base = {}
        for q in queries:
            if n > q.n_docs:
                raise ValueError(f"shuffle depth {n} exceeds {q.n_docs} candidates of query {q.qid}")
            self.base[q.qid] = np.argsort(-base.scores(q), kind="stable")
        self.prefs = {q.qid: np.zeros((q.n_docs, q.n_docs), dtype=np.int64) for q in queries}

    def step(self, q: Query, rng: np.random.Generator) -> np.ndarray:
        y = self.base[q.qid].copy()
        y[: self.n] = rng.permutation(y[: self.n])
        return y

    def update(self, q: Query, ranking: np.ndarray, clicks: np.ndarray) -> None:
        top = ranking[: self.n]
        won = top[clicks[top]]
        lost = top[~clicks[top]]
        if len(won) and len(lost):
            self.prefs[q.qid][np.ix_(won, lost)] += 1

    def reported_ranking(self, qid: str) -> np.ndarray:
        base = self.base[qid]
        top = base[: self.n]
        p = self.prefs[qid][np.ix_(top, top)]
        copeland = (p > p.T).sum(axis=1) - (p < p.T).sum(axis=1)
        order = np.argsort(-copeland, kind="stable")
        return np.concatenate([top[order], base[self.n :]])

    def reported_policy(self) -> ScoreSortPolicy:
        scores = {}
        for qid, q in self.queries.items():
            s = np.empty(q.n_docs)
            s[self.reported_ranking(qid)] = np.arange(q.n_docs, 0, -1)
            scores[qid] = s
        return FixedScorePolicy(scores)


def run_online(
    bandit,
    queries: Sequence[Query],
    click_model: ClickModel,
    click_budgets: Sequence[int],
    rng: np.random.Generator,
    evaluate: Callable[[ScoreSortPolicy], object],
    max_steps: int | None = None,
) -> list:
    """Run ``bandit`` online, calling ``evaluate`` on its reported policy at each click budget.

    Queries are drawn uniformly from ``queries``; returns one evaluation per
    budget (budgets must be ascending).
    """
    if list(click_budgets) != sorted(click_budgets):
        raise ValueError("click budgets must be ascending")
    queries = tuple(queries)
    probs = {q.qid: click_model.click_probability(q.labels) for q in queries}
    results, clicks_so_far, steps = [], 0, 0
    pending = list(click_budgets)
    while pending and pending[0] <= clicks_so_far:
        results.append(evaluate(bandit.reported_policy()))
        pending.pop(0)
    while pending:
        if max_steps is not None and steps >= max_steps:
            raise RuntimeError(f"click budget {pending[0]} not reached within {max_steps} steps")
        q = queries[rng.integers(len(queries))]
        y = bandit.step(q, rng)
        ranks = np.empty(q.n_docs)
        ranks[y] = np.arange(1, q.n_docs + 1)
        u = rng.random((2, q.n_docs))
        clicks = (u[0] < 1.0 / ranks) & (u[1] < probs[q.qid])
        bandit.update(q, y, clicks)
        clicks_so_far += int(clicks.sum())
        steps += 1
        while pending and pending[0] <= clicks_so_far:
            results.append(evaluate(bandit.reported_policy()))
            pending.pop(0)
    return results
