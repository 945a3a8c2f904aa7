"""Feature-based (linear) and tabular ranking models.

The feature-based trainer minimises an IPS-weighted pairwise logistic loss
with lambda-style pair weights. Because the loss is linear in every
interaction's ``c/rho`` values, interactions are aggregated per query into
click mass before training, and stochastic descent runs over minibatches of
logged queries. Checkpoints (the initial weights and every epoch of every
learning rate) are compared by IPS reward on a validation log.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Mapping, TextIO

import numpy as np

from .core import Query, RankWeightFn, ScoreSortPolicy, dcg_weight
from .estimate import expected_weight_matrix

if TYPE_CHECKING:
    from .simulate import LogSlice


class NoClicksError(ValueError):
    pass


class LinearRanker(ScoreSortPolicy):
    def __init__(self, theta):
        theta = np.array(theta, dtype=np.float64)
        if theta.ndim != 1 or not np.all(np.isfinite(theta)):
            raise ValueError("weights must be a finite vector")
        theta.setflags(write=False)
        self.theta = theta

    def scores(self, q: Query) -> np.ndarray:
        return q.features @ self.theta

    def __repr__(self):
        return f"LinearRanker(dim={len(self.theta)})"


class TabularRanker(ScoreSortPolicy):
    """Memorised relevance estimates per query; unseen pairs score 0."""

    def __init__(self, table: Mapping[str, np.ndarray]):
        self.table = {q: np.asarray(v, dtype=np.float64) for q, v in table.items()}
        for q, v in self.table.items():
            if np.any(v < 0):
                raise ValueError(f"negative relevance estimate for query {q}")

    def scores(self, q: Query) -> np.ndarray:
        row = self.table.get(q.qid)
        out = np.zeros(q.n_docs)
        if row is not None:
            m = min(len(row), q.n_docs)
            out[:m] = row[:m]
        return out

    def __repr__(self):
        return f"TabularRanker(queries={len(self.table)})"


def infer_tabular(log: "LogSlice") -> TabularRanker:
    """Per-query mean of ``c/rho`` over the interactions logged for that query."""
    mass, counts = log.click_mass()
    table = {}
    for j in np.flatnonzero(counts):
        q = log.queries[j]
        table[q.qid] = mass[j, : q.n_docs] / counts[j]
    return TabularRanker(table)


def write_model(model: ScoreSortPolicy, stream: TextIO) -> None:
    if isinstance(model, LinearRanker):
        stream.write("linear\n")
        stream.write(" ".join(repr(float(v)) for v in model.theta) + "\n")
    elif isinstance(model, TabularRanker):
        stream.write("tabular\n")
        for qid in sorted(model.table):
            for d, v in enumerate(model.table[qid]):
                stream.write(f"{qid}\t{d}\t{float(v)!r}\n")
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")


def read_model(stream: TextIO) -> ScoreSortPolicy:
    kind = stream.readline().strip()
    if kind == "linear":
        return LinearRanker([float(t) for t in stream.readline().split()])
    if kind == "tabular":
        cells: dict[str, dict[int, float]] = {}
        for line in stream:
            if not line.strip():
                continue
            qid, d, v = line.rstrip("\n").split("\t")
            cells.setdefault(qid, {})[int(d)] = float(v)
        table = {}
        for qid, row in cells.items():
            arr = np.zeros(max(row) + 1)
            for d, v in row.items():
                arr[d] = v
            table[qid] = arr
        return TabularRanker(table)
    raise ValueError(f"unknown model kind {kind!r}")


def pair_weights(scores: np.ndarray, valid: np.ndarray, weight_fn: RankWeightFn = dcg_weight) -> np.ndarray:
    """``|w(rank_d) - w(rank_d')|`` for every document pair at the current ranking.

    ``scores`` and ``valid`` have shape ``(B, K)``; ties are ranked by index.
    Returns ``(B, K, K)`` with zeros on the diagonal and on padding.
    """
    b, k = scores.shape
    s = np.where(valid, scores, -np.inf)
    order = np.argsort(-s, axis=1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(1, k + 1)[None, :].repeat(b, axis=0), axis=1)
    w = np.asarray(weight_fn(ranks), dtype=np.float64)
    pw = np.abs(w[:, :, None] - w[:, None, :])
    mask = valid[:, :, None] & valid[:, None, :]
    return np.where(mask, pw, 0.0)


def surrogate_loss_and_grad(
    theta: np.ndarray, features: np.ndarray, mass: np.ndarray, weights: np.ndarray
) -> tuple[float, np.ndarray]:
    """IPS-weighted pairwise logistic loss and its gradient in ``theta``.

    loss = sum_{q, d, d'} mass[q, d] * weights[q, d, d'] * log(1 + exp(s[q, d'] - s[q, d]))

    ``features``: ``(B, K, F)``; ``mass``: ``(B, K)`` click mass (already
    scaled); ``weights``: ``(B, K, K)`` pair weights held fixed.
    """
    s = features @ theta
    margin = s[:, None, :] - s[:, :, None]
    coef = mass[:, :, None] * weights
    loss = float(np.sum(coef * np.logaddexp(0.0, margin)))
    g = coef * _sigmoid(margin)
    grad_s = g.sum(axis=1) - g.sum(axis=2)
    grad = np.einsum("bk,bkf->f", grad_s, features)
    return loss, grad


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


@dataclass(frozen=True)
class TrainConfig:
    learning_rates: tuple[float, ...] = (0.1, 0.01)
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0


def _aggregate(log: "LogSlice"):
    mass, _ = log.click_mass()
    active = np.flatnonzero(mass.sum(axis=1) > 0)
    k = log.max_docs
    dim = log.queries[active[0]].features.shape[1] if len(active) else 0
    feats = np.zeros((len(active), k, dim))
    valid = np.zeros((len(active), k), dtype=bool)
    for row, j in enumerate(active):
        q = log.queries[j]
        feats[row, : q.n_docs] = q.features
        valid[row, : q.n_docs] = True
    return feats, valid, mass[active] / len(log)


def train_feature_based(
    log: "LogSlice",
    validation: "LogSlice | None",
    config: TrainConfig = TrainConfig(),
    init=None,
    weight_fn: RankWeightFn = dcg_weight,
) -> LinearRanker:
    """Linear ranker trained on ``log`` and selected by IPS reward on ``validation``.

    ``init`` defaults to small seeded random weights. An empty validation log
    falls back to selecting on ``log`` itself.
    """
    if len(log) == 0 or log.n_clicks == 0:
        raise NoClicksError("training log contains no clicks")
    feats, valid, mass = _aggregate(log)
    n_active = len(mass)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    theta0 = rng.normal(scale=0.01, size=feats.shape[2]) if init is None else np.array(init, dtype=np.float64)
    selector = validation if validation is not None and len(validation) > 0 else log

    sel_mass, _ = selector.click_mass()
    sel_present = np.flatnonzero(sel_mass.sum(axis=1) > 0)

    def validate(th):
        if len(sel_present) == 0:
            return 0.0
        e = expected_weight_matrix(LinearRanker(th), selector.queries, sel_present, selector.max_docs, weight_fn)
        return float(np.sum(sel_mass[sel_present] * e[sel_present]) / len(selector))

    best_theta = theta0
    best_value = validate(theta0)
    for lr in config.learning_rates:
        epoch_rng = np.random.Generator(np.random.PCG64(config.seed))
        theta = theta0.copy()
        for _ in range(config.epochs):
            perm = epoch_rng.permutation(n_active)
            for start in range(0, n_active, config.batch_size):
                batch = perm[start : start + config.batch_size]
                x, v = feats[batch], valid[batch]
                w = pair_weights(x @ theta, v, weight_fn)
                scale = n_active / len(batch)
                _, grad = surrogate_loss_and_grad(theta, x, mass[batch] * scale, w)
                theta = theta - lr * grad
            if not np.all(np.isfinite(theta)):
                break
            value = validate(theta)
            if value > best_value:
                best_value, best_theta = value, theta.copy()
    return LinearRanker(best_theta)
