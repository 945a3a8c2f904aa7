"""Datasets: LETOR/SVMLight ingestion, synthetic generation, relevance tables.

LETOR grammar, one document per line::

    <label> qid:<id> <idx>:<value> <idx>:<value> ... [# comment]

``label`` is an integer in 0..4, feature indices are 1-based and may be
sparse (absent indices read as 0.0), everything after ``#`` is ignored and
blank lines are skipped. Documents are grouped by ``qid`` in order of first
appearance; a document's id is its position within its query.
"""
from __future__ import annotations

import io
import os
from dataclasses import dataclass, fields
from typing import Iterable, TextIO

import numpy as np

from .core import Query, RelevanceTable

PARTITIONS = ("train", "validation", "test")
MAX_LABEL = 4


class ParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class Dataset:
    train: tuple[Query, ...]
    validation: tuple[Query, ...]
    test: tuple[Query, ...]

    def __post_init__(self):
        dims = {q.features.shape[1] for part in PARTITIONS for q in getattr(self, part)}
        if len(dims) > 1:
            raise ValueError(f"inconsistent feature dimensions: {sorted(dims)}")

    def partition(self, name: str) -> tuple[Query, ...]:
        if name not in PARTITIONS:
            raise KeyError(name)
        return getattr(self, name)

    @property
    def n_features(self) -> int:
        for part in PARTITIONS:
            if getattr(self, part):
                return getattr(self, part)[0].features.shape[1]
        return 0

    def all_queries(self) -> tuple[Query, ...]:
        return self.train + self.validation + self.test


def parse_letor(stream: TextIO | Iterable[str], n_features: int | None = None) -> tuple[Query, ...]:
    """Parse one LETOR partition into queries (file order)."""
    docs: dict[str, list[tuple[int, dict[int, float]]]] = {}
    max_index = 0
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label = int(tokens[0])
        except ValueError:
            raise ParseError(lineno, f"expected integer label, got {tokens[0]!r}") from None
        if not 0 <= label <= MAX_LABEL:
            raise ParseError(lineno, f"label {label} outside 0..{MAX_LABEL}")
        if len(tokens) < 2 or not tokens[1].startswith("qid:") or len(tokens[1]) == 4:
            raise ParseError(lineno, "expected qid:<id> after the label")
        qid = tokens[1][4:]
        feats: dict[int, float] = {}
        for tok in tokens[2:]:
            idx, sep, val = tok.partition(":")
            try:
                i = int(idx)
                v = float(val)
            except ValueError:
                raise ParseError(lineno, f"malformed feature {tok!r}") from None
            if not sep or i < 1:
                raise ParseError(lineno, f"malformed feature {tok!r}")
            if i in feats:
                raise ParseError(lineno, f"feature index {i} repeated")
            feats[i] = v
            max_index = max(max_index, i)
        docs.setdefault(qid, []).append((label, feats))

    dim = max_index if n_features is None else n_features
    if dim < max_index:
        raise ValueError(f"feature index {max_index} exceeds declared dimension {dim}")
    queries = []
    for qid, rows in docs.items():
        x = np.zeros((len(rows), dim))
        for j, (_, feats) in enumerate(rows):
            for i, v in feats.items():
                x[j, i - 1] = v
        queries.append(Query(qid, x, np.array([lab for lab, _ in rows])))
    return tuple(queries)


def write_letor(queries: Iterable[Query], stream: TextIO) -> None:
    """Dense LETOR output; ``repr`` floats make parse(write(x)) exact."""
    for q in queries:
        for label, x in zip(q.labels, q.features):
            feats = " ".join(f"{i}:{float(v)!r}" for i, v in enumerate(x, start=1))
            stream.write(f"{int(label)} qid:{q.qid} {feats}\n")


def load_letor_dir(path: str) -> Dataset:
    """Load ``train.txt``, ``vali.txt`` (or ``validation.txt``) and ``test.txt`` from a directory."""
    names = {"train": ["train.txt"], "validation": ["vali.txt", "validation.txt"], "test": ["test.txt"]}
    parts = {}
    for part, candidates in names.items():
        for name in candidates:
            full = os.path.join(path, name)
            if os.path.exists(full):
                with open(full) as fh:
                    parts[part] = parse_letor(fh)
                break
        else:
            raise FileNotFoundError(f"{path}: missing {' or '.join(candidates)}")
    dim = max(q.features.shape[1] for p in parts.values() for q in p)
    parts = {k: tuple(_pad_features(q, dim) for q in v) for k, v in parts.items()}
    return Dataset(**parts)


def _pad_features(q: Query, dim: int) -> Query:
    if q.features.shape[1] == dim:
        return q
    x = np.zeros((q.n_docs, dim))
    x[:, : q.features.shape[1]] = q.features
    return Query(q.qid, x, q.labels)


@dataclass(frozen=True)
class SyntheticSpec:
    n_train: int = 200
    n_validation: int = 50
    n_test: int = 100
    docs_per_query: int = 10
    n_features: int = 8
    signal_dims: int = 3
    signal: float = 0.7
    seed: int = 0

    def __post_init__(self):
        for name in ("n_train", "n_validation", "n_test", "docs_per_query", "n_features", "signal_dims"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_features < 2:
            raise ValueError("need at least 2 features (one signal, one distractor)")
        if self.signal_dims >= self.n_features:
            raise ValueError("signal_dims must leave at least one distractor dimension")
        if not 0.0 <= self.signal <= 1.0:
            raise ValueError("signal strength must lie in [0, 1]")

    @classmethod
    def from_mapping(cls, values: dict) -> "SyntheticSpec":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.strip().replace("-", "_")
            if key not in types:
                raise KeyError(f"unknown synthetic spec key {key!r}")
            kwargs[key] = float(raw) if key == "signal" else int(raw)
        return cls(**kwargs)


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Synthetic dataset with tunable feature informativeness.

    Labels are uniform on 0..4. Each signal dimension is
    ``signal * label / 4 + (1 - signal) * N(0, 1)`` with independent noise, the
    remaining dimensions are ``N(0, 1)`` distractors. Randomness comes from
    numpy's PCG64 generator seeded with ``spec.seed``.
    """
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    k, f, s = spec.docs_per_query, spec.n_features, spec.signal
    counts = {"train": spec.n_train, "validation": spec.n_validation, "test": spec.n_test}
    parts = {}
    for part in PARTITIONS:
        queries = []
        for i in range(counts[part]):
            labels = rng.integers(0, MAX_LABEL + 1, size=k)
            x = rng.standard_normal((k, f))
            x[:, : spec.signal_dims] = s * labels[:, None] / MAX_LABEL + (1.0 - s) * x[:, : spec.signal_dims]
            queries.append(Query(f"{part}-{i}", x, labels))
        parts[part] = tuple(queries)
    return Dataset(**parts)


def relevance_from_labels(queries: Iterable[Query], alpha: float, offset: float = 0.2) -> RelevanceTable:
    """Click probability given examination, ``offset + alpha * label``."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if offset + MAX_LABEL * alpha > 1.0 + 1e-12:
        raise ValueError(f"offset + {MAX_LABEL}*alpha = {offset + MAX_LABEL * alpha} exceeds 1")
    if isinstance(queries, Dataset):
        queries = queries.all_queries()
    return RelevanceTable({q.qid: np.minimum(offset + alpha * q.labels, 1.0) for q in queries})


def read_key_values(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ParseError(lineno, f"expected key = value, got {raw.strip()!r}")
        out[key.strip()] = value.strip()
    return out
