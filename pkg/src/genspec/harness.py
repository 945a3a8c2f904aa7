"""Experiment runner: sweep click budgets, repeat, evaluate NDCG, emit CSV.

CSV header (exact)::

    method,epsilon,budget,repeat,train_ndcg,test_ndcg,activated,overrides

``epsilon``, ``activated`` and ``overrides`` are empty where they do not
apply. Tabular methods cannot rank unseen queries; their ``test_ndcg`` is
written as ``random:<value>`` where ``<value>`` is the uniform-random
policy's Test-NDCG. Floats are written with six decimals.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .baselines import HotfixBandit, PbmBandit, run_online
from .core import UniformPolicy, label_table, ndcg
from .data import Dataset, SyntheticSpec, generate_synthetic, load_letor_dir, read_key_values
from .metapolicy import DeploymentDecision, GenSpecPolicy, decide, prime
from .models import NoClicksError, TrainConfig, infer_tabular, train_feature_based
from .simulate import ClickModel, LogSlice, clicks_prefix_length, simulate_until_clicks, train_logging_policy

log = logging.getLogger(__name__)

CSV_HEADER = ["method", "epsilon", "budget", "repeat", "train_ndcg", "test_ndcg", "activated", "overrides"]
MODES = ("genspec", "sea", "bandits", "no-bounds")
DEFAULT_BUDGETS = (10, 100, 1_000, 10_000, 100_000, 1_000_000)
METHOD_ORDER = ("logging", "feature", "tabular", "genspec", "genspec-sea", "genspec-nobounds",
                "pbm", "hotfix-top10", "hotfix-complete")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str | None = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    alpha: float = 0.2
    epsilons: tuple[float, ...] = (0.01,)
    beta: float = 0.5
    budgets: tuple[int, ...] = DEFAULT_BUDGETS
    repeats: int = 10
    seed: int = 0
    out: str | None = None
    modes: tuple[str, ...] = ("genspec",)
    logging_fraction: float = 0.01
    epochs: int = 50

    def __post_init__(self):
        if list(self.budgets) != sorted(self.budgets) or any(b < 0 for b in self.budgets):
            raise ValueError("budgets must be non-negative and ascending")
        if not self.budgets:
            raise ValueError("at least one budget is required")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        for eps in self.epsilons:
            if not 0.0 <= eps < 1.0:
                raise ValueError(f"epsilon {eps} outside [0, 1)")
        for m in self.modes:
            if m not in MODES:
                raise ValueError(f"unknown mode {m!r}; choose from {', '.join(MODES)}")
        ClickModel(self.alpha)

    def with_overrides(self, **values) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in values.items() if v is not None})


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(float(t)) for t in text.split(",") if t.strip())


def parse_synthetic(text: str) -> SyntheticSpec:
    """Inline ``key=value,key=value`` synthetic spec."""
    values = {}
    for item in text.split(","):
        if item.strip():
            key, sep, value = item.partition("=")
            if not sep:
                raise ValueError(f"expected key=value in synthetic spec, got {item!r}")
            values[key.strip()] = value.strip()
    return SyntheticSpec.from_mapping(values)


def config_from_mapping(values: dict[str, str], base: ExperimentConfig | None = None) -> ExperimentConfig:
    base = base or ExperimentConfig()
    synth = {k[len("synthetic."):]: v for k, v in values.items() if k.startswith("synthetic.")}
    kw = {}
    for key, value in values.items():
        if key.startswith("synthetic."):
            continue
        if key == "dataset":
            kw["dataset"] = value or None
        elif key == "synthetic":
            kw["synthetic"] = parse_synthetic(value)
        elif key == "alpha":
            kw["alpha"] = float(value)
        elif key in ("epsilon", "epsilons"):
            kw["epsilons"] = _floats(value)
        elif key == "beta":
            kw["beta"] = float(value)
        elif key == "budgets":
            kw["budgets"] = _ints(value)
        elif key == "repeats":
            kw["repeats"] = int(value)
        elif key == "seed":
            kw["seed"] = int(value)
        elif key == "out":
            kw["out"] = value or None
        elif key == "mode":
            kw["modes"] = tuple(m.strip() for m in value.split(",") if m.strip())
        elif key == "logging_fraction":
            kw["logging_fraction"] = float(value)
        elif key == "epochs":
            kw["epochs"] = int(value)
        else:
            raise KeyError(f"unknown config key {key!r}")
    if synth:
        kw["synthetic"] = SyntheticSpec.from_mapping(synth)
    return replace(base, **kw)


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        return config_from_mapping(read_key_values(fh.read()))


@dataclass(frozen=True)
class ResultRow:
    method: str
    epsilon: float | None
    budget: int
    repeat: int
    train_ndcg: float
    test_ndcg: float | None
    test_random: bool = False
    activated: bool | None = None
    overrides: int | None = None

    def sort_key(self):
        order = METHOD_ORDER.index(self.method) if self.method in METHOD_ORDER else len(METHOD_ORDER)
        return (order, self.method, -1.0 if self.epsilon is None else self.epsilon, self.budget, self.repeat)

    def csv_fields(self) -> list[str]:
        test = "" if self.test_ndcg is None else f"{self.test_ndcg:.6f}"
        if self.test_random:
            test = f"random:{test}"
        return [
            self.method,
            "" if self.epsilon is None else repr(self.epsilon),
            str(self.budget),
            str(self.repeat),
            f"{self.train_ndcg:.6f}",
            test,
            "" if self.activated is None else str(int(self.activated)),
            "" if self.overrides is None else str(self.overrides),
        ]


def load_dataset(config: ExperimentConfig) -> Dataset:
    if config.dataset:
        return load_letor_dir(config.dataset)
    return generate_synthetic(config.synthetic)


def run_experiment(config: ExperimentConfig) -> list[ResultRow]:
    """All result rows for ``config``, sorted by method, epsilon, budget and repeat."""
    dataset = load_dataset(config)
    labels = label_table(dataset.all_queries())
    click_model = ClickModel(config.alpha)
    pi0 = train_logging_policy(dataset.train, config.logging_fraction, seed=config.seed)
    click_queries = dataset.train + dataset.validation
    train_ids = [q.qid for q in dataset.train]
    vali_ids = [q.qid for q in dataset.validation]

    def train_ndcg(policy):
        return ndcg(policy, dataset.train, labels)

    def test_ndcg(policy):
        return ndcg(policy, dataset.test, labels) if dataset.test else float("nan")

    pi0_train, pi0_test = train_ndcg(pi0), test_ndcg(pi0)
    random_test = test_ndcg(UniformPolicy())
    counterfactual = any(m != "bandits" for m in config.modes)
    repeat_seeds = np.random.SeedSequence(config.seed).spawn(config.repeats)
    rows: list[ResultRow] = []

    for rep, seq in enumerate(repeat_seeds):
        sim_seq, bandit_seq = seq.spawn(2)
        if counterfactual:
            rng = np.random.Generator(np.random.PCG64(sim_seq))
            full_log = simulate_until_clicks(pi0, click_queries, click_model, max(config.budgets), rng)
            for budget in config.budgets:
                sub = full_log.head(clicks_prefix_length(full_log, budget))
                rows.extend(_counterfactual_rows(config, rep, budget, sub, pi0, train_ids, vali_ids,
                                                 train_ndcg, test_ndcg, pi0_train, pi0_test, random_test))
                log.info("repeat %d budget %d: %d interactions", rep, budget, len(sub))
        if "bandits" in config.modes:
            rows.extend(_bandit_rows(config, rep, bandit_seq, dataset, pi0, click_model, train_ndcg, random_test))
    rows.sort(key=ResultRow.sort_key)
    return rows


def _counterfactual_rows(config, rep, budget, sub: LogSlice, pi0, train_ids, vali_ids,
                         train_ndcg, test_ndcg, pi0_train, pi0_test, random_test):
    D = sub.restrict(train_ids)
    V = sub.restrict(vali_ids)
    train_cfg = TrainConfig(epochs=config.epochs, seed=config.seed)

    def trainer(s):
        return train_feature_based(s, V, train_cfg, init=pi0.theta)

    rows = [ResultRow("logging", None, budget, rep, pi0_train, pi0_test)]
    try:
        feature = trainer(D)
    except NoClicksError:
        feature = pi0
    tabular = infer_tabular(D)
    f_test = test_ndcg(feature)
    rows.append(ResultRow("feature", None, budget, rep, train_ndcg(feature), f_test))
    rows.append(ResultRow("tabular", None, budget, rep, train_ndcg(tabular), random_test, test_random=True))

    variants = []
    for mode in config.modes:
        if mode == "genspec":
            variants += [("genspec", eps, "relative") for eps in config.epsilons]
        elif mode == "sea":
            variants += [("genspec-sea", eps, "sea") for eps in config.epsilons]
        elif mode == "no-bounds":
            variants.append(("genspec-nobounds", None, "none"))
    if not variants:
        return rows
    primed = None
    if len(D):
        split_rng = np.random.Generator(np.random.PCG64([config.seed, rep, budget]))
        primed = prime(D, config.beta, split_rng, trainer, infer_tabular)
    logged = list(D.by_query())
    cache = {}
    for name, eps, bound in variants:
        if primed is None:
            decision = DeploymentDecision()
        else:
            decision = decide(primed, pi0, 0.0 if eps is None else eps, bound, queries=logged)
        policy = GenSpecPolicy(pi0, feature, tabular, decision)
        key = (decision.activated, decision.overrides)
        if key not in cache:
            test = f_test if decision.activated else pi0_test
            cache[key] = (train_ndcg(policy), test)
        tr, te = cache[key]
        rows.append(ResultRow(name, eps, budget, rep, tr, te, activated=decision.activated,
                              overrides=len(decision.overrides)))
    return rows


def _bandit_rows(config, rep, seq, dataset, pi0, click_model, train_ndcg, random_test):
    rows = []
    k = min(q.n_docs for q in dataset.train + dataset.validation)
    click_queries = dataset.train + dataset.validation
    bandits = [
        ("pbm", lambda: PbmBandit(click_queries)),
        ("hotfix-top10", lambda: HotfixBandit(click_queries, pi0, min(10, k))),
        ("hotfix-complete", lambda: HotfixBandit(click_queries, pi0, k)),
    ]
    for child, (name, make) in zip(seq.spawn(len(bandits)), bandits):
        rng = np.random.Generator(np.random.PCG64(child))
        values = run_online(make(), click_queries, click_model, config.budgets, rng, train_ndcg)
        for budget, value in zip(config.budgets, values):
            rows.append(ResultRow(name, None, budget, rep, value, random_test, test_random=True))
    return rows


def rows_to_csv(rows: Iterable[ResultRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(row.csv_fields())
    return buf.getvalue()


def read_csv_rows(text: str) -> list[ResultRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != CSV_HEADER:
        raise ValueError(f"unexpected header {header}")
    rows = []
    for rec in reader:
        method, eps, budget, rep, tr, te, act, ov = rec
        random_marker = te.startswith("random:")
        te = te[len("random:"):] if random_marker else te
        rows.append(ResultRow(
            method,
            float(eps) if eps else None,
            int(budget),
            int(rep),
            float(tr),
            float(te) if te else None,
            random_marker,
            bool(int(act)) if act else None,
            int(ov) if ov else None,
        ))
    return rows


@dataclass(frozen=True)
class SummaryRow:
    method: str
    epsilon: float | None
    budget: int
    n: int
    train_mean: float
    train_std: float
    test_mean: float | None
    test_std: float | None


def summarize(rows: Sequence[ResultRow]) -> list[SummaryRow]:
    """Sample mean and standard deviation per (method, epsilon, budget)."""
    if not rows:
        raise ValueError("nothing to summarize")
    groups: dict[tuple, list[ResultRow]] = {}
    for row in sorted(rows, key=ResultRow.sort_key):
        groups.setdefault((row.method, row.epsilon, row.budget), []).append(row)
    out = []
    for (method, eps, budget), members in groups.items():
        tr = np.array([r.train_ndcg for r in members])
        te = [r.test_ndcg for r in members if r.test_ndcg is not None]
        out.append(SummaryRow(
            method, eps, budget, len(members),
            float(tr.mean()), _std(tr),
            float(np.mean(te)) if te else None, _std(np.array(te)) if te else None,
        ))
    return out


def _std(x: np.ndarray) -> float:
    return float(x.std(ddof=1)) if len(x) > 1 else 0.0


def format_summary(summary: Sequence[SummaryRow]) -> str:
    lines = [f"{'method':<18}{'eps':>7}{'budget':>10}{'n':>4}{'train':>10}{'±sd':>9}{'test':>10}{'±sd':>9}"]
    for s in summary:
        eps = "" if s.epsilon is None else f"{s.epsilon:g}"
        test = "" if s.test_mean is None or math.isnan(s.test_mean) else f"{s.test_mean:.4f}"
        test_sd = "" if s.test_std is None or math.isnan(s.test_std) else f"{s.test_std:.4f}"
        lines.append(f"{s.method:<18}{eps:>7}{s.budget:>10}{s.n:>4}{s.train_mean:>10.4f}{s.train_std:>9.4f}{test:>10}{test_sd:>9}")
    return "\n".join(lines)
