import io

import numpy as np
import pytest

from genspec.core import FixedScorePolicy, Query, UniformPolicy, label_table, ndcg
from genspec.data import SyntheticSpec, generate_synthetic
from genspec.simulate import (
    ClickModel,
    LoggedInteraction,
    LogSlice,
    ZeroPropensityError,
    _simulate,
    clicks_prefix_length,
    concat,
    propensities,
    propensity,
    read_log,
    simulate_clicks,
    simulate_until_clicks,
    split_log,
    train_logging_policy,
    write_log,
)

from oracles import binom_sigma, mean_inverse_rank_mc


def labelled(qid, labels, f=2):
    labels = np.asarray(labels)
    return Query(qid, np.zeros((len(labels), f)), labels)


@pytest.fixture(scope="module")
def synth():
    return generate_synthetic(SyntheticSpec(n_train=100, n_validation=20, n_test=100, seed=2))


def test_propensity_examples():
    det = FixedScorePolicy({"q": [3.0, 2.0, 1.0]})
    assert propensity(det, Query("q", n_docs=3), 2) == pytest.approx(1.0 / 3.0)
    assert propensities(UniformPolicy(), Query("q", n_docs=2)).tolist() == pytest.approx([0.75, 0.75])
    last = FixedScorePolicy({"q": [1.0] * 9 + [0.0]})
    assert propensity(last, Query("q", n_docs=10), 9) == pytest.approx(0.1)
    with pytest.raises(IndexError):
        propensity(det, Query("q", n_docs=3), 3)


@pytest.mark.parametrize("scores", [[0, 0, 0, 0, 0], [2, 1, 1, 1, 0], [1, 1, 0, 0, 0]])
def test_propensity_matches_monte_carlo(scores):
    pol = FixedScorePolicy({"q": [float(s) for s in scores]})
    q = Query("q", n_docs=len(scores))
    ys = pol.sample_many(q, 100_000, np.random.default_rng(5))
    rho = propensities(pol, q)
    for d in range(len(scores)):
        mean, se = mean_inverse_rank_mc(ys, d)
        assert abs(rho[d] - mean) <= 3 * se + 1e-12


def test_logged_interaction_rejects_zero_propensity():
    with pytest.raises(ZeroPropensityError):
        LoggedInteraction("q", np.array([0, 1]), np.array([True, False]), np.array([1.0, 0.0]))


def test_logging_policy_determinism_and_quality(synth):
    a = train_logging_policy(synth.train, 0.1, seed=3)
    b = train_logging_policy(synth.train, 0.1, seed=3)
    assert np.array_equal(a.theta, b.theta)
    labels = label_table(synth.all_queries())
    weak = ndcg(train_logging_policy(synth.train, 0.02, seed=0), synth.test, labels)
    full = ndcg(train_logging_policy(synth.train, 1.0, seed=0), synth.test, labels)
    rand = ndcg(UniformPolicy(), synth.test, labels)
    assert rand < weak < full


def test_logging_policy_errors():
    flat = [labelled("a", [1, 1, 1])]
    with pytest.raises(ValueError):
        train_logging_policy(flat, 1.0)
    with pytest.raises(ValueError):
        train_logging_policy(flat, 0.0)


def test_simulate_zero_and_empty():
    q = labelled("q", [0, 1])
    log = simulate_clicks(UniformPolicy(), [q], ClickModel(0.2), 0, np.random.default_rng(0))
    assert len(log) == 0
    with pytest.raises(ValueError):
        simulate_clicks(UniformPolicy(), [], ClickModel(0.2), 10, np.random.default_rng(0))


def test_top_document_always_clicked():
    q = labelled("q", [4, 0, 0])
    pol = FixedScorePolicy({"q": [1.0, 0.0, 0.0]})
    log = simulate_clicks(pol, [q], ClickModel(0.2), 500, np.random.default_rng(1))
    assert log.clicks[:, 0].all()


def test_click_rate_by_rank():
    labels = [4, 2, 0, 1, 3]
    q = labelled("q", labels)
    pol = FixedScorePolicy({"q": [5.0, 4.0, 3.0, 2.0, 1.0]})
    model = ClickModel(0.1)
    n = 100_000
    log = simulate_clicks(pol, [q], model, n, np.random.default_rng(7))
    rate = log.clicks.mean(axis=0)
    for d, label in enumerate(labels):
        p = (1.0 / (d + 1)) * (0.2 + 0.1 * label)
        assert abs(rate[d] - p) <= 3 * binom_sigma(p, n)


def test_no_click_without_examination(synth):
    pi0 = train_logging_policy(synth.train, 0.05)
    log, examined = _simulate(pi0, synth.train, ClickModel(0.2), 20_000, np.random.default_rng(3))
    assert not np.any(log.clicks & ~examined)
    assert np.all(log.propensities > 0)


def test_recorded_propensity_is_policy_aware(synth):
    pi0 = UniformPolicy()
    log = simulate_clicks(pi0, synth.train[:3], ClickModel(0.2), 50, np.random.default_rng(0))
    for rec in log:
        assert rec.propensities == pytest.approx(np.full(10, np.mean(1.0 / np.arange(1, 11))))


def test_split_log():
    q = labelled("q", [0, 1, 2])
    log = simulate_clicks(UniformPolicy(), [q], ClickModel(0.2), 100, np.random.default_rng(0))
    train, sel = split_log(log, 0.5, np.random.default_rng(1))
    assert len(train) == 50 and len(sel) == 50
    _, sel0 = split_log(log, 0.0, np.random.default_rng(1))
    assert len(sel0) == 0

    log.rankings[:, 0] = np.arange(100) % 3
    tag = np.arange(100)
    marked = LogSlice(log.queries, log.query_idx, log.rankings, log.clicks, tag[:, None] + np.ones((100, 3)))
    a, b = split_log(marked, 0.37, np.random.default_rng(2))
    ids_a, ids_b = set(a.propensities[:, 0]), set(b.propensities[:, 0])
    assert not ids_a & ids_b
    assert ids_a | ids_b == set(marked.propensities[:, 0])
    assert len(b) == 37
    with pytest.raises(ValueError):
        split_log(log, 1.5, np.random.default_rng(0))


def test_log_round_trip(synth):
    pi0 = train_logging_policy(synth.train, 0.05)
    log = simulate_clicks(pi0, synth.train, ClickModel(0.2), 300, np.random.default_rng(4))
    buf = io.StringIO()
    write_log(log, buf)
    back = read_log(io.StringIO(buf.getvalue()), synth.train)
    assert np.array_equal(back.query_idx, log.query_idx)
    assert np.array_equal(back.rankings, log.rankings)
    assert np.array_equal(back.clicks, log.clicks)
    assert np.array_equal(back.propensities, log.propensities)


def test_log_reader_errors():
    q = labelled("q", [0, 1])
    with pytest.raises(ValueError):
        read_log(io.StringIO("x\t0,1\t\t0.75,0.75\n"), [q])
    with pytest.raises(ValueError):
        read_log(io.StringIO("q\t0,1\t\t0.75\n"), [q])


def test_by_query_index(synth):
    log = simulate_clicks(UniformPolicy(), synth.train[:5], ClickModel(0.2), 200, np.random.default_rng(0))
    groups = log.by_query()
    assert sum(len(g) for g in groups.values()) == len(log)
    for qid, rows in groups.items():
        sub = log.for_query(qid)
        assert len(sub) == len(rows)
        assert all(rec.qid == qid for rec in sub)


def test_click_budget_prefixes_nest(synth):
    pi0 = train_logging_policy(synth.train, 0.05)
    model = ClickModel(0.2)
    small = simulate_until_clicks(pi0, synth.train, model, 100, np.random.default_rng(9), chunk=500)
    big = simulate_until_clicks(pi0, synth.train, model, 1000, np.random.default_rng(9), chunk=500)
    assert small.n_clicks >= 100 and small.head(len(small) - 1).n_clicks < 100
    assert np.array_equal(big.head(len(small)).clicks, small.clicks)
    assert clicks_prefix_length(big, 0) == 0
    with pytest.raises(ValueError):
        clicks_prefix_length(small, 10**6)
    assert len(concat([small, big])) == len(small) + len(big)
