import io

import numpy as np
import pytest

from genspec.core import FixedScorePolicy, Query, UniformPolicy
from genspec.data import SyntheticSpec, generate_synthetic
from genspec.metapolicy import (
    ContextualLog,
    DeploymentDecision,
    GenSpecPolicy,
    contextual_bound,
    contextual_initialize,
    decide,
    initialize,
    log_contextual,
    model_to_serve,
    prime,
)
from genspec.models import LinearRanker, TrainConfig, infer_tabular, train_feature_based
from genspec.simulate import ClickModel, LogSlice, simulate_until_clicks, train_logging_policy

PI0, FEAT, TAB = UniformPolicy(), FixedScorePolicy({}), FixedScorePolicy({"x": [1.0]})


def test_model_to_serve_cases():
    d = DeploymentDecision(True, frozenset({"a"}))
    assert model_to_serve(d, "a", PI0, FEAT, TAB) is TAB
    assert model_to_serve(d, "never-seen", PI0, FEAT, TAB) is FEAT
    assert model_to_serve(DeploymentDecision(False, frozenset({"a"})), "a", PI0, FEAT, TAB) is TAB
    assert model_to_serve(DeploymentDecision(), "never-seen", PI0, FEAT, TAB) is PI0


def test_genspec_policy_dispatches():
    q = Query("a", n_docs=3)
    tab = FixedScorePolicy({"a": [1.0, 3.0, 2.0]})
    pol = GenSpecPolicy(PI0, None, tab, DeploymentDecision(False, frozenset({"a"})))
    assert pol.valid_set_size(q) == 1
    assert pol.sample(q, np.random.default_rng(0)).tolist() == [1, 2, 0]
    assert pol.valid_set_size(Query("b", n_docs=3)) == 6
    with pytest.raises(ValueError):
        GenSpecPolicy(PI0, None, tab, DeploymentDecision(True))


def test_decision_text_round_trip():
    d = DeploymentDecision(True, frozenset({"q2", "q10", "a"}))
    buf = io.StringIO()
    d.to_text(buf)
    assert buf.getvalue() == "activated 1\noverride a\noverride q10\noverride q2\n"
    assert DeploymentDecision.from_text(io.StringIO(buf.getvalue())) == d
    with pytest.raises(ValueError):
        DeploymentDecision.from_text(io.StringIO("override a\n"))


@pytest.fixture(scope="module")
def world():
    ds = generate_synthetic(SyntheticSpec(n_train=40, n_validation=10, n_test=20, seed=8))
    pi0 = train_logging_policy(ds.train, 0.05)
    return ds, pi0


def trainers(ds, pi0):
    vali_ids = {q.qid for q in ds.validation}
    train_ids = {q.qid for q in ds.train}

    def train_feature(s):
        return train_feature_based(s.restrict(train_ids), s.restrict(vali_ids), TrainConfig(epochs=5), init=pi0.theta)

    return train_feature, infer_tabular


def test_tiny_log_with_high_confidence_serves_logging_policy(world):
    ds, pi0 = world
    log = simulate_until_clicks(pi0, ds.train, ClickModel(0.2), 20, np.random.default_rng(0))
    tf, ti = trainers(ds, pi0)
    policy, decision = initialize(pi0, log, 0.999, 0.5, np.random.default_rng(1), tf, ti)
    assert decision == DeploymentDecision()
    for q in ds.train + ds.test:
        assert policy.model_to_serve(q.qid) is pi0


def test_empty_log_serves_logging_policy(world):
    ds, pi0 = world
    tf, ti = trainers(ds, pi0)
    policy, decision = initialize(pi0, LogSlice.empty(ds.train), 0.5, 0.5, np.random.default_rng(0), tf, ti)
    assert decision == DeploymentDecision()
    assert policy.feature is None and policy.tabular is None
    assert policy.model_to_serve("anything") is pi0


def test_large_log_activates_and_overrides(world):
    ds, pi0 = world
    log = simulate_until_clicks(pi0, ds.train + ds.validation, ClickModel(0.2), 200_000, np.random.default_rng(2))
    tf, ti = trainers(ds, pi0)
    _, decision = initialize(pi0, log, 0.01, 0.5, np.random.default_rng(3), tf, ti)
    assert decision.activated
    assert decision.overrides
    assert decision.overrides <= {q.qid for q in ds.train + ds.validation}


def test_decision_is_stable_and_ignores_full_data_models(world):
    ds, pi0 = world
    log = simulate_until_clicks(pi0, ds.train + ds.validation, ClickModel(0.2), 20_000, np.random.default_rng(4))
    tf, ti = trainers(ds, pi0)
    _, d1 = initialize(pi0, log, 0.01, 0.5, np.random.default_rng(5), tf, ti)
    _, d2 = initialize(pi0, log, 0.01, 0.5, np.random.default_rng(5), tf, ti)
    assert d1 == d2

    # full-data fits get replaced by garbage; the decision must not change
    n = len(log)

    def perturbed_feature(s):
        return LinearRanker(-pi0.theta) if len(s) == n else tf(s)

    def perturbed_tabular(s):
        return UniformPolicy() if len(s) == n else ti(s)

    policy, d3 = initialize(pi0, log, 0.01, 0.5, np.random.default_rng(5), perturbed_feature, perturbed_tabular)
    assert d3 == d1
    assert isinstance(policy.tabular, UniformPolicy)


def test_queries_missing_from_selection_are_never_overridden(world):
    ds, pi0 = world
    log = simulate_until_clicks(pi0, ds.train, ClickModel(0.2), 2000, np.random.default_rng(6))
    tf, ti = trainers(ds, pi0)
    primed = prime(log, 0.5, np.random.default_rng(7), tf, ti)
    sel_ids = set(primed.selection.by_query())
    for mode in ("relative", "sea", "none"):
        d = decide(primed, pi0, 0.01, mode, queries=list(log.by_query()))
        assert d.overrides <= sel_ids
    with pytest.raises(ValueError):
        decide(primed, pi0, 0.01, "bogus")


def test_no_bounds_mode_is_most_permissive(world):
    ds, pi0 = world
    log = simulate_until_clicks(pi0, ds.train, ClickModel(0.2), 5000, np.random.default_rng(8))
    tf, ti = trainers(ds, pi0)
    primed = prime(log, 0.5, np.random.default_rng(9), tf, ti)
    strict = decide(primed, pi0, 0.01, "relative")
    loose = decide(primed, pi0, 0.01, "none")
    if strict.activated == loose.activated:
        assert strict.overrides <= loose.overrides


def test_initialize_validates_arguments(world):
    ds, pi0 = world
    tf, ti = trainers(ds, pi0)
    with pytest.raises(ValueError):
        initialize(pi0, LogSlice.empty(ds.train), 0.5, 1.0, np.random.default_rng(0), tf, ti)
    with pytest.raises(ValueError):
        initialize(pi0, LogSlice.empty(ds.train), 1.0, 0.5, np.random.default_rng(0), tf, ti)


def test_contextual_identical_policies_never_override():
    logging = np.array([[0.5, 0.5]])
    log = log_contextual(logging, lambda z, a, rng: (a == 0).astype(float), 500, np.random.default_rng(0))
    uniform = lambda log, nz, na: np.full((nz, na), 1.0 / na)
    meta = contextual_initialize(logging, log, 0.5, 0.5, np.random.default_rng(1), uniform, uniform)
    assert not meta.decision.overrides
    assert contextual_bound(logging, logging, log, 0.5).delta == 0.0


def test_contextual_override_with_ample_data():
    logging = np.full((3, 2), 0.5)
    best = np.array([0, 1, 0])

    def reward(z, a, rng):
        return (a == best[z]).astype(float)

    log = log_contextual(logging, reward, 6000, np.random.default_rng(2))
    meta = contextual_initialize(logging, log, 0.9, 0.5, np.random.default_rng(3))
    assert meta.decision.activated
    assert meta.decision.overrides == {"1"}
    assert meta.serve(1).tolist() == [0.0, 1.0]


def test_contextual_unlogged_context_served_by_general_policy():
    logging = np.full((2, 2), 0.5)
    log = log_contextual(logging, lambda z, a, rng: (a == 0).astype(float), 4000, np.random.default_rng(4), np.array([1.0, 0.0]))
    meta = contextual_initialize(logging, log, 0.5, 0.5, np.random.default_rng(5))
    assert "1" not in meta.decision.overrides
    assert meta.decision.activated
    assert np.array_equal(meta.serve(1), meta.general[1])


def test_contextual_log_validation():
    with pytest.raises(ValueError):
        ContextualLog(np.zeros(2), np.zeros(2, dtype=int), np.array([0.5, 0.0]), np.zeros(2, dtype=int))
    with pytest.raises(ValueError):
        ContextualLog(np.zeros(2), np.zeros(1, dtype=int), np.ones(2), np.zeros(2, dtype=int))
