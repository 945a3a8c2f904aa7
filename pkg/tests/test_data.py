import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from genspec.core import Query, UniformPolicy, label_table, ndcg
from genspec.data import (
    Dataset,
    ParseError,
    SyntheticSpec,
    generate_synthetic,
    load_letor_dir,
    parse_letor,
    read_key_values,
    relevance_from_labels,
    write_letor,
)
from genspec.simulate import train_logging_policy


def test_parse_sparse_line():
    (query,) = parse_letor(io.StringIO("2 qid:7 1:0.5 3:1.0\n"))
    assert query.qid == "7"
    assert query.labels.tolist() == [2]
    assert query.features.tolist() == [[0.5, 0.0, 1.0]]


def test_parse_ignores_comment():
    (query,) = parse_letor(io.StringIO("0 qid:7 1:0 # docid=abc\n"))
    assert query.labels.tolist() == [0]
    assert query.features.tolist() == [[0.0]]


@pytest.mark.parametrize("line", ["qid:7 1:0.5", "1 7 1:0.5", "1 qid:7 x:0.5", "1 qid:7 0:1.0", "1 qid:7 2"])
def test_parse_rejects_malformed(line):
    with pytest.raises(ParseError) as info:
        parse_letor(io.StringIO("\n" + line + "\n"))
    assert info.value.lineno == 2


def test_parse_rejects_out_of_range_label():
    with pytest.raises(ParseError):
        parse_letor(io.StringIO("5 qid:1 1:0.1\n"))


def test_parse_groups_by_query_in_file_order():
    text = "1 qid:b 1:1\n0 qid:a 1:2\n3 qid:b 2:3\n"
    qs = parse_letor(io.StringIO(text))
    assert [q.qid for q in qs] == ["b", "a"]
    assert qs[0].labels.tolist() == [1, 3]
    assert qs[0].features.tolist() == [[1.0, 0.0], [0.0, 3.0]]
    assert qs[1].features.shape == (1, 2)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.integers(0, 4),
            st.lists(st.floats(-1e6, 1e6, allow_nan=False, allow_subnormal=False), min_size=3, max_size=3),
        ),
        min_size=1,
        max_size=6,
    )
)
def test_round_trip(docs):
    q = Query("x", np.array([d[1] for d in docs]), np.array([d[0] for d in docs]))
    buf = io.StringIO()
    write_letor([q], buf)
    (back,) = parse_letor(io.StringIO(buf.getvalue()), n_features=3)
    assert back == q


def test_letor_directory_round_trip(tmp_path):
    ds = generate_synthetic(SyntheticSpec(n_train=3, n_validation=2, n_test=2, docs_per_query=4, n_features=3, signal_dims=1))
    for part, name in (("train", "train.txt"), ("validation", "vali.txt"), ("test", "test.txt")):
        with open(tmp_path / name, "w") as fh:
            write_letor(ds.partition(part), fh)
    assert load_letor_dir(str(tmp_path)) == ds


def _dump(ds):
    buf = io.StringIO()
    for part in ("train", "validation", "test"):
        write_letor(ds.partition(part), buf)
    return buf.getvalue()


def test_synthetic_is_deterministic():
    spec = SyntheticSpec(n_train=20, n_validation=5, n_test=5, seed=11)
    assert _dump(generate_synthetic(spec)) == _dump(generate_synthetic(spec))
    assert _dump(generate_synthetic(spec)) != _dump(generate_synthetic(SyntheticSpec(n_train=20, n_validation=5, n_test=5, seed=12)))


def test_synthetic_invariants():
    ds = generate_synthetic(SyntheticSpec(n_train=30, n_validation=5, n_test=5))
    for q in ds.all_queries():
        assert q.features.shape == (10, 8)
        assert set(q.labels.tolist()) <= {0, 1, 2, 3, 4}


def test_synthetic_rejects_single_feature():
    with pytest.raises(ValueError):
        SyntheticSpec(n_features=1, signal_dims=1)
    with pytest.raises(ValueError):
        SyntheticSpec(signal=1.5)


def test_perfect_signal_is_perfectly_rankable():
    ds = generate_synthetic(SyntheticSpec(signal=1.0, seed=3))
    labels = label_table(ds.all_queries())
    model = train_logging_policy(ds.train, 1.0, seed=0)
    assert ndcg(model, ds.test, labels) == pytest.approx(1.0, abs=1e-12)


def test_zero_signal_matches_random_ranking():
    ds = generate_synthetic(SyntheticSpec(n_test=400, signal=0.0, seed=4))
    labels = label_table(ds.all_queries())
    model = train_logging_policy(ds.train, 1.0, seed=0)
    diffs = np.array([ndcg(model, [q], labels) - ndcg(UniformPolicy(), [q], labels) for q in ds.test if q.labels.any()])
    se = diffs.std(ddof=1) / np.sqrt(len(diffs))
    assert abs(diffs.mean()) < 3 * se


@pytest.mark.parametrize("alpha,label,expected", [(0.2, 4, 1.0), (0.025, 0, 0.2), (0.2, 1, 0.4)])
def test_relevance_from_labels(alpha, label, expected):
    table = relevance_from_labels([Query("q", np.zeros((1, 2)), np.array([label]))], alpha)
    assert table.value("q", 0) == pytest.approx(expected)


def test_relevance_from_labels_bounds():
    with pytest.raises(ValueError):
        relevance_from_labels([], 0.25)
    ds = generate_synthetic(SyntheticSpec(n_train=10, n_validation=2, n_test=2))
    table = relevance_from_labels(ds, 0.2)
    for q in ds.all_queries():
        row = table.row(q.qid)
        assert np.all((row >= 0.2) & (row <= 1.0))


def test_dataset_rejects_mixed_dimensions():
    a = Query("a", np.zeros((2, 3)), np.array([0, 1]))
    b = Query("b", np.zeros((2, 4)), np.array([0, 1]))
    with pytest.raises(ValueError):
        Dataset((a,), (b,), ())


def test_key_value_config():
    text = "# comment\nsignal = 0.5\n\nn_train=12 # trailing\n"
    values = read_key_values(text)
    assert values == {"signal": "0.5", "n_train": "12"}
    spec = SyntheticSpec.from_mapping(values)
    assert spec.signal == 0.5 and spec.n_train == 12
    with pytest.raises(ParseError):
        read_key_values("novalue\n")
    with pytest.raises(KeyError):
        SyntheticSpec.from_mapping({"bogus": "1"})
