import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.metrics import roc_auc_score

from cknn import (
    CKNN,
    InvalidInputError,
    MetricError,
    SynthConfig,
    TrainingView,
    auroc,
    build_protocol,
    generate,
    mean_video_auroc,
    run_protocol,
)
from cknn.eval import bank_leakage

from conftest import make_manifest


def pairwise_oracle(s, y):
    pos, neg = s[y == 1], s[y == 0]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_trivial_cases():
    assert auroc([0.1, 0.9], [0, 1]) == 1.0
    assert auroc([0.9, 0.1], [0, 1]) == 0.0
    assert auroc([3.0] * 7, [0, 1, 1, 0, 1, 0, 0]) == 0.5


def test_random_vectors_match_oracle(rng):
    for _ in range(50):
        s = rng.integers(0, 20, size=100).astype(float)
        y = rng.integers(0, 2, size=100)
        assert abs(auroc(s, y) - pairwise_oracle(s, y)) <= 1e-12


def test_single_class_and_bad_input():
    with pytest.raises(MetricError):
        auroc([1.0, 2.0], [1, 1])
    with pytest.raises(InvalidInputError):
        auroc([1.0, 2.0], [0, 2])
    with pytest.raises(InvalidInputError):
        auroc([1.0], [0, 1])


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=50, unique=True), st.randoms())
def test_monotone_transform_and_complement(scores, r):
    s = np.array(scores)
    y = np.array([r.randint(0, 1) for _ in s])
    y[0], y[1] = 0, 1
    a = auroc(s, y)
    ranks = np.argsort(np.argsort(s))
    assert auroc(8.0 * s, y) == pytest.approx(a, abs=1e-12)
    assert auroc(np.exp(ranks / 10.0), y) == pytest.approx(a, abs=1e-12)
    assert a + auroc(-s, y) == pytest.approx(1.0, abs=1e-12)


def test_mean_video_auroc():
    assert mean_video_auroc({"a": np.array([0.0, 1.0])}, {"a": np.array([0, 1])}).mean == 1.0
    res = mean_video_auroc({"a": np.array([0.0, 1.0]), "b": np.array([2.0, 2.0])},
                           {"a": np.array([0, 1]), "b": np.array([1, 0])})
    assert res.mean == 0.75 and res.per_video == {"a": 1.0, "b": 0.5}


def test_single_class_videos_are_skipped(caplog):
    res = mean_video_auroc({"a": np.array([0.0, 1.0]), "b": np.array([1.0, 2.0])},
                           {"a": np.array([0, 1]), "b": np.array([0, 0])})
    assert res.skipped == ["b"] and res.mean == 1.0
    with pytest.raises(MetricError):
        mean_video_auroc({"b": np.array([1.0, 2.0])}, {"b": np.array([1, 1])})
    with pytest.raises(InvalidInputError):
        mean_video_auroc({"a": np.array([0.0])}, {})


def test_protocol_structure(rng):
    train = make_manifest(rng, n_videos=2, prefix="tr")
    test = make_manifest(rng, n_videos=3, labels=True, prefix="te")
    partial = build_protocol(train, test, "partial")
    assert len(partial.runs) == 1
    assert partial.training_view(partial.runs[0]).n_objects == test.n_objects
    merge = build_protocol(train, test, "merge")
    assert merge.training_view(merge.runs[0]).n_objects == train.n_objects + test.n_objects
    plus = build_protocol(train, test, "merge_plus")
    assert len(plus.runs) == 3
    for run, vid in zip(plus.runs, test.video_ids):
        assert run.eval_videos == (vid,)
        assert set(test.video_ids) - set(run.train_videos) == {vid}
        assert set(train.video_ids) <= set(run.train_videos)
        assert isinstance(plus.training_view(run), TrainingView)
    assert build_protocol(None, test, "partial").runs == partial.runs


def test_protocol_errors(rng):
    test = make_manifest(rng, n_videos=2, labels=True)
    with pytest.raises(InvalidInputError):
        build_protocol(test, test, "merge")
    with pytest.raises(InvalidInputError):
        build_protocol(None, test, "merge")
    with pytest.raises(InvalidInputError):
        build_protocol(None, test, "both")


def test_merge_plus_banks_exclude_evaluated_video():
    train, test, _ = generate(SynthConfig(seed=3, n_train_videos=2, n_test_videos=3, frames_per_video=60))
    plan = build_protocol(train, test, "merge_plus")
    res = run_protocol(plan, lambda: CKNN(p=100, tau=10))
    assert len(res.runs) == 3
    for r in res.runs:
        assert r.leaked_rows == {"app": 0, "mot": 0}


def test_merge_mode_banks_contain_test_objects():
    train, test, _ = generate(SynthConfig(seed=3, n_train_videos=2, n_test_videos=2, frames_per_video=60))
    plan = build_protocol(train, test, "merge")
    est = CKNN(p=100, tau=0).fit(plan.training_view(plan.runs[0]))
    assert bank_leakage(est.bundle_, test.video_ids)["app"] == test.n_objects


def test_suite_matches_independent_metric_script():
    train, test, _ = generate(SynthConfig(seed=8, n_train_videos=4, n_test_videos=20, frames_per_video=80))
    plan = build_protocol(train, test, "merge")
    res = run_protocol(plan, lambda: CKNN(seed=8, p=100))
    est = CKNN(seed=8, p=100).fit(plan.training_view(plan.runs[0]))
    series = est.score_videos(test)
    oracle = [roc_auc_score(v.labels, series[v.video_id].smoothed) for v in test.videos if 0 < v.labels.sum() < len(v.labels)]
    assert len(oracle) == len(res.per_video)
    assert abs(res.mean - float(np.mean(oracle))) <= 1e-12
