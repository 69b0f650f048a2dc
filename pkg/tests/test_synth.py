import json
import warnings

import numpy as np
import pytest
from scipy.spatial.distance import cdist, pdist

from cknn import CKNN, InvalidInputError, SynthConfig, auroc, generate
from cknn.io import dataset_to_bytes
from cknn.synth import anomaly_center


def test_no_events():
    train, test, truth = generate(SynthConfig(anomaly_event_rate=0, n_train_videos=2, n_test_videos=2))
    assert truth.train.abnormal.sum() == 0 and truth.test.abnormal.sum() == 0
    assert all(v.labels.sum() == 0 for v in test.videos)
    assert not train.has_labels and test.has_labels


def test_labels_are_union_of_event_spans():
    train, test, truth = generate(SynthConfig(seed=2, n_train_videos=1, n_test_videos=6))
    for v in test.videos:
        expected = np.zeros(v.frame_count, np.uint8)
        for e in truth.events:
            if e["video_id"] == v.video_id:
                expected[e["start"]:e["start"] + e["duration"]] = 1
        assert np.array_equal(v.labels, expected)


def test_single_ten_frame_event_labels_ten_contiguous_frames():
    for seed in range(200):
        cfg = SynthConfig(seed=seed, n_train_videos=0, n_test_videos=1, anomaly_event_rate=1.0,
                          event_duration_frames=10.0)
        _, test, truth = generate(cfg)
        if len(truth.events) == 1 and truth.events[0]["duration"] == 10:
            labels = test.videos[0].labels
            on = np.flatnonzero(labels)
            assert on.size == 10 and on[-1] - on[0] == 9
            return
    pytest.fail("no seed produced a single 10-frame event")


def test_deterministic():
    cfg = SynthConfig(seed=5, n_train_videos=2, n_test_videos=2)
    a, b = generate(cfg), generate(cfg)
    assert dataset_to_bytes(a[0]) == dataset_to_bytes(b[0])
    assert dataset_to_bytes(a[1]) == dataset_to_bytes(b[1])
    assert a[2].to_json() == b[2].to_json()


def test_contamination_matches_expectation():
    cfg = SynthConfig()
    observed = np.mean([generate(SynthConfig(seed=s, n_test_videos=0))[2].train.abnormal.mean() for s in range(10)])
    expected = cfg.expected_contamination()
    assert abs(observed - expected) <= 0.2 * expected
    assert 0.1 <= expected <= 0.2


def test_events_form_tight_clusters():
    _, test, truth = generate(SynthConfig(seed=1, n_train_videos=0))
    normal = ~truth.test.abnormal
    for mod, X in (("app", test.app), ("mot", test.mot)):
        within, across = [], []
        for eid in np.unique(truth.test.event_id[truth.test.event_id >= 0]):
            pts = X[truth.test.event_id == eid]
            if len(pts) > 1:
                within.append(pdist(pts).mean())
            across.append(cdist(X[normal], pts.mean(axis=0, keepdims=True)).mean())
        assert np.mean(within) < 0.1 * np.mean(across)


def test_anomaly_center_distance(rng):
    centers = rng.normal(size=(5, 4)) * 3
    for _ in range(20):
        c = anomaly_center(centers, 12.0, rng)
        assert np.linalg.norm(centers - c, axis=1).min() == pytest.approx(12.0, abs=1e-9)


def test_overlap_warning():
    with pytest.warns(UserWarning):
        _, _, truth = generate(SynthConfig(anomaly_offset=1.0, n_train_videos=1, n_test_videos=1))
    assert truth.overlap_warning
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert not generate(SynthConfig(n_train_videos=1, n_test_videos=1))[2].overlap_warning


def test_config_validation():
    for bad in (dict(event_duration_frames=0.5), dict(anomaly_offset=0), dict(anomaly_modality="audio"),
                dict(d_app=0), dict(anomaly_event_rate=-1)):
        with pytest.raises(InvalidInputError):
            SynthConfig(**bad)


def test_single_modality_events():
    _, _, truth = generate(SynthConfig(seed=4, anomaly_modality="app", n_train_videos=2))
    assert truth.test.abnormal_app.any() and not truth.test.abnormal_mot.any()
    _, _, truth = generate(SynthConfig(seed=4, anomaly_modality="mixed", n_train_videos=4))
    assert {e["kind"] for e in truth.events} == {"app", "mot"}


def test_truth_sidecar(tmp_path):
    _, _, truth = generate(SynthConfig(n_train_videos=1, n_test_videos=1))
    truth.write(tmp_path / "t.json")
    data = json.loads((tmp_path / "t.json").read_text())
    assert data["config"]["seed"] == 0
    assert len(data["train"]["abnormal"]) == truth.train.abnormal.size
    assert set(data["centers"]) == {"app", "mot"}


def test_anomaly_clusters_fool_raw_knn_but_not_cleansed():
    # a knn pseudo-scorer whose k exceeds the longest event sees past each cluster
    for seed in range(10):
        train, _, truth = generate(SynthConfig(seed=seed, n_test_videos=0))
        flags = truth.train.abnormal
        raw = CKNN(tau=0, p=100, seed=seed).fit(train).score_samples(train)
        assert auroc(raw, flags) < 0.8
        tau = min(100.0, 200.0 * flags.mean())
        est = CKNN(tau=tau, p=100, seed=seed, app_scorer="knn", mot_scorer="knn", pseudo_k=64)
        assert auroc(est.fit(train).score_samples(train), flags) >= 0.95
