"""Per-video AUROC and the partial / merge / merge+ evaluation protocols."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import rankdata

from .core import DatasetManifest, TrainingView, as_training_view
from .exceptions import CKNNError, InvalidInputError, MetricError

logger = logging.getLogger(__name__)

MODES = ("partial", "merge", "merge_plus")


def auroc(scores, labels) -> float:
    """Area under the ROC curve from average ranks; tied pairs count one half."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise InvalidInputError(f"{s.size} scores but {y.size} labels")
    if not np.isin(y, (0, 1)).all():
        raise InvalidInputError("labels must be 0 or 1")
    if np.isnan(s).any():
        raise InvalidInputError("scores contain NaN")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC is undefined when only one class is present")
    ranks = rankdata(s, method="average")
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


@dataclass
class VideoAurocs:
    per_video: dict
    mean: float
    skipped: list = field(default_factory=list)


def mean_video_auroc(series: dict, labels: dict) -> VideoAurocs:
    """AUROC of each video's smoothed scores, then the unweighted mean.

    ``series`` maps video ids to ScoreSeries (or plain score arrays). Videos
    whose labels are all one class are skipped and listed in ``skipped``.
    """
    per_video, skipped = {}, []
    for vid, s in series.items():
        if vid not in labels or labels[vid] is None:
            raise InvalidInputError(f"no labels for video {vid!r}")
        scores = getattr(s, "smoothed", s)
        try:
            per_video[vid] = auroc(scores, labels[vid])
        except MetricError:
            skipped.append(vid)
    if skipped:
        logger.warning("skipped %d single-class video(s): %s", len(skipped), ", ".join(skipped))
    if not per_video:
        raise MetricError("no video has both normal and abnormal frames")
    return VideoAurocs(per_video, float(np.mean(list(per_video.values()))), skipped)


@dataclass(frozen=True)
class ProtocolRun:
    train_videos: tuple
    eval_videos: tuple


@dataclass(frozen=True, eq=False)
class ProtocolPlan:
    """Runs of one protocol over a label-free training pool and a labelled test split."""

    mode: str
    runs: tuple
    pool: TrainingView
    test: DatasetManifest

    def training_view(self, run: ProtocolRun) -> TrainingView:
        return self.pool.select_videos(run.train_videos)

    def eval_manifest(self, run: ProtocolRun) -> DatasetManifest:
        return self.test.select_videos(run.eval_videos)


def build_protocol(train: DatasetManifest | TrainingView | None, test: DatasetManifest, mode: str) -> ProtocolPlan:
    if mode not in MODES:
        raise InvalidInputError(f"mode must be one of {MODES}, got {mode!r}")
    if not isinstance(test, DatasetManifest):
        raise InvalidInputError("the test split must be a DatasetManifest")
    test_view = test.training_view()
    test_ids = tuple(test.video_ids)
    if train is None:
        if mode != "partial":
            raise InvalidInputError(f"mode {mode!r} needs a train split")
        pool, train_ids = test_view, ()
    else:
        train_view = as_training_view(train)
        train_ids = tuple(train_view.video_ids)
        overlap = set(train_ids) & set(test_ids)
        if overlap:
            raise InvalidInputError(f"video ids appear in both splits: {sorted(overlap)}")
        pool = TrainingView.concat([train_view, test_view])
    if mode == "partial":
        runs = (ProtocolRun(test_ids, test_ids),)
    elif mode == "merge":
        runs = (ProtocolRun(train_ids + test_ids, test_ids),)
    else:
        runs = tuple(
            ProtocolRun(train_ids + tuple(v for v in test_ids if v != held_out), (held_out,))
            for held_out in test_ids
        )
    return ProtocolPlan(mode, runs, pool, test)


@dataclass
class RunResult:
    run: ProtocolRun
    per_video: dict
    skipped: list
    n_train_objects: int
    bank_sizes: dict
    leaked_rows: dict


@dataclass
class ProtocolResult:
    mode: str
    runs: list
    per_video: dict
    mean: float
    skipped: list


def bank_leakage(bundle, video_ids) -> dict:
    """Number of bank rows per modality whose provenance lies in ``video_ids``."""
    ids = np.array(sorted(video_ids), dtype=str)
    return {mod: int(np.isin(bundle.bank(mod).video_ids, ids).sum()) for mod in ("app", "mot")}


def run_protocol(plan: ProtocolPlan, make_estimator: Callable[[], object]) -> ProtocolResult:
    """Fit a fresh estimator per run, score its eval videos and average the AUROCs."""
    runs, per_video, skipped = [], {}, []
    for run in plan.runs:
        est = make_estimator().fit(plan.training_view(run))
        test = plan.eval_manifest(run)
        series = est.score_videos(test.training_view())
        labels = {v.video_id: v.labels for v in test.videos}
        per_run, run_skipped = {}, []
        try:
            res = mean_video_auroc(series, labels)
            per_run, run_skipped = res.per_video, res.skipped
        except MetricError:
            run_skipped = list(series)
        leaked = bank_leakage(est.bundle_, run.eval_videos)
        if plan.mode == "merge_plus" and any(leaked.values()):
            raise CKNNError(f"merge+ run for {run.eval_videos} has evaluated objects in its banks: {leaked}")
        runs.append(RunResult(run, per_run, run_skipped, plan.training_view(run).n_objects,
                              {m: est.bundle_.bank(m).size for m in ("app", "mot")}, leaked))
        per_video.update(per_run)
        skipped.extend(run_skipped)
    if not per_video:
        raise MetricError("no evaluated video has both normal and abnormal frames")
    return ProtocolResult(plan.mode, runs, per_video, float(np.mean(list(per_video.values()))), skipped)
