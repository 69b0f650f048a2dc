"""Frame-level anomaly scoring of test videos against a fitted bundle."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_matrix
from .bank_search import SearchIndex, knn_score_batch
from .core import as_training_view
from .exceptions import InvalidInputError
from .io import ModelBundle


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Discrete Gaussian truncated at ``ceil(3 sigma)`` and normalised to sum 1."""
    if not sigma > 0:
        raise InvalidInputError(f"sigma must be positive, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def gaussian_smooth(series, sigma: float) -> np.ndarray:
    """Gaussian-smooth a 1-D series with half-sample symmetric padding.

    Evaluated as ``x[t] + sum_i w_i (x[t+i] - x[t])`` which equals the plain
    convolution because the weights sum to one, but leaves constant runs
    bit-for-bit unchanged.
    """
    x = np.asarray(series, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise InvalidInputError("cannot smooth an empty series")
    w = gaussian_kernel(sigma)
    radius = (w.size - 1) // 2
    padded = np.pad(x, radius, mode="symmetric")
    acc = np.zeros_like(x)
    for i, wi in enumerate(w):
        acc += wi * (padded[i:i + x.size] - x)
    return x + acc


@dataclass(frozen=True, eq=False)
class ScoreSeries:
    video_id: str
    raw: np.ndarray
    smoothed: np.ndarray
    detail: dict | None = None

    @property
    def frame_count(self) -> int:
        return self.raw.shape[0]


def _modality_scores(bundle, modality, X, k, exclude_exact):
    bank = bundle.bank(modality)
    X = check_matrix(X, f"{modality} features", n_features=bank.dim)
    if k > bank.size:
        raise InvalidInputError(f"k={k} exceeds the {modality} bank size {bank.size}")
    if X.shape[0] == 0:
        return np.empty(0)
    return knn_score_batch(SearchIndex(bank.matrix), X, k, exclude_exact)


def score_objects(bundle: ModelBundle, app, mot, k: int | None = None, *, modalities=("app", "mot"),
                  exclude_exact: bool = True) -> dict:
    """Per-object k-NN scores, their normalised values and the combined score."""
    k = bundle.hyperparams.k if k is None else int(k)
    if not modalities or set(modalities) - {"app", "mot"}:
        raise InvalidInputError(f"modalities must be a non-empty subset of ('app', 'mot'), got {modalities!r}")
    out, combined = {}, None
    for mod, X in (("app", app), ("mot", mot)):
        raw = _modality_scores(bundle, mod, X, k, exclude_exact)
        norm = bundle.stats(mod).normalize(raw)
        out[f"s_{mod}"] = raw
        out[f"z_{mod}"] = norm
        if mod in modalities:
            combined = norm.copy() if combined is None else combined + norm
    out["combined"] = combined
    return out


def frame_scores(frame_count: int, frame_idx, object_scores) -> np.ndarray:
    """Max-aggregate object scores into frames; empty frames get the video's minimum."""
    raw = np.full(frame_count, -np.inf)
    np.maximum.at(raw, np.asarray(frame_idx, dtype=np.int64), np.asarray(object_scores, dtype=np.float64))
    empty = np.isneginf(raw)
    if empty.all():
        return np.zeros(frame_count)
    raw[empty] = raw[~empty].min()
    return raw


def score_view(bundle: ModelBundle, data, hyperparams=None, *, modalities=("app", "mot"), exclude_exact=True,
               detail=False) -> dict:
    """Score every video of a manifest or training view; returns ``{video_id: ScoreSeries}``."""
    view = as_training_view(data)
    hp = hyperparams or bundle.hyperparams
    if view.d_app != bundle.d_app or view.d_mot != bundle.d_mot:
        raise InvalidInputError(
            f"feature dims ({view.d_app}, {view.d_mot}) do not match the bundle ({bundle.d_app}, {bundle.d_mot})"
        )
    obj = score_objects(bundle, view.app, view.mot, hp.k, modalities=modalities, exclude_exact=exclude_exact)
    result = {}
    for pos, video in enumerate(view.videos):
        rows = np.flatnonzero(view.video_idx == pos)
        raw = frame_scores(video.frame_count, view.frame_idx[rows], obj["combined"][rows])
        smoothed = gaussian_smooth(raw, hp.smoothing_sigma) if raw.size else raw.copy()
        info = None
        if detail:
            info = {"frame_idx": view.frame_idx[rows], "object_idx": view.object_idx[rows],
                    **{key: obj[key][rows] for key in ("s_app", "s_mot", "combined")}}
        result[video.video_id] = ScoreSeries(video.video_id, raw, smoothed, info)
    return result


def score_video(bundle: ModelBundle, data, video_id: str | None = None, hyperparams=None, **kwargs) -> ScoreSeries:
    """Score a single video. ``data`` may hold several videos when ``video_id`` selects one."""
    view = as_training_view(data)
    if video_id is None:
        if len(view.videos) != 1:
            raise InvalidInputError("video_id is required when data holds several videos")
        video_id = view.videos[0].video_id
    return score_view(bundle, view.select_videos([video_id]), hyperparams, **kwargs)[video_id]
