"""Domain types, seeded RNG streams and rank-based selection."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .exceptions import InvalidInputError

__all__ = [
    "Hyperparams",
    "ObjectRecord",
    "VideoInfo",
    "VideoSlot",
    "DatasetManifest",
    "TrainingView",
    "make_rng",
    "select_top_fraction",
]

# Stream identifiers for make_rng. Adding a purpose must not renumber existing ones.
_PURPOSES = {
    "sample": 1,
    "gmm_app": 2,
    "gmm_mot": 3,
    "knn_app": 4,
    "knn_mot": 5,
    "coreset": 6,
    "synth": 7,
    "bench": 8,
}


def make_rng(seed: int, purpose: str) -> np.random.Generator:
    """Return an independent generator for ``purpose`` derived from ``seed``.

    Any 64-bit integer (including negative values) is accepted; the stream for a
    given ``(seed, purpose)`` pair never changes.
    """
    try:
        key = _PURPOSES[purpose]
    except KeyError:
        raise InvalidInputError(f"unknown RNG purpose {purpose!r}") from None
    entropy = int(seed) & 0xFFFF_FFFF_FFFF_FFFF
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy, spawn_key=(key,))))


def select_top_fraction(scores, tau: float) -> np.ndarray:
    """Indices of the ``floor(tau/100 * N)`` highest scores, sorted ascending.

    Among equal scores the later index is removed first, so the kept set is
    always a prefix of the stable ascending order.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if not 0.0 <= tau <= 100.0:
        raise InvalidInputError(f"tau must lie in [0, 100], got {tau}")
    if np.isnan(scores).any():
        raise InvalidInputError("scores contain NaN")
    if not np.isfinite(scores).all():
        raise InvalidInputError("scores contain infinite values")
    n = scores.shape[0]
    n_remove = removal_count(n, tau)
    if n_remove == 0:
        return np.empty(0, dtype=np.int64)
    order = np.argsort(scores, kind="stable")
    return np.sort(order[n - n_remove:]).astype(np.int64)


def removal_count(n: int, tau: float) -> int:
    # tau * n first keeps integer percentages exact (e.g. 15 * 200 / 100 == 30).
    return int(np.floor(tau * n / 100.0))


@dataclass(frozen=True)
class Hyperparams:
    k: int = 4
    n_components: int = 8
    tau: float = 25.0
    p: float = 1.0
    smoothing_sigma: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise InvalidInputError(f"k must be a positive integer, got {self.k}")
        if int(self.n_components) != self.n_components or self.n_components < 1:
            raise InvalidInputError(f"n_components must be a positive integer, got {self.n_components}")
        if not 0.0 <= self.tau <= 100.0:
            raise InvalidInputError(f"tau must lie in [0, 100], got {self.tau}")
        if not 0.0 < self.p <= 100.0:
            raise InvalidInputError(f"p must lie in (0, 100], got {self.p}")
        if not self.smoothing_sigma > 0:
            raise InvalidInputError(f"smoothing_sigma must be positive, got {self.smoothing_sigma}")
        if not -(2**63) <= int(self.seed) < 2**64:
            raise InvalidInputError("seed must fit in 64 bits")
        object.__setattr__(self, "k", int(self.k))
        object.__setattr__(self, "n_components", int(self.n_components))
        object.__setattr__(self, "tau", float(self.tau))
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "smoothing_sigma", float(self.smoothing_sigma))
        object.__setattr__(self, "seed", int(self.seed))

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def with_(self, **changes) -> "Hyperparams":
        return replace(self, **changes)


class ObjectRecord(NamedTuple):
    video_id: str
    frame_idx: int
    object_idx: int
    bbox: tuple | None
    app_feature: np.ndarray
    mot_feature: np.ndarray


@dataclass(frozen=True, eq=False)
class VideoInfo:
    video_id: str
    frame_count: int
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.frame_count < 0:
            raise InvalidInputError(f"video {self.video_id!r}: negative frame count")
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (self.frame_count,):
                raise InvalidInputError(
                    f"video {self.video_id!r}: {labels.size} labels for {self.frame_count} frames"
                )
            if not np.isin(labels, (0, 1)).all():
                raise InvalidInputError(f"video {self.video_id!r}: labels must be 0 or 1")
            labels = labels.astype(np.uint8)
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    def __eq__(self, other):
        if not isinstance(other, VideoInfo):
            return NotImplemented
        if (self.video_id, self.frame_count) != (other.video_id, other.frame_count):
            return False
        if self.labels is None or other.labels is None:
            return self.labels is None and other.labels is None
        return bool(np.array_equal(self.labels, other.labels))


class VideoSlot(NamedTuple):
    """A video as seen by training code: no label field exists."""

    video_id: str
    frame_count: int


def _frozen(a, dtype, shape=None):
    a = np.array(a, dtype=dtype, copy=True)
    if shape is not None:
        a = a.reshape(shape)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class _ObjectTable:
    """Columnar object storage shared by manifests and training views."""

    d_app: int
    d_mot: int
    videos: tuple
    video_idx: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    frame_idx: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    object_idx: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    bbox: np.ndarray | None = None
    app: np.ndarray | None = None
    mot: np.ndarray | None = None

    def __post_init__(self):
        if int(self.d_app) < 1 or int(self.d_mot) < 1:
            raise InvalidInputError("feature dimensions must be positive")
        object.__setattr__(self, "d_app", int(self.d_app))
        object.__setattr__(self, "d_mot", int(self.d_mot))
        object.__setattr__(self, "videos", tuple(self.videos))
        n = len(self.video_idx)
        object.__setattr__(self, "video_idx", _frozen(self.video_idx, np.int64, (n,)))
        object.__setattr__(self, "frame_idx", _frozen(self.frame_idx, np.int64, (n,)))
        object.__setattr__(self, "object_idx", _frozen(self.object_idx, np.int64, (n,)))
        bbox = np.full((n, 4), np.nan) if self.bbox is None else self.bbox
        app = np.empty((n, self.d_app)) if self.app is None and n == 0 else self.app
        mot = np.empty((n, self.d_mot)) if self.mot is None and n == 0 else self.mot
        if app is None or mot is None:
            raise InvalidInputError("feature matrices are required when objects are present")
        app, mot = np.asarray(app, dtype=np.float64), np.asarray(mot, dtype=np.float64)
        if app.ndim != 2 or app.shape != (n, self.d_app):
            raise InvalidInputError(f"appearance features have shape {app.shape}, expected ({n}, {self.d_app})")
        if mot.ndim != 2 or mot.shape != (n, self.d_mot):
            raise InvalidInputError(f"motion features have shape {mot.shape}, expected ({n}, {self.d_mot})")
        object.__setattr__(self, "bbox", _frozen(bbox, np.float64, (n, 4)))
        object.__setattr__(self, "app", _frozen(app, np.float64))
        object.__setattr__(self, "mot", _frozen(mot, np.float64))
        self._validate()

    def _validate(self):
        n = self.n_objects
        ids = [v.video_id for v in self.videos]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("duplicate video ids")
        if n == 0:
            return
        if self.video_idx.min() < 0 or self.video_idx.max() >= len(self.videos):
            raise InvalidInputError("object references an unknown video")
        if self.frame_idx.min() < 0 or self.object_idx.min() < 0:
            raise InvalidInputError("frame and object indices must be non-negative")
        counts = np.array([v.frame_count for v in self.videos], dtype=np.int64)
        bad = np.flatnonzero(self.frame_idx >= counts[self.video_idx])
        if bad.size:
            i = int(bad[0])
            raise InvalidInputError(
                f"object {i}: frame {self.frame_idx[i]} outside video "
                f"{self.videos[self.video_idx[i]].video_id!r} of {counts[self.video_idx[i]]} frames"
            )
        for name, mat in (("appearance", self.app), ("motion", self.mot)):
            finite = np.isfinite(mat).all(axis=1)
            if not finite.all():
                raise InvalidInputError(f"object {int(np.argmin(finite))}: non-finite {name} feature")
        keys = np.stack([self.video_idx, self.frame_idx, self.object_idx], axis=1)
        _, first, counts = np.unique(keys, axis=0, return_index=True, return_counts=True)
        if (counts > 1).any():
            dup = keys[first[np.argmax(counts > 1)]]
            raise InvalidInputError(
                f"duplicate object key ({self.videos[dup[0]].video_id!r}, {dup[1]}, {dup[2]})"
            )

    @property
    def n_objects(self) -> int:
        return int(self.video_idx.shape[0])

    @property
    def video_ids(self) -> list[str]:
        return [v.video_id for v in self.videos]

    def video_position(self, video_id: str) -> int:
        for i, v in enumerate(self.videos):
            if v.video_id == video_id:
                return i
        raise KeyError(video_id)

    def object_video_ids(self) -> np.ndarray:
        return np.array(self.video_ids, dtype=object)[self.video_idx] if self.n_objects else np.empty(0, object)

    def objects_in(self, video_id: str) -> np.ndarray:
        """Row indices of the objects belonging to ``video_id``."""
        return np.flatnonzero(self.video_idx == self.video_position(video_id))

    def records(self) -> Iterator[ObjectRecord]:
        ids = self.video_ids
        for i in range(self.n_objects):
            box = self.bbox[i]
            yield ObjectRecord(
                ids[self.video_idx[i]],
                int(self.frame_idx[i]),
                int(self.object_idx[i]),
                None if np.isnan(box).all() else tuple(float(b) for b in box),
                self.app[i],
                self.mot[i],
            )

    @property
    def objects(self) -> list[ObjectRecord]:
        return list(self.records())

    def _take(self, videos, keep_videos: Sequence[int]):
        """Restrict to the given video positions, renumbering them in order."""
        remap = np.full(len(self.videos), -1, dtype=np.int64)
        remap[list(keep_videos)] = np.arange(len(keep_videos))
        rows = np.flatnonzero(remap[self.video_idx] >= 0) if self.n_objects else np.empty(0, np.int64)
        return type(self)(
            d_app=self.d_app,
            d_mot=self.d_mot,
            videos=videos,
            video_idx=remap[self.video_idx[rows]],
            frame_idx=self.frame_idx[rows],
            object_idx=self.object_idx[rows],
            bbox=self.bbox[rows],
            app=self.app[rows],
            mot=self.mot[rows],
        )

    def select_videos(self, video_ids: Iterable[str]):
        wanted = set(video_ids)
        unknown = wanted - set(self.video_ids)
        if unknown:
            raise InvalidInputError(f"unknown video ids: {sorted(unknown)}")
        keep = [i for i, v in enumerate(self.videos) if v.video_id in wanted]
        return self._take([self.videos[i] for i in keep], keep)

    def drop_videos(self, video_ids: Iterable[str]):
        dropped = set(video_ids)
        return self.select_videos([v for v in self.video_ids if v not in dropped])

    def _same_objects(self, other) -> bool:
        return (
            self.d_app == other.d_app
            and self.d_mot == other.d_mot
            and all(
                np.array_equal(getattr(self, name), getattr(other, name), equal_nan=(name == "bbox"))
                for name in ("video_idx", "frame_idx", "object_idx", "bbox", "app", "mot")
            )
        )


@dataclass(frozen=True, eq=False)
class TrainingView(_ObjectTable):
    """Objects plus video lengths; carries no labels by construction."""

    def __post_init__(self):
        object.__setattr__(self, "videos", tuple(VideoSlot(str(v[0]), int(v[1])) for v in self.videos))
        super().__post_init__()

    def __eq__(self, other):
        if not isinstance(other, TrainingView):
            return NotImplemented
        return self.videos == other.videos and self._same_objects(other)

    @classmethod
    def concat(cls, views: Sequence["TrainingView"]) -> "TrainingView":
        return _concat(cls, views)


@dataclass(frozen=True, eq=False)
class DatasetManifest(_ObjectTable):
    """Videos (optionally with per-frame labels) and their detected objects."""

    def __post_init__(self):
        videos = tuple(
            v if isinstance(v, VideoInfo) else VideoInfo(str(v[0]), int(v[1]), v[2] if len(v) > 2 else None)
            for v in self.videos
        )
        object.__setattr__(self, "videos", videos)
        labelled = [v.labels is not None for v in videos]
        if any(labelled) and not all(labelled):
            raise InvalidInputError("labels must be present for all videos or for none")
        super().__post_init__()

    @property
    def has_labels(self) -> bool:
        return bool(self.videos) and self.videos[0].labels is not None

    def labels_of(self, video_id: str) -> np.ndarray:
        labels = self.videos[self.video_position(video_id)].labels
        if labels is None:
            raise InvalidInputError(f"video {video_id!r} has no labels")
        return labels

    def training_view(self) -> TrainingView:
        return TrainingView(
            d_app=self.d_app,
            d_mot=self.d_mot,
            videos=[VideoSlot(v.video_id, v.frame_count) for v in self.videos],
            video_idx=self.video_idx,
            frame_idx=self.frame_idx,
            object_idx=self.object_idx,
            bbox=self.bbox,
            app=self.app,
            mot=self.mot,
        )

    def __eq__(self, other):
        if not isinstance(other, DatasetManifest):
            return NotImplemented
        return self.videos == other.videos and self._same_objects(other)

    @classmethod
    def from_records(cls, d_app: int, d_mot: int, videos, records: Iterable[ObjectRecord]) -> "DatasetManifest":
        videos = [v if isinstance(v, VideoInfo) else VideoInfo(*v) for v in videos]
        pos = {v.video_id: i for i, v in enumerate(videos)}
        records = list(records)
        try:
            vidx = [pos[r.video_id] for r in records]
        except KeyError as exc:
            raise InvalidInputError(f"object references unknown video {exc.args[0]!r}") from None
        for r in records:
            if len(r.app_feature) != d_app or len(r.mot_feature) != d_mot:
                raise InvalidInputError(
                    f"object ({r.video_id!r}, {r.frame_idx}, {r.object_idx}): feature length mismatch"
                )
        return cls(
            d_app=d_app,
            d_mot=d_mot,
            videos=videos,
            video_idx=vidx,
            frame_idx=[r.frame_idx for r in records],
            object_idx=[r.object_idx for r in records],
            bbox=[(np.nan,) * 4 if r.bbox is None else r.bbox for r in records] if records else None,
            app=np.array([r.app_feature for r in records], dtype=np.float64).reshape(len(records), d_app),
            mot=np.array([r.mot_feature for r in records], dtype=np.float64).reshape(len(records), d_mot),
        )

    @classmethod
    def concat(cls, manifests: Sequence["DatasetManifest"]) -> "DatasetManifest":
        return _concat(cls, manifests)


def _concat(cls, tables):
    if not tables:
        raise InvalidInputError("nothing to concatenate")
    d_app, d_mot = tables[0].d_app, tables[0].d_mot
    if any(t.d_app != d_app or t.d_mot != d_mot for t in tables):
        raise InvalidInputError("cannot concatenate tables with different feature dimensions")
    videos, offset, vidx = [], 0, []
    for t in tables:
        videos.extend(t.videos)
        vidx.append(t.video_idx + offset)
        offset += len(t.videos)
    return cls(
        d_app=d_app,
        d_mot=d_mot,
        videos=videos,
        video_idx=np.concatenate(vidx),
        frame_idx=np.concatenate([t.frame_idx for t in tables]),
        object_idx=np.concatenate([t.object_idx for t in tables]),
        bbox=np.concatenate([t.bbox for t in tables]),
        app=np.concatenate([t.app for t in tables]),
        mot=np.concatenate([t.mot for t in tables]),
    )


def as_training_view(data) -> TrainingView:
    if isinstance(data, TrainingView):
        return data
    if isinstance(data, DatasetManifest):
        return data.training_view()
    raise InvalidInputError(f"expected a DatasetManifest or TrainingView, got {type(data).__name__}")
