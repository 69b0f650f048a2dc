"""Synthetic per-object feature datasets with temporally clustered anomalies.

Normal objects come from a fixed Gaussian mixture in each modality. An anomaly
event places one object per frame, for a geometric number of consecutive
frames, tightly around a fresh center far from every normal mode. Long events
therefore form dense clusters that plain k-NN mistakes for normal data.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import DatasetManifest, VideoInfo, make_rng
from .exceptions import InvalidInputError

ANOMALY_KINDS = ("both", "app", "mot", "mixed")


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_train_videos: int = 8
    n_test_videos: int = 8
    frames_per_video: int = 200
    objects_per_frame_mean: float = 2.0
    d_app: int = 16
    d_mot: int = 8
    n_normal_modes: int = 8
    anomaly_event_rate: float = 3.5
    event_duration_frames: float = 20.0
    anomaly_offset: float = 30.0
    within_event_jitter: float = 0.5
    anomaly_modality: str = "both"
    mode_spread: float = 6.0

    def __post_init__(self):
        if self.event_duration_frames < 1:
            raise InvalidInputError("event_duration_frames must be at least 1")
        if not self.anomaly_offset > 0:
            raise InvalidInputError("anomaly_offset must be positive")
        if self.anomaly_modality not in ANOMALY_KINDS:
            raise InvalidInputError(f"anomaly_modality must be one of {ANOMALY_KINDS}")
        if self.frames_per_video < 1 or self.n_normal_modes < 1 or self.d_app < 1 or self.d_mot < 1:
            raise InvalidInputError("frames, modes and dimensions must be positive")
        if self.n_train_videos < 0 or self.n_test_videos < 0:
            raise InvalidInputError("video counts must be non-negative")
        if self.anomaly_event_rate < 0 or self.objects_per_frame_mean < 0 or self.within_event_jitter < 0:
            raise InvalidInputError("rates and jitter must be non-negative")

    @property
    def duration_cap(self) -> int:
        return max(1, min(self.frames_per_video, int(math.ceil(3 * self.event_duration_frames))))

    def expected_event_length(self) -> float:
        q = 1.0 / self.event_duration_frames
        return (1.0 - (1.0 - q) ** self.duration_cap) / q

    def expected_contamination(self) -> float:
        """Expected share of abnormal objects in a video."""
        abnormal = self.anomaly_event_rate * self.expected_event_length()
        total = abnormal + self.frames_per_video * self.objects_per_frame_mean
        return abnormal / total if total > 0 else 0.0


@dataclass
class SplitTruth:
    abnormal: np.ndarray
    abnormal_app: np.ndarray
    abnormal_mot: np.ndarray
    event_id: np.ndarray
    frame_labels: dict


@dataclass
class SynthTruth:
    config: SynthConfig
    train: SplitTruth
    test: SplitTruth
    events: list = field(default_factory=list)
    overlap_warning: bool = False
    centers: dict = field(default_factory=dict)

    def to_json(self) -> str:
        def split(s):
            return {
                "abnormal": s.abnormal.astype(int).tolist(),
                "abnormal_app": s.abnormal_app.astype(int).tolist(),
                "abnormal_mot": s.abnormal_mot.astype(int).tolist(),
                "event_id": s.event_id.tolist(),
                "frame_labels": {k: v.astype(int).tolist() for k, v in s.frame_labels.items()},
            }

        return json.dumps({
            "config": asdict(self.config),
            "expected_contamination": self.config.expected_contamination(),
            "overlap_warning": self.overlap_warning,
            "centers": {k: v.tolist() for k, v in self.centers.items()},
            "events": self.events,
            "train": split(self.train),
            "test": split(self.test),
        }, separators=(",", ":"))

    def write(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


def anomaly_center(normal_centers: np.ndarray, offset: float, rng) -> np.ndarray:
    """Point along a random direction whose nearest normal center is exactly ``offset`` away."""
    d = normal_centers.shape[1]
    u = rng.normal(size=d)
    u /= np.linalg.norm(u)
    origin = normal_centers.mean(axis=0)
    rel = normal_centers - origin
    proj = rel @ u
    disc = np.maximum(proj ** 2 - (rel ** 2).sum(axis=1) + offset ** 2, 0.0)
    t = float(np.max(proj + np.sqrt(disc)))
    return origin + t * u


def _as_f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def _video(cfg, rng, centers, video_id, first_event_id):
    T = cfg.frames_per_video
    counts = rng.poisson(cfg.objects_per_frame_mean, size=T)
    frames = np.repeat(np.arange(T), counts)
    n_norm = frames.size
    feats = {}
    for mod, d in (("app", cfg.d_app), ("mot", cfg.d_mot)):
        modes = rng.integers(cfg.n_normal_modes, size=n_norm)
        feats[mod] = [centers[mod][modes] + rng.normal(size=(n_norm, d))]
    flags = {"app": [np.zeros(n_norm, bool)], "mot": [np.zeros(n_norm, bool)]}
    event_ids = [np.full(n_norm, -1, dtype=np.int64)]
    frame_list = [frames]
    events = []

    n_events = rng.poisson(cfg.anomaly_event_rate)
    for e in range(n_events):
        dur = int(min(rng.geometric(1.0 / cfg.event_duration_frames), cfg.duration_cap))
        start = int(rng.integers(0, T - dur + 1))
        kind = cfg.anomaly_modality
        if kind == "mixed":
            kind = ("app", "mot")[int(rng.integers(2))]
        abnormal_mods = ("app", "mot") if kind == "both" else (kind,)
        for mod, d in (("app", cfg.d_app), ("mot", cfg.d_mot)):
            if mod in abnormal_mods:
                center = anomaly_center(centers[mod], cfg.anomaly_offset, rng)
                feats[mod].append(center + cfg.within_event_jitter * rng.normal(size=(dur, d)))
            else:
                modes = rng.integers(cfg.n_normal_modes, size=dur)
                feats[mod].append(centers[mod][modes] + rng.normal(size=(dur, d)))
            flags[mod].append(np.full(dur, mod in abnormal_mods))
        event_ids.append(np.full(dur, first_event_id + e, dtype=np.int64))
        frame_list.append(np.arange(start, start + dur))
        events.append({"event_id": first_event_id + e, "video_id": video_id, "start": start,
                       "duration": dur, "kind": kind})

    frames = np.concatenate(frame_list)
    # random order of objects within each frame
    order = np.lexsort((rng.random(frames.size), frames))
    frames = frames[order]
    object_idx = np.zeros(frames.size, dtype=np.int64)
    if frames.size:
        starts = np.r_[0, np.flatnonzero(np.diff(frames)) + 1]
        run = np.diff(np.r_[starts, frames.size])
        object_idx = np.arange(frames.size) - np.repeat(starts, run)
    app = _as_f32(np.concatenate(feats["app"])[order])
    mot = _as_f32(np.concatenate(feats["mot"])[order])
    ab_app = np.concatenate(flags["app"])[order]
    ab_mot = np.concatenate(flags["mot"])[order]
    ev = np.concatenate(event_ids)[order]
    labels = np.zeros(T, dtype=np.uint8)
    labels[frames[ev >= 0]] = 1
    return dict(frames=frames, object_idx=object_idx, app=app, mot=mot, ab_app=ab_app, ab_mot=ab_mot,
                event_id=ev, labels=labels, events=events)


def _split(cfg, rng, centers, prefix, n_videos, first_event_id, with_labels):
    parts = []
    next_event = first_event_id
    for i in range(n_videos):
        part = _video(cfg, rng, centers, f"{prefix}_{i:03d}", next_event)
        next_event += len(part["events"])
        parts.append(part)
    videos = [VideoInfo(f"{prefix}_{i:03d}", cfg.frames_per_video, p["labels"] if with_labels else None)
              for i, p in enumerate(parts)]

    def cat(key, dtype=None, width=None):
        if not parts:
            return np.empty((0, width) if width else 0, dtype=dtype or np.float64)
        return np.concatenate([p[key] for p in parts])

    manifest = DatasetManifest(
        d_app=cfg.d_app,
        d_mot=cfg.d_mot,
        videos=videos,
        video_idx=np.concatenate([np.full(p["frames"].size, i) for i, p in enumerate(parts)]) if parts else [],
        frame_idx=cat("frames", np.int64),
        object_idx=cat("object_idx", np.int64),
        app=cat("app", width=cfg.d_app),
        mot=cat("mot", width=cfg.d_mot),
    )
    ab_app, ab_mot = cat("ab_app", bool), cat("ab_mot", bool)
    truth = SplitTruth(ab_app | ab_mot, ab_app, ab_mot, cat("event_id", np.int64),
                       {v.video_id: p["labels"] for v, p in zip(videos, parts)})
    events = [e for p in parts for e in p["events"]]
    return manifest, truth, events, next_event


def generate(config: SynthConfig | None = None):
    """Build ``(train_manifest, test_manifest, truth)``.

    The train manifest has no labels; its per-object ground truth is kept in
    ``truth.train``. The test manifest carries frame labels (1 when the frame
    holds an event object).
    """
    cfg = config or SynthConfig()
    rng = make_rng(cfg.seed, "synth")
    centers = {
        "app": cfg.mode_spread * rng.normal(size=(cfg.n_normal_modes, cfg.d_app)),
        "mot": cfg.mode_spread * rng.normal(size=(cfg.n_normal_modes, cfg.d_mot)),
    }
    train, train_truth, train_events, next_id = _split(cfg, rng, centers, "train", cfg.n_train_videos, 0, False)
    test, test_truth, test_events, _ = _split(cfg, rng, centers, "test", cfg.n_test_videos, next_id, True)
    overlap = cfg.anomaly_offset < 2.0
    if overlap:
        warnings.warn("anomaly_offset < 2: anomaly modes overlap normal modes", stacklevel=2)
    truth = SynthTruth(cfg, train_truth, test_truth, train_events + test_events, overlap, centers)
    return train, test, truth
