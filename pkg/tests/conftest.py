import logging

import numpy as np
import pytest

from cknn import DatasetManifest, VideoInfo

_ACCEPTANCE_LINES = []


def record_criterion(line: str) -> None:
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_manifest(rng, n_videos=3, frames=12, max_objects=3, d_app=5, d_mot=3, labels=False, bbox=True,
                  prefix="v"):
    """Random manifest with up to ``max_objects`` objects per frame."""
    videos, vidx, fidx, oidx = [], [], [], []
    for v in range(n_videos):
        T = int(rng.integers(1, frames + 1))
        lab = rng.integers(0, 2, size=T).astype(np.uint8) if labels else None
        videos.append(VideoInfo(f"{prefix}{v:02d}", T, lab))
        for t in range(T):
            for o in range(int(rng.integers(0, max_objects + 1))):
                vidx.append(v)
                fidx.append(t)
                oidx.append(o)
    n = len(vidx)
    box = rng.uniform(0, 640, size=(n, 4)).astype(np.float32).astype(np.float64) if bbox else None
    return DatasetManifest(
        d_app=d_app, d_mot=d_mot, videos=videos, video_idx=vidx, frame_idx=fidx, object_idx=oidx, bbox=box,
        app=rng.normal(size=(n, d_app)).astype(np.float32).astype(np.float64),
        mot=rng.normal(size=(n, d_mot)).astype(np.float32).astype(np.float64),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _quiet_logs(caplog):
    caplog.set_level(logging.ERROR, logger="cknn")
