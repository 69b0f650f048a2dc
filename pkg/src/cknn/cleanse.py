"""Object cleansing and feature-bank construction."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_matrix, check_percent
from .bank_search import SearchIndex, knn_score_batch
from .core import Hyperparams, TrainingView, as_training_view, make_rng, select_top_fraction
from .exceptions import BuildError, InvalidInputError
from .scorers import GaussianMixtureScorer, PseudoScorerConfig, make_pseudo_scorer

logger = logging.getLogger(__name__)

MODALITIES = ("app", "mot")
DEGENERATE_STD = 1e-12


@dataclass(frozen=True, eq=False)
class FeatureBank:
    """Retained feature vectors of one modality with per-row provenance."""

    modality: str
    matrix: np.ndarray
    video_ids: np.ndarray
    frame_idx: np.ndarray
    object_idx: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise InvalidInputError(f"unknown modality {self.modality!r}")
        matrix = check_matrix(self.matrix, f"{self.modality} bank")
        if matrix.shape[0] < 1:
            raise BuildError(f"{self.modality} bank is empty")
        m = matrix.shape[0]
        cols = {
            "matrix": np.array(matrix, dtype=np.float64, copy=True),
            "video_ids": np.array([str(v) for v in self.video_ids], dtype=str).reshape(-1),
            "frame_idx": np.array(self.frame_idx, dtype=np.int64).reshape(-1),
            "object_idx": np.array(self.object_idx, dtype=np.int64).reshape(-1),
        }
        for name, a in cols.items():
            if a.shape[0] != m:
                raise InvalidInputError(f"{self.modality} bank: {name} has {a.shape[0]} rows, matrix has {m}")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def take(self, rows, **metadata) -> "FeatureBank":
        rows = np.asarray(rows, dtype=np.int64)
        return FeatureBank(self.modality, self.matrix[rows], self.video_ids[rows], self.frame_idx[rows],
                           self.object_idx[rows], {**self.metadata, **metadata})

    def provenance(self) -> list[tuple[str, int, int]]:
        return [(str(v), int(f), int(o)) for v, f, o in zip(self.video_ids, self.frame_idx, self.object_idx)]

    def __eq__(self, other):
        if not isinstance(other, FeatureBank):
            return NotImplemented
        return (
            self.modality == other.modality
            and self.metadata == other.metadata
            and np.array_equal(self.matrix, other.matrix)
            and np.array_equal(self.video_ids, other.video_ids)
            and np.array_equal(self.frame_idx, other.frame_idx)
            and np.array_equal(self.object_idx, other.object_idx)
        )

    def __repr__(self):
        return f"FeatureBank(modality={self.modality!r}, size={self.size}, dim={self.dim})"


@dataclass(frozen=True)
class ScoreStats:
    """Mean/std of training k-NN scores used to z-normalise one modality."""

    mean: float
    std: float

    @property
    def degenerate(self) -> bool:
        return not self.std >= DEGENERATE_STD

    def normalize(self, scores):
        scores = np.asarray(scores, dtype=np.float64)
        if self.degenerate:
            return scores - self.mean
        return (scores - self.mean) / self.std


@dataclass(eq=False)
class BuildResult:
    app_bank: FeatureBank
    mot_bank: FeatureBank
    stats: dict
    pseudo_scores: dict
    removed: dict
    gmm_models: dict


def sample_count(n_rows: int, p: float) -> int:
    """Rows kept when compressing ``n_rows`` to ``p`` percent (never below one)."""
    return max(1, int(np.floor(p * n_rows / 100.0)))


def random_compress(bank: FeatureBank, p: float, seed: int = 0) -> FeatureBank:
    """Uniformly sample ``p`` percent of rows without replacement, keeping row order."""
    p = check_percent(p, "p")
    if p >= 100.0:
        return bank.take(np.arange(bank.size), compression="random", p=p)
    m = sample_count(bank.size, p)
    rows = np.sort(make_rng(seed, "sample").choice(bank.size, size=m, replace=False))
    return bank.take(rows, compression="random", p=p)


def coreset_compress(bank: FeatureBank, p: float, seed: int = 0, *, first_index: int | None = None) -> FeatureBank:
    """Greedy farthest-point (k-center) selection of ``p`` percent of rows.

    Rows are returned in selection order. The first pick is seeded-random unless
    ``first_index`` is given.
    """
    p = check_percent(p, "p")
    X = bank.matrix
    m = bank.size if p >= 100.0 else sample_count(bank.size, p)
    first = int(make_rng(seed, "coreset").integers(bank.size)) if first_index is None else int(first_index)
    if not 0 <= first < bank.size:
        raise InvalidInputError(f"first_index {first} outside bank of {bank.size} rows")
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = first
    closest = np.sqrt(((X - X[first]) ** 2).sum(axis=1))
    closest[first] = -1.0
    for i in range(1, m):
        nxt = int(np.argmax(closest))
        chosen[i] = nxt
        closest = np.minimum(closest, np.sqrt(((X - X[nxt]) ** 2).sum(axis=1)))
        closest[chosen[: i + 1]] = -1.0
    return bank.take(chosen, compression="coreset", p=p)


def covering_radius(points, centers) -> float:
    """Largest distance from any point to its nearest center."""
    return float(knn_score_batch(SearchIndex(centers), points, 1).max())


def bank_score_stats(bank: FeatureBank, k: int) -> ScoreStats:
    """Leave-self-out k-NN scores of the bank against itself, summarised."""
    if bank.size <= k:
        raise BuildError(
            f"{bank.modality} bank has {bank.size} rows but k={k} needs at least {k + 1}; "
            "use a smaller tau or a larger p"
        )
    scores = knn_score_batch(SearchIndex(bank.matrix), bank.matrix, k, exclude_exact=True)
    return ScoreStats(float(scores.mean()), float(scores.std()))


def default_scorer_configs(hyperparams: Hyperparams, app="gmm", mot="gmm"):
    def build(backend):
        return PseudoScorerConfig(backend, n_components=hyperparams.n_components, k=hyperparams.k)

    return build(app), build(mot)


def cleanse_and_build(data, hyperparams: Hyperparams | None = None, app_scorer_cfg: PseudoScorerConfig | None = None,
                      mot_scorer_cfg: PseudoScorerConfig | None = None, *, compression: str = "random") -> BuildResult:
    """Cleanse training objects per modality and assemble the two feature banks.

    Each modality is ranked by its own pseudo-anomaly scorer and loses its
    top ``tau`` percent independently, so the two banks may keep different
    objects. Retained rows stay in input order, then each bank is compressed
    to ``p`` percent and its normalisation statistics are computed against the
    final bank.
    """
    hp = hyperparams or Hyperparams()
    view: TrainingView = as_training_view(data)
    default_app, default_mot = default_scorer_configs(hp)
    cfgs = {"app": app_scorer_cfg or default_app, "mot": mot_scorer_cfg or default_mot}
    if compression not in ("random", "coreset"):
        raise InvalidInputError(f"compression must be 'random' or 'coreset', got {compression!r}")
    n = view.n_objects
    need = max(hp.k + 1, *(c.n_components for c in cfgs.values() if c.backend == "gmm"),
               *(c.k + 1 for c in cfgs.values() if c.backend == "knn"))
    if n < need:
        raise InvalidInputError(f"training data has {n} objects; at least {need} are required")

    video_ids = view.object_video_ids()
    banks, stats, pseudo, removed, gmms = {}, {}, {}, {}, {}
    for modality in MODALITIES:
        X = view.app if modality == "app" else view.mot
        scorer = make_pseudo_scorer(cfgs[modality], modality, hp.seed)
        scores = scorer.fit_score(X)
        if isinstance(scorer, GaussianMixtureScorer):
            gmms[modality] = scorer.model_
        drop = select_top_fraction(scores, hp.tau)
        keep = np.setdiff1d(np.arange(n), drop, assume_unique=True)
        if keep.size == 0:
            raise BuildError(f"tau={hp.tau} removed every {modality} object; use a smaller tau")
        meta = {"tau": hp.tau, "p": hp.p, "scorer": cfgs[modality].describe(), "seed": hp.seed,
                "compression": compression}
        bank = FeatureBank(modality, X[keep], video_ids[keep], view.frame_idx[keep], view.object_idx[keep], meta)
        if compression == "random":
            bank = random_compress(bank, hp.p, hp.seed)
        else:
            bank = coreset_compress(bank, hp.p, hp.seed)
        banks[modality] = bank
        stats[modality] = bank_score_stats(bank, hp.k)
        pseudo[modality] = scores
        removed[modality] = drop
        logger.info("%s: removed %d of %d objects, bank size %d", modality, drop.size, n, bank.size)
    return BuildResult(banks["app"], banks["mot"], stats, pseudo, removed, gmms)


@dataclass(frozen=True, eq=False)
class TauSuggestion:
    counts: np.ndarray
    edges: np.ndarray
    tau_star: float
    tail_bin: int | None
    degenerate: bool = False


def suggest_tau(pseudo_scores, n_bins: int = 100, tail_fraction: float = 0.01) -> TauSuggestion:
    """Recommend tau as the share of scores lying in the histogram's tail.

    The tail starts at the first bin, at or right of the modal bin, whose count
    falls below ``tail_fraction`` of the modal count. Advisory only: pick a tau
    at or above the returned value.
    """
    s = np.asarray(pseudo_scores, dtype=np.float64).reshape(-1)
    if s.size < 100:
        raise InvalidInputError(f"need at least 100 scores, got {s.size}")
    if not np.isfinite(s).all():
        raise InvalidInputError("pseudo-scores must be finite")
    lo, hi = float(s.min()), float(s.max())
    if hi <= lo:
        counts, edges = np.histogram(s, bins=n_bins, range=(lo - 0.5, lo + 0.5))
        return TauSuggestion(counts, edges, 0.0, None, degenerate=True)
    counts, edges = np.histogram(s, bins=n_bins, range=(lo, hi))
    mode = int(np.argmax(counts))
    below = np.flatnonzero(counts[mode:] < tail_fraction * counts[mode])
    if below.size == 0:
        return TauSuggestion(counts, edges, 0.0, None)
    tail = mode + int(below[0])
    tau_star = 100.0 * counts[tail:].sum() / s.size
    return TauSuggestion(counts, edges, float(tau_star), tail)


__all__ = [
    "BuildResult",
    "FeatureBank",
    "ScoreStats",
    "TauSuggestion",
    "bank_score_stats",
    "cleanse_and_build",
    "coreset_compress",
    "covering_radius",
    "random_compress",
    "sample_count",
    "suggest_tau",
]
