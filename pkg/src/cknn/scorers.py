"""Pseudo-anomaly scorers used to rank training objects before cleansing.

Two interchangeable backends, both oriented so that a higher score means
"more anomalous":

* a full-covariance Gaussian mixture scored by negative log-likelihood;
* a leave-self-out k-NN distance over the training matrix itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.special import logsumexp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix, check_percent, check_positive_int, check_vector
from .bank_search import SearchIndex, knn_score_batch
from .core import make_rng
from .exceptions import ConvergenceError, InvalidInputError

REG_EPS = 1e-6
MAX_ITER = 200
REL_TOL = 1e-6
MIN_WEIGHT = 1e-12
MAX_RESEEDS = 3
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    n_iter: int = 0
    log_likelihood: float = float("nan")
    ll_history: np.ndarray = field(default_factory=lambda: np.empty(0))
    reseeds: int = 0

    def __post_init__(self):
        for name in ("weights", "means", "covariances", "ll_history"):
            a = np.array(getattr(self, name), dtype=np.float64, copy=True)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        n, d = self.means.shape
        if self.weights.shape != (n,) or self.covariances.shape != (n, d, d):
            raise InvalidInputError("inconsistent GMM parameter shapes")
        object.__setattr__(self, "_chol", None)

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def cholesky_factors(self) -> np.ndarray:
        if self._chol is None:
            object.__setattr__(self, "_chol", np.stack([cholesky(c, lower=True) for c in self.covariances]))
        return self._chol

    def __eq__(self, other):
        if not isinstance(other, GmmModel):
            return NotImplemented
        return (
            self.n_iter == other.n_iter
            and self.reseeds == other.reseeds
            and np.array_equal(self.log_likelihood, other.log_likelihood, equal_nan=True)
            and all(
                np.array_equal(getattr(self, a), getattr(other, a))
                for a in ("weights", "means", "covariances", "ll_history")
            )
        )


def _log_gaussians(X, means, chols):
    """(N, n) matrix of log N(x_i; mu_j, L_j L_j^T)."""
    n_samples, d = X.shape
    out = np.empty((n_samples, means.shape[0]))
    for j, (mu, L) in enumerate(zip(means, chols)):
        y = solve_triangular(L, (X - mu).T, lower=True, check_finite=False)
        log_det = 2.0 * np.log(np.diag(L)).sum()
        out[:, j] = -0.5 * (d * _LOG_2PI + log_det + np.einsum("ij,ij->j", y, y))
    return out


def _kmeanspp(X, n, rng):
    """Greedy k-means++ seeding (best of several D^2-sampled candidates per step)."""
    n_samples = X.shape[0]
    n_trials = 2 + int(math.log(n))
    centers = np.empty((n, X.shape[1]))
    centers[0] = X[rng.integers(n_samples)]
    closest = ((X - centers[0]) ** 2).sum(axis=1)
    for c in range(1, n):
        potential = closest.sum()
        if potential <= 0:
            centers[c] = X[rng.integers(n_samples)]
            continue
        cdf = np.cumsum(closest)
        picks = np.searchsorted(cdf, rng.uniform(size=n_trials) * cdf[-1], side="right")
        picks = np.minimum(picks, n_samples - 1)
        cand_d2 = ((X[None, :, :] - X[picks][:, None, :]) ** 2).sum(axis=2)
        cand_closest = np.minimum(closest[None, :], cand_d2)
        best = int(np.argmin(cand_closest.sum(axis=1)))
        centers[c] = X[picks[best]]
        closest = cand_closest[best]
    return centers


def _lloyd_labels(X, centers, n_iter=10):
    labels = None
    for _ in range(n_iter):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(d2, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(centers.shape[0]):
            members = labels == j
            if members.any():
                centers[j] = X[members].mean(axis=0)
    return labels


def _m_step(X, resp, reg_eps):
    nk = resp.sum(axis=0)
    weights = nk / X.shape[0]
    safe = np.where(nk > 0, nk, 1.0)
    means = (resp.T @ X) / safe[:, None]
    d = X.shape[1]
    covs = np.empty((resp.shape[1], d, d))
    for j in range(resp.shape[1]):
        diff = X - means[j]
        c = (resp[:, j, None] * diff).T @ diff / safe[j]
        covs[j] = 0.5 * (c + c.T) + reg_eps * np.eye(d)
    return weights, means, covs


def gmm_fit(X, n: int = 8, seed: int = 0, *, reg_eps: float = REG_EPS, max_iter: int = MAX_ITER,
            tol: float = REL_TOL, purpose: str = "gmm_mot") -> GmmModel:
    """Fit a full-covariance Gaussian mixture by EM.

    Initialisation is greedy k-means++ seeding refined by a few Lloyd steps.
    Iteration stops when the relative log-likelihood gain drops below ``tol``
    or after ``max_iter`` M-steps. A component whose weight falls below 1e-12
    is re-seeded at a random data point (at most three times per fit).
    """
    n = check_positive_int(n, "n")
    X = check_matrix(X, "X")
    if X.shape[0] < n:
        raise InvalidInputError(f"need at least n={n} rows to fit a GMM, got {X.shape[0]}")
    rng = make_rng(seed, purpose)
    n_samples, d = X.shape

    labels = _lloyd_labels(X, _kmeanspp(X, n, rng))
    resp = np.zeros((n_samples, n))
    resp[np.arange(n_samples), labels] = 1.0
    weights, means, covs = _m_step(X, resp, reg_eps)

    history, reseeds, n_iter = [], 0, 0
    while True:
        collapsed = np.flatnonzero(weights < MIN_WEIGHT)
        if collapsed.size:
            if reseeds + collapsed.size > MAX_RESEEDS:
                raise ConvergenceError(
                    f"GMM component collapsed more than {MAX_RESEEDS} times; try fewer components"
                )
            reseeds += collapsed.size
            pooled = np.cov(X, rowvar=False, bias=True).reshape(d, d) + reg_eps * np.eye(d)
            for j in collapsed:
                means[j] = X[rng.integers(n_samples)]
                covs[j] = pooled
                weights[j] = 1.0 / n
            weights = weights / weights.sum()
            history = []  # the re-seeded model starts a new monotone run

        chols = np.stack([cholesky(c, lower=True) for c in covs])
        log_prob = _log_gaussians(X, means, chols) + np.log(np.maximum(weights, np.finfo(float).tiny))
        log_norm = logsumexp(log_prob, axis=1)
        ll = float(log_norm.sum())
        history.append(ll)
        if len(history) > 1 and abs(ll - history[-2]) < tol * abs(history[-2]):
            break
        if n_iter >= max_iter:
            break
        resp = np.exp(log_prob - log_norm[:, None])
        weights, means, covs = _m_step(X, resp, reg_eps)
        n_iter += 1

    return GmmModel(weights, means, covs, n_iter=n_iter, log_likelihood=ll,
                    ll_history=np.array(history), reseeds=reseeds)


def gmm_score_samples(model: GmmModel, X) -> np.ndarray:
    """Negative log-density of each row of ``X`` under ``model``."""
    X = check_matrix(X, "X", n_features=model.dim)
    log_prob = _log_gaussians(X, model.means, model.cholesky_factors()) + np.log(model.weights)
    return -logsumexp(log_prob, axis=1)


def gmm_score(model: GmmModel, x) -> float:
    x = check_vector(x, "x", size=model.dim)
    return float(gmm_score_samples(model, x[None, :])[0])


def _reference_rows(n_rows, percent, k, rng):
    if percent >= 100.0:
        return np.arange(n_rows)
    size = min(n_rows, max(k + 1, int(np.floor(percent * n_rows / 100.0))))
    return np.sort(rng.choice(n_rows, size=size, replace=False))


def knn_pseudo_score_all(X, k: int = 4, reference_subsample_percent: float = 100.0, seed: int = 0,
                         *, purpose: str = "knn_app") -> np.ndarray:
    """Leave-self-out k-NN distance of every row against the (subsampled) matrix."""
    k = check_positive_int(k, "k")
    X = check_matrix(X, "X")
    pct = check_percent(reference_subsample_percent, "reference_subsample_percent")
    if X.shape[0] <= k:
        raise InvalidInputError(f"need more than k={k} rows, got {X.shape[0]}")
    ref = _reference_rows(X.shape[0], pct, k, make_rng(seed, purpose))
    return knn_score_batch(SearchIndex(X[ref]), X, k, exclude_exact=True)


@dataclass(frozen=True)
class PseudoScorerConfig:
    """One pseudo-scorer backend and its settings.

    Settings of the unused backend are reset to their defaults, so two configs
    that score identically also compare equal.
    """

    backend: str = "gmm"
    n_components: int = 8
    k: int = 4
    reference_subsample_percent: float = 100.0

    def __post_init__(self):
        if self.backend not in ("gmm", "knn"):
            raise InvalidInputError(f"backend must be 'gmm' or 'knn', got {self.backend!r}")
        check_positive_int(self.n_components, "n_components")
        check_positive_int(self.k, "k")
        pct = check_percent(self.reference_subsample_percent, "reference_subsample_percent")
        if self.backend == "gmm":
            object.__setattr__(self, "k", 4)
            object.__setattr__(self, "reference_subsample_percent", 100.0)
        else:
            object.__setattr__(self, "n_components", 8)
            object.__setattr__(self, "reference_subsample_percent", float(pct))

    def describe(self) -> str:
        if self.backend == "gmm":
            return f"gmm(n={self.n_components})"
        return f"knn(k={self.k},ref={self.reference_subsample_percent!r})"

    @classmethod
    def parse(cls, text: str) -> "PseudoScorerConfig":
        text = text.strip()
        name, _, rest = text.partition("(")
        args = dict(kv.split("=") for kv in rest.rstrip(")").split(",") if kv)
        if name == "gmm":
            return cls("gmm", n_components=int(args.get("n", 8)))
        if name == "knn":
            return cls("knn", k=int(args.get("k", 4)),
                       reference_subsample_percent=float(args.get("ref", 100.0)))
        raise InvalidInputError(f"cannot parse scorer description {text!r}")


class GaussianMixtureScorer(BaseEstimator):
    """Negative log-likelihood under a fitted full-covariance GMM."""

    def __init__(self, n_components=8, reg_eps=REG_EPS, max_iter=MAX_ITER, tol=REL_TOL,
                 modality="mot", random_state=0):
        self.n_components = n_components
        self.reg_eps = reg_eps
        self.max_iter = max_iter
        self.tol = tol
        self.modality = modality
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_matrix(X)
        self.model_ = gmm_fit(X, self.n_components, self.random_state, reg_eps=self.reg_eps,
                              max_iter=self.max_iter, tol=self.tol, purpose=f"gmm_{self.modality}")
        self.n_features_in_ = X.shape[1]
        return self

    def score_samples(self, X):
        check_is_fitted(self, "model_")
        return gmm_score_samples(self.model_, X)

    def fit_score(self, X):
        return self.fit(X).score_samples(X)


class KNNScorer(BaseEstimator):
    """k-NN distance scorer; ``fit_score`` is leave-self-out on the fit data."""

    def __init__(self, k=4, reference_subsample_percent=100.0, exclude_exact=True, modality="app",
                 random_state=0):
        self.k = k
        self.reference_subsample_percent = reference_subsample_percent
        self.exclude_exact = exclude_exact
        self.modality = modality
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_matrix(X)
        if X.shape[0] <= self.k:
            raise InvalidInputError(f"need more than k={self.k} rows, got {X.shape[0]}")
        pct = check_percent(self.reference_subsample_percent, "reference_subsample_percent")
        rows = _reference_rows(X.shape[0], pct, self.k, make_rng(self.random_state, f"knn_{self.modality}"))
        self.index_ = SearchIndex(X[rows])
        self.n_features_in_ = X.shape[1]
        return self

    def score_samples(self, X):
        check_is_fitted(self, "index_")
        return knn_score_batch(self.index_, X, self.k, self.exclude_exact)

    def fit_score(self, X):
        self.fit(X)
        return knn_pseudo_score_all(X, self.k, self.reference_subsample_percent, self.random_state,
                                    purpose=f"knn_{self.modality}")


def make_pseudo_scorer(config: PseudoScorerConfig, modality: str, seed: int):
    if modality not in ("app", "mot"):
        raise InvalidInputError(f"modality must be 'app' or 'mot', got {modality!r}")
    if config.backend == "gmm":
        return GaussianMixtureScorer(config.n_components, modality=modality, random_state=seed)
    return KNNScorer(config.k, config.reference_subsample_percent, modality=modality, random_state=seed)
