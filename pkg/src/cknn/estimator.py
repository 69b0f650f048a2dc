"""Estimator front end composing cleansing, bank building and scoring."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .cleanse import cleanse_and_build
from .core import Hyperparams, as_training_view
from .exceptions import InvalidInputError
from .infer import score_objects, score_view
from .io import ModelBundle
from .scorers import PseudoScorerConfig

_MODALITIES = {"both": ("app", "mot"), "app": ("app",), "mot": ("mot",)}


def fit_bundle(data, hyperparams: Hyperparams, app_scorer: PseudoScorerConfig, mot_scorer: PseudoScorerConfig,
               compression: str = "random") -> ModelBundle:
    view = as_training_view(data)
    result = cleanse_and_build(view, hyperparams, app_scorer, mot_scorer, compression=compression)
    return ModelBundle(
        hyperparams=hyperparams,
        app_bank=result.app_bank,
        mot_bank=result.mot_bank,
        app_stats=result.stats["app"],
        mot_stats=result.stats["mot"],
        app_scorer=app_scorer,
        mot_scorer=mot_scorer,
        compression=compression,
        gmm_models=result.gmm_models,
        n_train_objects=view.n_objects,
        removed_app=int(result.removed["app"].size),
        removed_mot=int(result.removed["mot"].size),
    )


class CKNN(BaseEstimator):
    """Cleansed k-NN video anomaly detector.

    ``fit`` takes a :class:`~cknn.core.DatasetManifest` or
    :class:`~cknn.core.TrainingView` (labels, if any, are dropped before
    anything else happens). ``score_videos`` returns smoothed frame scores per
    video and ``score_samples`` the combined per-object scores.

    Parameters
    ----------
    k : int
        Neighbours averaged at inference.
    n_components : int
        Components of the GMM pseudo-scorers.
    tau : float
        Percentage of training objects removed per modality.
    p : float
        Percentage of the cleansed objects kept in each bank.
    app_scorer, mot_scorer : {"gmm", "knn"}
        Pseudo-anomaly scorer backend for each modality.
    pseudo_k : int or None
        Neighbours used by a ``"knn"`` pseudo-scorer; defaults to ``k``.
    compression : {"random", "coreset"}
        How banks are reduced to ``p`` percent.
    modality : {"both", "app", "mot"}
        Which normalised scores are summed at inference.
    """

    def __init__(self, k=4, n_components=8, tau=25.0, p=1.0, smoothing_sigma=5.0, seed=0, app_scorer="gmm",
                 mot_scorer="gmm", pseudo_k=None, pseudo_reference_percent=100.0, compression="random",
                 modality="both", exclude_exact=True):
        self.k = k
        self.n_components = n_components
        self.tau = tau
        self.p = p
        self.smoothing_sigma = smoothing_sigma
        self.seed = seed
        self.app_scorer = app_scorer
        self.mot_scorer = mot_scorer
        self.pseudo_k = pseudo_k
        self.pseudo_reference_percent = pseudo_reference_percent
        self.compression = compression
        self.modality = modality
        self.exclude_exact = exclude_exact

    @property
    def hyperparams(self) -> Hyperparams:
        return Hyperparams(self.k, self.n_components, self.tau, self.p, self.smoothing_sigma, self.seed)

    def _scorer_config(self, backend):
        return PseudoScorerConfig(backend, n_components=self.n_components,
                                  k=self.k if self.pseudo_k is None else self.pseudo_k,
                                  reference_subsample_percent=self.pseudo_reference_percent)

    def _modalities(self):
        try:
            return _MODALITIES[self.modality]
        except KeyError:
            raise InvalidInputError(f"modality must be one of {sorted(_MODALITIES)}, got {self.modality!r}") from None

    def fit(self, X, y=None):
        self._modalities()
        self.bundle_ = fit_bundle(X, self.hyperparams, self._scorer_config(self.app_scorer),
                                  self._scorer_config(self.mot_scorer), self.compression)
        self.n_features_in_ = self.bundle_.d_app + self.bundle_.d_mot
        return self

    @classmethod
    def from_bundle(cls, bundle: ModelBundle, **overrides) -> "CKNN":
        hp = bundle.hyperparams
        params = dict(k=hp.k, n_components=hp.n_components, tau=hp.tau, p=hp.p,
                      smoothing_sigma=hp.smoothing_sigma, seed=hp.seed,
                      app_scorer=bundle.app_scorer.backend, mot_scorer=bundle.mot_scorer.backend,
                      compression=bundle.compression)
        params.update(overrides)
        est = cls(**params)
        est.bundle_ = bundle
        est.n_features_in_ = bundle.d_app + bundle.d_mot
        return est

    def score_samples(self, X):
        """Combined normalised score of every object in ``X``."""
        check_is_fitted(self, "bundle_")
        view = as_training_view(X)
        out = score_objects(self.bundle_, view.app, view.mot, self.k, modalities=self._modalities(),
                            exclude_exact=self.exclude_exact)
        return np.asarray(out["combined"])

    def score_videos(self, X, detail=False) -> dict:
        check_is_fitted(self, "bundle_")
        return score_view(self.bundle_, X, self.hyperparams, modalities=self._modalities(),
                          exclude_exact=self.exclude_exact, detail=detail)
