"""Uniform fit/score interface over the four uncertainty backends."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from alfa import centroid, eknn, ensemble
from alfa.belief import Frame
from alfa.errors import EmptyTrainingSet, InvalidConfig
from alfa.score import BatchScores, UncertaintyScore

METHODS = ("eknn", "entropy", "variance", "centroid")


@dataclass(frozen=True)
class BackendConfig:
    method: str = "eknn"
    k: int = eknn.DEFAULT_K_TABULAR
    alpha0: float = eknn.DEFAULT_ALPHA0
    forest: ensemble.ForestParams = field(default_factory=ensemble.ForestParams)
    sigma: float = centroid.WINE_SIGMA
    dim_normalized: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidConfig(f"unknown method {self.method!r}; expected one of {METHODS}")


@dataclass(frozen=True, eq=False)
class Scorer:
    """A fitted backend.  ``predicted`` indices refer to ``frame``."""

    method: str
    model: Any
    frame: Frame

    def score_batch(self, X) -> BatchScores:
        if self.method == "eknn":
            return eknn.score_batch(self.model, X)
        if self.method in ("entropy", "variance"):
            return ensemble.score_batch(self.model, X, self.method)
        return centroid.score_batch(self.model, X)

    def score(self, x) -> UncertaintyScore:
        if self.method == "eknn":
            return eknn.predict_with_uncertainty(self.model, x)
        if self.method in ("entropy", "variance"):
            return ensemble.ensemble_score(self.model, x, self.method)
        return centroid.centroid_score(self.model, x)


def fit_backend(config: BackendConfig, X, y, frame: Frame, seed: int = 0) -> Scorer:
    """Fit the configured backend on ``X`` with class-index labels ``y``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise EmptyTrainingSet("no labelled rows")
    if config.method == "eknn":
        if X.shape[0] < 2:
            raise EmptyTrainingSet("EK-NN needs at least two labelled rows")
        k = min(config.k, X.shape[0])
        model = eknn.fit(X, y, frame, k, config.alpha0, encoded=True, seed=seed)
    elif config.method in ("entropy", "variance"):
        model = ensemble.fit_forest(X, y, frame, config.forest, seed)
    else:
        model = centroid.fit_centroids(X, y, frame, config.sigma, dim_normalized=config.dim_normalized)
    return Scorer(config.method, model, frame)


def forest_pair(config: BackendConfig, X, y, frame: Frame, seed: int = 0) -> dict:
    """Fit one forest and expose it under both ensemble decompositions."""
    model = ensemble.fit_forest(np.asarray(X, float), np.asarray(y, np.int64), frame, config.forest, seed)
    return {"entropy": Scorer("entropy", model, frame), "variance": Scorer("variance", model, frame)}
