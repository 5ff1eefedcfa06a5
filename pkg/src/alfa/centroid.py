"""Class-centroid RBF uncertainty (shallow, feature-space variant).

Each class is summarized by the mean of its training rows.  A query's kernel
value to centroid ``e_y`` is ``U_y = exp(-||x - e_y||^2 / (2 sigma^2))``, with
the squared distance optionally divided by the feature dimension.  The largest
kernel value is the epistemic *certainty*, so ``eu = 1 - max_y U_y``; the
entropy of the sum-normalized kernel values is the aleatoric part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from alfa.belief import Frame
from alfa.errors import DimensionMismatch, EmptyTrainingSet, MissingClass
from alfa.score import BatchScores, UncertaintyScore

WINE_SIGMA = math.sqrt(0.1)


@dataclass(frozen=True, eq=False)
class CentroidModel:
    centroids: np.ndarray  # K x P
    sigma: float
    frame: Frame
    dim_normalized: bool = False


def fit_centroids(features, labels, frame: Frame, sigma: float = WINE_SIGMA, *, encoded: bool = True, dim_normalized: bool = False) -> CentroidModel:
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyTrainingSet("cannot compute centroids of no data")
    if encoded:
        y = np.asarray(labels, dtype=np.int64)
    else:
        y = np.array([frame.index(lab) for lab in labels], dtype=np.int64)
    if y.shape[0] != x.shape[0]:
        raise DimensionMismatch("features and labels have different lengths")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    K = len(frame)
    counts = np.bincount(y, minlength=K)
    if np.any(counts == 0):
        missing = [frame.labels[c] for c in np.flatnonzero(counts == 0)]
        raise MissingClass(f"no training rows for classes {missing}")
    sums = np.zeros((K, x.shape[1]))
    np.add.at(sums, y, x)
    return CentroidModel(sums / counts[:, None], float(sigma), frame, dim_normalized)


def _log_kernel(model: CentroidModel, x) -> np.ndarray:
    q = np.asarray(x, dtype=float)
    q2 = q[None, :] if q.ndim == 1 else q
    if q2.shape[1] != model.centroids.shape[1]:
        raise DimensionMismatch(f"expected {model.centroids.shape[1]} features, got {q2.shape[1]}")
    sq = ((q2[:, None, :] - model.centroids[None, :, :]) ** 2).sum(axis=2)
    if model.dim_normalized:
        sq = sq / model.centroids.shape[1]
    out = -sq / (2.0 * model.sigma**2)
    return out[0] if q.ndim == 1 else out


def rbf_certainty(model: CentroidModel, x) -> np.ndarray:
    """Kernel value to every class centroid (length K, or n x K for a batch)."""
    return np.exp(_log_kernel(model, x))


def _from_log_kernel(logu: np.ndarray):
    certainty = np.exp(logu.max(axis=-1))
    # normalize in log space so the pmf survives kernel underflow
    shifted = logu - logu.max(axis=-1, keepdims=True)
    pmf = np.exp(shifted)
    pmf /= pmf.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(pmf > 0.0, pmf * np.log2(pmf), 0.0)
    au = np.maximum(-plogp.sum(axis=-1), 0.0)
    return np.argmax(logu, axis=-1), 1.0 - certainty, au, certainty


def centroid_score(model: CentroidModel, x) -> UncertaintyScore:
    logu = _log_kernel(model, x)
    if logu.ndim != 1:
        raise DimensionMismatch("centroid_score takes a single instance")
    pred, eu, au, certainty = _from_log_kernel(logu)
    return UncertaintyScore(int(pred), float(eu), float(au), None, {"certainty": float(certainty)})


def score_batch(model: CentroidModel, X) -> BatchScores:
    pred, eu, au, _ = _from_log_kernel(_log_kernel(model, np.atleast_2d(X)))
    return BatchScores(pred, eu, au)
