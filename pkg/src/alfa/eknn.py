"""Evidential k-nearest neighbours.

Each of the ``k`` nearest training points is a source of evidence: a simple
support mass on its own class whose weight decays with distance,
``alpha0 * exp(-(d / gamma) ** 2)``.  The sources are fused with Dempster's
rule.  Non-specificity of the fused mass is read as epistemic uncertainty and
discord as aleatoric uncertainty.

Because every source is a simple support function, the fusion has a closed
form: per class ``c`` let ``P_c`` be the product of ``1 - s_i`` over the
neighbours labelled ``c``.  The unnormalized fused masses are then
``m({c}) = (1 - P_c) * prod_{c' != c} P_c'`` and ``m(Omega) = prod_c P_c``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import pdist

from alfa.belief import Frame, MassFunction, combine_all, discord, non_specificity, pignistic, simple_support
from alfa.errors import DegenerateData, DimensionMismatch, EmptyTrainingSet, TotalConflict, UnknownClass
from alfa.score import BatchScores, UncertaintyScore

DEFAULT_ALPHA0 = 0.95
DEFAULT_K_TABULAR = 7
DEFAULT_K_EMBEDDING = 10
PAIR_BUDGET = 1_000_000
REFRESH_EVERY = 64


def _condensed_to_pair(idx: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Map condensed (upper-triangle, row-major) indices to ``(i, j)``, ``i < j``."""
    idx = np.asarray(idx, dtype=np.int64)
    # first condensed index of row i is i*n - i*(i+1)/2
    b = 2 * n - 1
    i = np.floor((b - np.sqrt(b * b - 8.0 * idx)) / 2).astype(np.int64)
    i = np.clip(i, 0, n - 2)
    start = i * n - i * (i + 1) // 2
    # float rounding can be off by one row either way
    too_far = start > idx
    i[too_far] -= 1
    start = i * n - i * (i + 1) // 2
    nxt = (i + 1) * n - (i + 1) * (i + 2) // 2
    short = idx >= nxt
    i[short] += 1
    start = i * n - i * (i + 1) // 2
    j = idx - start + i + 1
    return i, j


def estimate_gamma(features, pair_budget: int = PAIR_BUDGET, seed: int = 0) -> float:
    """Mean Euclidean distance between training points.

    Exact when the number of pairs fits in ``pair_budget``, otherwise the
    mean over ``pair_budget`` distinct pairs drawn uniformly with ``seed``.
    """
    x = np.asarray(features, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise EmptyTrainingSet("need at least two points to estimate gamma")
    if pair_budget < 1:
        raise ValueError("pair_budget must be positive")
    total = n * (n - 1) // 2
    if total <= pair_budget:
        gamma = float(np.mean(pdist(x)))
    else:
        rng = np.random.default_rng(seed)
        picks = rng.choice(total, size=pair_budget, replace=False)
        i, j = _condensed_to_pair(picks, n)
        gamma = float(np.mean(np.linalg.norm(x[i] - x[j], axis=1)))
    if not gamma > 0.0:
        raise DegenerateData("all training points are identical; pass gamma explicitly")
    return gamma


@dataclass(frozen=True, eq=False)
class EknnModel:
    features: np.ndarray
    labels: np.ndarray  # class indices into ``frame``
    frame: Frame
    k: int = DEFAULT_K_TABULAR
    gamma: float = 1.0
    alpha0: float = DEFAULT_ALPHA0
    gamma_fixed: bool = False
    inserts_since_refresh: int = 0

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def _encode_labels(labels, frame: Frame, encoded: bool) -> np.ndarray:
    if encoded:
        out = np.asarray(labels, dtype=np.int64)
        if out.size and (out.min() < 0 or out.max() >= len(frame)):
            raise UnknownClass("label index outside the frame")
        return out
    return np.array([frame.index(lab) for lab in labels], dtype=np.int64)


def fit(
    features,
    labels,
    frame: Frame,
    k: int = DEFAULT_K_TABULAR,
    alpha0: float = DEFAULT_ALPHA0,
    gamma: Optional[float] = None,
    *,
    encoded: bool = False,
    seed: int = 0,
) -> EknnModel:
    """Store the training data and derive ``gamma`` if it is not given.

    ``labels`` are frame labels, or class indices when ``encoded`` is true.
    """
    x = np.array(features, dtype=float, copy=True)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyTrainingSet("features must be a non-empty 2-D array")
    y = _encode_labels(labels, frame, encoded)
    if y.shape[0] != x.shape[0]:
        raise DimensionMismatch("features and labels have different lengths")
    if not 1 <= k <= x.shape[0]:
        raise ValueError(f"k={k} must be between 1 and n={x.shape[0]}")
    if not 0.0 < alpha0 < 1.0:
        raise ValueError("alpha0 must lie in (0, 1)")
    fixed = gamma is not None
    if gamma is None:
        gamma = estimate_gamma(x, PAIR_BUDGET, seed)
    elif not gamma > 0:
        raise ValueError("gamma must be positive")
    x.setflags(write=False)
    y.setflags(write=False)
    return EknnModel(x, y, frame, int(k), float(gamma), float(alpha0), fixed)


def _as_queries(model: EknnModel, x) -> np.ndarray:
    q = np.asarray(x, dtype=float)
    if q.ndim == 1:
        q = q[None, :]
    if q.shape[-1] != model.dim:
        raise DimensionMismatch(f"expected {model.dim} features, got {q.shape[-1]}")
    return q


def _neighbours(model: EknnModel, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    diff_sq = (
        np.sum(q * q, axis=1)[:, None]
        - 2.0 * q @ model.features.T
        + np.sum(model.features * model.features, axis=1)[None, :]
    )
    dist = np.sqrt(np.maximum(diff_sq, 0.0))
    # exact distances for the candidates; the expansion above can lose ties
    order = np.argsort(dist, axis=1, kind="stable")[:, : min(model.n, model.k + 8)]
    exact = np.linalg.norm(q[:, None, :] - model.features[order], axis=2)
    sub = np.lexsort((order, exact), axis=1)[:, : model.k]
    idx = np.take_along_axis(order, sub, axis=1)
    d = np.take_along_axis(exact, sub, axis=1)
    return idx, d


def _support(model: EknnModel, d: np.ndarray) -> np.ndarray:
    return model.alpha0 * np.exp(-((d / model.gamma) ** 2))


def neighbor_masses(model: EknnModel, x) -> list[tuple[float, MassFunction]]:
    """Discounted simple support masses of the ``k`` nearest neighbours of ``x``.

    Sorted by distance; equal distances keep the lower training index first.
    """
    q = _as_queries(model, x)
    if q.shape[0] != 1:
        raise DimensionMismatch("neighbor_masses takes a single instance")
    idx, d = _neighbours(model, q)
    s = _support(model, d)
    out = []
    for i, dist, w in zip(idx[0], d[0], s[0]):
        y = model.frame.labels[model.labels[i]]
        out.append((float(dist), simple_support(model.frame, y, float(w))))
    return out


def _fused(model: EknnModel, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form normalized fusion: singleton masses (m x K) and m(Omega)."""
    idx, d = _neighbours(model, q)
    s = _support(model, d)
    n_q, K = q.shape[0], len(model.frame)
    log_keep = np.zeros((n_q, K))
    rows = np.repeat(np.arange(n_q), idx.shape[1])
    np.add.at(log_keep, (rows, model.labels[idx].ravel()), np.log1p(-s).ravel())
    log_all = log_keep.sum(axis=1, keepdims=True)
    single = -np.expm1(log_keep) * np.exp(log_all - log_keep)
    omega = np.exp(log_all[:, 0])
    z = single.sum(axis=1) + omega
    if np.any(z <= 0.0):
        raise TotalConflict("neighbour evidence is fully contradictory")
    return single / z[:, None], omega / z


def _measures(single: np.ndarray, omega: np.ndarray, K: int):
    betp = single + omega[:, None] / K
    eu = omega * np.log2(K)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(single > 0.0, single * np.log2(betp), 0.0)
    au = np.maximum(-terms.sum(axis=1), 0.0)
    return np.argmax(betp, axis=1), eu, au


def predict_with_uncertainty(model: EknnModel, x) -> UncertaintyScore:
    q = _as_queries(model, x)
    if q.shape[0] != 1:
        raise DimensionMismatch("use score_batch for several instances")
    single, omega = _fused(model, q)
    frame = model.frame
    masses = {1 << c: float(v) for c, v in enumerate(single[0]) if v > 0.0}
    if omega[0] > 0.0:
        masses[frame.full] = float(omega[0])
    mass = MassFunction(frame, masses)
    pred, _, _ = _measures(single, omega, len(frame))
    return UncertaintyScore(int(pred[0]), non_specificity(mass), discord(mass), mass)


def predict_iterative(model: EknnModel, x) -> MassFunction:
    """Reference fusion through repeated pairwise Dempster combination."""
    return combine_all([m for _, m in neighbor_masses(model, x)])


def score_batch(model: EknnModel, X) -> BatchScores:
    q = _as_queries(model, X)
    single, omega = _fused(model, q)
    pred, eu, au = _measures(single, omega, len(model.frame))
    return BatchScores(pred, eu, au)


def add_labeled(model: EknnModel, x, y, *, encoded: bool = False, seed: int = 0) -> EknnModel:
    """Return a new model with one more training row.

    ``gamma`` is recomputed exactly while the pair count stays within the
    budget; beyond it a sampled estimate is refreshed every 64 insertions.
    A gamma given explicitly at fit time is kept.
    """
    row = np.asarray(x, dtype=float).reshape(1, -1)
    if row.shape[1] != model.dim:
        raise DimensionMismatch(f"expected {model.dim} features, got {row.shape[1]}")
    label = _encode_labels([y], model.frame, encoded)
    features = np.vstack([model.features, row])
    labels = np.concatenate([model.labels, label])
    features.setflags(write=False)
    labels.setflags(write=False)
    gamma, since = model.gamma, model.inserts_since_refresh + 1
    if not model.gamma_fixed:
        n = features.shape[0]
        if n * (n - 1) // 2 <= PAIR_BUDGET:
            gamma, since = estimate_gamma(features), 0
        elif since >= REFRESH_EVERY:
            gamma, since = estimate_gamma(features, PAIR_BUDGET, seed), 0
    return replace(model, features=features, labels=labels, gamma=gamma, inserts_since_refresh=since)


# ---------------------------------------------------------------------------
# model cache

_MAGIC = b"EKNN"
_VERSION = 1
_HEADER = struct.Struct("<4sIQQIIdd?I")


def save_model(model: EknnModel, path) -> None:
    """Write a little-endian binary blob: header, frame JSON, features, labels."""
    frame_json = json.dumps(list(model.frame.labels)).encode("utf-8")
    header = _HEADER.pack(
        _MAGIC, _VERSION, model.n, model.dim, len(model.frame), model.k,
        model.gamma, model.alpha0, model.gamma_fixed, len(frame_json),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(frame_json)
        fh.write(np.ascontiguousarray(model.features, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.labels, dtype="<i4").tobytes())


def load_model(path) -> EknnModel:
    data = Path(path).read_bytes()
    magic, version, n, p, K, k, gamma, alpha0, fixed, flen = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError("not an EK-NN model file")
    if version != _VERSION:
        raise ValueError(f"unsupported model file version {version}")
    off = _HEADER.size
    frame = Frame(tuple(json.loads(data[off : off + flen].decode("utf-8"))))
    off += flen
    features = np.frombuffer(data, dtype="<f8", count=n * p, offset=off).reshape(n, p).astype(float)
    off += 8 * n * p
    labels = np.frombuffer(data, dtype="<i4", count=n, offset=off).astype(np.int64)
    if len(frame) != K:
        raise ValueError("corrupt model file: frame size mismatch")
    model = fit(features, labels, frame, k, alpha0, gamma, encoded=True)
    return replace(model, gamma_fixed=bool(fixed))
