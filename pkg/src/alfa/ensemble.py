"""Bagged CART forest and the two ensemble uncertainty decompositions.

The forest is a plain random forest: every tree is grown with Gini impurity on
a bootstrap resample, considering ``floor(sqrt(P))`` random features per split.
Each tree's leaves store class frequencies, so the forest yields an ``M x K``
matrix of member distributions for any instance.  That matrix is read as a
sample from a second-order distribution and decomposed either by entropy
(total = entropy of the mean, aleatoric = mean entropy) or label-wise by
variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from alfa.belief import Frame
from alfa.errors import DimensionMismatch, EmptyTrainingSet
from alfa.score import BatchScores, UncertaintyScore


@dataclass(frozen=True)
class ForestParams:
    n_estimators: int = 100
    max_depth: Optional[int] = 4
    min_samples_leaf: int = 1
    max_features: str = "sqrt"  # "sqrt" or "all"
    bootstrap: bool = True

    def features_per_split(self, p: int) -> int:
        if self.max_features == "all":
            return p
        if self.max_features == "sqrt":
            return max(1, int(math.sqrt(p)))
        raise ValueError(f"unknown max_features rule {self.max_features!r}")


@dataclass(frozen=True, eq=False)
class DecisionTree:
    """Array-backed binary tree; ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (nodes, K) class frequencies, meaningful at leaves

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depths[self.left[i]] = depths[i] + 1
                depths[self.right[i]] = depths[i] + 1
        return int(depths.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        return _descend(self.feature, self.threshold, self.left, self.right, np.zeros(X.shape[0], dtype=np.int64), X, np.arange(X.shape[0]))

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


def _descend(feature, threshold, left, right, node, X, rows):
    """Move every entry of ``node`` down to its leaf; ``rows[i]`` is its row of X."""
    while True:
        f = feature[node]
        inner = f >= 0
        if not inner.any():
            return node
        # leaves read an arbitrary column; their move is masked out below
        go_left = X[rows, f] <= threshold[node]
        node = np.where(inner, np.where(go_left, left[node], right[node]), node)


@dataclass(frozen=True, eq=False)
class BaggedEnsemble:
    trees: tuple
    frame: Frame
    params: ForestParams
    seed: int
    n_features: int

    def __len__(self) -> int:
        return len(self.trees)

    @cached_property
    def _packed(self) -> tuple:
        """All trees as one node table so a batch descends every tree at once."""
        sizes = [t.n_nodes for t in self.trees]
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)

        def shift(a, off):
            return np.where(a >= 0, a + off, a)

        feature = np.concatenate([t.feature for t in self.trees])
        threshold = np.concatenate([t.threshold for t in self.trees])
        left = np.concatenate([shift(t.left, o) for t, o in zip(self.trees, offsets)])
        right = np.concatenate([shift(t.right, o) for t, o in zip(self.trees, offsets)])
        value = np.concatenate([t.value for t in self.trees])
        return feature, threshold, left, right, value, offsets


def _best_split(x: np.ndarray, y1h: np.ndarray, features, min_leaf: int):
    """Gini-optimal ``(feature, threshold)`` or ``None``.

    Thresholds are midpoints between consecutive distinct values.  Gains equal
    to within 1e-12 keep the lower feature index, then the lower threshold.
    """
    n = x.shape[0]
    feats = np.sort(np.asarray(features, dtype=np.int64))
    xf = x[:, feats]
    order = xf.argsort(axis=0, kind="stable")  # n x q
    xs = xf[order, np.arange(len(feats))]
    left_counts = y1h[order].cumsum(axis=0)[:-1]  # (n-1) x q x K
    total = left_counts[-1, 0] + y1h[order[-1, 0]]
    n_left = np.arange(1, n, dtype=float)[:, None]
    n_right = n - n_left
    valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    # weighted child impurity is n - sum(l^2)/n_l - sum(r^2)/n_r
    score = (left_counts**2).sum(axis=2) / n_left + ((total - left_counts) ** 2).sum(axis=2) / n_right
    gain = (score - (total**2).sum() / n) / n
    gain[~valid] = -np.inf
    gain = gain.T  # q x (n-1): feature-major, then ascending threshold
    flat = int(np.argmax(gain.ravel() >= gain.max() - 1e-12))
    fi, pos = divmod(flat, n - 1)
    return int(feats[fi]), 0.5 * (xs[pos, fi] + xs[pos + 1, fi])


def fit_tree(x: np.ndarray, y: np.ndarray, n_classes: int, params: ForestParams, rng: np.random.Generator) -> DecisionTree:
    """Grow one CART tree on ``(x, y)``; ``y`` holds class indices."""
    y1h = np.eye(n_classes)[y]
    n_feat = x.shape[1]
    per_split = params.features_per_split(n_feat)
    all_feats = np.arange(n_feat)
    feature, threshold, left, right, counts_of = [], [], [], [], []

    def new_node(counts):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts_of.append(counts)
        return len(feature) - 1

    # depth-first with an explicit stack keeps node numbering deterministic
    root = new_node(np.bincount(y, minlength=n_classes))
    stack = [(root, np.arange(x.shape[0]), 0)]
    while stack:
        node, rows, depth = stack.pop()
        counts = counts_of[node]
        if (
            (params.max_depth is not None and depth >= params.max_depth)
            or np.count_nonzero(counts) <= 1
            or len(rows) < 2 * params.min_samples_leaf
        ):
            continue
        cand = rng.permutation(n_feat)[:per_split] if per_split < n_feat else all_feats
        split = _best_split(x[rows], y1h[rows], cand, params.min_samples_leaf)
        if split is None:
            continue
        f, t = split
        go_left = x[rows, f] <= t
        lrows, rrows = rows[go_left], rows[~go_left]
        li = new_node(np.bincount(y[lrows], minlength=n_classes))
        ri = new_node(counts - counts_of[li])
        feature[node], threshold[node], left[node], right[node] = f, t, li, ri
        stack.append((ri, rrows, depth + 1))
        stack.append((li, lrows, depth + 1))
    value = np.array(counts_of, dtype=float)
    return DecisionTree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        value / value.sum(axis=1, keepdims=True),
    )


def fit_forest(
    features,
    labels,
    frame: Frame,
    params: ForestParams = ForestParams(),
    seed: int = 0,
    *,
    encoded: bool = True,
) -> BaggedEnsemble:
    """Train ``params.n_estimators`` trees on bootstrap resamples.

    Tree ``i`` draws from its own random stream spawned from ``seed``, so the
    result does not depend on the order trees are built in.
    """
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyTrainingSet("cannot fit a forest on no data")
    if encoded:
        y = np.asarray(labels, dtype=np.int64)
    else:
        y = np.array([frame.index(lab) for lab in labels], dtype=np.int64)
    if y.shape[0] != x.shape[0]:
        raise DimensionMismatch("features and labels have different lengths")
    if params.n_estimators < 1:
        raise ValueError("need at least one tree")
    K, n = len(frame), x.shape[0]
    trees = []
    for stream in np.random.SeedSequence(seed).spawn(params.n_estimators):
        rng = np.random.default_rng(stream)
        rows = rng.integers(0, n, size=n) if params.bootstrap else np.arange(n)
        trees.append(fit_tree(x[rows], y[rows], K, params, rng))
    return BaggedEnsemble(tuple(trees), frame, params, seed, x.shape[1])


def member_probs(model: BaggedEnsemble, x) -> np.ndarray:
    """``M x K`` matrix (one instance) or ``n x M x K`` tensor (a batch)."""
    q = np.asarray(x, dtype=float)
    single = q.ndim == 1
    q = q[None, :] if single else q
    if q.shape[1] != model.n_features:
        raise DimensionMismatch(f"expected {model.n_features} features, got {q.shape[1]}")
    feature, threshold, left, right, value, offsets = model._packed
    n, M = q.shape[0], len(model.trees)
    start = np.broadcast_to(offsets, (n, M)).ravel()
    rows = np.repeat(np.arange(n), M)
    leaves = _descend(feature, threshold, left, right, start, q, rows)
    probs = value[leaves].reshape(n, M, -1)
    return probs[0] if single else probs


def _plogp(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p > 0.0, p * np.log2(p), 0.0)


def entropy_decomposition(probs) -> tuple:
    """Return ``(tu, au, eu)``; works on ``M x K`` or batched ``n x M x K``."""
    p = np.asarray(probs, dtype=float)
    au = -_plogp(p).sum(axis=-1).mean(axis=-1)
    tu = -_plogp(p.mean(axis=-2)).sum(axis=-1)
    eu = tu - au
    eu = np.where(eu < 0.0, 0.0, eu)
    if p.ndim == 2:
        return float(tu), float(au), float(eu)
    return tu, au, eu


def variance_decomposition(probs) -> tuple:
    """Label-wise variance decomposition, ``(tu, au, eu)`` with ``tu = au + eu``.

    Expectations over the second-order distribution are empirical means over
    the members; the variance is the population (1/M) variance.
    """
    p = np.asarray(probs, dtype=float)
    au = (p * (1.0 - p)).mean(axis=-2).sum(axis=-1)
    eu = p.var(axis=-2).sum(axis=-1)
    tu = au + eu
    if p.ndim == 2:
        return float(tu), float(au), float(eu)
    return tu, au, eu


DECOMPOSITIONS = {"entropy": entropy_decomposition, "variance": variance_decomposition}


def ensemble_score(model: BaggedEnsemble, x, decomposition: str = "entropy") -> UncertaintyScore:
    probs = member_probs(model, x)
    if probs.ndim != 2:
        raise DimensionMismatch("ensemble_score takes a single instance")
    tu, au, eu = DECOMPOSITIONS[decomposition](probs)
    predicted = int(np.argmax(probs.mean(axis=0)))
    return UncertaintyScore(predicted, eu, au, None, {"tu": tu})


def score_batch(model: BaggedEnsemble, X, decomposition: str = "entropy") -> BatchScores:
    probs = member_probs(model, np.atleast_2d(X))
    _, au, eu = DECOMPOSITIONS[decomposition](probs)
    return BatchScores(np.argmax(probs.mean(axis=1), axis=1), eu, au)
