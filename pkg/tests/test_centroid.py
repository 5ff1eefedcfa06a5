import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alfa import centroid
from alfa.belief import Frame
from alfa.errors import DimensionMismatch, MissingClass

AB = Frame(("a", "b"))
ABC = Frame(("a", "b", "c"))


def test_centroids_are_class_means():
    model = centroid.fit_centroids([[0.0, 0.0], [2.0, 0.0], [5.0, 5.0]], [0, 0, 1], AB)
    assert np.array_equal(model.centroids, [[1.0, 0.0], [5.0, 5.0]])
    points = centroid.fit_centroids([[1.0, 2.0], [3.0, 4.0]], ["b", "a"], AB, encoded=False)
    assert np.array_equal(points.centroids, [[3.0, 4.0], [1.0, 2.0]])


def test_row_order_does_not_matter():
    rng = np.random.default_rng(0)
    X, y = rng.normal(size=(30, 4)), np.arange(30) % 3
    perm = rng.permutation(30)
    a = centroid.fit_centroids(X, y, ABC)
    b = centroid.fit_centroids(X[perm], y[perm], ABC)
    assert np.allclose(a.centroids, b.centroids, atol=1e-14)


def test_kernel_values():
    sigma = 0.5
    model = centroid.fit_centroids([[0.0, 0.0], [10.0, 0.0]], [0, 1], AB, sigma)
    assert centroid.rbf_certainty(model, [0.0, 0.0])[0] == 1.0
    u = centroid.rbf_certainty(model, [sigma * math.sqrt(2), 0.0])
    assert u[0] == pytest.approx(math.exp(-1))
    assert np.all(u > 0)


def test_on_a_centroid_far_from_the_rest():
    model = centroid.fit_centroids([[0.0], [100.0]], [0, 1], AB, 1.0)
    s = centroid.centroid_score(model, [0.0])
    assert s.predicted == 0 and s.eu == 0.0 and s.au == pytest.approx(0.0, abs=1e-12)


def test_equidistant_query():
    model = centroid.fit_centroids([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]], [0, 1, 2], ABC, 1.0)
    s = centroid.centroid_score(model, [0.0, 0.0])
    assert s.au == pytest.approx(math.log2(3))
    assert s.predicted == 0


def test_two_class_entropy_example():
    # U = (1, e^-1): distance sigma * sqrt(2) to the second centroid
    model = centroid.fit_centroids([[0.0], [math.sqrt(2)]], [0, 1], AB, 1.0)
    s = centroid.centroid_score(model, [0.0])
    q = 1 / (1 + math.exp(-1))
    h2 = -(q * math.log2(q) + (1 - q) * math.log2(1 - q))
    assert s.eu == 0.0
    assert s.au == pytest.approx(h2, abs=1e-12)
    assert s.au == pytest.approx(0.840, abs=5e-4)


def test_underflow_keeps_a_distribution():
    model = centroid.fit_centroids([[0.0], [1.0]], [0, 1], AB, 1e-3)
    s = centroid.centroid_score(model, [500.0])
    assert s.eu == 1.0 and s.predicted == 1
    assert math.isfinite(s.au) and s.au == pytest.approx(0.0, abs=1e-12)


def test_dimension_normalized_distance():
    model = centroid.fit_centroids([[0.0] * 4, [1.0] * 4], [0, 1], AB, 1.0, dim_normalized=True)
    u = centroid.rbf_certainty(model, [1.0] * 4)
    assert u[0] == pytest.approx(math.exp(-0.5))


def test_errors():
    with pytest.raises(MissingClass):
        centroid.fit_centroids([[0.0], [1.0]], [0, 0], AB)
    model = centroid.fit_centroids([[0.0], [1.0]], [0, 1], AB)
    with pytest.raises(DimensionMismatch):
        centroid.centroid_score(model, [0.0, 1.0])


@st.composite
def cases(draw):
    rng = np.random.default_rng(draw(st.integers(0, 2**31)))
    K = draw(st.integers(2, 5))
    p = draw(st.integers(1, 4))
    X = rng.normal(size=(3 * K, p))
    y = np.arange(3 * K) % K
    return X, y, Frame(tuple(range(K))), rng.normal(size=(6, p)), draw(st.floats(0.2, 3.0))


@settings(max_examples=200, deadline=None)
@given(cases())
def test_ranges_and_nearest_centroid(case):
    X, y, frame, q, sigma = case
    model = centroid.fit_centroids(X, y, frame, sigma)
    s = centroid.score_batch(model, q)
    # C > 0 exactly, but 1 - C rounds to 1.0 once C drops below 1e-16
    assert np.all(np.isfinite(centroid._log_kernel(model, q)))
    assert np.all((s.eu >= 0) & (s.eu <= 1))
    assert np.all((s.au >= 0) & (s.au <= math.log2(len(frame)) + 1e-12))
    dist = np.linalg.norm(q[:, None] - model.centroids[None], axis=2)
    assert np.array_equal(s.predicted, dist.argmin(axis=1))


@settings(max_examples=200, deadline=None)
@given(cases(), st.floats(0.1, 10.0), st.floats(-5.0, 5.0))
def test_translation_and_scaling(case, c, shift):
    X, y, frame, q, sigma = case
    a = centroid.score_batch(centroid.fit_centroids(X, y, frame, sigma), q)
    b = centroid.score_batch(centroid.fit_centroids(c * X + shift, y, frame, c * sigma), c * q + shift)
    assert np.array_equal(a.predicted, b.predicted)
    assert np.allclose(a.eu, b.eu, atol=1e-9) and np.allclose(a.au, b.au, atol=1e-9)
