import math

import numpy as np
import pytest

from alfa import eknn
from alfa.acquisition import Budgets
from alfa.backends import METHODS, BackendConfig, fit_backend
from alfa.belief import Frame
from alfa.data import MultiModalDataset, ModalitySpec, carve, fit_scaler, load_builtin, split
from alfa.errors import InvalidConfig
from alfa.harness import experiments as exp
from alfa.harness.synthetic import two_modality_dataset


@pytest.fixture(scope="module")
def wine():
    return load_builtin("wine")


@pytest.mark.parametrize("method", METHODS)
def test_full_size_matches_direct_fit(wine, method):
    res = exp.run_learning_curve(wine, method, modalities=3, sizes=[99], seeds=[4], workers=1)
    [rec] = res.records
    plan = split(len(wine), (0.7, 0.3), 4)
    fit_pool, _ = carve(plan.train, 0.2)
    cols = wine.view_columns(3)
    scaler = fit_scaler(wine.X[np.ix_(plan.train, cols)])
    scorer = fit_backend(BackendConfig(method), scaler.transform(wine.X[np.ix_(fit_pool, cols)]), wine.y[fit_pool], wine.frame, 4)
    pred = scorer.score_batch(scaler.transform(wine.X[np.ix_(plan.test, cols)])).predicted
    assert rec.accuracy == (pred == wine.y[plan.test]).mean()
    assert rec.n_test == 54 and rec.robust_count <= rec.n_test


def test_test_labels_are_not_read_before_scoring(wine):
    # corrupting the test labels must not move the thresholds
    plan = split(len(wine), (0.7, 0.3), 2)
    y = wine.y.copy()
    y[plan.test] = (y[plan.test] + 1) % 3
    other = MultiModalDataset(wine.X, y, wine.frame, wine.modalities, wine.column_names, wine.column_origin, "wine")
    a = exp.run_learning_curve(wine, "eknn", sizes=[40, 99], seeds=[2], workers=1)
    b = exp.run_learning_curve(other, "eknn", sizes=[40, 99], seeds=[2], workers=1)
    for ra, rb in zip(a.records, b.records):
        assert (ra.t_e, ra.t_a, ra.robust_count, ra.mean_eu) == (rb.t_e, rb.t_a, rb.robust_count, rb.mean_eu)


def _same(a, b):
    return a == b or (isinstance(a, float) and math.isnan(a) and math.isnan(b))


def test_curve_is_reproducible_across_workers(wine):
    kwargs = dict(modalities=[0, 3], sizes=[16, 99], seeds=[0, 1, 2])
    a = exp.run_learning_curve(wine, ("entropy", "variance"), **kwargs, workers=1)
    b = exp.run_learning_curve(wine, ("entropy", "variance"), **kwargs, workers=2)
    assert len(a.rows()) == len(b.rows())
    for ra, rb in zip(a.rows(), b.rows()):
        assert all(_same(ra[k], rb[k]) for k in exp.RECORD_FIELDS)


def test_curve_records_and_cells(wine):
    res = exp.run_learning_curve(wine, "centroid", sizes=[8, 99], seeds=range(3), workers=1)
    assert len(res.records) == 4 * 2 * 3
    for r in res.records:
        assert 0 <= r.robust_count <= r.n_test
        assert math.isnan(r.robust_accuracy) == (r.robust_count == 0)
    cells = res.cells()
    assert len(cells) == 8 and all(c.n_seeds == 3 for c in cells)
    c = res.cell("centroid", 0, 99)
    assert c.accuracy_mean == pytest.approx(np.mean([r.accuracy for r in res.records if (r.modality, r.size) == (0, 99)]))
    assert set(res.rows()[0]) == set(exp.RECORD_FIELDS)


def test_tiny_sizes_with_a_missing_class_are_skipped(wine):
    res = exp.run_learning_curve(wine, "centroid", modalities=0, sizes=[2], seeds=range(5), workers=1)
    assert all(r.status.startswith("skipped") for r in res.records)
    assert res.cells() == []


def test_curve_argument_checks(wine):
    with pytest.raises(InvalidConfig):
        exp.run_learning_curve(wine, "bogus", sizes=[8], seeds=[0])
    with pytest.raises(InvalidConfig):
        exp.run_learning_curve(wine, "eknn", sizes=[500], seeds=[0])


def test_without_validation_everything_is_robust(wine):
    res = exp.run_learning_curve(wine, "eknn", modalities=0, sizes=[124], seeds=[0], validation_fraction=0.0, workers=1)
    [r] = res.records
    assert r.t_e == math.inf and r.robust_count == r.n_test


def test_default_sizes():
    assert exp.default_sizes(99) == [8, 16, 24, 32, 40, 48, 56, 64, 72, 80, 88, 96, 99]
    assert exp.default_sizes(124)[-2:] == [120, 124]


def test_disentanglement_runs(wine):
    [res] = exp.run_disentanglement({"wine": wine}, "eknn", seeds=range(3), workers=1)
    assert res.n_seeds == 3 and -1 <= res.r <= 1 and 0 <= res.p <= 1
    assert res.r == pytest.approx(np.mean([r for _, r, _ in res.per_seed]))


def test_disentanglement_zero_variance_is_reported():
    # every test row sits on a training row of the same class far from others
    X = np.repeat(np.array([[0.0], [100.0]]), 20, axis=0)
    y = np.repeat([0, 1], 20)
    ds = MultiModalDataset(X, y, Frame(("a", "b")), (ModalitySpec("m", (0,)),), ("x",), ("x",), "flat")
    [res] = exp.run_disentanglement([ds], "centroid", seeds=range(2), workers=1)
    assert math.isnan(res.r) and not res.significant and res.n_seeds == 0
    assert "constant" in res.diagnostic


def test_monotonicity_single_size(wine):
    res = exp.run_monotonicity(wine, "eknn", sizes=[50], seeds=range(2), workers=1)
    assert len(res.mean_eu) == 1 and math.isnan(res.spearman)


def test_monotonicity_trend(wine):
    res = exp.run_monotonicity(wine, "eknn", sizes=[8, 32, 64, 124], seeds=range(5), workers=1)
    assert list(res.mean_eu) == sorted(res.mean_eu, reverse=True)
    assert res.spearman == pytest.approx(-1.0)
    with pytest.raises(InvalidConfig):
        exp.run_monotonicity(wine, "eknn", sizes=[20, 10], seeds=[0])


def test_duplicated_training_data_never_raises_eu():
    # with a fixed discount scale, extra copies can only bring neighbours closer;
    # a re-estimated gamma shrinks with every zero-distance pair instead
    base = load_builtin("iris")
    X = np.vstack([base.X[::5]] * 6)
    y = np.concatenate([base.y[::5]] * 6)
    q = base.X[2::5]
    gamma = eknn.estimate_gamma(base.X[::5])
    sizes = [30, 60, 90, 120, 180]
    eus = [eknn.score_batch(eknn.fit(X[:n], y[:n], base.frame, 7, gamma=gamma, encoded=True), q).eu for n in sizes]
    for a, b in zip(eus, eus[1:]):
        assert np.all(b <= a + 1e-12)


def test_episode_batch_disabled_thresholds():
    ds, _ = two_modality_dataset(150, 0)
    batch = exp.run_alfa_episode_batch(ds, "eknn", None, Budgets(), seed=0, max_episodes=12)
    s = batch.summary
    assert s.n_episodes == 12 and s.fraction_reliable == 1.0
    assert s.mean_label_cost == 0.0 and s.mean_modality_cost == 0.0
    assert s.termination["noise"]["Reliable"] == 12


def test_episode_batch_modes():
    ds, _ = two_modality_dataset(200, 1)
    a = exp.run_alfa_episode_batch(ds, "eknn", 0.05, Budgets(max_total_labels=20), "independent", seed=1, max_episodes=8)
    b = exp.run_alfa_episode_batch(ds, "eknn", 0.05, Budgets(max_total_labels=20), "independent", seed=1, max_episodes=8)
    assert [t.steps for _, t in a.traces] == [t.steps for _, t in b.traces]
    shared = exp.run_alfa_episode_batch(ds, "eknn", 0.05, Budgets(max_total_labels=20), "shared", seed=1, max_episodes=8)
    assert shared.summary.n_episodes == 8
    d = a.summary.to_dict()
    assert set(d) >= {"fraction_reliable", "termination", "mean_label_cost", "reliable_accuracy", "thresholds"}
    with pytest.raises(InvalidConfig):
        exp.run_alfa_episode_batch(ds, "eknn", 0.05, mode="bogus")


def test_hard_instances_end_on_the_last_modality():
    ds, separable = two_modality_dataset(400, 3, hard_fraction=0.3)
    batch = exp.run_alfa_episode_batch(ds, "eknn", 0.05, Budgets(max_labels_per_modality=10, max_total_labels=30), seed=3)
    for row, trace in batch.traces:
        if not separable[row]:
            assert trace.outcome == "BudgetExhausted" or trace.final_modality == len(ds.modalities) - 1


def test_usable_thresholds():
    assert exp.usable_thresholds(-math.inf, 0.3, 40) == exp.SKIP_MODALITY
    assert exp.usable_thresholds(0.2, 0.3, 3) == exp.SKIP_MODALITY
    assert exp.usable_thresholds(0.2, 0.3, 40) == (0.2, 0.3)
    assert exp.usable_thresholds(math.inf, math.inf, 40) == (math.inf, math.inf)


def test_calibration_rows(wine):
    rows = exp.run_calibration(wine, "eknn", seeds=[0, 1], alpha=0.05)
    assert len(rows) == 8 and set(rows[0]) == set(exp.CALIBRATION_FIELDS)
    for r in rows:
        assert r["n_validation"] == 25
        if r["accepted"]:
            assert r["accepted_accuracy"] >= 0.95


def test_worker_count(monkeypatch):
    monkeypatch.setenv(exp.WORKERS_ENV, "3")
    assert exp.worker_count() == 3 and exp.worker_count(1) == 1
    monkeypatch.setenv(exp.WORKERS_ENV, "many")
    with pytest.raises(InvalidConfig):
        exp.worker_count()
