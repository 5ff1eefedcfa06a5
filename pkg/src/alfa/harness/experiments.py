"""Experiment drivers: learning curves, EU/AU correlation, EU monotonicity and
batches of acquisition episodes.

Every driver is a pure function of its inputs and seeds.  Work fans out over
seeds (or datasets) and the records are merged in sorted key order, so the
result does not depend on the number of workers.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from alfa import acquisition as acq
from alfa.backends import METHODS, BackendConfig, Scorer, fit_backend, forest_pair
from alfa.data import MultiModalDataset, carve, fit_scaler, split
from alfa.errors import InvalidConfig, MissingClass, ZeroVariance
from alfa.harness.stats import pearson, spearman

WORKERS_ENV = "ALFA_WORKERS"
RESULT_SCHEMA_VERSION = 1
SIGNIFICANCE = 0.05


def worker_count(requested: Optional[int] = None) -> int:
    """Explicit request, else ``$ALFA_WORKERS``, else the available CPUs."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InvalidConfig(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:  # pragma: no cover - non-Linux
        return max(1, os.cpu_count() or 1)


def _fan_out(fn, jobs: list, workers: Optional[int]) -> list:
    n = min(worker_count(workers), len(jobs))
    if n <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, jobs))


def _as_tuple(value) -> tuple:
    if isinstance(value, (str, int, np.integer)):
        return (value,)
    return tuple(value)


# ---------------------------------------------------------------------------
# learning curves

RECORD_FIELDS = (
    "method", "modality", "size", "seed", "n_test", "accuracy",
    "robust_count", "robust_accuracy", "mean_eu", "mean_au", "t_e", "t_a", "status",
)


@dataclass(frozen=True)
class CurveRecord:
    method: str
    modality: int
    size: int
    seed: int
    n_test: int
    accuracy: float
    robust_count: int
    robust_accuracy: float  # nan when robust_count == 0
    mean_eu: float
    mean_au: float
    t_e: float
    t_a: float
    status: str = "ok"

    @property
    def key(self) -> tuple:
        return (METHODS.index(self.method), self.modality, self.size, self.seed)


@dataclass(frozen=True)
class CellSummary:
    method: str
    modality: int
    size: int
    n_seeds: int
    accuracy_mean: float
    accuracy_std: float
    robust_count_mean: float
    robust_count_std: float
    robust_accuracy_mean: float  # over seeds with at least one robust prediction
    robust_accuracy_std: float
    robust_seeds: int
    mean_eu: float
    mean_au: float


@dataclass
class ExperimentResult:
    records: list
    dataset: str = ""
    alpha: float = 0.05
    validation_fraction: float = 0.2

    def cells(self) -> list:
        """Mean/std over seeds for every (method, modality, size)."""
        groups: dict = {}
        for r in self.records:
            if r.status == "ok":
                groups.setdefault((METHODS.index(r.method), r.modality, r.size), []).append(r)
        out = []
        for key in sorted(groups):
            rs = groups[key]
            acc = np.array([r.accuracy for r in rs])
            cnt = np.array([r.robust_count for r in rs], dtype=float)
            racc = np.array([r.robust_accuracy for r in rs if r.robust_count > 0])
            out.append(
                CellSummary(
                    rs[0].method, rs[0].modality, rs[0].size, len(rs),
                    float(acc.mean()), float(acc.std()),
                    float(cnt.mean()), float(cnt.std()),
                    float(racc.mean()) if racc.size else math.nan,
                    float(racc.std()) if racc.size else math.nan,
                    int(racc.size),
                    float(np.mean([r.mean_eu for r in rs])),
                    float(np.mean([r.mean_au for r in rs])),
                )
            )
        return out

    def cell(self, method: str, modality: int, size: int) -> CellSummary:
        for c in self.cells():
            if (c.method, c.modality, c.size) == (method, modality, size):
                return c
        raise KeyError((method, modality, size))

    def rows(self) -> list:
        return [asdict(r) for r in self.records]


@dataclass(frozen=True)
class _CurveJob:
    dataset: MultiModalDataset
    methods: tuple
    modalities: tuple
    sizes: tuple
    seed: int
    alpha: float
    validation_fraction: float
    split_ratios: tuple
    config: BackendConfig


def _prepare(ds: MultiModalDataset, seed: int, ratios, validation_fraction: float):
    plan = split(len(ds), ratios, seed)
    fit_pool, val = carve(plan.train, validation_fraction)
    return plan, fit_pool, val


def _scaled_views(ds: MultiModalDataset, j: int, pool: np.ndarray, *parts):
    # unsupervised scaling statistics from the whole training pool (no labels)
    cols = ds.view_columns(j)
    scaler = fit_scaler(ds.X[np.ix_(pool, cols)])
    return [scaler.transform(ds.X[np.ix_(p, cols)]) for p in parts]


def _fit_methods(config: BackendConfig, methods, X, y, frame, seed) -> dict:
    scorers = {}
    if "entropy" in methods and "variance" in methods:
        scorers.update(forest_pair(config, X, y, frame, seed))
    for m in methods:
        if m not in scorers:
            scorers[m] = fit_backend(replace(config, method=m), X, y, frame, seed)
    return scorers


def _curve_seed(job: _CurveJob) -> list:
    ds = job.dataset
    plan, fit_pool, val = _prepare(ds, job.seed, job.split_ratios, job.validation_fraction)
    y_test = ds.y[plan.test]
    out = []
    for j in job.modalities:
        X_fit, X_val, X_test = _scaled_views(ds, j, plan.train, fit_pool, val, plan.test)
        for size in job.sizes:
            rows = slice(0, size)
            try:
                scorers = _fit_methods(job.config, job.methods, X_fit[rows], ds.y[fit_pool][rows], ds.frame, job.seed)
            except MissingClass as exc:
                for m in job.methods:
                    out.append(CurveRecord(m, j, size, job.seed, len(y_test), math.nan, 0, math.nan, math.nan, math.nan, math.nan, math.nan, f"skipped: {exc}"))
                continue
            for m in job.methods:
                scorer = scorers[m]
                if val.size:
                    t_e, t_a = acq.calibrate(scorer.score_batch(X_val), ds.y[val], job.alpha)
                else:
                    t_e = t_a = math.inf
                # test labels are only touched here, after calibration
                s = scorer.score_batch(X_test)
                ok = s.predicted == y_test
                robust = (s.eu < t_e) & (s.au < t_a)
                n_rob = int(robust.sum())
                out.append(
                    CurveRecord(
                        m, j, size, job.seed, len(y_test), float(ok.mean()), n_rob,
                        float(ok[robust].mean()) if n_rob else math.nan,
                        float(s.eu.mean()), float(s.au.mean()), float(t_e), float(t_a),
                    )
                )
    return out


def run_learning_curve(
    dataset: MultiModalDataset,
    method="eknn",
    modalities=None,
    sizes: Optional[Sequence[int]] = None,
    seeds: Iterable[int] = range(10),
    alpha: float = 0.05,
    *,
    validation_fraction: float = 0.2,
    split_ratios: Sequence[float] = (0.7, 0.3),
    config: Optional[BackendConfig] = None,
    workers: Optional[int] = None,
) -> ExperimentResult:
    """Accuracy and robust-prediction statistics versus training-set size.

    For each seed the data are split into train pool and test set, and the
    last ``validation_fraction`` of the (shuffled) train pool is held out for
    threshold calibration.  A model of each size is fitted on the first
    ``size`` rows of the remainder.  A test prediction is robust when
    ``eu < t_e`` and ``au < t_a``.  With ``validation_fraction=0`` no
    thresholds are calibrated and every prediction counts as robust.

    ``method`` and ``modalities`` accept one value or a sequence; modalities
    are 0-based prefix indices and default to all of them.  The two ensemble
    decompositions share one fitted forest per cell.
    """
    methods = _as_tuple(method)
    for m in methods:
        if m not in METHODS:
            raise InvalidConfig(f"unknown method {m!r}")
    mods = tuple(range(len(dataset.modalities))) if modalities is None else tuple(int(j) for j in _as_tuple(modalities))
    seeds = tuple(int(s) for s in seeds)
    plan, fit_pool, _ = _prepare(dataset, 0, split_ratios, validation_fraction)
    pool = len(fit_pool)
    sizes = (pool,) if sizes is None else tuple(int(s) for s in sizes)
    if any(s < 1 or s > pool for s in sizes):
        raise InvalidConfig(f"sizes must lie in [1, {pool}]")
    config = config or BackendConfig()
    jobs = [
        _CurveJob(dataset, methods, mods, sizes, s, alpha, validation_fraction, tuple(split_ratios), config)
        for s in seeds
    ]
    records = [r for batch in _fan_out(_curve_seed, jobs, workers) for r in batch]
    records.sort(key=lambda r: r.key)
    return ExperimentResult(records, dataset.name, alpha, validation_fraction)


def default_sizes(pool: int, start: int = 8, step: int = 8) -> list:
    """``start, start+step, ...`` capped by and always ending at ``pool``."""
    sizes = list(range(start, pool, step))
    return sizes + [pool]


# ---------------------------------------------------------------------------
# EU / AU correlation


@dataclass(frozen=True)
class CorrelationResult:
    dataset: str
    r: float  # mean over seeds
    p: float  # median over seeds
    significant: bool
    n_seeds: int
    per_seed: tuple = ()  # ((seed, r, p), ...)
    diagnostic: str = ""


def _correlation_seed(args) -> tuple:
    ds, config, seed, train_fraction = args
    plan = split(len(ds), (train_fraction, 1.0 - train_fraction), seed)
    j = len(ds.modalities) - 1
    X_train, X_test = _scaled_views(ds, j, plan.train, plan.train, plan.test)
    scorer = fit_backend(config, X_train, ds.y[plan.train], ds.frame, seed)
    s = scorer.score_batch(X_test)
    try:
        r, p = pearson(s.eu, s.au)
    except ZeroVariance as exc:
        return seed, math.nan, math.nan, str(exc)
    return seed, r, p, ""


def run_disentanglement(
    datasets,
    method: str = "eknn",
    seeds: Iterable[int] = range(20),
    *,
    config: Optional[BackendConfig] = None,
    train_fraction: float = 0.7,
    workers: Optional[int] = None,
) -> list:
    """Pearson correlation of per-instance EU and AU on held-out data.

    The reported ``r`` is the mean over seeds and ``p`` the median, so one
    unlucky split cannot flip the significance flag.  A dataset whose EU or
    AU is constant on every split is returned with ``r = nan`` and a
    diagnostic instead of raising.
    """
    config = config or BackendConfig(method)
    if config.method != method:
        config = replace(config, method=method)
    seeds = tuple(int(s) for s in seeds)
    items = list(datasets.items()) if isinstance(datasets, dict) else [(d.name, d) for d in datasets]
    jobs = [(ds, config, s, train_fraction) for _, ds in items for s in seeds]
    flat = _fan_out(_correlation_seed, jobs, workers)
    out = []
    for i, (name, _) in enumerate(items):
        per = flat[i * len(seeds) : (i + 1) * len(seeds)]
        good = [(s, r, p) for s, r, p, msg in per if not msg]
        if not good:
            reasons = sorted({msg for *_, msg in per})
            out.append(CorrelationResult(name, math.nan, math.nan, False, 0, (), "; ".join(reasons)))
            continue
        r = float(np.mean([g[1] for g in good]))
        p = float(np.median([g[2] for g in good]))
        skipped = len(per) - len(good)
        diag = f"{skipped} split(s) skipped: zero variance" if skipped else ""
        out.append(CorrelationResult(name, r, p, p < SIGNIFICANCE, len(good), tuple(good), diag))
    return out


# ---------------------------------------------------------------------------
# EU monotonicity


@dataclass(frozen=True)
class MonotonicityResult:
    sizes: tuple
    mean_eu: tuple  # averaged over test instances and seeds
    spearman: float  # nan for fewer than three sizes
    per_seed: tuple = ()  # ((seed, (eu per size...)), ...)


def _monotonicity_seed(args) -> tuple:
    ds, config, sizes, seed, modality, ratios = args
    plan = split(len(ds), ratios, seed)
    X_train, X_test = _scaled_views(ds, modality, plan.train, plan.train, plan.test)
    y_train = ds.y[plan.train]
    eus = []
    for size in sizes:
        scorer = fit_backend(config, X_train[:size], y_train[:size], ds.frame, seed)
        eus.append(float(scorer.score_batch(X_test).eu.mean()))
    return seed, tuple(eus)


def run_monotonicity(
    dataset: MultiModalDataset,
    method: str = "eknn",
    sizes: Optional[Sequence[int]] = None,
    seeds: Iterable[int] = range(10),
    *,
    modality: int = -1,
    config: Optional[BackendConfig] = None,
    split_ratios: Sequence[float] = (0.7, 0.3),
    workers: Optional[int] = None,
) -> MonotonicityResult:
    """Mean test EU as the (nested) training set grows."""
    config = replace(config or BackendConfig(method), method=method)
    j = modality % len(dataset.modalities)
    pool = len(split(len(dataset), split_ratios, 0).train)
    sizes = tuple(default_sizes(pool)) if sizes is None else tuple(int(s) for s in sizes)
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise InvalidConfig("sizes must be strictly increasing")
    if not sizes or sizes[0] < 1 or sizes[-1] > pool:
        raise InvalidConfig(f"sizes must lie in [1, {pool}]")
    seeds = tuple(int(s) for s in seeds)
    per = _fan_out(_monotonicity_seed, [(dataset, config, sizes, s, j, tuple(split_ratios)) for s in seeds], workers)
    per.sort()
    mean_eu = tuple(float(v) for v in np.mean([eus for _, eus in per], axis=0))
    rho = spearman(sizes, mean_eu) if len(sizes) >= 3 and len(set(mean_eu)) > 1 else math.nan
    return MonotonicityResult(sizes, mean_eu, rho, tuple(per))


# ---------------------------------------------------------------------------
# acquisition episodes


@dataclass(frozen=True)
class EpisodeSummary:
    n_episodes: int
    fraction_reliable: float
    termination: dict  # modality name -> {"Reliable": n, "BudgetExhausted": n}
    mean_label_cost: float
    mean_modality_cost: float
    reliable_accuracy: float  # nan when nothing was reliable
    overall_accuracy: float
    thresholds: tuple  # per modality (t_e, t_a)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["thresholds"] = [list(t) for t in self.thresholds]
        return d


@dataclass
class EpisodeBatch:
    traces: list  # (test row index, AlfaTrace)
    summary: EpisodeSummary
    truth: dict = field(default_factory=dict)  # test row index -> true class


class _ScaledFactory:
    """Backend factory that standardizes each view with fixed statistics."""

    def __init__(self, config: BackendConfig, frame, scalers: list):
        self.config, self.frame, self.scalers = config, frame, scalers

    def __call__(self, X, y, j, seed):
        sc = self.scalers[j]
        scorer = fit_backend(self.config, sc.transform(X), y, self.frame, seed)
        return _ScaledScorer(scorer, sc)


@dataclass(frozen=True, eq=False)
class _ScaledScorer:
    scorer: Scorer
    scaler: object

    def score(self, x):
        return self.scorer.score(self.scaler.transform(np.asarray(x, float)[None, :])[0])

    def score_batch(self, X):
        return self.scorer.score_batch(self.scaler.transform(X))


SKIP_MODALITY = (math.inf, 0.0)
MIN_SUPPORT = 10


def usable_thresholds(t_e: float, t_a: float, accepted: int, min_support: int = MIN_SUPPORT) -> tuple:
    """Map a calibration that cannot be trusted to "move on".

    A calibration is unusable when it returns ``-inf`` (no subset of the
    validation predictions is accurate enough) or when the validation rows
    it accepts are fewer than ``min_support``: a handful of lucky low
    uncertainty rows says nothing about accuracy.  Buying labels in such a
    view is pointless, so the pair returned never queries (``t_e = inf``) and
    always asks for the next modality (``au >= 0`` holds for every backend).
    """
    if t_e == -math.inf or t_a == -math.inf or accepted < min_support:
        return SKIP_MODALITY
    return t_e, t_a


def calibrate_modalities(factory, ds: MultiModalDataset, rows, val, alpha: float, seed: int = 0, min_support: int = MIN_SUPPORT) -> tuple:
    """Per-modality ``(t_e, t_a)`` from models fitted on the labelled ``rows``."""
    out = []
    for j in range(len(ds.modalities)):
        cols = ds.view_columns(j)
        model = factory(ds.X[np.ix_(rows, cols)], ds.y[rows], j, seed)
        s = model.score_batch(ds.X[np.ix_(val, cols)])
        t_e, t_a = acq.calibrate(s, ds.y[val], alpha)
        accepted = int(((s.eu < t_e) & (s.au < t_a)).sum())
        out.append(usable_thresholds(t_e, t_a, accepted, min_support))
    return tuple(out)


class _IdentityScaler:
    def transform(self, X):
        return np.asarray(X, dtype=float)


def run_alfa_episode_batch(
    dataset: MultiModalDataset,
    method: str = "eknn",
    alpha: Optional[float] = 0.05,
    budgets: acq.Budgets = acq.Budgets(),
    mode: str = "independent",
    *,
    seed: int = 0,
    n_initial: int = 20,
    split_ratios: Sequence[float] = (0.6, 0.2, 0.2),
    calibration: str = "per_modality",
    calibration_labels: str = "initial",
    min_support: int = MIN_SUPPORT,
    standardize: bool = True,
    strategy: str = "nearest",
    batch: int = 1,
    config: Optional[BackendConfig] = None,
    max_episodes: Optional[int] = None,
) -> EpisodeBatch:
    """Run the acquisition loop once per test instance.

    The data are split into train pool, validation and test sets.  The first
    ``n_initial`` pool rows start out labelled; the rest form the unlabelled
    pool.  Thresholds come from models scored on the validation set, either
    per modality (``calibration="per_modality"``) or once on the richest view
    and shared by all modalities (``calibration="final"``).  The calibration
    models are fitted on the initial labelled rows
    (``calibration_labels="initial"``) or on the whole pool (``"pool"``),
    which mirrors the neighbourhood a nearest-first query loop converges
    to.  ``alpha=None`` disables both thresholds.

    In ``independent`` mode every episode starts from the initial pools; in
    ``shared`` mode labels bought by one episode stay available to the next.
    """
    if mode not in ("independent", "shared"):
        raise InvalidConfig(f"unknown pool mode {mode!r}")
    if calibration not in ("final", "per_modality"):
        raise InvalidConfig(f"unknown calibration {calibration!r}")
    if calibration_labels not in ("initial", "pool"):
        raise InvalidConfig(f"unknown calibration labels {calibration_labels!r}")
    config = replace(config or BackendConfig(method), method=method)
    plan = split(len(dataset), split_ratios, seed)
    if len(plan.parts) != 3:
        raise InvalidConfig("episode batches need train/validation/test ratios")
    pool_rows, val, test = plan.parts
    labeled, unlabeled = pool_rows[:n_initial], pool_rows[n_initial:]
    # scaling statistics use pool features only; labels stay hidden
    if standardize:
        scalers = [fit_scaler(dataset.X[np.ix_(pool_rows, dataset.view_columns(j))]) for j in range(len(dataset.modalities))]
    else:
        scalers = [_IdentityScaler() for _ in dataset.modalities]
    factory = _ScaledFactory(config, dataset.frame, scalers)

    mu = len(dataset.modalities)
    if alpha is None:
        thresholds = acq.Thresholds.disabled()
        per_mod = tuple((math.inf, math.inf) for _ in range(mu))
    else:
        cal_rows = pool_rows if calibration_labels == "pool" else labeled
        per_mod = calibrate_modalities(factory, dataset, cal_rows, val, alpha, seed, min_support)
        if calibration == "final":
            per_mod = tuple(per_mod[-1] for _ in range(mu))
        thresholds = acq.Thresholds(per_mod[-1][0], per_mod[-1][1], alpha, per_mod)

    base = acq.AcquisitionPools(dataset.X, dataset.y, labeled, unlabeled, mu)
    shared = base.copy()
    rows = test if max_episodes is None else test[:max_episodes]
    traces = []
    for i, row in enumerate(rows):
        pools = shared if mode == "shared" else base.copy()
        trace = acq.run_alfa(dataset.X[row], pools, dataset.modalities, thresholds, factory, budgets, strategy, seed * 1_000_003 + i, batch=batch)
        traces.append((int(row), trace))
    truth = {int(r): int(dataset.y[r]) for r in rows}
    return EpisodeBatch(traces, summarize_episodes(traces, truth, dataset.modalities, per_mod), truth)


def summarize_episodes(traces, truth: dict, modalities, thresholds=()) -> EpisodeSummary:
    n = len(traces)
    term = {m.name: {"Reliable": 0, "BudgetExhausted": 0} for m in modalities}
    for _, t in traces:
        term[modalities[t.final_modality].name][t.outcome] += 1
    correct = [t.predicted == truth[row] for row, t in traces]
    rel = [c for (row, t), c in zip(traces, correct) if t.reliable]
    return EpisodeSummary(
        n,
        sum(t.reliable for _, t in traces) / n if n else math.nan,
        term,
        float(np.mean([t.label_cost for _, t in traces])) if n else math.nan,
        float(np.mean([t.modality_cost for _, t in traces])) if n else math.nan,
        float(np.mean(rel)) if rel else math.nan,
        float(np.mean(correct)) if n else math.nan,
        tuple(tuple(float(v) for v in t) for t in thresholds),
    )


# ---------------------------------------------------------------------------
# threshold calibration on its own

CALIBRATION_FIELDS = ("method", "modality", "seed", "t_e", "t_a", "n_validation", "accepted", "accepted_accuracy")


def run_calibration(
    dataset: MultiModalDataset,
    method: str = "eknn",
    seeds: Iterable[int] = range(1),
    alpha: float = 0.05,
    *,
    validation_fraction: float = 0.2,
    split_ratios: Sequence[float] = (0.7, 0.3),
    config: Optional[BackendConfig] = None,
) -> list:
    """Thresholds per (modality, seed) from the same split protocol as the curves.

    Only the training pool is touched; the test part of each split is left
    alone.
    """
    config = replace(config or BackendConfig(method), method=method)
    if validation_fraction <= 0:
        raise InvalidConfig("calibration needs a validation fraction > 0")
    out = []
    for seed in seeds:
        plan, fit_pool, val = _prepare(dataset, int(seed), split_ratios, validation_fraction)
        for j in range(len(dataset.modalities)):
            X_fit, X_val = _scaled_views(dataset, j, plan.train, fit_pool, val)
            scorer = fit_backend(config, X_fit, dataset.y[fit_pool], dataset.frame, int(seed))
            s = scorer.score_batch(X_val)
            t_e, t_a = acq.calibrate(s, dataset.y[val], alpha)
            keep = (s.eu < t_e) & (s.au < t_a)
            ok = s.predicted == dataset.y[val]
            out.append(
                {
                    "method": method, "modality": j, "seed": int(seed), "t_e": float(t_e), "t_a": float(t_a),
                    "n_validation": int(val.size), "accepted": int(keep.sum()),
                    "accepted_accuracy": float(ok[keep].mean()) if keep.any() else math.nan,
                }
            )
    return out
