"""Two-threshold active learning with modality acquisition.

For one test instance the loop starts on the cheapest modality view.  While
the epistemic uncertainty is at or above ``t_e`` it queries the label of a
pool instance (the nearest one by default) and retrains.  Once epistemic
uncertainty is low it checks the aleatoric part: at or above ``t_a`` the next
modality is acquired and the loop starts over on the richer view; below it the
prediction is emitted as reliable.

The literal loop may never terminate when thresholds cannot be met, so label
and modality budgets turn such runs into a ``BudgetExhausted`` outcome with a
best-effort prediction.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from alfa.data import ModalitySpec, view_columns
from alfa.errors import EmptyPool, InvalidConfig

INF = math.inf


def calibrate_thresholds(uncertainties, correct, alpha: float) -> float:
    """Threshold ``t`` such that accepting ``u < t`` reaches accuracy ``1 - alpha``.

    Instances are rejected from the most uncertain down (equal values leave
    together) until the accuracy of what remains is at least ``1 - alpha``.
    The returned threshold is the uncertainty of the last rejected group.
    ``+inf`` means nothing had to be rejected, ``-inf`` that nothing can be
    kept.
    """
    u = np.asarray(uncertainties, dtype=float)
    ok = np.asarray(correct, dtype=bool)
    if u.size == 0:
        raise ValueError("cannot calibrate on an empty validation set")
    if u.shape != ok.shape:
        raise ValueError("uncertainties and correctness flags differ in length")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    target = 1.0 - alpha - 1e-12
    if ok.mean() >= target:
        return INF
    order = np.argsort(-u, kind="stable")
    u_sorted, ok_sorted = u[order], ok[order]
    n = u.size
    # correct count among the items strictly after position i
    tail_correct = np.concatenate([np.cumsum(ok_sorted[::-1])[::-1][1:], [0]])
    for i in range(n):
        if i + 1 < n and u_sorted[i + 1] == u_sorted[i]:
            continue  # ties are rejected together
        remaining = n - i - 1
        if remaining == 0:
            return -INF
        if tail_correct[i] / remaining >= target:
            return float(u_sorted[i])
    return -INF


@dataclass(frozen=True)
class Thresholds:
    t_e: float = INF
    t_a: float = INF
    alpha: float = 0.05
    per_modality: Optional[tuple] = None  # ((t_e, t_a), ...) overrides

    def for_modality(self, j: int) -> tuple[float, float]:
        if self.per_modality is not None and j < len(self.per_modality):
            return self.per_modality[j]
        return self.t_e, self.t_a

    @classmethod
    def disabled(cls) -> "Thresholds":
        return cls(INF, INF)


def calibrate(scores, truth, alpha: float) -> tuple[float, float]:
    """Epistemic and aleatoric thresholds from one validation scoring."""
    correct = np.asarray(scores.predicted) == np.asarray(truth)
    return calibrate_thresholds(scores.eu, correct, alpha), calibrate_thresholds(scores.au, correct, alpha)


@dataclass(frozen=True)
class Budgets:
    max_labels_per_modality: Optional[int] = None
    max_total_labels: Optional[int] = 500
    max_modality: Optional[int] = None  # number of modalities that may be used


class AcquisitionPools:
    """Labelled / unlabelled index sets over a shared feature table.

    Labels of unlabelled rows stay hidden from the loop; ``query_label`` is
    the simulated annotator.
    """

    def __init__(self, X, y, labeled, unlabeled, n_modalities: int = 1):
        self.X = np.asarray(X, dtype=float)
        self._y = np.asarray(y, dtype=np.int64)
        self.labeled = [int(i) for i in labeled]
        self.unlabeled = [int(i) for i in unlabeled]
        if set(self.labeled) & set(self.unlabeled):
            raise InvalidConfig("labelled and unlabelled pools overlap")
        self.acquired = np.zeros((self.X.shape[0], max(n_modalities, 1)), dtype=bool)
        self.acquired[self.labeled, 0] = True
        self.active_modality = 0

    def copy(self) -> "AcquisitionPools":
        other = AcquisitionPools.__new__(AcquisitionPools)
        other.X, other._y = self.X, self._y
        other.labeled, other.unlabeled = list(self.labeled), list(self.unlabeled)
        other.acquired = self.acquired.copy()
        other.active_modality = self.active_modality
        return other

    def labeled_data(self, columns) -> tuple[np.ndarray, np.ndarray]:
        rows = np.array(self.labeled, dtype=np.int64)
        return self.X[np.ix_(rows, columns)], self._y[rows]

    def query_label(self, index: int) -> int:
        return int(self._y[index])

    def move_to_labeled(self, index: int) -> int:
        self.unlabeled.remove(index)
        self.labeled.append(index)
        self.acquired[index, : self.active_modality + 1] = True
        return self.query_label(index)

    def activate(self, j: int) -> None:
        self.active_modality = max(self.active_modality, j)
        self.acquired[self.labeled, : j + 1] = True


def query_strategy(x_view, pools: AcquisitionPools, columns, strategy: str = "nearest", rng=None, batch: int = 1) -> list[int]:
    """Pick ``batch`` distinct unlabelled indices.

    ``nearest`` takes the pool rows closest to ``x`` in the given view (ties to
    the lower index); ``random`` draws uniformly.
    """
    if not pools.unlabeled:
        raise EmptyPool("no unlabelled instances left")
    cand = np.array(sorted(pools.unlabeled), dtype=np.int64)
    batch = min(batch, len(cand))
    if strategy == "nearest":
        d = np.linalg.norm(pools.X[np.ix_(cand, columns)] - np.asarray(x_view, dtype=float), axis=1)
        order = np.lexsort((cand, d))
        return [int(i) for i in cand[order[:batch]]]
    if strategy == "random":
        rng = rng if rng is not None else np.random.default_rng(0)
        return [int(i) for i in rng.choice(cand, size=batch, replace=False)]
    raise InvalidConfig(f"unknown query strategy {strategy!r}")


class Action(str, Enum):
    QUERY_LABEL = "QueryLabel"
    ACQUIRE_MODALITY = "AcquireModality"
    PREDICT = "Predict"
    ABORT = "Abort"


@dataclass(frozen=True)
class Step:
    j: int
    n_labeled: int
    eu: float
    au: float
    action: Action
    label_cost: float
    modality_cost: float

    @property
    def cost(self) -> float:
        return self.label_cost + self.modality_cost


@dataclass
class AlfaTrace:
    steps: list = field(default_factory=list)
    outcome: str = ""  # "Reliable" or "BudgetExhausted"
    predicted: Optional[int] = None
    reason: str = ""
    label_cost: float = 0.0
    modality_cost: float = 0.0
    labels_queried: int = 0

    @property
    def reliable(self) -> bool:
        return self.outcome == "Reliable"

    @property
    def final_modality(self) -> int:
        return self.steps[-1].j if self.steps else 0

    @property
    def total_cost(self) -> float:
        return self.label_cost + self.modality_cost

    def records(self, episode=0) -> list[dict]:
        return [
            {
                "episode": episode,
                "step": i,
                "modality": s.j,
                "n_labeled": s.n_labeled,
                "eu": s.eu,
                "au": s.au,
                "action": s.action.value,
                "cumulative_cost": s.cost,
            }
            for i, s in enumerate(self.steps)
        ]


TRACE_FIELDS = ["episode", "step", "modality", "n_labeled", "eu", "au", "action", "cumulative_cost"]


def write_traces(traces, fh) -> None:
    """Write ``(episode_id, trace)`` pairs as CSV step records."""
    w = csv.DictWriter(fh, fieldnames=TRACE_FIELDS)
    w.writeheader()
    for episode, trace in traces:
        for rec in trace.records(episode):
            w.writerow({**rec, "eu": repr(rec["eu"]), "au": repr(rec["au"])})


def traces_to_csv(traces) -> str:
    buf = io.StringIO()
    write_traces(traces, buf)
    return buf.getvalue()


# factory(X_labeled_view, y_labeled, j, seed) -> object with .score(x_view)
BackendFactory = Callable[[np.ndarray, np.ndarray, int, int], object]


def _step_seed(seed: int, j: int, n: int) -> int:
    return int(np.random.SeedSequence([seed, j, n]).generate_state(1)[0])


def run_alfa(
    x,
    pools: AcquisitionPools,
    modalities: Sequence[ModalitySpec],
    thresholds: Thresholds,
    factory: BackendFactory,
    budgets: Budgets = Budgets(),
    strategy: str = "nearest",
    seed: int = 0,
    *,
    batch: int = 1,
    label_cost: float = 1.0,
) -> AlfaTrace:
    """Run the acquisition loop for one instance ``x`` (a full feature row).

    ``pools`` is mutated: queried rows move to the labelled set.  Pass a copy
    for independent episodes.  The first modality is assumed already acquired
    for ``x`` and costs nothing.
    """
    if not modalities:
        raise InvalidConfig("at least one modality is required")
    x = np.asarray(x, dtype=float)
    mu = len(modalities)
    if budgets.max_modality is not None:
        mu = max(1, min(mu, budgets.max_modality))
    rng = np.random.default_rng(seed)
    trace = AlfaTrace()

    def log(j, score, action):
        trace.steps.append(Step(j, len(pools.labeled), float(score.eu), float(score.au), action, trace.label_cost, trace.modality_cost))

    def abort(j, score, reason):
        log(j, score, Action.ABORT)
        trace.outcome, trace.predicted, trace.reason = "BudgetExhausted", int(score.predicted), reason
        return trace

    j = 0
    pools.activate(0)
    while True:
        cols = view_columns(modalities, j)
        xv = x[cols]
        model = factory(*pools.labeled_data(cols), j, _step_seed(seed, j, len(pools.labeled)))
        score = model.score(xv)
        t_e, t_a = thresholds.for_modality(j)
        queried_here = 0
        while score.eu >= t_e:
            if budgets.max_labels_per_modality is not None and queried_here >= budgets.max_labels_per_modality:
                return abort(j, score, "label budget for modality exhausted")
            if budgets.max_total_labels is not None and trace.labels_queried >= budgets.max_total_labels:
                return abort(j, score, "total label budget exhausted")
            if not pools.unlabeled:
                return abort(j, score, "unlabelled pool exhausted")
            log(j, score, Action.QUERY_LABEL)
            room = batch
            if budgets.max_total_labels is not None:
                room = min(room, budgets.max_total_labels - trace.labels_queried)
            if budgets.max_labels_per_modality is not None:
                room = min(room, budgets.max_labels_per_modality - queried_here)
            for idx in query_strategy(xv, pools, cols, strategy, rng, room):
                pools.move_to_labeled(idx)
                trace.labels_queried += 1
                queried_here += 1
                trace.label_cost += label_cost
            model = factory(*pools.labeled_data(cols), j, _step_seed(seed, j, len(pools.labeled)))
            score = model.score(xv)
        if score.au >= t_a:
            if j + 1 >= mu:
                return abort(j, score, "no modality left to acquire")
            log(j, score, Action.ACQUIRE_MODALITY)
            j += 1
            pools.activate(j)
            trace.modality_cost += modalities[j].cost
            continue
        log(j, score, Action.PREDICT)
        trace.outcome, trace.predicted = "Reliable", int(score.predicted)
        return trace
