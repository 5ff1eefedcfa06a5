"""Dataset ingestion, featurization and seeded splits.

A dataset is a CSV table plus a modality config (JSON).  The config names the
label column, assigns table columns to ordered, cost-annotated modality
groups and says how each column is encoded::

    {
      "schema_version": 1,
      "label": "class",
      "encodings": {"country": "categorical", "dna": "kmer:3"},
      "modalities": [
        {"name": "image", "cost": 0, "columns": ["e0", "e1"]},
        {"name": "geo", "cost": 1, "columns": ["country", "lat"]},
        {"name": "dna", "cost": 10, "columns": ["dna"], "replace": true}
      ]
    }

Columns default to ``numeric``.  A modality's view is the union of its own
columns and those of every earlier modality, unless ``replace`` is set, in
which case the view is only its own columns.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from alfa.belief import Frame
from alfa.errors import InvalidConfig, NonNumericValue, ParseError, TooShort, UnknownColumn

SCHEMA_VERSION = 1
DNA = "ACGT"


@dataclass(frozen=True)
class ModalitySpec:
    name: str
    columns: tuple  # indices into the encoded feature table
    cost: float = 0.0
    replace: bool = False

    def __post_init__(self):
        if self.cost < 0:
            raise InvalidConfig(f"modality {self.name!r} has a negative cost")


@dataclass(frozen=True, eq=False)
class MultiModalDataset:
    X: np.ndarray
    y: np.ndarray  # class indices into ``frame``
    frame: Frame
    modalities: tuple
    column_names: tuple
    column_origin: tuple  # source column each encoded column came from
    name: str = "dataset"

    def __len__(self) -> int:
        return self.X.shape[0]

    def view_columns(self, j: int) -> np.ndarray:
        """Encoded column indices of the ``j``-th (0-based) modality view."""
        return view_columns(self.modalities, j)

    def view(self, j: int, rows=None) -> np.ndarray:
        X = self.X if rows is None else self.X[rows]
        return X[:, self.view_columns(j)]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.X, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.y, dtype="<i8").tobytes())
        return h.hexdigest()[:16]


def view_columns(modalities: Sequence[ModalitySpec], j: int) -> np.ndarray:
    if not 0 <= j < len(modalities):
        raise IndexError(f"modality {j} out of range")
    if modalities[j].replace:
        return np.array(modalities[j].columns, dtype=np.int64)
    cols = []
    for spec in modalities[: j + 1]:
        if spec.replace:
            cols = []
        cols.extend(spec.columns)
    return np.array(cols, dtype=np.int64)


# ---------------------------------------------------------------------------
# featurization


def kmer_vocabulary(k: int) -> list[str]:
    return ["".join(p) for p in itertools.product(DNA, repeat=k)]


def kmer_features(sequence: str, k: int = 3) -> np.ndarray:
    """Normalized k-mer counts over ``ACGT`` in lexicographic order.

    Windows containing any other symbol are skipped.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    seq = sequence.strip().upper()
    counts = np.zeros(4**k)
    code = {c: i for i, c in enumerate(DNA)}
    valid = 0
    for start in range(len(seq) - k + 1):
        idx = 0
        for c in seq[start : start + k]:
            digit = code.get(c)
            if digit is None:
                break
            idx = idx * 4 + digit
        else:
            counts[idx] += 1
            valid += 1
    if valid == 0:
        raise TooShort(f"no valid {k}-mer in sequence of length {len(seq)}")
    return counts / valid


@dataclass(frozen=True, eq=False)
class Scaler:
    mean: np.ndarray
    std: np.ndarray
    columns: tuple = ()

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        safe = np.where(self.std > 0, self.std, 1.0)
        return np.where(self.std > 0, (X - self.mean) / safe, 0.0)

    def save(self, path) -> None:
        names = self.columns or tuple(str(i) for i in range(len(self.mean)))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["column", "mean", "std"])
            for name, m, s in zip(names, self.mean, self.std):
                w.writerow([name, repr(float(m)), repr(float(s))])

    @classmethod
    def load(cls, path) -> "Scaler":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return cls(
            np.array([float(r["mean"]) for r in rows]),
            np.array([float(r["std"]) for r in rows]),
            tuple(r["column"] for r in rows),
        )


def fit_scaler(train, columns: Sequence[str] = ()) -> Scaler:
    train = np.asarray(train, dtype=float)
    if train.ndim != 2 or train.shape[0] == 0:
        raise ValueError("cannot standardize an empty training view")
    # population standard deviation
    return Scaler(train.mean(axis=0), train.std(axis=0), tuple(columns))


def standardize(train, *others):
    """Scale ``train`` and every other view with the training statistics.

    Returns ``(train_scaled, *others_scaled, scaler)``.
    """
    scaler = fit_scaler(train)
    return (scaler.transform(train), *(scaler.transform(o) for o in others), scaler)


# ---------------------------------------------------------------------------
# splits


@dataclass(frozen=True, eq=False)
class SplitPlan:
    parts: tuple
    seed: int
    ratios: tuple

    @property
    def train(self) -> np.ndarray:
        return self.parts[0]

    @property
    def test(self) -> np.ndarray:
        return self.parts[-1]

    @property
    def validation(self) -> np.ndarray:
        return self.parts[1] if len(self.parts) == 3 else np.array([], dtype=np.int64)


def split(n: int, ratios: Sequence[float] = (0.7, 0.3), seed: int = 0) -> SplitPlan:
    """Seeded shuffle of ``range(n)`` cut into contiguous parts.

    Every part but the last gets ``floor(ratio * n)`` rows; the last takes the
    remainder when the ratios sum to one.
    """
    ratios = tuple(float(r) for r in ratios)
    if not ratios or any(r < 0 for r in ratios):
        raise ValueError("ratios must be non-negative")
    if sum(ratios) > 1.0 + 1e-9:
        raise ValueError(f"ratios sum to {sum(ratios)} > 1")
    perm = np.random.default_rng(seed).permutation(n)
    sizes = [int(math.floor(r * n + 1e-9)) for r in ratios]
    if abs(sum(ratios) - 1.0) <= 1e-9:
        sizes[-1] = n - sum(sizes[:-1])
    bounds = np.cumsum([0] + sizes)
    parts = tuple(perm[a:b] for a, b in zip(bounds[:-1], bounds[1:]))
    return SplitPlan(parts, seed, ratios)


def carve(indices: np.ndarray, fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """Split an (already shuffled) index array into ``(rest, last fraction)``."""
    n_out = int(round(fraction * len(indices)))
    if n_out <= 0:
        return indices, indices[:0]
    return indices[:-n_out], indices[-n_out:]


def stratified_subset(labels, per_class: int, seed: int = 0) -> np.ndarray:
    """Up to ``per_class`` random rows of each class, sorted."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    picks = []
    for c in np.unique(labels):
        rows = np.flatnonzero(labels == c)
        picks.append(rng.choice(rows, size=min(per_class, len(rows)), replace=False))
    return np.sort(np.concatenate(picks)) if picks else np.array([], dtype=np.int64)


# ---------------------------------------------------------------------------
# loading


def read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty table", row=1) from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(row)}", row=lineno)
            rows.append([c.strip() for c in row])
    if len(set(header)) != len(header):
        raise ParseError("duplicate column names in header", row=1)
    return header, rows


def load_config(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"modality config is not valid JSON: {exc}") from None
    version = cfg.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise InvalidConfig(f"unsupported modality config version {version}")
    if not cfg.get("modalities"):
        raise InvalidConfig("modality config lists no modalities")
    return cfg


def _encode_column(name: str, encoding: str, values: list[str]):
    """Return ``(matrix n x c, column names)`` for one source column."""
    if encoding == "numeric":
        out = np.empty(len(values))
        for i, v in enumerate(values):
            try:
                out[i] = float(v)
            except ValueError:
                raise NonNumericValue(f"cannot parse {v!r} as a number", row=i + 2, column=name) from None
            if not math.isfinite(out[i]):
                raise NonNumericValue(f"non-finite value {v!r}", row=i + 2, column=name)
        return out[:, None], [name]
    if encoding == "categorical":
        levels = sorted(set(values))
        pos = {lev: i for i, lev in enumerate(levels)}
        out = np.zeros((len(values), len(levels)))
        out[np.arange(len(values)), [pos[v] for v in values]] = 1.0
        return out, [f"{name}={lev}" for lev in levels]
    if encoding.startswith("kmer"):
        _, _, k = encoding.partition(":")
        k = int(k or 3)
        out = np.empty((len(values), 4**k))
        for i, v in enumerate(values):
            try:
                out[i] = kmer_features(v, k)
            except TooShort as exc:
                raise ParseError(str(exc), row=i + 2, column=name) from None
        return out, [f"{name}:{kmer}" for kmer in kmer_vocabulary(k)]
    raise InvalidConfig(f"unknown encoding {encoding!r} for column {name!r}")


def build_dataset(header: list[str], rows: list[list[str]], cfg: dict, name: str = "dataset") -> MultiModalDataset:
    label_col = cfg.get("label", header[-1])
    if label_col not in header:
        raise UnknownColumn(f"label column {label_col!r} not in table")
    encodings = cfg.get("encodings", {})
    for col in encodings:
        if col not in header:
            raise UnknownColumn(f"encoding given for unknown column {col!r}")
    lab_idx = header.index(label_col)
    raw_labels = [r[lab_idx] for r in rows]
    frame_labels = cfg.get("classes") or sorted(set(raw_labels))
    frame = Frame(tuple(frame_labels))
    y = np.array([frame.index(v) for v in raw_labels], dtype=np.int64)

    blocks, names, origin, modalities = [], [], [], []
    col_pos: dict[str, tuple] = {}
    width = 0
    for mod in cfg["modalities"]:
        cols = mod.get("columns", [])
        if not cols:
            raise InvalidConfig(f"modality {mod.get('name')!r} has no columns")
        indices = []
        for col in cols:
            if col not in header:
                raise UnknownColumn(f"modality {mod.get('name')!r} references unknown column {col!r}")
            if col == label_col:
                raise InvalidConfig("the label column cannot be a feature")
            if col not in col_pos:
                values = [r[header.index(col)] for r in rows]
                block, block_names = _encode_column(col, encodings.get(col, "numeric"), values)
                col_pos[col] = tuple(range(width, width + block.shape[1]))
                width += block.shape[1]
                blocks.append(block)
                names.extend(block_names)
                origin.extend([col] * block.shape[1])
            indices.extend(col_pos[col])
        modalities.append(
            ModalitySpec(str(mod.get("name", f"m{len(modalities) + 1}")), tuple(indices), float(mod.get("cost", 0.0)), bool(mod.get("replace", False)))
        )
    claimed = [set(m.columns) for m in modalities]
    for a, b in itertools.combinations(range(len(claimed)), 2):
        if claimed[a] & claimed[b]:
            raise InvalidConfig(f"modalities {modalities[a].name!r} and {modalities[b].name!r} share columns")
    X = np.hstack(blocks) if blocks else np.zeros((len(rows), 0))
    return MultiModalDataset(X, y, frame, tuple(modalities), tuple(names), tuple(origin), name)


def load_dataset(table, config) -> MultiModalDataset:
    """Load a CSV table with a modality config file (or an already parsed dict)."""
    header, rows = read_table(table)
    cfg = config if isinstance(config, dict) else load_config(config)
    return build_dataset(header, rows, cfg, Path(table).stem)


def load_embeddings(table, label: Optional[str] = None, name: Optional[str] = None) -> MultiModalDataset:
    """Plain CSV of reals (e.g. penultimate-layer features) plus a label column.

    Every non-label column becomes part of a single modality.
    """
    header, rows = read_table(table)
    label = label or header[-1]
    if label not in header:
        raise UnknownColumn(f"label column {label!r} not in table")
    cfg = {"label": label, "modalities": [{"name": "embedding", "columns": [h for h in header if h != label]}]}
    return build_dataset(header, rows, cfg, name or Path(table).stem)


WINE_GROUPS = {
    "ignition": ["ash", "alcalinity_of_ash", "total_phenols", "nonflavanoid_phenols"],
    "visual": ["hue", "color_intensity"],
    "chemical": ["proanthocyanins", "flavanoids", "magnesium", "od280_od315_of_diluted_wines"],
    "acidity": ["proline", "malic_acid", "alcohol"],
}


def builtin_config(name: str) -> dict:
    if name == "wine":
        mods = [{"name": g, "cost": float(i), "columns": cols} for i, (g, cols) in enumerate(WINE_GROUPS.items())]
        return {"schema_version": 1, "label": "class", "modalities": mods}
    if name == "iris":
        cols = ["sepal_length", "sepal_width", "petal_length", "petal_width"]
        return {"schema_version": 1, "label": "class", "modalities": [{"name": "all", "columns": cols}]}
    raise KeyError(name)


def builtin_path(name: str) -> Path:
    return Path(str(resources.files("alfa.datasets").joinpath(f"{name}.csv")))


def load_builtin(name: str) -> MultiModalDataset:
    """Bundled copies of the UCI Wine and Iris tables."""
    return load_dataset(builtin_path(name), builtin_config(name))
