"""Experiment config files (JSON) and their resolution into datasets/backends.

A config is a JSON object; every key is optional::

    {
      "dataset": "wine",
      "method": "eknn",
      "alpha": 0.05,
      "seed": 0,
      "n_seeds": 10,
      "sizes": [8, 16, 32, 64, 99],
      "modalities": [0, 1, 2, 3],
      "validation_fraction": 0.2,
      "backend": {"k": 7, "sigma": 0.316, "n_estimators": 100, "max_depth": 4}
    }

``dataset`` (default ``wine``, or ``synthetic`` for episodes) is a built-in
name (``wine``, ``iris``, ``synthetic``), an object
``{"table": "data.csv", "modalities": "modalities.json"}`` or an object
``{"embeddings": "emb.csv", "label": "y"}``.  Relative paths are resolved
against the config file's directory.  ``datasets`` (a list of such values)
is used by the correlation study.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Optional

from alfa.acquisition import Budgets
from alfa.backends import METHODS, BackendConfig
from alfa.data import MultiModalDataset, load_builtin, load_dataset, load_embeddings
from alfa.ensemble import ForestParams
from alfa.errors import InvalidConfig
from alfa.harness.synthetic import two_modality_dataset

DEFAULTS: dict = {
    "method": "eknn",
    "alpha": 0.05,
    "seed": 0,
    "n_seeds": 10,
    "validation_fraction": 0.2,
    "split": [0.7, 0.3],
}

_BACKEND_KEYS = {"k", "alpha0", "sigma", "dim_normalized", "n_estimators", "max_depth", "min_samples_leaf", "max_features", "bootstrap"}


def load_config(path: Optional[str]) -> dict:
    """Read a config file (``None`` gives the defaults) and record its base dir."""
    cfg = dict(DEFAULTS)
    base = Path.cwd()
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise InvalidConfig(f"cannot read config {path}: {exc.strerror}") from None
        try:
            loaded = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise InvalidConfig("config must be a JSON object")
        cfg.update(loaded)
        base = p.resolve().parent
    cfg["_base"] = str(base)
    return cfg


def apply_overrides(cfg: dict, **overrides) -> dict:
    out = dict(cfg)
    out.update({k: v for k, v in overrides.items() if v is not None})
    if out["method"] not in METHODS:
        raise InvalidConfig(f"unknown method {out['method']!r}; expected one of {METHODS}")
    alpha = out["alpha"]
    if alpha is not None and not 0.0 <= float(alpha) <= 1.0:
        raise InvalidConfig("alpha must lie in [0, 1]")
    return out


def config_hash(cfg: dict) -> str:
    """Stable digest of the effective config (private keys excluded)."""
    public = {k: v for k, v in cfg.items() if not k.startswith("_")}
    blob = json.dumps(public, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def seeds(cfg: dict) -> range:
    n = int(cfg["n_seeds"])
    if n < 1:
        raise InvalidConfig("n_seeds must be positive")
    return range(int(cfg["seed"]), int(cfg["seed"]) + n)


def backend(cfg: dict, method: Optional[str] = None) -> BackendConfig:
    opts = cfg.get("backend", {}) or {}
    unknown = set(opts) - _BACKEND_KEYS
    if unknown:
        raise InvalidConfig(f"unknown backend options {sorted(unknown)}")
    forest_keys = {"n_estimators", "max_depth", "min_samples_leaf", "max_features", "bootstrap"}
    forest = ForestParams(**{k: v for k, v in opts.items() if k in forest_keys})
    rest = {k: v for k, v in opts.items() if k not in forest_keys}
    return BackendConfig(method or cfg["method"], forest=forest, **rest)


def budgets(cfg: dict) -> Budgets:
    opts = cfg.get("budgets", {}) or {}
    try:
        return Budgets(**opts)
    except TypeError as exc:
        raise InvalidConfig(f"bad budgets: {exc}") from None


def resolve_dataset(spec: Any, base: str, seed: int = 0) -> MultiModalDataset:
    root = Path(base)
    if isinstance(spec, str):
        if spec == "synthetic":
            return two_modality_dataset(seed=seed)[0]
        if spec in ("wine", "iris"):
            return load_builtin(spec)
        raise InvalidConfig(f"unknown built-in dataset {spec!r}")
    if isinstance(spec, dict):
        if "embeddings" in spec:
            return load_embeddings(root / spec["embeddings"], spec.get("label"), spec.get("name"))
        if "table" in spec:
            mods = spec.get("modalities")
            if mods is None:
                raise InvalidConfig("a table dataset needs a 'modalities' config")
            mods = mods if isinstance(mods, dict) else root / mods
            return load_dataset(root / spec["table"], mods)
    raise InvalidConfig(f"cannot interpret dataset spec {spec!r}")
