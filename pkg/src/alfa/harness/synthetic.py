"""Two-modality synthetic benchmark for the acquisition loop.

The first (free) modality is pure noise.  The second one separates the two
classes linearly, except for a fraction of *hard* instances placed in a
central cluster as identical pairs carrying both labels.  A sound loop should buy the
second modality for almost everything, predict the separable instances
reliably and refuse to vouch for the hard ones.
"""

from __future__ import annotations

import numpy as np

from alfa.belief import Frame
from alfa.data import ModalitySpec, MultiModalDataset


def two_modality_dataset(
    n: int = 600,
    seed: int = 0,
    *,
    hard_fraction: float = 0.0,
    noise_dims: int = 2,
    signal_cost: float = 1.0,
    separation: float = 5.0,
    spread: float = 0.5,
) -> tuple[MultiModalDataset, np.ndarray]:
    """Return ``(dataset, separable)`` where ``separable`` flags the easy rows.

    In the signal view easy rows of class 0 scatter around
    ``(-separation, -separation)`` and class 1 around the opposite corner,
    so a line through the origin separates them.  Hard rows scatter around
    the origin and come in identical pairs, one row per class, so nothing in
    any view can tell their labels apart.  Noise coordinates are standard
    normal.  Rows are returned in random order.
    """
    if not 0.0 <= hard_fraction < 1.0:
        raise ValueError("hard_fraction must lie in [0, 1)")
    if spread * 4.0 >= separation:
        raise ValueError("clusters overlap: need spread < separation / 4")
    rng = np.random.default_rng(seed)
    n_pairs = int(round(hard_fraction * n / 2))
    n_easy = n - 2 * n_pairs
    y_easy = rng.integers(0, 2, size=n_easy)
    centre = np.where(y_easy == 1, separation, -separation)
    # bounded scatter keeps the easy clusters strictly apart
    easy = np.column_stack([
        rng.standard_normal((n_easy, noise_dims)),
        centre[:, None] + rng.uniform(-2.0 * spread, 2.0 * spread, size=(n_easy, 2)),
    ])
    sites = np.column_stack([
        rng.standard_normal((n_pairs, noise_dims)),
        rng.uniform(-2.0 * spread, 2.0 * spread, size=(n_pairs, 2)),
    ])
    X = np.vstack([easy, sites, sites])
    y = np.concatenate([y_easy, np.zeros(n_pairs, dtype=np.int64), np.ones(n_pairs, dtype=np.int64)])
    separable = np.arange(n) < n_easy
    order = rng.permutation(n)
    names = tuple(f"noise{i}" for i in range(noise_dims)) + ("signal0", "signal1")
    modalities = (
        ModalitySpec("noise", tuple(range(noise_dims)), 0.0),
        ModalitySpec("signal", (noise_dims, noise_dims + 1), signal_cost),
    )
    ds = MultiModalDataset(X[order], y[order].astype(np.int64), Frame(("a", "b")), modalities, names, names, "synthetic")
    return ds, separable[order]
