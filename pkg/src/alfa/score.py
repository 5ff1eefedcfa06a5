"""Common output types of the uncertainty backends."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from alfa.belief import MassFunction


@dataclass(frozen=True)
class UncertaintyScore:
    """Prediction for one instance with its disentangled uncertainty.

    ``predicted`` is the index of the class in the model's frame.  ``mass`` is
    only filled by the evidential backend; other backends may put
    diagnostics (total uncertainty, certainty, ...) in ``extra``.
    """

    predicted: int
    eu: float
    au: float
    mass: Optional[MassFunction] = None
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class BatchScores:
    """Vectorized counterpart of :class:`UncertaintyScore` for many rows."""

    predicted: np.ndarray
    eu: np.ndarray
    au: np.ndarray

    def __len__(self) -> int:
        return len(self.predicted)

    def __getitem__(self, i) -> UncertaintyScore:
        return UncertaintyScore(int(self.predicted[i]), float(self.eu[i]), float(self.au[i]))
