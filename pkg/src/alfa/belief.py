"""Dempster-Shafer mass functions over a finite frame of class labels.

Subsets of the frame are encoded as integer bitmasks: bit ``i`` set means the
``i``-th label of the frame belongs to the subset.  Mass functions are sparse
and only store focal elements (subsets with nonzero mass).

All logarithms are base 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from alfa.errors import FrameMismatch, TotalConflict, UnknownClass

MAX_CLASSES = 24
NORM_TOL = 1e-9
CONFLICT_TOL = 1e-12
PRUNE_BELOW = 1e-15


@dataclass(frozen=True)
class Frame:
    """Ordered set of mutually exclusive class hypotheses."""

    labels: tuple

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise ValueError("a frame needs at least two classes")
        if len(labels) > MAX_CLASSES:
            raise ValueError(f"at most {MAX_CLASSES} classes are supported")
        if len(set(labels)) != len(labels):
            raise ValueError("frame labels must be distinct")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def full(self) -> int:
        """Bitmask of the whole frame (Omega)."""
        return (1 << len(self.labels)) - 1

    def index(self, label: Hashable) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnknownClass(label) from None

    def mask(self, labels: Iterable[Hashable]) -> int:
        out = 0
        for label in labels:
            out |= 1 << self.index(label)
        return out

    def members(self, mask: int) -> tuple:
        return tuple(lab for i, lab in enumerate(self.labels) if mask >> i & 1)


def _popcount(mask: int) -> int:
    return bin(mask).count("1")


@dataclass(frozen=True, eq=False)
class MassFunction:
    """Normalized basic belief assignment.

    ``masses`` maps subset bitmasks to their mass.  The empty set never
    carries mass and the stored masses sum to one.
    """

    frame: Frame
    masses: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        full = self.frame.full
        clean = {}
        for mask, value in self.masses.items():
            mask = int(mask)
            value = float(value)
            if mask <= 0 or mask & ~full:
                raise ValueError(f"invalid focal set bitmask {mask}")
            if not value > 0.0:
                if value == 0.0:
                    continue
                raise ValueError(f"negative or NaN mass {value}")
            if value > 1.0 + NORM_TOL:
                raise ValueError(f"mass {value} exceeds 1")
            clean[mask] = clean.get(mask, 0.0) + value
        total = math.fsum(clean.values())
        if abs(total - 1.0) > NORM_TOL:
            raise ValueError(f"masses sum to {total}, expected 1")
        object.__setattr__(self, "masses", clean)

    @classmethod
    def from_sets(cls, frame: Frame, assignment: Mapping[Iterable[Hashable], float]) -> "MassFunction":
        """Build from ``{iterable of labels: mass}``; strings count as one label."""
        masses: dict[int, float] = {}
        for subset, value in assignment.items():
            if isinstance(subset, str) or not isinstance(subset, Iterable):
                subset = (subset,)
            mask = frame.mask(subset)
            masses[mask] = masses.get(mask, 0.0) + value
        return cls(frame, masses)

    def __getitem__(self, subset) -> float:
        if not isinstance(subset, int):
            if isinstance(subset, str) or not isinstance(subset, Iterable):
                subset = (subset,)
            subset = self.frame.mask(subset)
        return self.masses.get(subset, 0.0)

    def focal(self) -> list[tuple[int, float]]:
        return sorted(self.masses.items())

    def core(self) -> int:
        out = 0
        for mask in self.masses:
            out |= mask
        return out

    def allclose(self, other: "MassFunction", tol: float = 1e-9) -> bool:
        if self.frame != other.frame:
            return False
        keys = set(self.masses) | set(other.masses)
        return all(abs(self[k] - other[k]) <= tol for k in keys)

    def __repr__(self) -> str:
        parts = ", ".join(
            "{" + ",".join(map(str, self.frame.members(m))) + f"}}: {v:.6g}"
            for m, v in self.focal()
        )
        return f"MassFunction({parts})"


@dataclass(frozen=True)
class PignisticDistribution:
    frame: Frame
    probs: np.ndarray

    def of(self, mask: int) -> float:
        """Pignistic probability of an arbitrary subset."""
        return float(sum(self.probs[i] for i in range(len(self.frame)) if mask >> i & 1))

    def argmax(self) -> int:
        # np.argmax already returns the lowest index on ties
        return int(np.argmax(self.probs))


def categorical(frame: Frame, y: Hashable) -> MassFunction:
    return MassFunction(frame, {1 << frame.index(y): 1.0})


def vacuous(frame: Frame) -> MassFunction:
    return MassFunction(frame, {frame.full: 1.0})


def simple_support(frame: Frame, y: Hashable, weight: float) -> MassFunction:
    """``m({y}) = weight``, ``m(Omega) = 1 - weight``."""
    if not 0.0 <= weight <= 1.0:
        raise ValueError("support weight must lie in [0, 1]")
    return MassFunction(frame, {1 << frame.index(y): weight, frame.full: 1.0 - weight})


def _check_frames(m1: MassFunction, m2: MassFunction) -> None:
    if m1.frame != m2.frame:
        raise FrameMismatch("mass functions are defined on different frames")


def conflict(m1: MassFunction, m2: MassFunction) -> float:
    """Total mass the conjunctive rule assigns to the empty set."""
    _check_frames(m1, m2)
    k = math.fsum(
        v1 * v2 for a, v1 in m1.masses.items() for b, v2 in m2.masses.items() if not a & b
    )
    return min(max(k, 0.0), 1.0)


def dempster_combine(m1: MassFunction, m2: MassFunction) -> MassFunction:
    """Conjunctive combination normalized by ``1 - conflict``."""
    _check_frames(m1, m2)
    joint: dict[int, list[float]] = {}
    empty: list[float] = []
    for a, v1 in m1.masses.items():
        for b, v2 in m2.masses.items():
            c = a & b
            if c:
                joint.setdefault(c, []).append(v1 * v2)
            else:
                empty.append(v1 * v2)
    k = math.fsum(empty)
    if k >= 1.0 - CONFLICT_TOL or not joint:
        raise TotalConflict(f"conflict {k} leaves nothing to normalize")
    scale = 1.0 - k
    raw = {c: math.fsum(parts) / scale for c, parts in joint.items()}
    kept = {c: v for c, v in raw.items() if v >= PRUNE_BELOW}
    total = math.fsum(kept.values())
    return MassFunction(m1.frame, {c: v / total for c, v in kept.items()})


def combine_all(masses: Sequence[MassFunction]) -> MassFunction:
    """Left fold of :func:`dempster_combine`; an empty list yields nothing."""
    if not masses:
        raise ValueError("need at least one mass function")
    out = masses[0]
    for m in masses[1:]:
        out = dempster_combine(out, m)
    return out


def pignistic(m: MassFunction) -> PignisticDistribution:
    probs = np.zeros(len(m.frame))
    for mask, value in m.masses.items():
        idx = [i for i in range(len(m.frame)) if mask >> i & 1]
        probs[idx] += value / len(idx)
    return PignisticDistribution(m.frame, probs)


def non_specificity(m: MassFunction) -> float:
    """Generalized Hartley measure ``sum m(A) log2 |A|`` (epistemic)."""
    return math.fsum(v * math.log2(_popcount(a)) for a, v in m.masses.items())


def discord(m: MassFunction) -> float:
    """``-sum m(A) log2 BetP(A)`` over focal elements (aleatoric)."""
    bet = pignistic(m)
    total = 0.0
    for a, v in m.masses.items():
        p = min(bet.of(a), 1.0)
        total -= v * math.log2(p)
    return max(total, 0.0)
