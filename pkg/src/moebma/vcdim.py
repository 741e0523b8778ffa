"""Brute-force shattering checks and the translated-set construction for top-expert mixtures.

Families are searched exhaustively *relative to a point set*: for 1-D
threshold and interval classifiers, cut points at the midpoints between
consecutive points plus one outer gap on each side reach every labeling
the family can produce on those points.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from moebma.moe import HalfOpen, PiecewiseHypothesis
from moebma.numerics import make_rng

MAX_POINTS = 22


class ShatterCapError(ValueError):
    pass


class UnrealizableLabeling(ValueError):
    pass


def point_set(values) -> np.ndarray:
    """Validate and return a strictly increasing float array."""
    pts = np.asarray(values, dtype=np.float64).reshape(-1)
    if not np.isfinite(pts).all():
        raise ValueError("points must be finite")
    if pts.size > 1 and not np.all(np.diff(pts) > 0):
        raise ValueError("points must be strictly increasing")
    return pts


def gaps(pts: np.ndarray) -> np.ndarray:
    """Cut points: one below the minimum, each midpoint, one above the maximum."""
    if pts.size == 0:
        return np.array([0.0])
    mids = 0.5 * (pts[:-1] + pts[1:])
    return np.concatenate([[pts[0] - 1.0], mids, [pts[-1] + 1.0]])


def _mask_of(labels: np.ndarray) -> int:
    return int(sum(int(b) << i for i, b in enumerate(labels)))


# ---------------------------------------------------------------------------
# classifiers and families


@dataclass(frozen=True)
class Threshold:
    """``1[a*x + b > 0]`` with ``a`` in {-1, +1}."""

    a: int
    b: float

    def __call__(self, x):
        return (self.a * np.asarray(x, dtype=np.float64) + self.b > 0).astype(np.int8)


@dataclass(frozen=True)
class Interval:
    """``1[lo <= x <= hi]``."""

    lo: float
    hi: float

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        return ((self.lo <= x) & (x <= self.hi)).astype(np.int8)


@dataclass(frozen=True)
class Constant:
    value: int

    def __call__(self, x):
        return np.full(np.shape(x), self.value, dtype=np.int8)


@dataclass(frozen=True)
class Translated:
    """``base(x - offset)``: a classifier with the construction shift removed."""

    base: object
    offset: float

    def __call__(self, x):
        return self.base(np.asarray(x, dtype=np.float64) - self.offset)


class ClassifierFamily(ABC):
    name: str = "family"

    @abstractmethod
    def candidates(self, pts: np.ndarray) -> list:
        """Members whose labelings on ``pts`` cover everything the family can do there."""

    @abstractmethod
    def translate(self, clf, c: float):
        """The family member equal to ``x -> clf(x - c)``."""

    def realizable(self, pts: np.ndarray) -> dict[int, object]:
        """Map from labeling bitmask (bit i = label of point i) to a realizing member."""
        pts = point_set(pts)
        found: dict[int, object] = {}
        for clf in self.candidates(pts):
            found.setdefault(_mask_of(clf(pts)), clf)
        return found

    def realize(self, pts, labels):
        """A member producing ``labels`` on ``pts``, or None."""
        labels = np.asarray(labels, dtype=np.int8)
        return self.realizable(point_set(pts)).get(_mask_of(labels))


class AffineThresholds(ClassifierFamily):
    name = "affine-thresholds"

    def candidates(self, pts):
        out = []
        for t in gaps(point_set(pts)):
            out.append(Threshold(1, -float(t)))
            out.append(Threshold(-1, float(t)))
        return out

    def translate(self, clf: Threshold, c: float) -> Threshold:
        return Threshold(clf.a, clf.b - clf.a * c)


class Intervals(ClassifierFamily):
    name = "intervals"

    def candidates(self, pts):
        g = gaps(point_set(pts))
        return [Interval(float(g[i]), float(g[j])) for i in range(g.size) for j in range(i, g.size)]

    def translate(self, clf: Interval, c: float) -> Interval:
        return Interval(clf.lo + c, clf.hi + c)


class Constants(ClassifierFamily):
    name = "constants"

    def candidates(self, pts):
        return [Constant(0), Constant(1)]

    def translate(self, clf: Constant, c: float) -> Constant:
        return clf


FAMILIES = {f.name: f for f in (AffineThresholds, Intervals, Constants)}


def family_by_name(name: str) -> ClassifierFamily:
    try:
        return FAMILIES[name]()
    except KeyError:
        raise ValueError(f"unknown classifier family {name!r}; choose from {sorted(FAMILIES)}") from None


# ---------------------------------------------------------------------------
# shattering


def shatters(family: ClassifierFamily, pts) -> bool:
    """True iff every one of the 2^|pts| labelings is realized by a searched member."""
    pts = point_set(pts)
    m = pts.size
    if m > MAX_POINTS:
        raise ShatterCapError(f"{m} points exceeds the {MAX_POINTS}-point enumeration cap")
    realized = np.zeros(1 << m, dtype=bool)
    for mask in family.realizable(pts):
        realized[mask] = True
    return bool(realized.all())


def first_unrealized(family: ClassifierFamily, pts) -> tuple[int, ...] | None:
    pts = point_set(pts)
    found = family.realizable(pts)
    for mask in range(1 << pts.size):
        if mask not in found:
            return tuple((mask >> i) & 1 for i in range(pts.size))
    return None


def candidate_point_sets(m: int, search_budget: int, seed: int = 0):
    """Structured sets first (integer grid, geometric spacing), then random ones."""
    if m == 0:
        yield np.empty(0)
        return
    yield np.arange(m, dtype=np.float64)
    yield np.cumsum(2.0 ** np.arange(m)) - 1.0
    rng = make_rng(seed, "vcdim", m)
    for _ in range(search_budget):
        pts = np.unique(rng.uniform(-10.0, 10.0, m))
        if pts.size == m:
            yield pts


def find_shattered_set(family: ClassifierFamily, m: int, search_budget: int = 64,
                       seed: int = 0) -> np.ndarray | None:
    for pts in candidate_point_sets(m, search_budget, seed):
        if shatters(family, pts):
            return pts
    return None


def vcd_lower_bound(family: ClassifierFamily, max_m: int = 8, search_budget: int = 64,
                    seed: int = 0) -> int:
    """Largest m <= max_m for which some searched set of size m is shattered.

    Shattering is inherited by subsets, so the search stops at the first
    size with no shattered candidate.
    """
    if max_m > MAX_POINTS:
        raise ShatterCapError(f"max_m={max_m} exceeds the {MAX_POINTS}-point cap")
    best = 0
    for m in range(1, max_m + 1):
        if find_shattered_set(family, m, search_budget, seed) is None:
            break
        best = m
    return best


# ---------------------------------------------------------------------------
# translated-set construction


def build_translated_sets(X1, n: int) -> list[np.ndarray]:
    """n pairwise-disjoint translates of X1.

    Set i is set i-1 shifted by c_i, where c_1 = 0 and c_i is the smallest
    positive multiple of ``span(X1) + 1`` that moves every point off all
    earlier sets.
    """
    X1 = point_set(X1)
    if X1.size == 0:
        raise ValueError("base set must be nonempty")
    if n < 1:
        raise ValueError("need at least one set")
    step = float(X1[-1] - X1[0]) + 1.0
    sets = [X1.copy()]
    taken = set(X1.tolist())
    for _ in range(1, n):
        prev = sets[-1]
        mult = 1
        while True:
            cand = prev + mult * step
            if not taken.intersection(cand.tolist()):
                break
            mult += 1
        sets.append(cand)
        taken.update(cand.tolist())
    return sets


def translation_offsets(sets: Sequence[np.ndarray]) -> list[float]:
    """Cumulative shift of each set relative to the first (the sum of c_1..c_j)."""
    return [float(s[0] - sets[0][0]) for s in sets]


def build_piecewise_hypothesis(sets: Sequence[np.ndarray], labeling, family: ClassifierFamily,
                               use_family_translate: bool = False) -> PiecewiseHypothesis:
    """Top-expert hypothesis reproducing ``labeling`` on the union of ``sets``.

    For block j the base member realizing those labels on the first set is
    found, then shifted so it reads set j as if it were the first.  Cell j
    is ``[min(set j), midpoint to set j+1)``; the last cell is the catch-all.
    """
    sets = [point_set(s) for s in sets]
    labeling = np.asarray(labeling, dtype=np.int8).reshape(-1)
    sizes = [s.size for s in sets]
    if labeling.size != sum(sizes):
        raise ValueError(f"labeling has {labeling.size} entries, sets hold {sum(sizes)} points")
    base_set = sets[0]
    offsets = translation_offsets(sets)
    table = family.realizable(base_set)
    experts, cells = [], []
    pos = 0
    for j, s in enumerate(sets):
        block = labeling[pos:pos + s.size]
        pos += s.size
        base = table.get(_mask_of(block))
        if base is None:
            raise UnrealizableLabeling(
                f"family {family.name} cannot realize block {tuple(int(b) for b in block)} on {base_set.tolist()}"
            )
        if use_family_translate:
            experts.append(family.translate(base, offsets[j]))
        else:
            experts.append(Translated(base, offsets[j]))
        if j < len(sets) - 1:
            hi = 0.5 * (s[-1] + sets[j + 1][0])
            cells.append((HalfOpen(float(s[0]), float(hi)),))
        else:
            cells.append(())
    return PiecewiseHypothesis(cells, experts)


@dataclass
class PropositionReport:
    n: int
    m: int
    points: list[float]
    labelings_checked: int
    ok: bool
    family: str
    base_set: list[float] = field(default_factory=list)
    failure: tuple[int, ...] | None = None

    @property
    def nm(self) -> int:
        return self.n * self.m

    def machine_line(self) -> str:
        pts = ";".join(repr(p) for p in self.points)
        return (f"n={self.n},m={self.m},points={pts},labelings_checked={self.labelings_checked},"
                f"ok={'true' if self.ok else 'false'}")

    def text(self) -> str:
        lines = [
            f"family: {self.family}",
            f"base set (shattered, m={self.m}): {self.base_set}",
            f"experts n={self.n}; construction points nm={self.nm}: {self.points}",
            f"labelings realized: {self.labelings_checked if self.ok else 'FAILED'} of {2 ** self.nm}",
        ]
        if self.failure is not None:
            lines.append(f"unrealized labeling: {self.failure}")
        lines.append(self.machine_line())
        return "\n".join(lines)


def verify_proposition(n: int, family: ClassifierFamily, max_m: int = 8, search_budget: int = 64,
                       seed: int = 0) -> PropositionReport:
    """Exhaustively check that n-expert top-expert mixtures shatter n*m points.

    m is the family's searched VC lower bound.  Every one of the 2^(nm)
    labelings of the translated construction points is turned into a
    piecewise hypothesis and evaluated on all points.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    m = vcd_lower_bound(family, max_m, search_budget, seed)
    if m == 0:
        return PropositionReport(n, 0, [], 1, True, family.name)
    if n * m > MAX_POINTS:
        raise ShatterCapError(f"n*m={n * m} exceeds the {MAX_POINTS}-point cap")
    base = find_shattered_set(family, m, search_budget, seed)
    sets = build_translated_sets(base, n)
    points = np.concatenate(sets)
    nm = points.size
    checked = 0
    for mask in range(1 << nm):
        labeling = np.array([(mask >> i) & 1 for i in range(nm)], dtype=np.int8)
        try:
            h = build_piecewise_hypothesis(sets, labeling, family)
        except UnrealizableLabeling:
            return PropositionReport(n, m, points.tolist(), checked, False, family.name,
                                     base.tolist(), tuple(int(b) for b in labeling))
        got = np.array([h(x) for x in points], dtype=np.int8)
        if not np.array_equal(got, labeling):
            return PropositionReport(n, m, points.tolist(), checked, False, family.name,
                                     base.tolist(), tuple(int(b) for b in labeling))
        checked += 1
    return PropositionReport(n, m, points.tolist(), checked, True, family.name, base.tolist())
