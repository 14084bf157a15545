"""Data, prior and change-point state types shared by every other module.

Intervals follow the left-closed/right-open convention with the last
interval closed: ``I_1 = [0, v_(1))``, ..., ``I_k = [v_(k-1), 1]``.  A point
sitting exactly on a split belongs to the interval on its right.
"""

from __future__ import annotations

import csv
import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class ResourceError(RuntimeError):
    """A request exceeds the enumeration or memory budget of an exact method."""


class UsageError(ValueError):
    """Inputs are individually valid but cannot be combined as requested."""


class LabeledDataset:
    """Covariate/label pairs on [0, 1], sorted ascending by covariate.

    Construction validates and sorts; the original order is not kept.
    ``cum_heads[i]`` is the number of heads among the first ``i`` sorted
    points, so interval counts reduce to two binary searches.
    """

    __slots__ = ("xs", "ys", "n", "heads_total", "tails_total", "cum_heads", "_xlist")

    def __init__(self, xs: Iterable[float], ys: Iterable[int]):
        x = np.asarray(list(xs) if not isinstance(xs, np.ndarray) else xs, dtype=float)
        y = np.asarray(list(ys) if not isinstance(ys, np.ndarray) else ys)
        if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
            raise DomainError("xs and ys must be one-dimensional and of equal length")
        if x.size and (np.any(~np.isfinite(x)) or x.min() < 0.0 or x.max() > 1.0):
            raise DomainError("covariates must lie in [0, 1]")
        if y.size and not np.all((y == 0) | (y == 1)):
            raise DomainError("labels must be 0 or 1")
        order = np.argsort(x, kind="stable")
        self.xs = x[order]
        self.ys = y[order].astype(np.int64)
        self.xs.flags.writeable = False
        self.ys.flags.writeable = False
        self.n = int(x.size)
        self.heads_total = int(self.ys.sum())
        self.tails_total = self.n - self.heads_total
        self.cum_heads = [0] + np.cumsum(self.ys).tolist()
        self._xlist = self.xs.tolist()

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[float, int]]) -> "LabeledDataset":
        pairs = list(pairs)
        return cls([p[0] for p in pairs], [p[1] for p in pairs])

    @classmethod
    def empty(cls) -> "LabeledDataset":
        return cls([], [])

    @property
    def points(self) -> list[tuple[float, int]]:
        return list(zip(self._xlist, self.ys.tolist()))

    def boundary(self, v: float) -> int:
        """Number of sorted points strictly left of ``v``."""
        return bisect_left(self._xlist, v)

    def heads_before(self, i: int) -> int:
        return self.cum_heads[i]

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, LabeledDataset)
            and np.array_equal(self.xs, other.xs)
            and np.array_equal(self.ys, other.ys)
        )

    def __repr__(self) -> str:
        return f"LabeledDataset(n={self.n}, heads={self.heads_total})"

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y"])
            for x, y in zip(self._xlist, self.ys.tolist()):
                w.writerow([repr(x), y])

    @classmethod
    def from_csv(cls, path: str | Path) -> "LabeledDataset":
        xs, ys = [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["x", "y"]:
                raise DomainError(f"{path}: line 1: expected header 'x,y'")
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != 2:
                    raise DomainError(f"{path}: line {lineno}: expected 2 fields, got {len(row)}")
                try:
                    x = float(row[0])
                    y = int(row[1])
                except ValueError:
                    raise DomainError(f"{path}: line {lineno}: unparsable value {row!r}") from None
                if not (0.0 <= x <= 1.0):
                    raise DomainError(f"{path}: line {lineno}: x={x} outside [0, 1]")
                if y not in (0, 1):
                    raise DomainError(f"{path}: line {lineno}: y={y} not in {{0, 1}}")
                xs.append(x)
                ys.append(y)
        return cls(xs, ys)


@dataclass(frozen=True)
class HierarchyPrior:
    """Prior mass function on the number of pieces ``k >= 1``.

    Variants: ``geometric`` with ``kappa(k) = (1 - alpha) alpha**(k-1)``,
    ``truncated_poisson`` (Poisson(lambda) conditioned on ``k >= 1``) and
    ``table`` with explicit masses for ``k = 1 .. len(masses)``.
    """

    variant: str
    param: float = 0.0
    masses: tuple[float, ...] = ()

    def __post_init__(self):
        if self.variant == "geometric":
            if not 0.0 < self.param < 1.0:
                raise DomainError("geometric prior needs alpha in (0, 1)")
        elif self.variant == "truncated_poisson":
            if not self.param > 0.0:
                raise DomainError("poisson prior needs lambda > 0")
        elif self.variant == "table":
            m = np.asarray(self.masses, dtype=float)
            if m.size == 0 or np.any(m < 0) or abs(m.sum() - 1.0) > 1e-12:
                raise DomainError("table prior masses must be nonnegative and sum to 1")
        else:
            raise DomainError(f"unknown prior variant {self.variant!r}")

    @classmethod
    def geometric(cls, alpha: float) -> "HierarchyPrior":
        return cls("geometric", float(alpha))

    @classmethod
    def truncated_poisson(cls, lam: float) -> "HierarchyPrior":
        return cls("truncated_poisson", float(lam))

    @classmethod
    def table(cls, masses: Sequence[float]) -> "HierarchyPrior":
        return cls("table", masses=tuple(float(m) for m in masses))

    @classmethod
    def parse(cls, text: str) -> "HierarchyPrior":
        """Parse ``geometric:0.5``, ``poisson:5`` or ``table:<csv path>``."""
        kind, _, arg = text.partition(":")
        if kind == "geometric":
            return cls.geometric(float(arg))
        if kind == "poisson":
            return cls.truncated_poisson(float(arg))
        if kind == "table":
            with open(arg) as fh:
                vals = [float(tok) for line in fh for tok in line.replace(",", " ").split()]
            return cls.table(vals)
        raise DomainError(f"cannot parse prior {text!r}")

    def describe(self) -> str:
        if self.variant == "geometric":
            return f"geometric:{self.param!r}"
        if self.variant == "truncated_poisson":
            return f"poisson:{self.param!r}"
        return "table:" + ",".join(repr(m) for m in self.masses)

    def log_mass(self, k: int) -> float:
        if k < 1:
            return -math.inf
        if self.variant == "geometric":
            a = self.param
            return math.log1p(-a) + (k - 1) * math.log(a)
        if self.variant == "truncated_poisson":
            lam = self.param
            return -lam + k * math.log(lam) - math.lgamma(k + 1) - math.log(-math.expm1(-lam))
        if k > len(self.masses) or self.masses[k - 1] == 0.0:
            return -math.inf
        return math.log(self.masses[k - 1])

    def mass(self, k: int) -> float:
        return math.exp(self.log_mass(k))

    def tail_mass(self, k_max: int) -> float:
        """P(K > k_max)."""
        if self.variant == "geometric":
            return self.param ** k_max
        if self.variant == "truncated_poisson":
            from scipy.stats import poisson

            lam = self.param
            return float(poisson.sf(k_max, lam) / -math.expm1(-lam))
        return float(sum(self.masses[k_max:]))

    def sample(self, rng: np.random.Generator, size: int | None = None):
        """Draw ``K`` from the prior (vectorised when ``size`` is given)."""
        if self.variant == "geometric":
            out = rng.geometric(1.0 - self.param, size=size)
        elif self.variant == "truncated_poisson":
            out = _zero_truncated_poisson(rng, self.param, size)
        else:
            p = np.asarray(self.masses)
            out = rng.choice(np.arange(1, p.size + 1), p=p / p.sum(), size=size)
        return int(out) if size is None else np.asarray(out, dtype=np.int64)


def _zero_truncated_poisson(rng, lam, size):
    n = 1 if size is None else int(np.prod(size))
    out = np.empty(n, dtype=np.int64)
    filled = 0
    while filled < n:
        draw = rng.poisson(lam, size=max(n - filled, 16))
        draw = draw[draw >= 1][: n - filled]
        out[filled : filled + draw.size] = draw
        filled += draw.size
    return out[0] if size is None else out.reshape(size)


@dataclass
class IntervalCounts:
    """Per-interval head (``n1``) and tail (``n0``) counts."""

    n1: list[int]
    n0: list[int]

    @property
    def k(self) -> int:
        return len(self.n1)

    def copy(self) -> "IntervalCounts":
        return IntervalCounts(list(self.n1), list(self.n0))


@dataclass
class ChangePointState:
    """A point ``(k, v)`` of the marginalised parameter space.

    ``splits`` keeps the insertion order used by the proposal moves;
    ``ordered_splits`` is its sorted copy and ``counts`` the matching
    interval tallies for the dataset the state was built against.
    """

    splits: list[float]
    ordered_splits: list[float]
    counts: IntervalCounts
    log_phi: float = field(default=math.nan, compare=False)

    @property
    def k(self) -> int:
        return len(self.splits) + 1

    @classmethod
    def from_splits(cls, dataset: LabeledDataset, splits: Sequence[float] = ()) -> "ChangePointState":
        splits = [float(v) for v in splits]
        for v in splits:
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"split {v} outside [0, 1]")
        ordered = sorted(splits)
        return cls(splits, ordered, compute_counts(dataset, ordered))

    def snapshot(self) -> tuple[int, tuple[float, ...]]:
        return self.k, tuple(self.ordered_splits)


@dataclass
class StepFunction:
    """A step function with one value per interval of ``state``."""

    state: ChangePointState
    values: list[float]

    def __post_init__(self):
        if len(self.values) != self.state.k:
            raise DomainError("need exactly one value per interval")
        if any(not 0.0 <= s <= 1.0 for s in self.values):
            raise DomainError("step values must lie in [0, 1]")

    @classmethod
    def from_splits(cls, splits: Sequence[float], values: Sequence[float]) -> "StepFunction":
        return cls(ChangePointState.from_splits(LabeledDataset.empty(), splits), list(values))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.state.ordered_splits, x, side="right")
        out = np.asarray(self.values)[idx]
        return float(out) if out.ndim == 0 else out


def locate_interval(x: float, ordered_splits: Sequence[float]) -> int:
    """1-based index ``j`` of the interval ``I_j`` containing ``x``."""
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"x={x} outside [0, 1]")
    return bisect_right(ordered_splits, x) + 1


def compute_counts(dataset: LabeledDataset, ordered_splits: Sequence[float]) -> IntervalCounts:
    """Head/tail counts of every interval, by binary search on the sorted data."""
    cum = dataset.cum_heads
    n1, n0 = [], []
    lo = 0
    for v in ordered_splits:
        hi = dataset.boundary(v)
        h = cum[hi] - cum[lo]
        n1.append(h)
        n0.append(hi - lo - h)
        lo = hi
    hi = dataset.n
    h = cum[hi] - cum[lo]
    n1.append(h)
    n0.append(hi - lo - h)
    return IntervalCounts(n1, n0)


@dataclass(frozen=True)
class SplitMove:
    """Removal (``new is None``), insertion (``old is None``) or relocation of one split."""

    old: float | None = None
    new: float | None = None


def _remove_split(counts: IntervalCounts, ordered: list[float], v: float) -> None:
    i = bisect_left(ordered, v)
    if i == len(ordered) or ordered[i] != v:
        raise AssertionError(f"split {v} not present in state")
    del ordered[i]
    counts.n1[i] += counts.n1.pop(i + 1)
    counts.n0[i] += counts.n0.pop(i + 1)


def _insert_split(counts: IntervalCounts, ordered: list[float], dataset: LabeledDataset, v: float) -> None:
    j = bisect_right(ordered, v)
    lo = dataset.boundary(ordered[j - 1]) if j > 0 else 0
    mid = dataset.boundary(v)
    cum = dataset.cum_heads
    h_left = cum[mid] - cum[lo]
    c_left = mid - lo
    counts.n1.insert(j, h_left)
    counts.n0.insert(j, c_left - h_left)
    counts.n1[j + 1] -= h_left
    counts.n0[j + 1] -= c_left - h_left
    ordered.insert(j, v)


def shift_counts(
    counts: IntervalCounts,
    dataset: LabeledDataset,
    old_splits: Sequence[float],
    move: SplitMove,
) -> tuple[IntervalCounts, list[float]]:
    """Apply one split move incrementally.

    Returns the new counts and the new ordered split list; neither input is
    modified.  The cost is a couple of binary searches plus list surgery on
    the ``k`` interval entries, independent of ``n``.
    """
    new_counts = counts.copy()
    ordered = list(old_splits)
    if move.old is not None and move.new is not None and move.old == move.new:
        return new_counts, ordered
    if move.old is not None:
        _remove_split(new_counts, ordered, move.old)
    if move.new is not None:
        if not 0.0 <= move.new <= 1.0:
            raise DomainError(f"split {move.new} outside [0, 1]")
        _insert_split(new_counts, ordered, dataset, move.new)
    if new_counts.n1 and min(min(new_counts.n1), min(new_counts.n0)) < 0:
        raise AssertionError("counts inconsistent with splits")
    return new_counts, ordered


__all__ = [
    "ChangePointState",
    "DomainError",
    "HierarchyPrior",
    "IntervalCounts",
    "LabeledDataset",
    "ResourceError",
    "SplitMove",
    "StepFunction",
    "UsageError",
    "compute_counts",
    "locate_interval",
    "shift_counts",
]
