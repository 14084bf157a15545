"""Posterior-mean curves, model-size histograms and distance utilities."""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Union

import numpy as np
from scipy.special import gammaln

from .core import DomainError, LabeledDataset, StepFunction, UsageError, compute_counts

DEFAULT_GRID_SIZE = 513


def default_grid(size: int = DEFAULT_GRID_SIZE) -> np.ndarray:
    return np.linspace(0.0, 1.0, size)


@dataclass
class PosteriorMeanCurve:
    grid: np.ndarray
    mean: np.ndarray

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.mean = np.asarray(self.mean, dtype=float)
        if self.grid.shape != self.mean.shape:
            raise UsageError("grid and mean must have equal length")

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["u", "mean"])
            for u, m in zip(self.grid.tolist(), self.mean.tolist()):
                w.writerow([repr(u), repr(m)])

    @classmethod
    def from_csv(cls, path: str | Path) -> "PosteriorMeanCurve":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["u", "mean"]:
                raise DomainError(f"{path}: line 1: expected header 'u,mean'")
            rows = [(float(r[0]), float(r[1])) for r in reader if r]
        g, m = zip(*rows) if rows else ((), ())
        return cls(np.array(g), np.array(m))


@dataclass
class ModelSizeHistogram:
    counts: dict[int, int]
    total: int

    @property
    def mode(self) -> int:
        return max(self.counts.items(), key=lambda kv: (kv[1], -kv[0]))[0]

    def probabilities(self, k_max: int | None = None) -> np.ndarray:
        """Relative frequencies indexed by ``k - 1`` for ``k = 1 .. k_max``."""
        k_max = k_max or max(self.counts)
        out = np.zeros(k_max)
        for k, c in self.counts.items():
            if k <= k_max:
                out[k - 1] = c
        return out / self.total

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "count"])
            for k in sorted(self.counts):
                w.writerow([k, self.counts[k]])


def posterior_mean_curve(trace, dataset: LabeledDataset, grid: np.ndarray | None = None) -> PosteriorMeanCurve:
    """Rao-Blackwellised estimate of the posterior mean regression function.

    For every recorded configuration the curve gets the conditional mean
    ``(n1 + 1) / (n1 + n0 + 2)`` of the interval holding each grid point;
    no step heights are simulated.  Runs of identical consecutive states are
    evaluated once and weighted by their length.
    """
    if len(trace) == 0:
        raise UsageError("trace is empty")
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    acc = np.zeros_like(grid)
    for (k, splits), reps in trace.runs():
        counts = compute_counts(dataset, splits)
        n1 = np.asarray(counts.n1, dtype=float)
        n0 = np.asarray(counts.n0, dtype=float)
        shat = (n1 + 1.0) / (n1 + n0 + 2.0)
        idx = np.searchsorted(splits, grid, side="right")
        acc += reps * shat[idx]
    return PosteriorMeanCurve(grid, acc / len(trace))


def model_size_histogram(trace) -> ModelSizeHistogram:
    ks = [k for k, _ in trace.states] if hasattr(trace, "states") else list(trace)
    return ModelSizeHistogram(dict(Counter(ks)), len(ks))


CurveLike = Union[PosteriorMeanCurve, Callable[[np.ndarray], np.ndarray]]


def grid_weights(grid: np.ndarray) -> np.ndarray:
    """Quadrature weights on [0, 1]: each node owns the cell of points nearer
    to it than to its neighbours, clipped to [0, 1] (trapezoid weights on a
    uniform grid)."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 1:
        return np.ones(1)
    mids = 0.5 * (grid[1:] + grid[:-1])
    edges = np.concatenate([[0.0], mids, [1.0]])
    return np.diff(edges)


def _values_on(f: CurveLike, grid: np.ndarray) -> np.ndarray:
    if isinstance(f, PosteriorMeanCurve):
        if f.grid.shape != grid.shape or not np.allclose(f.grid, grid, rtol=0, atol=1e-12):
            raise UsageError("curve grid does not match the evaluation grid")
        return f.mean
    if isinstance(f, (int, float)):
        return np.full_like(grid, float(f))
    out = np.asarray(f(grid), dtype=float)
    if out.shape != grid.shape:
        out = np.array([f(u) for u in grid], dtype=float)
    return out


def _common_grid(f: CurveLike, g: CurveLike, grid) -> np.ndarray:
    if grid is not None:
        return np.asarray(grid, dtype=float)
    for c in (f, g):
        if isinstance(c, PosteriorMeanCurve):
            return c.grid
    return default_grid()


def lp_distance(f: CurveLike, g: CurveLike, p: float = 2.0, grid: np.ndarray | None = None) -> float:
    """``(int |f - g|^p du)^(1/p)`` over [0, 1] with :func:`grid_weights`."""
    if p < 1:
        raise DomainError("p must be >= 1")
    grid = _common_grid(f, g, grid)
    diff = np.abs(_values_on(f, grid) - _values_on(g, grid))
    return float(np.sum(grid_weights(grid) * diff**p) ** (1.0 / p))


def hellinger_curves(f: CurveLike, g: CurveLike, grid: np.ndarray | None = None) -> float:
    """Hellinger distance between the joint densities induced by two
    regression functions, by quadrature on the grid."""
    grid = _common_grid(f, g, grid)
    a = np.clip(_values_on(f, grid), 0.0, 1.0)
    b = np.clip(_values_on(g, grid), 0.0, 1.0)
    integrand = (np.sqrt(a) - np.sqrt(b)) ** 2 + (np.sqrt(1 - a) - np.sqrt(1 - b)) ** 2
    return float(math.sqrt(np.sum(grid_weights(grid) * integrand)))


def bernoulli_kl(p: float, q: float) -> float:
    """KL divergence between Bernoulli(p) and Bernoulli(q), with 0 log 0 = 0."""
    if not (0.0 <= p <= 1.0 and 0.0 <= q <= 1.0):
        raise DomainError("p and q must lie in [0, 1]")
    total = 0.0
    for a, b in ((p, q), (1.0 - p, 1.0 - q)):
        if a == 0.0:
            continue
        if b == 0.0:
            return math.inf
        total += a * math.log(a / b)
    return max(total, 0.0)


def _merged_segments(f: StepFunction, g: StepFunction):
    cuts = np.unique(np.concatenate([[0.0, 1.0], f.state.ordered_splits, g.state.ordered_splits]))
    lengths = np.diff(cuts)
    left = cuts[:-1]
    return lengths, np.asarray(f(left)), np.asarray(g(left))


def hellinger_step_densities(f: StepFunction, g: StepFunction) -> float:
    """Exact Hellinger distance between the densities ``f(x)^y (1-f(x))^(1-y)``
    and the same for ``g`` on [0, 1] x {0, 1}."""
    lengths, a, b = _merged_segments(f, g)
    sq = (np.sqrt(a) - np.sqrt(b)) ** 2 + (np.sqrt(1 - a) - np.sqrt(1 - b)) ** 2
    return float(math.sqrt(np.sum(lengths * sq)))


def l1_step_densities(f: StepFunction, g: StepFunction) -> float:
    """Exact L1 distance between the same joint densities, ``2 int |f - g|``."""
    lengths, a, b = _merged_segments(f, g)
    return float(2.0 * np.sum(lengths * np.abs(a - b)))


def poisson_tail_bound(lam: float, k: int) -> float:
    """Upper bound ``e^-lam lam^k / k! * k / (k - lam)`` on P(Poisson(lam) >= k)."""
    if lam <= 0:
        raise DomainError("lambda must be positive")
    if k <= lam:
        raise DomainError("bound needs k > lambda")
    log_b = -lam + k * math.log(lam) - float(gammaln(k + 1)) + math.log(k / (k - lam))
    return math.exp(log_b)


def total_variation(p, q) -> float:
    """Total variation distance between two mass vectors (zero-padded)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    n = max(p.size, q.size)
    p = np.pad(p, (0, n - p.size))
    q = np.pad(q, (0, n - q.size))
    return 0.5 * float(np.abs(p - q).sum())
