"""Log-domain marginal likelihood of step-function partitions.

With uniform priors on the step heights, each interval contributes the
beta integral ``n1! n0! / (n1 + n0 + 1)!``; the product over intervals is
the marginal likelihood ``rho``.  Everything here stays on the natural-log
scale and the posterior normalising constant is never formed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .core import ChangePointState, HierarchyPrior, IntervalCounts, LabeledDataset, ResourceError

# Level prior on dyadic hierarchies at the consistency boundary.
DYADIC_BETA = math.exp(-(2.0 ** -0.25))
MAX_DYADIC_LEVEL = 20


class LogFactorialTable:
    """Cached ``log(i!)`` for ``0 <= i <= size``; grows on demand."""

    def __init__(self, size: int = 1024):
        self._table = gammaln(np.arange(size + 1) + 1.0).tolist()

    def __getitem__(self, i: int) -> float:
        try:
            return self._table[i]
        except IndexError:
            self._grow(i)
            return self._table[i]

    def _grow(self, i: int) -> None:
        size = max(i + 1, 2 * len(self._table))
        self._table = gammaln(np.arange(size) + 1.0).tolist()

    def beta(self, n1: int, n0: int) -> float:
        return self[n1] + self[n0] - self[n1 + n0 + 1]


_LOG_FACT = LogFactorialTable()


def log_beta_integral(n1: int, n0: int) -> float:
    """``log(n1! n0! / (n1 + n0 + 1)!)``, the log of ``int_0^1 u^n1 (1-u)^n0 du``."""
    if n1 < 0 or n0 < 0:
        raise ValueError("counts must be nonnegative")
    return _LOG_FACT.beta(n1, n0)


def log_rho(counts: IntervalCounts) -> float:
    beta = _LOG_FACT.beta
    return sum(beta(a, b) for a, b in zip(counts.n1, counts.n0))


def log_phi(state: ChangePointState, prior: HierarchyPrior) -> float:
    """Unnormalised log posterior density ``log kappa(k) + log rho`` of a state."""
    lk = prior.log_mass(state.k)
    if lk == -math.inf:
        return -math.inf
    return lk + log_rho(state.counts)


def posterior_value_mean(n1: int, n0: int) -> float:
    return (n1 + 1.0) / (n1 + n0 + 2.0)


def sample_success_probabilities(counts: IntervalCounts, rng: np.random.Generator) -> np.ndarray:
    """Independent Beta(n1 + 1, n0 + 1) draws, one per interval."""
    a = np.asarray(counts.n1, dtype=float) + 1.0
    b = np.asarray(counts.n0, dtype=float) + 1.0
    return rng.beta(a, b)


def log_beta_array(n1: np.ndarray, n0: np.ndarray) -> np.ndarray:
    """Vectorised :func:`log_beta_integral`."""
    n1 = np.asarray(n1, dtype=float)
    n0 = np.asarray(n0, dtype=float)
    return gammaln(n1 + 1.0) + gammaln(n0 + 1.0) - gammaln(n1 + n0 + 2.0)


@dataclass
class DyadicPosterior:
    """Exact posterior under the dyadic hierarchy prior.

    ``level_posterior[k]`` is the posterior mass of level ``k`` (``2**k``
    equal cells), normalised over levels ``0 .. max_level``.  ``tail_mass``
    is the prior mass of the levels that were cut off.
    """

    levels: np.ndarray
    level_posterior: np.ndarray
    grid: np.ndarray
    mean: np.ndarray
    tail_mass: float

    @property
    def mode_level(self) -> int:
        return int(self.levels[np.argmax(self.level_posterior)])


def geometric_level_prior(beta: float = DYADIC_BETA) -> Callable[[int], float]:
    """``kappa(k) = (1 - beta) beta**k`` on levels ``k >= 0``."""
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    return lambda k: (1.0 - beta) * beta**k


def dyadic_exact_posterior(
    dataset: LabeledDataset,
    level_prior: Callable[[int], float] | Sequence[float] | None = None,
    max_level: int = 16,
    grid: np.ndarray | None = None,
) -> DyadicPosterior:
    """Exact level posterior and posterior-mean curve for the dyadic prior.

    At level ``k`` the partition is fixed, so its marginal mass is
    ``kappa(k) * rho(dyadic counts)``.  Cells are half-open on the right,
    matching the change-point convention; ``x = 1`` falls in the last cell.
    """
    if max_level > MAX_DYADIC_LEVEL:
        raise ResourceError(f"max_level={max_level} exceeds limit {MAX_DYADIC_LEVEL}")
    if max_level < 0:
        raise ValueError("max_level must be nonnegative")
    if grid is None:
        from .estimator import default_grid

        grid = default_grid()
    grid = np.asarray(grid, dtype=float)
    if level_prior is None:
        level_prior = geometric_level_prior()
    levels = np.arange(max_level + 1)
    if callable(level_prior):
        masses = np.array([level_prior(int(k)) for k in levels], dtype=float)
        tail = max(0.0, 1.0 - sum(level_prior(int(k)) for k in range(max_level + 1)))
    else:
        full = np.asarray(level_prior, dtype=float)
        masses = np.zeros(max_level + 1)
        m = min(full.size, max_level + 1)
        masses[:m] = full[:m]
        tail = float(full[max_level + 1 :].sum())
    if np.any(masses <= 0):
        raise ValueError("level prior masses must be positive")

    x = dataset.xs
    y = dataset.ys
    logw = np.empty(levels.size)
    shats = []
    for k in levels:
        cells = 1 << int(k)
        idx = np.minimum((x * cells).astype(np.int64), cells - 1)
        heads = np.bincount(idx, weights=y, minlength=cells)
        total = np.bincount(idx, minlength=cells)
        tails = total - heads
        logw[k] = math.log(masses[k]) + float(log_beta_array(heads, tails).sum())
        shats.append((heads + 1.0) / (total + 2.0))
    post = np.exp(logw - logsumexp(logw))
    post /= post.sum()

    mean = np.zeros_like(grid)
    for k in levels:
        cells = 1 << int(k)
        gidx = np.minimum((grid * cells).astype(np.int64), cells - 1)
        mean += post[k] * shats[k][gidx]
    return DyadicPosterior(levels, post, grid, mean, float(tail))
