"""Synthetic data for the experiments: the two-plateau example, its
self-similar "hard" variant, the null case and a two-cluster 2-D set."""

from __future__ import annotations

import numpy as np
from scipy.stats import norm

from .core import DomainError, LabeledDataset

SIGMA = 0.25


def f0(x):
    """0.6 on [0, 1/6), 0.4 on [1/6, 1/2], then a smooth logistic-like rise."""
    x = np.asarray(x, dtype=float)
    if np.any((x < 0) | (x > 1)):
        raise DomainError("x must lie in [0, 1]")
    a = norm.pdf(x - 0.5, scale=SIGMA)
    b = norm.pdf(x - 1.0, scale=SIGMA)
    out = np.where(x < 1.0 / 6.0, 0.6, np.where(x <= 0.5, 0.4, a / (a + b)))
    return float(out) if out.ndim == 0 else out


def hard(x, depth: int):
    """``depth`` copies of :func:`f0`, each half the size of the previous one.

    Block ``j`` covers ``[2^-(j+1), 2^-j]`` and holds ``f0`` rescaled onto
    it; the leftover ``[0, 2^-depth)`` is flat at 1/2.  ``hard(x, 0) == f0``.
    """
    x = np.asarray(x, dtype=float)
    if np.any((x < 0) | (x > 1)):
        raise DomainError("x must lie in [0, 1]")
    if depth < 0:
        raise DomainError("depth must be nonnegative")
    if depth == 0:
        return f0(x)
    out = np.full(x.shape, 0.5)
    for j in range(depth):
        lo, hi = 2.0 ** -(j + 1), 2.0**-j
        inside = (x >= lo) & (x <= hi) if j == 0 else (x >= lo) & (x < hi)
        if inside.any():
            out[inside] = f0(np.clip((x[inside] - lo) * 2.0 ** (j + 1), 0.0, 1.0))
    return float(out) if out.ndim == 0 else out


def null(x):
    x = np.asarray(x, dtype=float)
    if np.any((x < 0) | (x > 1)):
        raise DomainError("x must lie in [0, 1]")
    out = np.full(x.shape, 0.5)
    return float(out) if out.ndim == 0 else out


def parse_kind(kind: str) -> tuple[str, int]:
    """``"f0"``, ``"null"`` or ``"hard:<depth>"``."""
    name, _, arg = kind.partition(":")
    if name in ("f0", "null") and not arg:
        return name, 0
    if name == "hard":
        return name, int(arg) if arg else 3
    raise DomainError(f"unknown function kind {kind!r}")


def true_function(kind: str):
    name, depth = parse_kind(kind)
    if name == "f0":
        return f0
    if name == "null":
        return null
    return lambda x: hard(x, depth)


def true_function_eval(kind: str, x):
    return true_function(kind)(x)


def generate_dataset_1d(kind: str, n: int, seed: int) -> LabeledDataset:
    if n < 0:
        raise DomainError("n must be nonnegative")
    f = true_function(kind)
    rng = np.random.default_rng(seed)
    x = rng.random(n)
    y = (rng.random(n) < f(x)).astype(np.int64)
    return LabeledDataset(x, y)


# Two adjacent unit squares; Gaussian clumps sit at their centres.
LEFT_SQUARE = ((0.0, 1.0), (0.0, 1.0))
RIGHT_SQUARE = ((1.0, 2.0), (0.0, 1.0))
LEFT_CENTER = (0.5, 0.5)
RIGHT_CENTER = (1.5, 0.5)
CLUMP_SD = 0.1


def generate_dataset_2d(n: int, seed: int):
    """Label first (fair coin), then the covariate.

    ``y = 1``: half the time uniform on the right square, otherwise
    Normal(left centre, 0.1^2 I).  ``y = 0`` swaps left and right.
    """
    from .voronoi import CovariateSet

    if n < 0:
        raise DomainError("n must be nonnegative")
    rng = np.random.default_rng(seed)
    y = (rng.random(n) < 0.5).astype(np.int64)
    uniform_part = rng.random(n) < 0.5
    u = rng.random((n, 2))
    z = rng.standard_normal((n, 2)) * CLUMP_SD
    right_uniform = np.column_stack([1.0 + u[:, 0], u[:, 1]])
    left_uniform = u
    left_clump = np.asarray(LEFT_CENTER) + z
    right_clump = np.asarray(RIGHT_CENTER) + z
    x = np.where(
        (y == 1)[:, None],
        np.where(uniform_part[:, None], right_uniform, left_clump),
        np.where(uniform_part[:, None], left_uniform, right_clump),
    )
    return CovariateSet(x, y)
