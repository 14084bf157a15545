"""Voronoi-partition prior built from subsets of the observed covariates.

A nonempty subset of the data points generates a nearest-neighbour
partition; each cell gets an independent uniform success probability.
Subsets of size ``k`` carry prior mass proportional to ``alpha**(k-1)``.
In the weighted variant each generator has a weight ``w_j`` and ``x``
belongs to the generator minimising ``dist(x, x_j) / w_j``.  Ties go to
the generator that comes first in the original ordering.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .core import DomainError, ResourceError, UsageError
from .marginal import LogFactorialTable, log_beta_array
from .sampler import RandomStream

MAX_ENUM_N = 15
WEIGHT_STEP_SD = 0.3

_LF = LogFactorialTable()


class CovariateSet:
    """Covariate vectors (``n x d``) with binary labels, in original order.

    A label of -1 (or ``labels=None`` for all points) marks an unlabeled
    covariate: it can generate a cell but adds nothing to the counts.
    """

    def __init__(self, points, labels=None, metric: str = "euclidean"):
        x = np.asarray(points, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if labels is None:
            labels = np.full(x.shape[0], -1)
        y = np.asarray(labels).astype(np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise DomainError("points must be n x d and labels length n")
        if x.shape[0] < 1:
            raise DomainError("need at least one covariate")
        if not np.all((y == 0) | (y == 1) | (y == -1)):
            raise DomainError("labels must be 0, 1 or -1 (unlabeled)")
        if metric != "euclidean":
            raise DomainError(f"unsupported metric {metric!r}")
        self.points = x
        self.labels = y
        self.heads = (y == 1).astype(np.int64)
        self.tails = (y == 0).astype(np.int64)
        self.metric = metric
        self._dist = None

    @property
    def dist(self) -> np.ndarray:
        """Pairwise distance matrix, built on first use."""
        if self._dist is None:
            self._dist = cdist(self.points, self.points)
        return self._dist

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def distances_to(self, x) -> np.ndarray:
        """Distances from each row of ``x`` to every covariate (``m x n``)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return cdist(x, self.points)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(self.dim)] + ["y"])
            for row, y in zip(self.points.tolist(), self.labels.tolist()):
                w.writerow([repr(v) for v in row] + [y])

    @classmethod
    def from_csv(cls, path: str | Path) -> "CovariateSet":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader, [])]
            d = len(header) - 1
            if d < 1 or header != [f"x{i + 1}" for i in range(d)] + ["y"]:
                raise DomainError(f"{path}: line 1: expected header 'x1,...,xd,y'")
            pts, ys = [], []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != d + 1:
                    raise DomainError(f"{path}: line {lineno}: expected {d + 1} fields")
                try:
                    pts.append([float(v) for v in row[:d]])
                    y = int(row[d])
                except ValueError:
                    raise DomainError(f"{path}: line {lineno}: unparsable value") from None
                if y not in (0, 1, -1):
                    raise DomainError(f"{path}: line {lineno}: y={y} not in {{0, 1, -1}}")
                ys.append(y)
        return cls(np.array(pts), np.array(ys))


def _assign(dist: np.ndarray, included: np.ndarray, weights: np.ndarray | None) -> np.ndarray:
    """Generator index for each row of ``dist`` (``m x n``); argmin keeps the
    first minimiser, which is the tie rule."""
    gens = np.flatnonzero(included)
    d = dist[:, gens]
    if weights is not None:
        d = d / weights[gens]
    return gens[np.argmin(d, axis=1)]


@dataclass
class SubsetState:
    """Included generators plus cached cell assignment and per-cell counts.

    ``n1[j]`` / ``n0[j]`` count the labelled points assigned to generator
    ``j`` (zero for excluded generators).
    """

    included: np.ndarray
    weights: np.ndarray | None
    assignment: np.ndarray
    n1: np.ndarray
    n0: np.ndarray
    log_post: float = field(default=math.nan, compare=False)

    @property
    def k(self) -> int:
        return int(self.included.sum())

    @classmethod
    def build(cls, covariates: CovariateSet, included, weights=None) -> "SubsetState":
        inc = np.asarray(included, dtype=bool).copy()
        if inc.shape != (covariates.n,):
            raise DomainError("included must have one flag per covariate")
        if not inc.any():
            raise DomainError("the empty subset is not allowed")
        w = None
        if weights is not None:
            w = np.asarray(weights, dtype=float).copy()
            if w.shape != (covariates.n,) or np.any(w <= 0):
                raise DomainError("weights must be positive, one per covariate")
        assignment = _assign(covariates.dist, inc, w)
        n1, n0 = _tally(assignment, covariates)
        return cls(inc, w, assignment, n1, n0)

    def copy(self) -> "SubsetState":
        return SubsetState(
            self.included.copy(),
            None if self.weights is None else self.weights.copy(),
            self.assignment.copy(),
            self.n1.copy(),
            self.n0.copy(),
            self.log_post,
        )


def _tally(assignment, covariates):
    n = covariates.n
    n1 = np.bincount(assignment, weights=covariates.heads, minlength=n).astype(np.int64)
    n0 = np.bincount(assignment, weights=covariates.tails, minlength=n).astype(np.int64)
    return n1, n0


def assign_cell(x, state: SubsetState, covariates: CovariateSet):
    """Index (original ordering) of the generator whose cell contains ``x``.

    ``x`` may be one covariate vector or a stack of them.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1 and covariates.dim > 1 or x.ndim == 0
    out = _assign(covariates.distances_to(x.reshape(-1, covariates.dim)), state.included, state.weights)
    return int(out[0]) if single else out


def subset_log_posterior(state: SubsetState, covariates: CovariateSet, alpha: float) -> float:
    """``(k - 1) log alpha + sum_j log beta-integral(n1_j, n0_j)``, unnormalised."""
    if not 0.0 < alpha <= 1.0:
        raise DomainError("alpha must lie in (0, 1]")
    beta = _LF.beta
    total = (state.k - 1) * math.log(alpha)
    for j in np.flatnonzero(state.included).tolist():
        total += beta(int(state.n1[j]), int(state.n0[j]))
    return total


def _move_points(state: SubsetState, covariates: CovariateSet, pts: np.ndarray, new_gen: np.ndarray) -> None:
    old = state.assignment[pts]
    changed = old != new_gen
    if not changed.any():
        return
    pts, old, new_gen = pts[changed], old[changed], new_gen[changed]
    h = covariates.heads[pts]
    t = covariates.tails[pts]
    np.subtract.at(state.n1, old, h)
    np.subtract.at(state.n0, old, t)
    np.add.at(state.n1, new_gen, h)
    np.add.at(state.n0, new_gen, t)
    state.assignment[pts] = new_gen


def _beats(dist_col, w_j, j, cur_dist, cur_w, cur_gen):
    """Does generator ``j`` win against each point's current generator?"""
    a = dist_col / w_j
    b = cur_dist / cur_w
    return (a < b) | ((a == b) & (j < cur_gen))


def apply_flip(state: SubsetState, covariates: CovariateSet, j: int, new_weight: float | None = None) -> SubsetState:
    """Copy of ``state`` with bit ``j`` flipped, counts updated incrementally."""
    new = state.copy()
    D = covariates.dist
    if new.weights is not None and new_weight is not None:
        new.weights[j] = new_weight
    w = new.weights
    if not state.included[j]:
        new.included[j] = True
        cur = new.assignment
        pts = np.arange(covariates.n)
        cur_d = D[pts, cur]
        cur_w = 1.0 if w is None else w[cur]
        wj = 1.0 if w is None else w[j]
        win = _beats(D[:, j], wj, j, cur_d, cur_w, cur)
        if win.any():
            _move_points(new, covariates, pts[win], np.full(int(win.sum()), j))
    else:
        if state.k == 1:
            raise UsageError("cannot remove the last generator")
        new.included[j] = False
        pts = np.flatnonzero(new.assignment == j)
        if pts.size:
            _move_points(new, covariates, pts, _assign(D[pts], new.included, w))
    new.log_post = math.nan
    return new


def apply_weight(state: SubsetState, covariates: CovariateSet, j: int, new_weight: float) -> SubsetState:
    """Copy of ``state`` with generator ``j`` reweighted."""
    if state.weights is None:
        raise UsageError("state is unweighted")
    new = state.copy()
    new.weights[j] = new_weight
    if not new.included[j]:
        return new
    D = covariates.dist
    w = new.weights
    mine = new.assignment == j
    pts = np.flatnonzero(mine)
    if pts.size:
        _move_points(new, covariates, pts, _assign(D[pts], new.included, w))
    others = np.flatnonzero(new.assignment != j)
    cur = new.assignment[others]
    win = _beats(D[others, j], w[j], j, D[others, cur], w[cur], cur)
    if win.any():
        _move_points(new, covariates, others[win], np.full(int(win.sum()), j))
    new.log_post = math.nan
    return new


def _log_gamma_density(w: float, gamma: float) -> float:
    # Gamma(shape=gamma, scale=1/gamma), up to a constant
    return (gamma - 1.0) * math.log(w) - gamma * w


def _ensure_log_post(state: SubsetState, covariates: CovariateSet, alpha: float) -> float:
    if math.isnan(state.log_post):
        state.log_post = subset_log_posterior(state, covariates, alpha)
    return state.log_post


def subset_chain_step(
    state: SubsetState,
    covariates: CovariateSet,
    alpha: float,
    gamma: float | None = None,
    rng=None,
) -> tuple[SubsetState, bool, str]:
    """One bit-flip (or, weighted, weight-update) Metropolis-Hastings step.

    Returns ``(state, accepted, kind)`` with ``kind`` in ``{"flip", "hold",
    "weight"}``.  A flip that would empty the subset is a hold.  In the
    weighted variant a flip draws the flipped generator's weight afresh
    from Gamma(gamma, 1/gamma); that proposal cancels against the weight
    prior, so flips use the plain posterior ratio.
    """
    rs = rng if isinstance(rng, RandomStream) else RandomStream(np.random.default_rng(rng))
    weighted = state.weights is not None
    if weighted and gamma is None:
        raise UsageError("weighted state needs gamma")
    current = _ensure_log_post(state, covariates, alpha)
    n = covariates.n
    if weighted and rs.uniform() < 0.5:
        inc = np.flatnonzero(state.included)
        j = int(inc[rs.index(inc.size)])
        w_old = float(state.weights[j])
        w_new = w_old * math.exp(WEIGHT_STEP_SD * rs.normal())
        prop = apply_weight(state, covariates, j, w_new)
        diff = (
            _ensure_log_post(prop, covariates, alpha)
            - current
            + _log_gamma_density(w_new, gamma)
            - _log_gamma_density(w_old, gamma)
            + math.log(w_new / w_old)
        )
        kind = "weight"
    else:
        j = rs.index(n)
        if state.included[j] and state.k == 1:
            return state, True, "hold"
        new_w = float(rs.rng.gamma(gamma, 1.0 / gamma)) if weighted else None
        prop = apply_flip(state, covariates, j, new_w)
        diff = _ensure_log_post(prop, covariates, alpha) - current
        kind = "flip"
    if diff >= 0.0 or rs.uniform() < math.exp(diff):
        return prop, True, kind
    return state, False, kind


@dataclass
class SubsetTrace:
    """Run-length encoded post burn-in states of the subset chain.

    States are stored as compact keys (packed inclusion bits plus raw
    weights); :meth:`distinct` rebuilds them with their total multiplicity.
    """

    keys: list[bytes] = field(default_factory=list)
    sizes: list[int] = field(default_factory=list)
    repeats: list[int] = field(default_factory=list)
    proposals: dict[str, int] = field(default_factory=lambda: {"flip": 0, "hold": 0, "weight": 0})
    accepted: dict[str, int] = field(default_factory=lambda: {"flip": 0, "hold": 0, "weight": 0})
    n: int = 0
    weighted: bool = False
    _last: object = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return int(sum(self.repeats))

    def append(self, state: SubsetState) -> None:
        if self._last is state:
            self.repeats[-1] += 1
            return
        self._last = state
        key = np.packbits(state.included).tobytes()
        if state.weights is not None:
            key += state.weights.tobytes()
        self.keys.append(key)
        self.sizes.append(state.k)
        self.repeats.append(1)

    def decode(self, key: bytes) -> tuple[np.ndarray, np.ndarray | None]:
        nb = (self.n + 7) // 8
        inc = np.unpackbits(np.frombuffer(key[:nb], dtype=np.uint8))[: self.n].astype(bool)
        w = np.frombuffer(key[nb:], dtype=float).copy() if self.weighted else None
        return inc, w

    def distinct(self, covariates: CovariateSet):
        """Yield ``(SubsetState, total multiplicity)`` per distinct state."""
        totals: dict[bytes, int] = {}
        for key, r in zip(self.keys, self.repeats):
            totals[key] = totals.get(key, 0) + r
        for key, r in totals.items():
            inc, w = self.decode(key)
            yield SubsetState.build(covariates, inc, w), r

    def size_marginal(self, n: int | None = None) -> np.ndarray:
        """Relative frequency of subset sizes ``1 .. n`` (index ``k - 1``)."""
        out = np.bincount(np.asarray(self.sizes) - 1, weights=self.repeats, minlength=n or self.n)
        return out / len(self)


def run_subset_chain(
    covariates: CovariateSet,
    alpha: float,
    iterations: int,
    burn_in: int = 0,
    seed: int = 0,
    gamma: float | None = None,
    weighted: bool = False,
    initial: SubsetState | None = None,
) -> SubsetTrace:
    """Run the subset chain from the full subset (or ``initial``)."""
    from .sampler import make_rng

    if not 0 <= burn_in < iterations:
        raise UsageError("need 0 <= burn_in < iterations")
    rng = make_rng(seed)
    rs = RandomStream(rng)
    if initial is None:
        weights = rng.gamma(gamma, 1.0 / gamma, size=covariates.n) if weighted else None
        initial = SubsetState.build(covariates, np.ones(covariates.n, dtype=bool), weights)
    if weighted and gamma is None:
        raise UsageError("weighted chain needs gamma")
    state = initial
    trace = SubsetTrace(n=covariates.n, weighted=state.weights is not None)
    for it in range(1, iterations + 1):
        state, ok, kind = subset_chain_step(state, covariates, alpha, gamma if weighted else None, rs)
        trace.proposals[kind] += 1
        trace.accepted[kind] += ok
        if it > burn_in:
            trace.append(state)
    return trace


def voronoi_posterior_mean(trace: SubsetTrace, covariates: CovariateSet, eval_points) -> np.ndarray:
    """Average of the conditional cell means at each evaluation point."""
    if len(trace) == 0:
        raise UsageError("trace is empty")
    dist = covariates.distances_to(np.asarray(eval_points, dtype=float).reshape(-1, covariates.dim))
    acc = np.zeros(dist.shape[0])
    for s, r in trace.distinct(covariates):
        gen = _assign(dist, s.included, s.weights)
        acc += r * (s.n1[gen] + 1.0) / (s.n1[gen] + s.n0[gen] + 2.0)
    return acc / len(trace)


@dataclass
class SubsetEnumeration:
    masks: np.ndarray  # (S, n) bool
    probabilities: np.ndarray
    means: np.ndarray

    def size_marginal(self) -> np.ndarray:
        n = self.masks.shape[1]
        return np.bincount(self.masks.sum(1) - 1, weights=self.probabilities, minlength=n)


def enumerate_subsets_exact(covariates: CovariateSet, alpha: float, eval_points=None) -> SubsetEnumeration:
    """Exact posterior over every nonempty subset (unweighted prior)."""
    n = covariates.n
    if n > MAX_ENUM_N:
        raise ResourceError(f"subset enumeration refuses n={n} > {MAX_ENUM_N}")
    if not 0.0 < alpha <= 1.0:
        raise DomainError("alpha must lie in (0, 1]")
    codes = np.arange(1, 1 << n)
    masks = ((codes[:, None] >> np.arange(n)) & 1).astype(bool)
    ev = covariates.points if eval_points is None else np.asarray(eval_points, dtype=float).reshape(-1, covariates.dim)
    dist = np.vstack([covariates.dist, covariates.distances_to(ev)])
    order = np.argsort(dist, axis=1, kind="stable")  # ties keep index order
    # first included generator in each point's distance order
    inc_in_order = masks[:, order]  # (S, P, n)
    first = np.argmax(inc_in_order, axis=2)
    gen = np.take_along_axis(np.broadcast_to(order, inc_in_order.shape), first[:, :, None], axis=2)[:, :, 0]
    data_gen = gen[:, :n]
    onehot = data_gen[:, :, None] == np.arange(n)
    n1 = (onehot * covariates.heads[None, :, None]).sum(1)
    n0 = (onehot * covariates.tails[None, :, None]).sum(1)
    tot = n1 + n0
    logp = (masks.sum(1) - 1) * math.log(alpha) + np.where(masks, log_beta_array(n1, n0), 0.0).sum(1)
    probs = np.exp(logp - logsumexp(logp))
    probs /= probs.sum()
    eg = gen[:, n:]
    rows = np.arange(codes.size)[:, None]
    shat = (n1[rows, eg] + 1.0) / (tot[rows, eg] + 2.0)
    means = probs @ shat
    return SubsetEnumeration(masks, probs, means)


def mean_surface_grid(covariates: CovariateSet, size: int) -> np.ndarray:
    """Rectangular ``size``-per-axis grid over the covariates' bounding box."""
    lo = covariates.points.min(0)
    hi = covariates.points.max(0)
    axes = [np.linspace(a, b, size) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


__all__ = [
    "CovariateSet",
    "SubsetState",
    "SubsetTrace",
    "apply_flip",
    "apply_weight",
    "assign_cell",
    "enumerate_subsets_exact",
    "mean_surface_grid",
    "run_subset_chain",
    "subset_chain_step",
    "subset_log_posterior",
    "voronoi_posterior_mean",
]
