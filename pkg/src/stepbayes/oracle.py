"""Exact posterior for tiny datasets, plus an importance-sampling cross-check.

The marginal likelihood of a split vector depends only on which gaps
between consecutive distinct covariates receive splits.  Splits are iid
uniform under the prior, so the number of splits in each gap (the
occupancy pattern) is multinomial with the gap widths as cell
probabilities.  Summing over patterns integrates the posterior exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.special import gammaln, logsumexp

from .core import ChangePointState, HierarchyPrior, LabeledDataset, ResourceError
from .estimator import PosteriorMeanCurve, default_grid
from .marginal import log_beta_integral

MAX_ORACLE_N = 8
MAX_ORACLE_K = 10


def _compositions(total: int, parts: int):
    """All tuples of ``parts`` nonnegative ints summing to ``total``."""
    for bars in combinations(range(total + parts - 1), parts - 1):
        prev = -1
        out = []
        for b in bars:
            out.append(b - prev - 1)
            prev = b
        out.append(total + parts - 2 - prev)
        yield tuple(out)


class OccupancyEnumeration:
    """Exact posterior over ``(K, occupancy pattern)`` for ``K <= k_max``.

    ``gaps`` are ``[0, u_1), [u_1, u_2), ..., [u_m, 1]`` for the distinct
    sorted covariates ``u_1 < ... < u_m``.  A split inside gap ``g``
    separates the data points ``<= u_g`` from those ``>= u_{g+1}``.
    """

    def __init__(self, dataset: LabeledDataset, prior: HierarchyPrior, k_max: int = MAX_ORACLE_K):
        if dataset.n > MAX_ORACLE_N:
            raise ResourceError(f"exact oracle refuses n={dataset.n} > {MAX_ORACLE_N}")
        if k_max > MAX_ORACLE_K or k_max < 1:
            raise ResourceError(f"k_max={k_max} outside 1..{MAX_ORACLE_K}")
        self.dataset = dataset
        self.prior = prior
        self.k_max = k_max

        u, first = np.unique(dataset.xs, return_index=True)
        heads = np.add.reduceat(dataset.ys, first) if dataset.n else np.zeros(0, dtype=np.int64)
        totals = np.diff(np.append(first, dataset.n)) if dataset.n else np.zeros(0, dtype=np.int64)
        self.values = u
        self.heads = heads.astype(np.int64)
        self.tails = (totals - heads).astype(np.int64)
        self.edges = np.concatenate([[0.0], u, [1.0]])
        self.widths = np.diff(self.edges)
        n_gaps = self.widths.size
        with np.errstate(divide="ignore"):
            log_w = np.log(self.widths)

        patterns, logw, ks, log_rhos, log_pms = [], [], [], [], []
        for k in range(1, k_max + 1):
            lk = prior.log_mass(k)
            if lk == -math.inf:
                continue
            r = k - 1
            for m in _compositions(r, n_gaps):
                m_arr = np.asarray(m)
                occ = m_arr > 0
                if np.any(occ & (self.widths == 0)):
                    continue
                log_pm = float(gammaln(r + 1) - gammaln(m_arr + 1).sum() + (m_arr[occ] * log_w[occ]).sum())
                lr = self._log_rho(occ)
                patterns.append(m)
                ks.append(k)
                log_rhos.append(lr)
                log_pms.append(log_pm)
                logw.append(lk + log_pm + lr)
        self.patterns = np.asarray(patterns, dtype=np.int64).reshape(len(patterns), n_gaps)
        self.ks = np.asarray(ks, dtype=np.int64)
        self.log_rhos = np.asarray(log_rhos)
        self.log_pms = np.asarray(log_pms)
        logw = np.asarray(logw)
        self.log_evidence = float(logsumexp(logw))
        self.weights = np.exp(logw - self.log_evidence)
        self._cum = np.cumsum(self.weights)

    def _log_rho(self, occ: np.ndarray) -> float:
        # value i (0-based) sits between gap i and gap i+1
        total = 0.0
        cut = [g for g in range(1, occ.size - 1) if occ[g]]
        bounds = [0] + cut + [self.values.size]
        for a, b in zip(bounds[:-1], bounds[1:]):
            total += log_beta_integral(int(self.heads[a:b].sum()), int(self.tails[a:b].sum()))
        return total

    def integrated_rho(self, k: int) -> float:
        """``int rho_k(v) dv`` over ``[0, 1]^(k-1)``."""
        sel = self.ks == k
        return float(np.exp(self.log_pms[sel] + self.log_rhos[sel]).sum())

    def k_posterior(self) -> np.ndarray:
        """Posterior masses of ``K = 1 .. k_max`` (normalised over that range)."""
        return np.bincount(self.ks - 1, weights=self.weights, minlength=self.k_max)

    @property
    def prior_tail_mass(self) -> float:
        return self.prior.tail_mass(self.k_max)

    def max_log_rho(self) -> float:
        """Largest marginal likelihood over every contiguous grouping of the data."""
        m = self.values.size
        best = -math.inf
        for mask in range(1 << max(m - 1, 0)):
            occ = np.zeros(m + 1, dtype=bool)
            for i in range(m - 1):
                if mask >> i & 1:
                    occ[i + 1] = True
            best = max(best, self._log_rho(occ))
        return best if m else 0.0

    @property
    def posterior_tail_bound(self) -> float:
        """Upper bound on the posterior mass the truncation at ``k_max`` drops."""
        log_z = self.log_evidence
        return min(1.0, self.prior_tail_mass * math.exp(self.max_log_rho() - log_z))

    def mean_curve(self, grid: np.ndarray | None = None) -> PosteriorMeanCurve:
        """Exact posterior mean of the regression function on ``grid``.

        Given a pattern, splits in the gap holding ``u`` are iid uniform in
        that gap, so ``u`` joins the left data group when all of them lie
        above it, the right group when all lie at or below it, and an empty
        interval (mean 1/2) otherwise.
        """
        grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
        n_gaps = self.widths.size
        gap = np.clip(np.searchsorted(self.values, grid, side="right"), 0, n_gaps - 1)
        lo = self.edges[gap]
        width = self.widths[gap]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(width > 0, (grid - lo) / width, 0.0)
        t = np.clip(t, 0.0, 1.0)
        mean = np.zeros_like(grid)
        for m, w in zip(self.patterns, self.weights):
            left_s, right_s = self._gap_means(m > 0)
            mg = m[gap]
            p_left = (1.0 - t) ** mg
            p_right = np.where(mg > 0, t**mg, 0.0)
            p_mid = 1.0 - p_left - p_right
            mean += w * (p_left * left_s[gap] + p_right * right_s[gap] + p_mid * 0.5)
        return PosteriorMeanCurve(grid, mean)

    def _gap_means(self, occ: np.ndarray):
        """Conditional means of the data groups just left and right of each gap."""
        n_gaps = occ.size
        left_s = np.full(n_gaps, 0.5)
        right_s = np.full(n_gaps, 0.5)
        cut = [g for g in range(1, n_gaps - 1) if occ[g]]
        bounds = [0] + cut + [self.values.size]
        for a, b in zip(bounds[:-1], bounds[1:]):
            h = int(self.heads[a:b].sum())
            t = int(self.tails[a:b].sum())
            s = (h + 1.0) / (h + t + 2.0)
            # gaps a+1 .. b-1 are interior to the group; gap a has it on the right,
            # gap b on the left
            left_s[a + 1 : b + 1] = s
            right_s[a:b] = s
        if not occ[0]:
            # no split before the first value: [0, u_1) joins the first group
            left_s[0] = right_s[0]
        return left_s, right_s

    def sample_state(self, rng: np.random.Generator) -> ChangePointState:
        """Exact posterior draw (restricted to ``K <= k_max``)."""
        i = int(np.searchsorted(self._cum, rng.random() * self._cum[-1], side="right"))
        i = min(i, self.weights.size - 1)
        m = self.patterns[i]
        splits = []
        for g in np.nonzero(m)[0]:
            splits.extend((self.edges[g] + self.widths[g] * rng.random(m[g])).tolist())
        rng.shuffle(splits)
        return ChangePointState.from_splits(self.dataset, splits)


@dataclass
class ExactResult:
    k_posterior: np.ndarray
    curve: PosteriorMeanCurve
    tail_mass: float
    posterior_tail_bound: float


def exact_posterior_small(
    dataset: LabeledDataset,
    prior: HierarchyPrior,
    k_max: int = MAX_ORACLE_K,
    grid: np.ndarray | None = None,
) -> ExactResult:
    """K posterior, posterior-mean curve and truncation mass by enumeration.

    ``tail_mass`` is the prior mass beyond ``k_max``; ``posterior_tail_bound``
    bounds the posterior mass lost to the truncation.
    """
    enum = OccupancyEnumeration(dataset, prior, k_max)
    return ExactResult(enum.k_posterior(), enum.mean_curve(grid), enum.prior_tail_mass, enum.posterior_tail_bound)


def sample_exact_state(
    dataset: LabeledDataset,
    prior: HierarchyPrior,
    k_max: int,
    rng: np.random.Generator,
    size: int | None = None,
    enumeration: OccupancyEnumeration | None = None,
):
    """One exact posterior state, or a list of ``size`` of them."""
    enum = enumeration or OccupancyEnumeration(dataset, prior, k_max)
    if size is None:
        return enum.sample_state(rng)
    return [enum.sample_state(rng) for _ in range(size)]


@dataclass
class ImportanceResult:
    k_posterior: np.ndarray
    k_se: np.ndarray
    curve: PosteriorMeanCurve
    curve_se: np.ndarray
    ess: float


def _log_rho_rows(idx: np.ndarray, heads: np.ndarray, tails: np.ndarray) -> np.ndarray:
    """Log marginal likelihood for each row of interval indices of sorted points."""
    rows, n = idx.shape
    out = np.zeros(rows)
    if n == 0:
        return out
    h = heads[0] * np.ones(rows)
    t = tails[0] * np.ones(rows)
    for i in range(1, n):
        new = idx[:, i] != idx[:, i - 1]
        if new.any():
            out[new] += gammaln(h[new] + 1) + gammaln(t[new] + 1) - gammaln(h[new] + t[new] + 2)
            h[new] = 0
            t[new] = 0
        h += heads[i]
        t += tails[i]
    out += gammaln(h + 1) + gammaln(t + 1) - gammaln(h + t + 2)
    return out


def prior_importance_estimate(
    dataset: LabeledDataset,
    prior: HierarchyPrior,
    draws: int = 1_000_000,
    grid: np.ndarray | None = None,
    seed: int = 0,
    k_max: int | None = None,
    chunk: int = 20_000,
) -> ImportanceResult:
    """Self-normalised importance sampling with the prior as proposal.

    Each prior draw ``(k, v)`` gets weight ``rho(v)``.  Standard errors use
    the delta-method variance of the ratio estimator.
    """
    if draws < 1000:
        raise ValueError("need at least 1000 draws")
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    rng = np.random.default_rng(seed)
    xs = dataset.xs
    heads = dataset.ys.astype(float)
    tails = 1.0 - heads

    n_k = 64
    sw = sw2 = 0.0
    k_w = np.zeros(n_k)
    k_w2 = np.zeros(n_k)
    c_w = np.zeros_like(grid)
    c_w2 = np.zeros_like(grid)
    c_w2f = np.zeros_like(grid)
    c_w2f2 = np.zeros_like(grid)
    ref = None
    done = 0
    while done < draws:
        size = min(chunk, draws - done)
        done += size
        K = prior.sample(rng, size=size)
        for k in np.unique(K):
            rows = int((K == k).sum())
            splits = np.sort(rng.random((rows, k - 1)), axis=1)
            data_idx = np.zeros((rows, xs.size), dtype=np.int64)
            grid_idx = np.zeros((rows, grid.size), dtype=np.int64)
            for c in range(k - 1):
                col = splits[:, c : c + 1]
                data_idx += col <= xs
                grid_idx += col <= grid
            lr = _log_rho_rows(data_idx, heads, tails)
            if ref is None:
                ref = float(lr.max())
            w = np.exp(lr - ref)
            # per-interval conditional means, gathered at grid points
            h_int = np.zeros((rows, k))
            n_int = np.zeros((rows, k))
            r_ix = np.repeat(np.arange(rows), xs.size)
            np.add.at(h_int, (r_ix, data_idx.ravel()), np.tile(heads, rows))
            np.add.at(n_int, (r_ix, data_idx.ravel()), 1.0)
            shat = (h_int + 1.0) / (n_int + 2.0)
            f = np.take_along_axis(shat, grid_idx, axis=1)
            sw += w.sum()
            sw2 += (w * w).sum()
            kk = min(int(k), n_k) - 1
            k_w[kk] += w.sum()
            k_w2[kk] += (w * w).sum()
            w2 = w * w
            c_w += w @ f
            c_w2 += w2.sum()
            c_w2f += w2 @ f
            c_w2f2 += w2 @ (f * f)
    curve = c_w / sw
    var = (c_w2f2 - 2 * curve * c_w2f + curve**2 * c_w2) / sw**2
    kp = k_w / sw
    # indicator f = 1{K = k}: sum w^2 (f - mu)^2 = k_w2 (1 - 2 mu) + mu^2 sw2
    k_var = (k_w2 * (1 - 2 * kp) + kp**2 * sw2) / sw**2
    cut = k_max or int(np.max(np.nonzero(kp)[0]) + 1)
    return ImportanceResult(
        kp[:cut],
        np.sqrt(np.maximum(k_var[:cut], 0.0)),
        PosteriorMeanCurve(grid, curve),
        np.sqrt(np.maximum(var, 0.0)),
        float(sw**2 / sw2),
    )
