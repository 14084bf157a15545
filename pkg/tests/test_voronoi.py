import math

import numpy as np
import pytest
from scipy import stats

from stepbayes import DomainError, ResourceError, UsageError
from stepbayes.datasim import generate_dataset_2d
from stepbayes.estimator import total_variation
from stepbayes.marginal import log_beta_integral
from stepbayes.sampler import RandomStream
from stepbayes.voronoi import (
    CovariateSet,
    SubsetState,
    SubsetTrace,
    apply_flip,
    apply_weight,
    assign_cell,
    enumerate_subsets_exact,
    mean_surface_grid,
    run_subset_chain,
    subset_chain_step,
    subset_log_posterior,
    voronoi_posterior_mean,
)


def brute_assign(x, cov, included, weights=None):
    best, best_j = math.inf, None
    for j in range(cov.n):
        if not included[j]:
            continue
        d = float(np.linalg.norm(np.asarray(x) - cov.points[j]))
        if weights is not None:
            d /= weights[j]
        if d < best:
            best, best_j = d, j
    return best_j


def random_cov(rng, n, d=2, grid=False):
    pts = rng.integers(0, 4, (n, d)).astype(float) if grid else rng.random((n, d))
    return CovariateSet(pts, rng.integers(0, 2, n))


class TestAssignCell:
    def test_single_generator(self, rng):
        cov = random_cov(rng, 6)
        inc = np.zeros(6, bool)
        inc[3] = True
        s = SubsetState.build(cov, inc)
        assert np.all(assign_cell(rng.random((50, 2)), s, cov) == 3)

    def test_tie_goes_to_lower_index(self):
        cov = CovariateSet([[0.0, 0.0], [2.0, 0.0], [1.0, 5.0]], [1, 0, 1])
        s = SubsetState.build(cov, [True, True, False])
        assert assign_cell([1.0, 0.0], s, cov) == 0
        cov_rev = CovariateSet([[2.0, 0.0], [0.0, 0.0]], [1, 0])
        s = SubsetState.build(cov_rev, [True, True])
        assert assign_cell([1.0, 0.0], s, cov_rev) == 0

    def test_matches_brute_force(self, rng):
        for _ in range(50):
            cov = random_cov(rng, 8, grid=True)
            inc = rng.random(8) < 0.5
            inc[rng.integers(8)] = True
            w = rng.gamma(5, 0.2, 8) if rng.random() < 0.5 else None
            s = SubsetState.build(cov, inc, w)
            xs = rng.integers(0, 4, (20, 2)).astype(float)
            got = assign_cell(xs, s, cov)
            assert [brute_assign(x, cov, inc, w) for x in xs] == got.tolist()
            assert s.assignment.tolist() == [brute_assign(x, cov, inc, w) for x in cov.points]

    def test_weight_scale_invariance(self, rng):
        cov = random_cov(rng, 10)
        inc = rng.random(10) < 0.6
        inc[0] = True
        w = rng.gamma(5, 0.2, 10)
        a = SubsetState.build(cov, inc, w)
        b = SubsetState.build(cov, inc, 2.0 * w)
        xs = rng.random((100, 2))
        np.testing.assert_array_equal(assign_cell(xs, a, cov), assign_cell(xs, b, cov))
        np.testing.assert_array_equal(a.n1, b.n1)
        np.testing.assert_array_equal(a.n0, b.n0)
        assert subset_log_posterior(a, cov, 0.5) == subset_log_posterior(b, cov, 0.5)

    def test_heavier_cell_grows(self):
        cov = CovariateSet([[0.0], [1.0]], [1, 0])
        s = SubsetState.build(cov, [True, True], [1.0, 3.0])
        assert assign_cell(np.array([[0.4]]), s, cov).tolist() == [1]


class TestSubsetLogPosterior:
    def test_one_cell(self):
        cov = CovariateSet([[0.0], [1.0], [2.0]], [1, 1, 0])
        s = SubsetState.build(cov, [False, True, False])
        assert subset_log_posterior(s, cov, 0.5) == pytest.approx(math.log(1 / 12))

    def test_unlabeled(self):
        cov = CovariateSet([[0.0], [1.0], [2.0]])
        s = SubsetState.build(cov, [True, False, False])
        assert subset_log_posterior(s, cov, 0.5) == 0.0

    def test_size_factor(self, rng):
        cov = random_cov(rng, 7)
        inc = np.array([1, 0, 1, 0, 0, 1, 0], bool)
        s = SubsetState.build(cov, inc)
        expected = 2 * math.log(0.3) + sum(log_beta_integral(int(s.n1[j]), int(s.n0[j])) for j in (0, 2, 5))
        assert subset_log_posterior(s, cov, 0.3) == pytest.approx(expected, rel=1e-12)

    def test_rejects_empty_and_bad_alpha(self, rng):
        cov = random_cov(rng, 3)
        with pytest.raises(DomainError):
            SubsetState.build(cov, [False] * 3)
        with pytest.raises(DomainError):
            subset_log_posterior(SubsetState.build(cov, [True] * 3), cov, 0.0)


class TestIncremental:
    def test_flips_and_weights_match_rebuild(self, rng):
        for trial in range(40):
            cov = random_cov(rng, int(rng.integers(2, 12)), grid=trial % 2 == 0)
            weighted = trial % 3 == 0
            w = rng.gamma(5, 0.2, cov.n) if weighted else None
            s = SubsetState.build(cov, np.ones(cov.n, bool), w)
            for _ in range(100):
                j = int(rng.integers(cov.n))
                if weighted and rng.random() < 0.5:
                    s = apply_weight(s, cov, j, float(rng.gamma(5, 0.2)))
                elif s.included[j] and s.k == 1:
                    continue
                else:
                    s = apply_flip(s, cov, j, float(rng.gamma(5, 0.2)) if weighted else None)
                ref = SubsetState.build(cov, s.included, s.weights)
                np.testing.assert_array_equal(s.assignment, ref.assignment)
                np.testing.assert_array_equal(s.n1, ref.n1)
                np.testing.assert_array_equal(s.n0, ref.n0)

    def test_last_generator_cannot_be_removed(self, rng):
        cov = random_cov(rng, 3)
        s = SubsetState.build(cov, [False, True, False])
        with pytest.raises(UsageError):
            apply_flip(s, cov, 1)


class TestChainStep:
    def test_emptying_flip_holds(self):
        cov = CovariateSet([[0.0]], [1])
        s = SubsetState.build(cov, [True])
        new, ok, kind = subset_chain_step(s, cov, 0.5, rng=RandomStream(np.random.default_rng(0)))
        assert new is s and ok and kind == "hold"

    def test_weighted_needs_gamma(self, rng):
        cov = random_cov(rng, 4)
        s = SubsetState.build(cov, [True] * 4, np.ones(4))
        with pytest.raises(UsageError):
            subset_chain_step(s, cov, 0.5, None, rng)

    def test_uniform_over_subsets_without_labels(self):
        n = 8
        cov = CovariateSet(np.random.default_rng(3).random((n, 2)))
        trace = run_subset_chain(cov, 1.0, iterations=1_000_000, seed=3)
        binom = stats.binom.pmf(np.arange(1, n + 1), n, 0.5)
        assert total_variation(trace.size_marginal(), binom / binom.sum()) <= 0.02

    def test_weighted_chain_keeps_size_marginal_without_labels(self):
        # with no labels the weights do not touch the likelihood, so the size
        # marginal is still the alpha prior
        n = 6
        cov = CovariateSet(np.random.default_rng(4).random((n, 2)))
        trace = run_subset_chain(cov, 0.5, iterations=200_000, seed=4, gamma=5.0, weighted=True)
        sizes = np.arange(1, n + 1)
        prior = stats.binom.pmf(sizes, n, 0.5) * 2.0**n * 0.5 ** (sizes - 1)
        assert total_variation(trace.size_marginal(), prior / prior.sum()) <= 0.02

    def test_deterministic(self, rng):
        cov = random_cov(rng, 6)
        a = run_subset_chain(cov, 0.5, iterations=5_000, seed=1)
        b = run_subset_chain(cov, 0.5, iterations=5_000, seed=1)
        assert a.keys == b.keys and a.repeats == b.repeats

    def test_trace_bookkeeping(self, rng):
        cov = random_cov(rng, 6)
        t = run_subset_chain(cov, 0.5, iterations=3_000, burn_in=1_000, seed=2, gamma=5.0, weighted=True)
        assert len(t) == 2_000
        assert sum(t.proposals.values()) == 3_000
        assert all(t.accepted[k] <= t.proposals[k] for k in t.proposals)
        assert sum(r for _, r in t.distinct(cov)) == 2_000


class TestPosteriorMean:
    def test_single_state(self):
        cov = CovariateSet([[0.0], [1.0], [2.0]], [1, 1, 0])
        s = SubsetState.build(cov, [True, False, False])
        t = SubsetTrace(n=3)
        t.append(s)
        np.testing.assert_allclose(voronoi_posterior_mean(t, cov, [[0.5], [1.7]]), 3 / 5)

    def test_unlabeled(self, rng):
        cov = CovariateSet(rng.random((5, 2)))
        t = run_subset_chain(cov, 0.5, iterations=500, seed=1)
        np.testing.assert_allclose(voronoi_posterior_mean(t, cov, rng.random((30, 2))), 0.5)

    def test_empty_trace(self, rng):
        cov = random_cov(rng, 3)
        with pytest.raises(UsageError):
            voronoi_posterior_mean(SubsetTrace(n=3), cov, cov.points)


class TestEnumeration:
    def test_single_point(self):
        e = enumerate_subsets_exact(CovariateSet([[0.3, 0.3]], [1]), 0.5)
        assert e.probabilities.tolist() == [1.0]
        assert e.means.tolist() == [pytest.approx(2 / 3)]

    def test_normalised(self, rng):
        e = enumerate_subsets_exact(random_cov(rng, 10), 0.5)
        assert e.probabilities.sum() == pytest.approx(1.0, abs=1e-12)
        assert e.masks.shape == (1023, 10)

    def test_matches_brute_force(self, rng):
        cov = random_cov(rng, 5, grid=True)
        ev = rng.integers(0, 4, (7, 2)).astype(float)
        e = enumerate_subsets_exact(cov, 0.4, ev)
        logp, means = [], []
        for mask in e.masks:
            s = SubsetState.build(cov, mask)
            logp.append(subset_log_posterior(s, cov, 0.4))
            g = assign_cell(ev, s, cov)
            means.append((s.n1[g] + 1.0) / (s.n1[g] + s.n0[g] + 2.0))
        p = np.exp(np.array(logp) - max(logp))
        p /= p.sum()
        np.testing.assert_allclose(e.probabilities, p, rtol=1e-10)
        np.testing.assert_allclose(e.means, p @ np.array(means), rtol=1e-10)

    def test_budget(self, rng):
        with pytest.raises(ResourceError):
            enumerate_subsets_exact(random_cov(rng, 16), 0.5)


def test_covariate_csv_round_trip(tmp_path):
    cov = generate_dataset_2d(20, 3)
    cov.to_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "x1,x2,y"
    back = CovariateSet.from_csv(tmp_path / "c.csv")
    np.testing.assert_array_equal(back.points, cov.points)
    np.testing.assert_array_equal(back.labels, cov.labels)


def test_covariate_csv_errors(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x1,x2,y\n0.1,0.2,1\n0.3,0.4,7\n")
    with pytest.raises(DomainError, match="line 3"):
        CovariateSet.from_csv(path)


def test_mean_surface_grid():
    cov = CovariateSet([[0.0, 0.0], [2.0, 1.0]], [1, 0])
    g = mean_surface_grid(cov, 3)
    assert g.shape == (9, 2)
    assert g.min(0).tolist() == [0.0, 0.0] and g.max(0).tolist() == [2.0, 1.0]
