import math

import numpy as np
import pytest

from stepbayes import ChangePointState, HierarchyPrior, LabeledDataset, ResourceError, compute_counts, log_rho
from stepbayes.datasim import generate_dataset_1d
from stepbayes.estimator import total_variation
from stepbayes.oracle import (
    OccupancyEnumeration,
    exact_posterior_small,
    prior_importance_estimate,
    sample_exact_state,
)


def test_empty_dataset_is_prior():
    prior = HierarchyPrior.geometric(0.5)
    res = exact_posterior_small(LabeledDataset.empty(), prior, k_max=6)
    masses = np.array([prior.mass(k) for k in range(1, 7)])
    np.testing.assert_allclose(res.k_posterior, masses / masses.sum(), rtol=1e-12)
    np.testing.assert_allclose(res.curve.mean, 0.5)
    assert res.tail_mass == pytest.approx(0.5**6)


def test_single_head_lifts_curve():
    d = LabeledDataset.from_pairs([(0.5, 1)])
    prior = HierarchyPrior.geometric(0.5)
    res = exact_posterior_small(d, prior)
    assert np.all(res.curve.mean > 0.5)
    imp = prior_importance_estimate(d, prior, draws=200_000, seed=1, k_max=10)
    assert np.all(np.abs(imp.curve.mean - res.curve.mean) <= 4 * imp.curve_se + 1e-3)


def test_single_interval_value():
    # k_max=1: one interval, 2 heads and 1 tail
    d = LabeledDataset.from_pairs([(0.2, 1), (0.4, 1), (0.9, 0)])
    res = exact_posterior_small(d, HierarchyPrior.geometric(0.5), k_max=1)
    np.testing.assert_allclose(res.curve.mean, 3 / 5)
    assert res.k_posterior.tolist() == [1.0]


def test_two_pieces_by_hand():
    # one point at 0.5, k <= 2: a split left of the point (prob 1/2) or right (prob 1/2)
    d = LabeledDataset.from_pairs([(0.5, 1)])
    prior = HierarchyPrior.table([0.5, 0.5])
    enum = OccupancyEnumeration(d, prior, k_max=2)
    assert enum.integrated_rho(1) == pytest.approx(0.5)
    assert enum.integrated_rho(2) == pytest.approx(0.5)
    res = exact_posterior_small(d, prior, k_max=2, grid=np.array([0.0, 0.25, 0.75, 1.0]))
    # at u=0.25: k=1 -> 2/3; k=2 split v<0.25 -> 2/3, 0.25<=v<0.5 -> 1/2, v>0.5 -> 2/3
    at_quarter = 0.5 * 2 / 3 + 0.5 * (0.25 * 2 / 3 + 0.25 * 0.5 + 0.5 * 2 / 3)
    assert res.curve.mean[1] == pytest.approx(at_quarter, rel=1e-12)
    assert res.curve.mean[0] == pytest.approx(0.5 * 2 / 3 + 0.5 * (0.5 * 0.5 + 0.5 * 2 / 3), rel=1e-12)


def test_budget():
    prior = HierarchyPrior.geometric(0.5)
    with pytest.raises(ResourceError):
        exact_posterior_small(generate_dataset_1d("f0", 9, 0), prior)
    with pytest.raises(ResourceError):
        exact_posterior_small(generate_dataset_1d("f0", 4, 0), prior, k_max=11)


def test_duplicate_covariates():
    d = LabeledDataset.from_pairs([(0.3, 1), (0.3, 0), (0.7, 1)])
    prior = HierarchyPrior.geometric(0.5)
    res = exact_posterior_small(d, prior, k_max=8, grid=np.linspace(0, 1, 65))
    imp = prior_importance_estimate(d, prior, draws=200_000, seed=2, grid=np.linspace(0, 1, 65), k_max=8)
    assert np.all(np.abs(imp.curve.mean - res.curve.mean) <= 4 * imp.curve_se + 2e-3)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_occupancy_matches_monte_carlo(seed):
    rng = np.random.default_rng(seed)
    d = generate_dataset_1d("f0", int(rng.integers(2, 7)), seed)
    enum = OccupancyEnumeration(d, HierarchyPrior.geometric(0.5), k_max=5)
    for k in range(1, 6):
        vals = np.array(
            [math.exp(log_rho(compute_counts(d, sorted(rng.random(k - 1))))) for _ in range(20_000)]
        )
        se = vals.std() / math.sqrt(vals.size)
        assert abs(vals.mean() - enum.integrated_rho(k)) <= 3 * se + 1e-12


def test_truncation_honesty(toy):
    prior = HierarchyPrior.geometric(0.5)
    for k_max in (3, 5, 7):
        a = exact_posterior_small(toy, prior, k_max=k_max)
        b = exact_posterior_small(toy, prior, k_max=k_max + 1)
        assert np.max(np.abs(a.curve.mean - b.curve.mean)) <= a.posterior_tail_bound + 1e-12
        assert total_variation(a.k_posterior, b.k_posterior) <= a.posterior_tail_bound + 1e-12
        assert a.tail_mass == pytest.approx(0.5**k_max)


def test_importance_empty_dataset():
    res = prior_importance_estimate(LabeledDataset.empty(), HierarchyPrior.geometric(0.5), draws=5_000, seed=3)
    assert res.ess == pytest.approx(5_000)
    np.testing.assert_allclose(res.curve.mean, 0.5)


def test_importance_deterministic(toy, geom_half):
    a = prior_importance_estimate(toy, geom_half, draws=5_000, seed=4)
    b = prior_importance_estimate(toy, geom_half, draws=5_000, seed=4)
    np.testing.assert_array_equal(a.curve.mean, b.curve.mean)
    np.testing.assert_array_equal(a.k_posterior, b.k_posterior)


def test_importance_needs_draws(toy, geom_half):
    with pytest.raises(ValueError):
        prior_importance_estimate(toy, geom_half, draws=999)


def test_oracles_agree_on_k(toy, geom_half):
    exact = exact_posterior_small(toy, geom_half, k_max=10)
    imp = prior_importance_estimate(toy, geom_half, draws=300_000, seed=5, k_max=10)
    diff = np.abs(imp.k_posterior - exact.k_posterior)
    assert np.all(diff <= 3 * imp.k_se + exact.posterior_tail_bound + 1e-4)


class TestExactSampling:
    def test_empty_dataset_draws_prior(self, rng):
        prior = HierarchyPrior.geometric(0.5)
        states = sample_exact_state(LabeledDataset.empty(), prior, 10, rng, size=100_000)
        ks = np.bincount([s.k for s in states], minlength=11)[1:] / 100_000
        expected = np.array([prior.mass(k) for k in range(1, 11)])
        assert total_variation(ks, expected / expected.sum()) <= 0.01

    def test_matches_k_posterior(self, toy, geom_half, rng):
        enum = OccupancyEnumeration(toy, geom_half, 10)
        states = sample_exact_state(toy, geom_half, 10, rng, size=100_000, enumeration=enum)
        ks = np.bincount([s.k for s in states], minlength=11)[1:] / 100_000
        assert total_variation(ks, enum.k_posterior()) <= 0.01

    def test_states_valid(self, toy, geom_half, rng):
        for s in sample_exact_state(toy, geom_half, 10, rng, size=2_000):
            assert isinstance(s, ChangePointState)
            assert s.ordered_splits == sorted(s.splits)
            assert all(0.0 <= v <= 1.0 for v in s.splits)
            assert s.counts == compute_counts(toy, s.ordered_splits)

    def test_split_positions_match_curve(self, toy, geom_half, rng):
        # the Rao-Blackwell curve of exact draws reproduces the exact curve
        from stepbayes import ChainTrace, posterior_mean_curve

        enum = OccupancyEnumeration(toy, geom_half, 10)
        grid = np.linspace(0, 1, 41)
        states = sample_exact_state(toy, geom_half, 10, rng, size=50_000, enumeration=enum)
        trace = ChainTrace(states=[s.snapshot() for s in states])
        mc = posterior_mean_curve(trace, toy, grid)
        assert np.max(np.abs(mc.mean - enum.mean_curve(grid).mean)) < 0.01
