import math

import numpy as np
import pytest

from stepbayes import DomainError
from stepbayes.datasim import (
    f0,
    generate_dataset_1d,
    generate_dataset_2d,
    hard,
    parse_kind,
    true_function_eval,
)


class TestTrueFunctions:
    @pytest.mark.parametrize("x, expected", [(0.10, 0.6), (0.30, 0.4), (1 / 6, 0.4), (0.5, 0.4), (0.0, 0.6)])
    def test_f0_plateaus(self, x, expected):
        assert true_function_eval("f0", x) == pytest.approx(expected)

    def test_f0_right_of_half(self):
        assert f0(0.5 + 1e-12) == pytest.approx(1 / (1 + math.exp(-2)), abs=1e-9)
        # the Gaussian ratio collapses to a logistic in x when sigma = 1/4
        for x in np.linspace(0.51, 1.0, 50):
            assert f0(x) == pytest.approx(1 / (1 + math.exp(8 * (x - 0.75))), rel=1e-12)

    def test_f0_range(self):
        v = f0(np.linspace(0, 1, 10_000))
        assert np.all((v >= 0) & (v <= 1))
        tail = f0(np.linspace(0.5001, 1, 500))
        assert np.all(np.diff(tail) < 0)

    def test_null(self):
        np.testing.assert_array_equal(true_function_eval("null", np.linspace(0, 1, 11)), 0.5)

    def test_hard_zero_is_f0(self):
        x = np.linspace(0, 1, 1001)
        np.testing.assert_array_equal(hard(x, 0), f0(x))

    def test_hard_blocks(self):
        # block j = 1 is [1/4, 1/2): a copy of f0 squeezed by 4
        assert hard(0.25 + 0.1 / 4, 2) == pytest.approx(f0(0.1))
        assert hard(0.25 + 0.3 / 4, 2) == pytest.approx(f0(0.3))
        assert hard(0.5 + 0.3 / 2, 2) == pytest.approx(f0(0.3))
        assert hard(0.1, 2) == 0.5
        assert true_function_eval("hard:2", 0.1) == 0.5

    @pytest.mark.parametrize("x", [-0.01, 1.01])
    def test_domain(self, x):
        with pytest.raises(DomainError):
            f0(x)
        with pytest.raises(DomainError):
            hard(x, 2)

    def test_parse_kind(self):
        assert parse_kind("f0") == ("f0", 0)
        assert parse_kind("hard:4") == ("hard", 4)
        with pytest.raises(DomainError):
            parse_kind("sine")


class TestDatasets:
    def test_null_balance(self):
        d = generate_dataset_1d("null", 100_000, 1)
        assert abs(d.heads_total / d.n - 0.5) < 0.005

    def test_f0_first_stratum(self):
        d = generate_dataset_1d("f0", 100_000, 2)
        left = d.ys[d.xs < 1 / 6]
        assert abs(left.mean() - 0.6) < 0.01

    def test_deterministic_and_sorted(self):
        a = generate_dataset_1d("f0", 500, 3)
        assert a == generate_dataset_1d("f0", 500, 3)
        assert a != generate_dataset_1d("f0", 500, 4)
        assert np.all(np.diff(a.xs) >= 0)

    def test_empty(self):
        assert generate_dataset_1d("f0", 0, 1).n == 0

    def test_2d_balance_and_mixture(self):
        cov = generate_dataset_2d(100_000, 5)
        assert abs(cov.labels.mean() - 0.5) < 0.01
        heads = cov.points[cov.labels == 1]
        frac_right = np.mean(heads[:, 0] >= 1.0)
        assert 0.48 <= frac_right <= 0.56

    def test_2d_geometry(self):
        cov = generate_dataset_2d(20_000, 6)
        tails = cov.points[cov.labels == 0]
        in_left_square = (tails[:, 0] >= 0) & (tails[:, 0] <= 1) & (tails[:, 1] >= 0) & (tails[:, 1] <= 1)
        assert abs(in_left_square.mean() - 0.5) < 0.02
        near_right_centre = np.linalg.norm(tails - [1.5, 0.5], axis=1) < 0.4
        assert near_right_centre.mean() > 0.49

    def test_2d_deterministic(self):
        a = generate_dataset_2d(50, 9)
        b = generate_dataset_2d(50, 9)
        np.testing.assert_array_equal(a.points, b.points)
        np.testing.assert_array_equal(a.labels, b.labels)
