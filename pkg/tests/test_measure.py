"""Empirical-measure arithmetic against brute-force and hand oracles."""

import itertools

import numpy as np
import pytest

from mvfbm.measure import (
    EmpiricalMeasure,
    TestFunction,
    moment,
    pushforward_shift,
    smooth_clamp,
    wasserstein,
    wasserstein_is_exact,
)


def em(arr):
    return EmpiricalMeasure(np.asarray(arr, dtype=float))


class TestWasserstein:
    def test_identity(self):
        mu = em([[0.0], [1.0], [2.0]])
        assert wasserstein(mu, mu, 2.0) == 0.0

    def test_single_atom_transport(self):
        mu = em(np.zeros((5, 2)))
        nu = em(np.tile([3.0, 4.0], (5, 1)))
        for theta in (1.0, 2.0, 3.0):
            assert np.isclose(wasserstein(mu, nu, theta), 5.0)

    def test_exhaustive_permutation_oracle_1d(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=4)
        y = rng.normal(size=4)
        mu, nu = em(x), em(y)
        best = min(
            np.mean(np.abs(x - y[list(p)]) ** 2)
            for p in itertools.permutations(range(4))
        )
        assert np.isclose(wasserstein(mu, nu, 2.0), best ** 0.5)

    def test_sorted_equals_assignment(self):
        rng = np.random.default_rng(11)
        for n in (8, 32, 64):
            x = rng.normal(size=(n, 1))
            y = rng.normal(size=(n, 1))
            d1 = wasserstein(em(x), em(y), 2.0)
            cost = np.abs(x - y.T) ** 2
            from scipy.optimize import linear_sum_assignment

            r, c = linear_sum_assignment(cost)
            assert np.isclose(d1, np.mean(cost[r, c]) ** 0.5)

    def test_metric_properties(self):
        rng = np.random.default_rng(5)
        mus = [em(rng.normal(size=(16, 2))) for _ in range(3)]
        a, b, c = (wasserstein(mus[i], mus[j], 2.0) for (i, j) in [(0, 1), (1, 2), (0, 2)])
        assert a >= 0 and wasserstein(mus[0], mus[0], 2.0) < 1e-12
        assert np.isclose(a, wasserstein(mus[1], mus[0], 2.0))
        assert c <= a + b + 1e-12

    def test_theta_monotonicity(self):
        rng = np.random.default_rng(6)
        mu = em(rng.normal(size=(32, 2)))
        nu = em(rng.normal(size=(32, 2)))
        vals = [wasserstein(mu, nu, th) for th in (1.0, 1.5, 2.0, 3.0)]
        assert np.all(np.diff(vals) >= -1e-12)

    def test_rejects_theta_below_one(self):
        mu = em([[0.0]])
        with pytest.raises(ValueError):
            wasserstein(mu, mu, 0.5)

    def test_unequal_counts_padded(self):
        mu = em(np.zeros((4, 1)))
        nu = em(np.ones((7, 1)))
        assert np.isclose(wasserstein(mu, nu, 2.0), 1.0)

    def test_sliced_fallback_flagged(self):
        big = em(np.random.default_rng(0).normal(size=(600, 2)))
        assert not wasserstein_is_exact(big, big)
        assert wasserstein(big, big, 2.0) < 1e-12


class TestPushforward:
    def test_eps_zero(self):
        mu = em([[1.0], [2.0]])
        out = pushforward_shift(mu, lambda x: x, 0.0)
        assert np.array_equal(out.atoms, mu.atoms)

    def test_identity_map_doubles(self):
        mu = em([[1.0], [2.0]])
        out = pushforward_shift(mu, lambda x: x, 1.0)
        assert np.array_equal(out.atoms, 2 * mu.atoms)

    def test_transport_bound(self):
        # W_2(mu, (Id + eps phi)# mu) <= eps ||phi||_{L2(mu)}
        rng = np.random.default_rng(8)
        mu = em(rng.normal(size=(64, 2)))
        phi = lambda x: np.stack([np.sin(x[:, 0]), np.cos(x[:, 1])], axis=1)
        eps = 0.3
        out = pushforward_shift(mu, phi, eps)
        norm = np.sqrt(np.mean(np.sum(phi(mu.atoms) ** 2, axis=1)))
        assert wasserstein(mu, out, 2.0) <= eps * norm + 1e-12

    def test_nonfinite_atom_reported(self):
        mu = em([[1.0], [2.0]])
        with pytest.raises(ValueError, match="index 1"):
            pushforward_shift(mu, lambda x: np.where(x > 1.5, np.inf, 0.0), 1.0)


class TestMoment:
    def test_point_mass_at_zero(self):
        assert moment(em(np.zeros((3, 2))), 2.0) == 0.0

    def test_single_atom(self):
        assert np.isclose(moment(em([[3.0, 4.0]]), 2.0), 5.0)

    def test_hand_value(self):
        assert np.isclose(moment(em([[0.0], [2.0]]), 2.0), np.sqrt(2.0))

    def test_rejects_small_theta(self):
        with pytest.raises(ValueError):
            moment(em([[1.0]]), 0.5)


class TestTestFunction:
    def test_spot_check_passes(self):
        f = TestFunction(lambda x: np.sin(x[:, 0]), sup_bound=1.0, lipschitz=1.0)
        f.spot_check(np.random.default_rng(0).normal(size=(50, 1)))

    def test_spot_check_catches_lies(self):
        f = TestFunction(lambda x: 3.0 * x[:, 0], sup_bound=1.0)
        with pytest.raises(ValueError):
            f.spot_check(np.array([[5.0], [0.0]]))

    def test_smooth_clamp(self):
        clamp = smooth_clamp(10.0)
        x = np.array([-50.0, -3.0, 0.0, 4.0, 100.0])
        out = clamp(x)
        assert np.all(np.abs(out) <= 10.0)
        assert np.allclose(out[1:4], x[1:4])  # identity inside radius/2
