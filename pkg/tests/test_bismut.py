"""Measure-derivative estimators against their independent oracles."""

import numpy as np
import pytest

from mvfbm import bismut as bm
from mvfbm.grid import TimeGrid
from mvfbm.measure import TestFunction
from mvfbm.models import make_model, random_bounded_family
from mvfbm.sensitivity import Direction, constant_direction

H = 0.75
GRID = TimeGrid(1.0, 128)
PHI1 = constant_direction([1.0])


class TestEstimateBismut:
    def test_constant_observable_is_noise(self):
        # E delta = 0, so f = const estimates 0
        model = make_model("linear-meanfield")
        f = TestFunction(lambda x: np.full(len(x), 0.7), sup_bound=0.7, name="const")
        est = bm.estimate_bismut(model, GRID, H, f, PHI1, 10_000, seed=1)
        assert abs(est.value) <= 3 * est.std_error

    def test_gaussian_integration_by_parts_oracle(self):
        # pure noise, clamped identity: exact value 1
        model = make_model("pure-noise")
        est = bm.estimate_bismut(model, GRID, H, "clamped-linear", PHI1, 20_000, seed=2)
        assert abs(est.centered_value - 1.0) <= 3 * est.centered_std_error

    def test_matches_fd_on_linear_meanfield(self):
        model = make_model("linear-meanfield")
        sim = bm.simulate(model, GRID, H, 20_000, seed=3)
        est = bm.estimate_bismut(model, GRID, H, "sin", PHI1, 20_000, 3, _sim=sim)
        fd = bm.estimate_fd(model, GRID, H, "sin", PHI1, (0.1, 0.05, 0.025), 20_000, 3, _sim=sim)
        assert bm.compare_bismut_fd(est, fd)["pass"]

    def test_centered_variance_reduction(self):
        # with the canonical clamped-linear observable the centered form
        # never has larger variance on the shipped models
        for name, phi in [
            ("pure-noise", PHI1),
            ("linear-meanfield", PHI1),
            ("sin-interaction", PHI1),
            ("kinetic-degenerate", constant_direction([1.0, 0.5])),
        ]:
            model = make_model(name)
            est = bm.estimate_bismut(model, GRID, H, "clamped-linear", phi, 8000, seed=11)
            # tie-level slack: when E f(X_T) ~ 0 centering is a no-op and the
            # sample-mean subtraction can move the SD by O(1/n)
            assert est.centered_std_error <= est.std_error * (1.0 + 1e-3)
            gap = abs(est.value - est.centered_value)
            assert gap <= 3 * np.hypot(est.std_error, est.centered_std_error)

    def test_seed_determinism_across_workers(self):
        model = make_model("linear-meanfield")
        a = bm.estimate_bismut(model, GRID, H, "sin", PHI1, 4000, seed=5, workers=1)
        b = bm.estimate_bismut(model, GRID, H, "sin", PHI1, 4000, seed=5, workers=4)
        assert a.as_dict() == b.as_dict()

    def test_minimum_paths(self):
        model = make_model("pure-noise")
        with pytest.raises(ValueError):
            bm.estimate_bismut(model, GRID, H, "clamped-linear", PHI1, 1, seed=1)


class TestEstimateFd:
    def test_constant_observable_exactly_zero(self):
        model = make_model("linear-meanfield")
        f = TestFunction(lambda x: np.ones(len(x)), sup_bound=1.0, name="one")
        fd = bm.estimate_fd(model, GRID, H, f, PHI1, (0.1, 0.05), 2000, seed=1)
        assert fd.extrapolated == 0.0

    def test_pure_noise_oracle(self):
        model = make_model("pure-noise")
        fd = bm.estimate_fd(model, GRID, H, "clamped-linear", PHI1, (0.1, 0.05, 0.025), 5000, seed=2)
        assert abs(fd.extrapolated - 1.0) <= max(3 * fd.std_error, 1e-10)

    def test_eps_sorted_and_validated(self):
        model = make_model("pure-noise")
        fd = bm.estimate_fd(model, GRID, H, "clamped-linear", PHI1, (0.025, 0.1, 0.05), 500, seed=2)
        assert fd.eps == [0.1, 0.05, 0.025]
        with pytest.raises(ValueError):
            bm.estimate_fd(model, GRID, H, "clamped-linear", PHI1, (0.1,), 500, seed=2)
        with pytest.raises(ValueError):
            bm.estimate_fd(model, GRID, H, "clamped-linear", PHI1, (-0.1, 0.05), 500, seed=2)

    def test_quotients_drift_smoothly_in_eps(self):
        model = make_model("sin-interaction")
        fd = bm.estimate_fd(model, GRID, H, "sin", PHI1, (0.2, 0.1, 0.05, 0.025), 20_000, seed=4)
        gaps = np.abs(np.diff(fd.values))
        assert gaps[-1] <= gaps[0] + 3 * fd.std_errors[-1]


class TestNormEstimate:
    def test_constant_observable_both_sides_zero(self):
        model = make_model("linear-meanfield")
        f = TestFunction(lambda x: np.ones(len(x)), sup_bound=1.0, name="one")
        rep = bm.lderiv_norm_estimate(model, GRID, H, f, [PHI1], 4000, seed=5)
        assert rep["variance_factor"] == 0.0
        assert abs(rep["sup_estimate"]) < 0.05

    def test_variance_factor_is_sample_sd(self):
        model = make_model("pure-noise")
        rep = bm.lderiv_norm_estimate(model, GRID, H, "clamped-linear", [PHI1], 4000, seed=6)
        sim = bm.simulate(model, GRID, H, 4000, 6)
        from mvfbm.models import resolve_observable

        f = resolve_observable("clamped-linear", sim[0].terminal)
        assert np.isclose(rep["variance_factor"], f(sim[0].terminal).std(ddof=1))

    def test_dependent_directions_dropped(self):
        # point-mass initial law: phi(x) = x evaluates to the same atom -> dependent
        model = make_model("pure-noise")
        basis = [PHI1, Direction(lambda x: x, "id")]
        rep = bm.lderiv_norm_estimate(model, GRID, H, "clamped-linear", basis, 2000, seed=7)
        assert any("dropped" in n for n in rep["notices"])
        assert len(rep["per_direction"]) == 1

    def test_scaling_slope_matches_hurst(self):
        model = make_model("pure-noise")
        bfs = []
        ts = [0.25, 0.5, 1.0, 2.0]
        for i, horizon in enumerate(ts):
            rep = bm.lderiv_norm_estimate(model, TimeGrid(horizon, 128), H,
                                          "clamped-linear", [PHI1], 4000, seed=20 + i)
            bfs.append(rep["bound_factor"])
        slope = np.polyfit(np.log(ts), np.log(bfs), 1)[0]
        assert abs(slope + H) <= 0.15


class TestTvProbe:
    def test_zero_shift_is_zero(self):
        model = make_model("linear-meanfield")
        fam = random_bounded_family(16, 1, seed=1)
        rep = bm.tv_probe(model, GRID, H, [0.0, 0.5], fam, 2000, seed=8)
        assert rep["rows"][0]["tv_lower_bound"] == 0.0

    def test_ratio_bounded_over_shrinking_shifts(self):
        model = make_model("linear-meanfield")
        fam = random_bounded_family(64, 1, seed=2)
        rep = bm.tv_probe(model, GRID, H, [1.0, 0.5, 0.25, 0.125], fam, 10_000, seed=9)
        assert rep["ratio_spread"] < 3.0

    def test_family_saturation(self):
        model = make_model("linear-meanfield")
        f64 = random_bounded_family(64, 1, seed=3)
        f128 = random_bounded_family(128, 1, seed=4)
        r64 = bm.tv_probe(model, GRID, H, [0.5], f64, 10_000, seed=10)["rows"][0]["ratio"]
        r128 = bm.tv_probe(model, GRID, H, [0.5], f128, 10_000, seed=10)["rows"][0]["ratio"]
        assert abs(r128 - r64) / r64 < 0.10

    def test_rejects_unbounded_family(self):
        model = make_model("linear-meanfield")
        bad = [TestFunction(lambda x: 5 * x[:, 0], sup_bound=5.0, name="big")]
        with pytest.raises(ValueError):
            bm.tv_probe(model, GRID, H, [0.5], bad, 100, seed=1)
