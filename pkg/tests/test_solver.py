"""Interacting-particle Euler and Picard solvers against exact dynamics."""

import io

import numpy as np
import pytest

from mvfbm import fbm
from mvfbm.grid import TimeGrid
from mvfbm.models import make_model
from mvfbm.solver import (
    DiffusionSpec,
    DriftSpec,
    InitialLaw,
    NonFiniteStateError,
    dump_snapshot_csv,
    dump_states_binary,
    solve_euler,
    solve_picard,
)

GRID = TimeGrid(1.0, 128)
H = 0.75


def noise(n_paths=500, seed=3, dim=1, grid=GRID):
    return fbm.generate_batch(grid, H, dim, seed, n_paths)


def zero_drift():
    return DriftSpec(b=lambda t, x, mu: np.zeros_like(x))


class TestEuler:
    def test_pure_noise_exact(self):
        nz = noise()
        diff = DiffusionSpec(sigma=np.eye(1))
        ens = solve_euler(zero_drift(), diff, InitialLaw("point", (0.5,)), nz)
        assert np.allclose(ens.states[:, :, 0], 0.5 + nz.bh[:, :, 0], atol=1e-13)

    def test_constant_drift_exact(self):
        nz = noise()
        drift = DriftSpec(b=lambda t, x, mu: np.full_like(x, 2.0))
        ens = solve_euler(drift, DiffusionSpec(sigma=np.zeros((1, 1))), InitialLaw("point", (0.0,)), nz)
        assert np.allclose(ens.states[:, :, 0], 2.0 * GRID.nodes, atol=1e-13)

    def test_linear_meanfield_mean_ode(self):
        # noiseless mean obeys m' = (a + beta) m; Euler error is O(dt)
        model = make_model("linear-meanfield")
        a, beta = model.params["a"], model.params["beta"]
        errs = []
        for n in (64, 128):
            g = TimeGrid(1.0, n)
            nz = fbm.generate_batch(g, H, 1, 3, 2000)
            ens = solve_euler(model.drift, DiffusionSpec(sigma=np.zeros((1, 1))),
                              InitialLaw("gaussian", (1.0,), 0.2, seed=5), nz)
            m = ens.states[:, :, 0].mean(axis=0)
            exact = m[0] * np.exp((a + beta) * g.nodes)
            errs.append(np.max(np.abs(m - exact)))
        assert errs[1] < errs[0]
        assert errs[0] < 10 * (1.0 / 64)

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_nonfinite_abort_names_particle(self):
        nz = noise(n_paths=8)
        drift = DriftSpec(b=lambda t, x, mu: np.where(np.arange(len(x))[:, None] == 3, 1e200, 0.0) * (x + 1))
        with pytest.raises(NonFiniteStateError) as err:
            solve_euler(drift, DiffusionSpec(sigma=np.eye(1)), InitialLaw("point", (1.0,)), nz)
        assert err.value.particle == 3

    def test_moment_stable_under_refinement(self):
        model = make_model("linear-meanfield")
        vals = []
        for n in (64, 128, 256):
            g = TimeGrid(1.0, n)
            nz = fbm.generate_batch(g, H, 1, 77, 4000)
            ens = solve_euler(model.drift, model.diff, model.init_for_seed(77), nz)
            vals.append(np.mean(np.max(ens.states[:, :, 0] ** 2, axis=1)))
        spread = (max(vals) - min(vals)) / np.mean(vals)
        assert np.all(np.isfinite(vals))
        assert spread < 0.1

    def test_shift_growth_ratio_bounded(self):
        # mean sup |X^eps - X|^2 / eps^2 stays bounded over shrinking eps
        model = make_model("sin-interaction")
        nz = noise(n_paths=2000, seed=9)
        x0 = model.init_for_seed(9).sample(2000, 1)
        base = solve_euler(model.drift, model.diff, x0, nz)
        ratios = []
        for eps in (0.1, 0.05, 0.025):
            shifted = solve_euler(model.drift, model.diff, x0 + eps, nz)
            growth = np.mean(np.max((shifted.states - base.states)[:, :, 0] ** 2, axis=1))
            ratios.append(growth / eps ** 2)
        assert max(ratios) / min(ratios) < 1.5


class TestPicard:
    def test_zero_drift_converges_immediately(self):
        nz = noise()
        _, errs = solve_picard(zero_drift(), DiffusionSpec(sigma=np.eye(1)),
                               InitialLaw("point", (0.0,)), nz, n_iter=4)
        assert errs[0] > 0
        assert all(e == 0.0 for e in errs[1:])

    def test_factorial_type_decay(self):
        model = make_model("linear-meanfield")  # K*T = 0.7 < 1
        nz = noise(n_paths=2000, seed=5)
        _, errs = solve_picard(model.drift, model.diff, model.init_for_seed(5), nz, n_iter=8)
        tail = np.asarray(errs[1:])
        assert np.all(np.diff(tail) < 0)
        assert errs[7] / errs[3] < 0.1

    def test_matches_euler_fixed_point(self):
        model = make_model("linear-meanfield")
        nz = noise(n_paths=1000, seed=6)
        init = model.init_for_seed(6)
        pic, _ = solve_picard(model.drift, model.diff, init, nz, n_iter=12)
        eul = solve_euler(model.drift, model.diff, init, nz)
        gap = np.max(np.abs(pic.states - eul.states))
        assert gap < 10 * GRID.dt


class TestSpecs:
    def test_diffusion_inverse_check(self):
        good = DiffusionSpec(sigma=2 * np.eye(2), sigma_inverse=0.5 * np.eye(2))
        good.check_inverse([0.0, 0.5, 1.0])
        bad = DiffusionSpec(sigma=2 * np.eye(2), sigma_inverse=np.eye(2))
        with pytest.raises(ValueError):
            bad.check_inverse([0.0])

    def test_drift_spot_check(self):
        model = make_model("linear-meanfield")
        ens = solve_euler(model.drift, model.diff, model.init_for_seed(1), noise(100, 1))
        model.drift.spot_check(0.5, ens.states[:, 10, :], ens.law_at(10))
        lying = DriftSpec(
            b=lambda t, x, mu: 5.0 * x,
            grad_b=lambda t, x, mu: 5.0 * np.eye(1),
            lipschitz=1.0,
        )
        with pytest.raises(ValueError):
            lying.spot_check(0.5, ens.states[:, 10, :], ens.law_at(10))

    def test_initial_law_deterministic(self):
        law = InitialLaw("gaussian", (1.0, -1.0), 0.5, seed=9)
        assert np.array_equal(law.sample(50, 2), law.sample(50, 2))
        assert np.all(InitialLaw("point", (2.0,)).sample(10, 1) == 2.0)


def test_dumps(tmp_path):
    model = make_model("pure-noise")
    ens = solve_euler(model.drift, model.diff, model.init_for_seed(2), noise(20, 2))
    buf = io.StringIO()
    dump_snapshot_csv(ens, 5, buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "particle_id,x_1"
    assert len(lines) == 21

    prefix = str(tmp_path / "states")
    dump_states_binary(ens, prefix)
    arr = np.load(prefix + ".npy")
    assert arr.shape == ens.states.shape
    import json

    meta = json.load(open(prefix + ".json"))
    assert meta["shape"] == list(ens.states.shape)
    assert meta["n_steps"] == GRID.n_steps
