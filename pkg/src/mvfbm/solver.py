"""Interacting-particle solvers for mean-field SDEs driven by fBm.

State update is explicit Euler with left-point evaluation of both the drift
and the (state-law-free) diffusion factor, matching the left-point Wiener
integral convention used by the sensitivity weights.  The empirical law fed
to the drift at step k is the ensemble's own snapshot at step k; particles
are only asymptotically independent and no correction is applied.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fbm import PathBatch
from .grid import TimeGrid
from .measure import EmpiricalMeasure

INIT_TAG = 1 << 62


class NonFiniteStateError(FloatingPointError):
    def __init__(self, what: str, particle: int, step: int):
        self.particle = particle
        self.step = step
        super().__init__(f"{what} became non-finite at particle {particle}, step {step}")


def _check_finite(arr: np.ndarray, what: str, step: int) -> None:
    bad = ~np.all(np.isfinite(arr.reshape(arr.shape[0], -1)), axis=1)
    if np.any(bad):
        raise NonFiniteStateError(what, int(np.argmax(bad)), step)


@dataclass
class DriftSpec:
    """Drift b(t, x, mu) with its spatial Jacobian and measure derivative.

    Callables are vectorized over particles:

    * ``b(t, X, mu)``        X (N, d)  ->  (N, d_out)
    * ``grad_b(t, X, mu)``   ->  (d_out, d) shared or (N, d_out, d)
    * ``lions_b(t, X, mu, Y)``  measure-derivative kernel evaluated at the
      atoms Y (M, d).  When ``lions_x_dependent`` is False the kernel does
      not depend on the state slot; X is passed as None and the result has
      shape (M, d_out, d).  Otherwise the result is (N, M, d_out, d), which
      costs O(N^2) per step and is only meant for small ensembles.

    ``lipschitz`` is the declared bound on both the Jacobian and the
    measure-derivative kernel; ``spot_check`` samples it.
    """

    b: Callable
    grad_b: Callable | None = None
    lions_b: Callable | None = None
    lipschitz: float = 1.0
    lions_x_dependent: bool = False
    name: str = "drift"

    def jacobian_apply(self, t: float, states: np.ndarray, mu, vecs: np.ndarray) -> np.ndarray:
        """(grad b) applied to per-particle vectors."""
        if self.grad_b is None:
            return np.zeros_like(vecs[:, : self.b(t, states[:1], mu).shape[1]])
        gb = np.asarray(self.grad_b(t, states, mu), dtype=float)
        if gb.ndim == 2:
            return vecs @ gb.T
        return np.einsum("nab,nb->na", gb, vecs)

    def mean_field_term(self, t: float, states: np.ndarray, mu, vecs: np.ndarray) -> np.ndarray:
        """Ensemble average of <measure-derivative kernel, vecs>.

        Realizes the expectation over an independent copy as the average
        over the ensemble itself (self-pairing included; O(1/N) bias).
        Returns an (N, d_out) array.
        """
        if self.lions_b is None:
            return np.zeros_like(vecs)
        n = states.shape[0]
        if not self.lions_x_dependent:
            dl = np.asarray(self.lions_b(t, None, mu, states), dtype=float)
            common = np.einsum("jab,jb->a", dl, vecs) / n
            return np.broadcast_to(common, (n, common.shape[0]))
        dl = np.asarray(self.lions_b(t, states, mu, states), dtype=float)
        return np.einsum("ijab,jb->ia", dl, vecs) / n

    def spot_check(self, t: float, states: np.ndarray, mu) -> None:
        tol = 1e-9
        if self.grad_b is not None:
            gb = np.asarray(self.grad_b(t, states, mu), dtype=float)
            if np.linalg.norm(gb, ord=2, axis=(-2, -1)).max() > self.lipschitz + tol:
                raise ValueError(f"{self.name}: sampled grad_b exceeds declared bound")
        if self.lions_b is not None:
            x = None if not self.lions_x_dependent else states
            dl = np.asarray(self.lions_b(t, x, mu, states), dtype=float)
            if np.abs(dl).max() > self.lipschitz + tol:
                raise ValueError(f"{self.name}: sampled lions_b exceeds declared bound")


@dataclass
class DiffusionSpec:
    """Deterministic diffusion factor sigma(t), shape (d_state, d_noise).

    ``sigma`` may be a constant matrix or a callable of t.  The inverse is
    required by the non-degenerate sensitivity weights; when provided it is
    checked against sigma at sampled times.  ``hoelder`` optionally declares
    the Hoelder exponent of sigma^(-1) in t (must exceed H - 1/2 for the
    singular weight integrals to converge; constant sigma is exponent 1).
    """

    sigma: Callable | np.ndarray
    sigma_inverse: Callable | np.ndarray | None = None
    hoelder: float = 1.0

    def at(self, t: float) -> np.ndarray:
        s = self.sigma(t) if callable(self.sigma) else self.sigma
        return np.atleast_2d(np.asarray(s, dtype=float))

    def inverse_at(self, t: float) -> np.ndarray:
        if self.sigma_inverse is None:
            raise ValueError("sigma_inverse not provided")
        s = self.sigma_inverse(t) if callable(self.sigma_inverse) else self.sigma_inverse
        return np.atleast_2d(np.asarray(s, dtype=float))

    def check_inverse(self, times) -> None:
        for t in times:
            s = self.at(t)
            si = self.inverse_at(t)
            if not np.allclose(s @ si, np.eye(s.shape[0]), atol=1e-10):
                raise ValueError(f"sigma(t) @ sigma_inverse(t) != I at t={t}")


@dataclass(frozen=True)
class InitialLaw:
    """Deterministic initial sampler: point mass or isotropic Gaussian."""

    kind: str = "point"
    center: tuple = (0.0,)
    std: float = 0.0
    seed: int = 0

    def sample(self, n: int, dim: int) -> np.ndarray:
        c = np.broadcast_to(np.asarray(self.center, dtype=float), (dim,))
        out = np.tile(c, (n, 1))
        if self.kind == "gaussian" and self.std > 0:
            gen = np.random.Generator(
                np.random.Philox(key=((self.seed & ((1 << 64) - 1)) << 64) | INIT_TAG)
            )
            out = out + self.std * gen.standard_normal((n, dim))
        elif self.kind not in ("point", "gaussian"):
            raise ValueError(f"unknown initial law kind {self.kind!r}")
        return out


@dataclass
class ParticleEnsemble:
    """Coupled state trajectories over a shared noise batch."""

    grid: TimeGrid
    states: np.ndarray = field(repr=False)  # (N, n_steps+1, d)
    noise: PathBatch = field(repr=False)
    init_states: np.ndarray = field(repr=False)

    @property
    def n_particles(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    def law_at(self, k: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.states[:, k, :])

    @property
    def terminal(self) -> np.ndarray:
        return self.states[:, -1, :]


def _noise_increments(diff: DiffusionSpec, noise: PathBatch, grid: TimeGrid) -> np.ndarray:
    """sigma(t_k) applied to fBm increments, shape (N, n, d_state)."""
    dbh = np.diff(noise.bh, axis=1)
    s0 = diff.at(0.0)
    if not callable(diff.sigma):
        return dbh @ s0.T
    out = np.empty((dbh.shape[0], dbh.shape[1], s0.shape[0]))
    for k in range(grid.n_steps):
        out[:, k, :] = dbh[:, k, :] @ diff.at(grid.nodes[k]).T
    return out


def solve_euler(
    drift: DriftSpec,
    diff: DiffusionSpec,
    init: InitialLaw | np.ndarray,
    noise: PathBatch,
) -> ParticleEnsemble:
    """Advance the interacting-particle Euler scheme over the noise batch."""
    grid = noise.grid
    n_paths = len(noise)
    d_state = diff.at(0.0).shape[0]
    x0 = init.sample(n_paths, d_state) if isinstance(init, InitialLaw) else np.array(init, dtype=float)
    if x0.shape != (n_paths, d_state):
        raise ValueError(f"initial states must have shape {(n_paths, d_state)}, got {x0.shape}")

    dt = grid.dt
    t = grid.nodes
    sig_inc = _noise_increments(diff, noise, grid)
    x = np.empty((n_paths, grid.n_steps + 1, d_state))
    x[:, 0, :] = x0
    for k in range(grid.n_steps):
        cur = x[:, k, :]
        mu = EmpiricalMeasure(cur)
        bk = np.asarray(drift.b(t[k], cur, mu), dtype=float)
        x[:, k + 1, :] = cur + bk * dt + sig_inc[:, k, :]
        _check_finite(x[:, k + 1, :], "state", k + 1)
    return ParticleEnsemble(grid, x, noise, x0)


def solve_picard(
    drift: DriftSpec,
    diff: DiffusionSpec,
    init: InitialLaw | np.ndarray,
    noise: PathBatch,
    n_iter: int = 8,
) -> tuple[ParticleEnsemble, list[float]]:
    """Picard iteration on shared noise.

    Iterate X^0 = xi and X^(m+1)_t = xi + int b(s, X^m, law^m) ds + noise;
    returns the final iterate and the error sequence
    e_m = mean_paths sup_t |X^m_t - X^(m-1)_t|^2.
    """
    grid = noise.grid
    n_paths = len(noise)
    d_state = diff.at(0.0).shape[0]
    x0 = init.sample(n_paths, d_state) if isinstance(init, InitialLaw) else np.array(init, dtype=float)

    dt = grid.dt
    t = grid.nodes
    sig_inc = _noise_increments(diff, noise, grid)
    noise_cum = np.concatenate(
        [np.zeros((n_paths, 1, d_state)), np.cumsum(sig_inc, axis=1)], axis=1
    )

    prev = np.repeat(x0[:, None, :], grid.n_steps + 1, axis=1)
    errors: list[float] = []
    cur = prev
    for _ in range(n_iter):
        drift_term = np.zeros((n_paths, grid.n_steps + 1, d_state))
        acc = np.zeros((n_paths, d_state))
        for k in range(grid.n_steps):
            mu = EmpiricalMeasure(prev[:, k, :])
            acc = acc + np.asarray(drift.b(t[k], prev[:, k, :], mu), dtype=float) * dt
            drift_term[:, k + 1, :] = acc
        cur = x0[:, None, :] + drift_term + noise_cum
        _check_finite(cur.reshape(n_paths, -1), "picard iterate", -1)
        diff_sq = np.sum((cur - prev) ** 2, axis=2)
        errors.append(float(np.mean(np.max(diff_sq, axis=1))))
        prev = cur
    return ParticleEnsemble(grid, cur, noise, x0), errors


# ---------------------------------------------------------------------------
# ensemble dumps
# ---------------------------------------------------------------------------

def dump_snapshot_csv(ensemble: ParticleEnsemble, k: int, stream) -> None:
    """One time-slice as CSV: particle_id, x_1..x_d."""
    d = ensemble.dim
    stream.write(",".join(["particle_id"] + [f"x_{j + 1}" for j in range(d)]) + "\n")
    for i in range(ensemble.n_particles):
        row = [str(i)] + [f"{ensemble.states[i, k, j]:.17g}" for j in range(d)]
        stream.write(",".join(row) + "\n")


def dump_states_binary(ensemble: ParticleEnsemble, path_prefix: str) -> None:
    """All states as .npy plus a JSON sidecar describing shape and grid."""
    np.save(path_prefix + ".npy", ensemble.states)
    sidecar = {
        "shape": list(ensemble.states.shape),
        "order": ["particle", "time_node", "component"],
        "horizon": ensemble.grid.horizon,
        "n_steps": ensemble.grid.n_steps,
        "dtype": str(ensemble.states.dtype),
    }
    with open(path_prefix + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2)
