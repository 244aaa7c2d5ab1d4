"""Fractional Brownian paths coupled to their driving Wiener process.

The workhorse generator builds W from counter-based streams and pushes its
increments through the precomputed Volterra weight matrix, so every fBm
path stays bit-reproducible from (seed, path index) and the Wiener path it
was built from.  A dense Cholesky generator (exact in distribution, no W
coupling) serves as the distributional oracle in tests.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import toeplitz

from ._parallel import run_chunked
from .fraccalc import volterra_weight_matrix
from .grid import GridMismatchError, TimeGrid, validate_hurst

_MASK64 = (1 << 64) - 1
_MASK40 = (1 << 40) - 1
_MASK24 = (1 << 24) - 1


class FactorizationError(ValueError):
    """Covariance factorization failed; carries the smallest eigenvalue."""

    def __init__(self, min_eigenvalue: float):
        self.min_eigenvalue = min_eigenvalue
        super().__init__(
            f"covariance matrix is not numerically PSD "
            f"(smallest eigenvalue {min_eigenvalue:.3e})"
        )


def stream_key(seed: int, path_index: int, component: int) -> int:
    """128-bit Philox key for one (seed, path, component) stream.

    Keying the stream rather than seeding a stateful generator makes batch
    output independent of scheduling: any worker can generate any path.
    """
    return (
        ((seed & _MASK64) << 64)
        | ((path_index & _MASK40) << 24)
        | (component & _MASK24)
    )


def _normals(seed: int, path_index: int, component: int, count: int) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(key=stream_key(seed, path_index, component)))
    return gen.standard_normal(count)


@dataclass
class CoupledPath:
    """One fBm path together with the Wiener path that generated it."""

    grid: TimeGrid
    w: np.ndarray = field(repr=False)   # (n_steps+1, d) Wiener values
    bh: np.ndarray = field(repr=False)  # (n_steps+1, d) fBm values
    hurst: float
    seed: int
    path_index: int = 0

    @property
    def dim(self) -> int:
        return self.w.shape[1]


@dataclass
class PathBatch:
    """Stacked coupled paths sharing grid and Hurst parameter."""

    grid: TimeGrid
    w: np.ndarray = field(repr=False)   # (n_paths, n_steps+1, d)
    bh: np.ndarray = field(repr=False)  # (n_paths, n_steps+1, d)
    hurst: float
    seed: int

    def __len__(self) -> int:
        return self.w.shape[0]

    @property
    def dim(self) -> int:
        return self.w.shape[2]

    def __getitem__(self, i: int) -> CoupledPath:
        return CoupledPath(self.grid, self.w[i], self.bh[i], self.hurst, self.seed, i)

    def increments(self) -> np.ndarray:
        """Wiener increments, shape (n_paths, n_steps, d)."""
        return np.diff(self.w, axis=1)


def volterra_transform(dw: np.ndarray, grid: TimeGrid, hurst: float) -> np.ndarray:
    """Map Wiener increments (n_paths, n_steps, d) to fBm node values.

    Uses the exact einsum signature of the generator so re-derivation is
    bit-identical to generation.
    """
    v = volterra_weight_matrix(grid, hurst)
    single = dw.ndim == 2
    if single:
        dw = dw[None]
    out = np.einsum("kj,njc->nkc", v, dw)
    return out[0] if single else out


def generate_batch(
    grid: TimeGrid,
    hurst: float,
    dim: int,
    seed: int,
    n_paths: int,
    workers: int | None = None,
) -> PathBatch:
    """Generate coupled (W, B^H) paths.

    W has iid N(0, dt) increments per component from the (seed, path,
    component) streams; B^H is the Volterra transform of those increments.
    """
    h = validate_hurst(hurst)
    n = grid.n_steps
    sq = np.sqrt(grid.dt)
    v = volterra_weight_matrix(grid, h)

    w = np.zeros((n_paths, n + 1, dim))
    bh = np.empty((n_paths, n + 1, dim))

    def fill(a: int, b: int) -> None:
        dw = np.empty((b - a, n, dim))
        for i in range(a, b):
            for c in range(dim):
                dw[i - a, :, c] = _normals(seed, i, c, n) * sq
        np.cumsum(dw, axis=1, out=w[a:b, 1:, :])
        # transform diff(w), not dw: diff(cumsum(x)) != x bitwise, and the
        # coupling contract is bit-exact re-derivation of B^H from W
        bh[a:b] = np.einsum("kj,njc->nkc", v, np.diff(w[a:b], axis=1))

    run_chunked(fill, n_paths, workers)
    return PathBatch(grid, w, bh, h, seed)


def generate_coupled(grid: TimeGrid, hurst: float, dim: int, seed: int) -> CoupledPath:
    """Single coupled path (path_index 0 of the batch keyed by seed)."""
    return generate_batch(grid, hurst, dim, seed, 1)[0]


def rederive_fbm(path: CoupledPath) -> np.ndarray:
    """Recompute B^H from the stored W; bit-identical to path.bh."""
    dw = np.diff(path.w, axis=0)
    return volterra_transform(dw, path.grid, path.hurst)


def generate_exact_cholesky(
    grid: TimeGrid,
    hurst: float,
    dim: int,
    seed: int,
    n_paths: int = 1,
) -> np.ndarray:
    """Exact-in-distribution fBm node values, shape (n_paths, n+1, dim).

    Factorizes the stationary increment covariance (a Toeplitz matrix,
    much better conditioned than the node covariance) and cumsums the
    sampled increments.  No Wiener coupling; reference generator only.
    """
    h = validate_hurst(hurst)
    n = grid.n_steps
    if n > 4096:
        raise ValueError("dense factorization limited to n_steps <= 4096")
    dt = grid.dt
    k = np.arange(n, dtype=float)
    gam = 0.5 * dt ** (2 * h) * ((k + 1) ** (2 * h) + np.abs(k - 1) ** (2 * h) - 2 * k ** (2 * h))
    cov = toeplitz(gam)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise FactorizationError(float(np.linalg.eigvalsh(cov).min())) from None

    out = np.zeros((n_paths, n + 1, dim))
    for i in range(n_paths):
        for c in range(dim):
            z = _normals(seed, i, c, n)
            out[i, 1:, c] = np.cumsum(chol @ z)
    return out


def wiener_integral(integrand: np.ndarray, path: CoupledPath) -> float | np.ndarray:
    """Left-point Ito sum  sum_k <u(t_k), W(t_k+1) - W(t_k)>.

    ``integrand`` holds node values, shape (n+1,) or (n+1, d); the value at
    t_n is unused.  Caller is responsible for adaptedness of u(t_k).
    """
    u = np.asarray(integrand, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape[0] != path.grid.n_steps + 1:
        raise GridMismatchError(
            f"integrand has {u.shape[0]} nodes, grid has {path.grid.n_steps + 1}"
        )
    dw = np.diff(path.w, axis=0)
    return float(np.sum(u[:-1] * dw))


def batch_wiener_integral(integrands: np.ndarray, batch: PathBatch) -> np.ndarray:
    """Per-path Ito sums for a batch; integrands (n_paths, n+1, d)."""
    u = np.asarray(integrands, dtype=float)
    if u.shape[1] != batch.grid.n_steps + 1:
        raise GridMismatchError("integrand/grid node count mismatch")
    dw = batch.increments()
    return np.einsum("nkc,nkc->n", u[:, :-1, :], dw)


def dump_path_csv(path: CoupledPath, stream) -> None:
    """Write one coupled path as CSV: t, W_1..W_d, BH_1..BH_d."""
    d = path.dim
    writer = csv.writer(stream)
    writer.writerow(
        ["t"] + [f"W_{c + 1}" for c in range(d)] + [f"BH_{c + 1}" for c in range(d)]
    )
    for k, t in enumerate(path.grid.nodes):
        writer.writerow(
            [f"{t:.12g}"]
            + [f"{path.w[k, c]:.17g}" for c in range(d)]
            + [f"{path.bh[k, c]:.17g}" for c in range(d)]
        )
