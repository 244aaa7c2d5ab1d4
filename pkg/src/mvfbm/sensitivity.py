"""First-variation and Malliavin flows, and the divergence-weight integrand.

The chain is: variation flow Gamma (a linear random ODE with an ensemble
averaged measure-derivative term), a bracket trajectory rho built from
Gamma, the time-integrated direction whose derivative is sigma^(-1) rho,
and finally the W-side divergence integrand zeta obtained by applying the
inverse kernel operator.  zeta is computed along two discretizations that
must agree: the split four-term expansion (primary) and the generic inverse
transform (cross-check).

Everything is per particle and adapted: zeta(t_k) only reads the path up to
t_k, so the left-point Ito sum against dW is a bona fide discrete
divergence with E delta = 0 exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import expm
from scipy.special import gamma as gamma_fn

from ._quad import gauss_jacobi01, gauss_legendre01
from .fraccalc import (
    cell_profile_average,
    inverse_normalizer,
    inverse_transform_matrix,
    power_rule_constant,
    singular_tail_constant,
)
from .grid import TimeGrid, validate_hurst
from .measure import EmpiricalMeasure
from .solver import (
    DiffusionSpec,
    DriftSpec,
    ParticleEnsemble,
    _check_finite,
    solve_euler,
)

_route2_cache: dict[tuple, np.ndarray] = {}


@dataclass
class Direction:
    """Perturbation direction phi: R^d -> R^d, vectorized over atoms."""

    fn: Callable
    name: str = "phi"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        out = np.asarray(self.fn(np.atleast_2d(x)), dtype=float)
        return np.broadcast_to(out, np.atleast_2d(x).shape)


def constant_direction(vec) -> Direction:
    v = np.atleast_1d(np.asarray(vec, dtype=float))
    label = ",".join(f"{c:g}" for c in v)
    return Direction(lambda x: np.tile(v, (len(x), 1)), name=f"const({label})")


@dataclass
class VariationEnsemble:
    """Derivative of the state in its initial condition along a direction.

    ``mean_field`` stores the ensemble-averaged measure-derivative pairing
    (1/N) sum_j <kernel(t, X_i, law)(X_j), Gamma_j> used by the flow; shape
    (N, n+1, d) or (1, n+1, d) when the kernel ignores the state slot.
    """

    grid: TimeGrid
    gammas: np.ndarray = field(repr=False)      # (N, n+1, d)
    mean_field: np.ndarray = field(repr=False)  # (N or 1, n+1, d)
    direction: Direction = None


def variation_flow(ensemble: ParticleEnsemble, drift: DriftSpec, phi: Direction) -> VariationEnsemble:
    """Euler advance of the linear variation ODE along the ensemble.

    dGamma = [grad_b . Gamma + avg_j <lions_b(t, X_i, law)(X_j), Gamma_j>] dt,
    Gamma_0 = phi(X_0).
    """
    grid = ensemble.grid
    n = grid.n_steps
    dt = grid.dt
    t = grid.nodes
    x = ensemble.states
    n_paths, _, d = x.shape

    gam = np.empty((n_paths, n + 1, d))
    gam[:, 0, :] = phi(ensemble.init_states)
    mf_width = n_paths if drift.lions_x_dependent else 1
    mf = np.zeros((mf_width, n + 1, d))
    for k in range(n):
        mu = EmpiricalMeasure(x[:, k, :])
        term = drift.mean_field_term(t[k], x[:, k, :], mu, gam[:, k, :])
        mf[:, k, :] = term[:1] if mf_width == 1 else term
        jac = drift.jacobian_apply(t[k], x[:, k, :], mu, gam[:, k, :])
        gam[:, k + 1, :] = gam[:, k, :] + (jac + term) * dt
        _check_finite(gam[:, k + 1, :], "variation", k + 1)
    mu = EmpiricalMeasure(x[:, n, :])
    term = drift.mean_field_term(t[n], x[:, n, :], mu, gam[:, n, :])
    mf[:, n, :] = term[:1] if mf_width == 1 else term
    return VariationEnsemble(grid, gam, mf, phi)


def variation_fd_check(
    drift: DriftSpec,
    diff: DiffusionSpec,
    base: ParticleEnsemble,
    phi: Direction,
    eps_list=(0.1, 0.05, 0.025),
) -> dict:
    """Difference-quotient check of the variation flow on common noise.

    Re-solves the system from the shifted initial states x0 + eps*phi(x0)
    with identical noise and reports e(eps) = mean_paths sup_t
    |(X^eps - X)/eps - Gamma|^2, the fitted order of e in eps, and the
    stability ratios mean sup|X^eps - X|^2 / eps^2.
    """
    var = variation_flow(base, drift, phi)
    x0 = base.init_states
    shift = phi(x0)
    errors, ratios = [], []
    for eps in eps_list:
        shifted = solve_euler(drift, diff, x0 + eps * shift, base.noise)
        quot = (shifted.states - base.states) / eps
        err = np.max(np.sum((quot - var.gammas) ** 2, axis=2), axis=1)
        errors.append(float(np.mean(err)))
        growth = np.max(np.sum((shifted.states - base.states) ** 2, axis=2), axis=1)
        ratios.append(float(np.mean(growth)) / eps ** 2)
    eps_arr = np.asarray(eps_list, dtype=float)
    err_arr = np.asarray(errors)
    if np.all(err_arr > 0):
        order = float(np.polyfit(np.log(eps_arr), np.log(err_arr), 1)[0])
    else:
        order = float("inf")
    return {
        "eps": list(eps_list),
        "errors": errors,
        "order": order,
        "decreasing": bool(np.all(np.diff(err_arr) < 0)) or bool(np.all(err_arr == 0)),
        "growth_ratios": ratios,
    }


def malliavin_flow(
    ensemble: ParticleEnsemble,
    drift: DriftSpec,
    diff: DiffusionSpec,
    rh_path: np.ndarray,
) -> np.ndarray:
    """Directional Malliavin derivative along a Cameron-Martin image path.

    Euler advance of dY = grad_b . Y dt + sigma(t) d(rh)(t), Y_0 = 0; the
    law argument of the drift stays frozen at the base ensemble, so no
    measure-derivative term appears.  ``rh_path`` has shape (n+1, d_noise)
    shared across particles or (N, n+1, d_noise) per particle.
    """
    grid = ensemble.grid
    n = grid.n_steps
    dt = grid.dt
    t = grid.nodes
    x = ensemble.states
    n_paths, _, d = x.shape

    rh = np.asarray(rh_path, dtype=float)
    if rh.ndim == 2:
        rh = rh[None]
    y = np.zeros((n_paths, n + 1, d))
    for k in range(n):
        mu = EmpiricalMeasure(x[:, k, :])
        jac = drift.jacobian_apply(t[k], x[:, k, :], mu, y[:, k, :])
        dr = rh[:, k + 1, :] - rh[:, k, :]
        y[:, k + 1, :] = y[:, k, :] + jac * dt + dr @ diff.at(t[k]).T
        _check_finite(y[:, k + 1, :], "malliavin flow", k + 1)
    return y


# ---------------------------------------------------------------------------
# divergence integrand zeta = inverse transform of the direction path
# ---------------------------------------------------------------------------

@dataclass
class BismutIntegrand:
    """Per-particle divergence integrand and its building blocks.

    ``zeta`` (primary, split-expansion route) and ``zeta_generic`` hold
    node values with the first-cell average in slot 0 (the pointwise value
    diverges like t^(1/2-H)); ``zeta_cells`` holds the adapted per-cell
    values used by the Ito sum, where the singular local profile is
    averaged over each cell.  ``rh_path`` is the time-integrated direction
    (zero at t=0), per particle.
    """

    grid: TimeGrid
    hurst: float
    rho: np.ndarray = field(repr=False)
    rh_path: np.ndarray = field(repr=False)
    zeta: np.ndarray = field(repr=False)
    zeta_generic: np.ndarray = field(repr=False)
    zeta_cells: np.ndarray = field(repr=False)
    kind: str = "nondegenerate"
    route_gap: float = 0.0
    route_warning: bool = False
    extras: dict = field(default_factory=dict)

    def l2norm_sq(self) -> np.ndarray:
        """Per-path discrete int_0^T |zeta|^2 dt over the cell values."""
        return np.einsum("nkc,nkc->n", self.zeta_cells, self.zeta_cells) * self.grid.dt


ROUTE_GAP_TOL = 0.02


def _route2_matrix(grid: TimeGrid, hurst: float) -> np.ndarray:
    """Split four-term expansion as a matrix on integrand node values.

    Valid for constant sigma (the sigma-difference term vanishes); the
    time-dependent case is assembled separately.  Differs from the generic
    inverse-transform matrix in assembly (split local terms with the
    closed-form tail constant) and in quadrature orders, so agreement of
    the two routes is a real consistency check, not a tautology.
    """
    h = validate_hurst(hurst)
    key = (grid.key(), h)
    if key in _route2_cache:
        return _route2_cache[key]

    n = grid.n_steps
    dt = grid.dt
    t = grid.nodes
    inv = inverse_normalizer(h)
    kappa = singular_tail_constant(h)
    pref = (h - 0.5) / gamma_fn(1.5 - h) * inv

    z = np.zeros((n + 1, n + 1))
    # local terms T1 + T2: t^(1-2H) (1/(H-1/2) - kappa) v(t), times prefactor
    local = pref * (1.0 / (h - 0.5) - kappa)
    for k in range(1, n + 1):
        z[k, k] += local * t[k] ** (1.0 - 2.0 * h) * t[k] ** (h - 0.5)
    # T4: int (v(t)-v(s)) (t-s)^(-1/2-H) s^(1/2-H) ds, linear interpolant
    u4, w4 = gauss_legendre01(4)
    n_r2 = 12
    uj, wj = gauss_jacobi01(n_r2, 0.0, 0.5 - h)
    ud, wd = gauss_jacobi01(n_r2, 0.5 - h, 0.0)
    udd, wdd = gauss_jacobi01(n_r2, 0.5 - h, 0.5 - h)
    for k in range(1, n + 1):
        x = t[k]
        row_pref = pref * x ** (h - 0.5)
        for j in range(k):
            lo = t[j]
            first = j == 0
            diag = j == k - 1
            if first and diag:
                wq = wdd * dt ** (2.0 - 2.0 * h)
                tot = np.sum(wq) / dt
                z[k, k] += row_pref * tot
                z[k, k - 1] -= row_pref * tot
                continue
            if diag:
                s_q = lo + dt * ud
                wq = wd * dt ** (1.5 - h)
                tot = np.sum(s_q ** (0.5 - h) * wq) / dt
                z[k, k] += row_pref * tot
                z[k, k - 1] -= row_pref * tot
                continue
            if first:
                s_q = lo + dt * uj
                wq = wj * dt ** (1.5 - h) * (x - s_q) ** (-h - 0.5)
            else:
                s_q = lo + dt * u4
                wq = w4 * dt * s_q ** (0.5 - h) * (x - s_q) ** (-h - 0.5)
            hat = (s_q - lo) / dt
            z[k, k] += row_pref * np.sum(wq)
            z[k, j] -= row_pref * np.sum((1.0 - hat) * wq)
            z[k, j + 1] -= row_pref * np.sum(hat * wq)
    # first-cell average surrogate in row 0, same convention as the generic route
    z[0, 0] = power_rule_constant(h) * cell_profile_average(grid, 0.5 - h)[0]
    _route2_cache[key] = z
    return z


def _sigma_inverse_nodes(diff: DiffusionSpec, grid: TimeGrid) -> np.ndarray:
    """sigma^(-1) at the nodes, shape (n+1, dn, dn) or (1, dn, dn)."""
    if not callable(diff.sigma_inverse):
        return diff.inverse_at(0.0)[None]
    return np.stack([diff.inverse_at(tt) for tt in grid.nodes])


def _apply_sigma_inverse(si: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Apply per-node inverse matrices to (N, n+1, d) trajectories."""
    if si.shape[0] == 1:
        return np.einsum("ab,nkb->nka", si[0], rho)
    return np.einsum("kab,nkb->nka", si, rho)


def _sigma_difference_term(diff: DiffusionSpec, grid: TimeGrid, hurst: float, rho: np.ndarray) -> np.ndarray:
    """Third expansion term for time-dependent sigma:

        t^(H-1/2) int_0^t (sigma^(-1)(t) - sigma^(-1)(s)) (t-s)^(-1/2-H) s^(1/2-H) ds  . rho(t)

    Zero for constant sigma.  Assumes sigma^(-1) smooth enough that the
    difference quotient is bounded on the diagonal cell.
    """
    h = float(hurst)
    n = grid.n_steps
    dt = grid.dt
    t = grid.nodes
    inv = inverse_normalizer(h)
    pref = (h - 0.5) / gamma_fn(1.5 - h) * inv
    out = np.zeros_like(rho)
    u8, w8 = gauss_legendre01(8)
    ud, wd = gauss_jacobi01(12, 0.5 - h, 0.0)
    for k in range(1, n + 1):
        x = t[k]
        si_t = diff.inverse_at(x)
        acc = np.zeros_like(si_t)
        for j in range(k):
            lo = t[j]
            if j == k - 1:
                s_q = lo + dt * ud
                wq = wd * dt ** (1.5 - h)
                for s, w in zip(s_q, wq):
                    acc += (si_t - diff.inverse_at(s)) / (x - s) * s ** (0.5 - h) * w
            else:
                s_q = lo + dt * u8
                wq = w8 * dt
                for s, w in zip(s_q, wq):
                    acc += (si_t - diff.inverse_at(s)) * (x - s) ** (-h - 0.5) * s ** (0.5 - h) * w
        out[:, k, :] = pref * x ** (h - 0.5) * rho[:, k, :] @ acc.T
    return out


def _rho_difference_term(diff: DiffusionSpec, grid: TimeGrid, hurst: float, rho: np.ndarray) -> np.ndarray:
    """Fourth expansion term with sigma^(-1)(s) inside the integral:

        t^(H-1/2) int_0^t sigma^(-1)(s) (rho(t) - rho(s)) (t-s)^(-1/2-H) s^(1/2-H) ds,

    for time-dependent sigma (the constant case folds sigma into the
    integrand and uses the precomputed matrix instead).  rho is interpolated
    linearly; the diagonal cell uses the slope form.
    """
    h = float(hurst)
    n = grid.n_steps
    dt = grid.dt
    t = grid.nodes
    inv = inverse_normalizer(h)
    pref = (h - 0.5) / gamma_fn(1.5 - h) * inv
    out = np.zeros_like(rho)
    u8, w8 = gauss_legendre01(8)
    ud, wd = gauss_jacobi01(12, 0.5 - h, 0.0)
    uj, wj = gauss_jacobi01(12, 0.0, 0.5 - h)
    udd, wdd = gauss_jacobi01(12, 0.5 - h, 0.5 - h)
    for k in range(1, n + 1):
        x = t[k]
        acc = np.zeros_like(rho[:, 0, :])
        for j in range(k):
            lo = t[j]
            first = j == 0
            diag = j == k - 1
            if first and diag:
                s_q, wq = lo + dt * udd, wdd * dt ** (2.0 - 2.0 * h)
                slope = (rho[:, k, :] - rho[:, k - 1, :]) / dt
                for s, w in zip(s_q, wq):
                    acc += w * slope @ diff.inverse_at(s).T
                continue
            if diag:
                s_q, wq = lo + dt * ud, wd * dt ** (1.5 - h)
                slope = (rho[:, k, :] - rho[:, k - 1, :]) / dt
                for s, w in zip(s_q, wq):
                    acc += (w * s ** (0.5 - h)) * slope @ diff.inverse_at(s).T
                continue
            if first:
                s_q, wq = lo + dt * uj, wj * dt ** (1.5 - h) * (x - (lo + dt * uj)) ** (-h - 0.5)
            else:
                s_q = lo + dt * u8
                wq = w8 * dt * s_q ** (0.5 - h) * (x - s_q) ** (-h - 0.5)
            lam = (s_q - lo) / dt
            for s, w, la in zip(s_q, wq, lam):
                rho_s = (1.0 - la) * rho[:, j, :] + la * rho[:, j + 1, :]
                acc += w * (rho[:, k, :] - rho_s) @ diff.inverse_at(s).T
        out[:, k, :] = pref * x ** (h - 0.5) * acc
    return out


def _zeta_routes(
    grid: TimeGrid,
    hurst: float,
    rho: np.ndarray,
    diff: DiffusionSpec,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, float]:
    """Both zeta discretizations plus adapted cell values.

    rho: (N, n+1, dn) bracket trajectory; the integrand is v = sigma^(-1) rho.
    Returns (zeta_split, zeta_generic, zeta_cells, relative_l2_gap).
    """
    h = validate_hurst(hurst)
    si = _sigma_inverse_nodes(diff, grid)
    v = _apply_sigma_inverse(si, rho)

    z_gen = inverse_transform_matrix(grid, h)
    zeta_gen = np.einsum("kj,njc->nkc", z_gen, v)

    if callable(diff.sigma_inverse):
        # literal four-term split: local terms on v, rho- and sigma-difference
        # integrals with sigma^(-1)(s) kept inside
        c1_ = power_rule_constant(h)
        local = np.empty(grid.n_steps + 1)
        local[0] = c1_ * cell_profile_average(grid, 0.5 - h)[0]
        local[1:] = c1_ * grid.nodes[1:] ** (0.5 - h)
        zeta_r2 = local[None, :, None] * v
        zeta_r2 = zeta_r2 + _sigma_difference_term(diff, grid, h, rho)
        zeta_r2 = zeta_r2 + _rho_difference_term(diff, grid, h, rho)
    else:
        z_r2 = _route2_matrix(grid, h)
        zeta_r2 = np.einsum("kj,njc->nkc", z_r2, v)

    # adapted cell values: swap the pointwise singular local profile for a
    # per-cell representative, keeping the left-node integrand value.  Cell 0
    # uses the L2 projection of the t^(1/2-H) profile, matching the first
    # column of the Volterra weights so the discrete pairing E[B^H delta]
    # reproduces the kernel integral there; later cells use plain averages.
    c1 = power_rule_constant(h)
    t = grid.nodes
    dt = grid.dt
    prof_repr = cell_profile_average(grid, 0.5 - h)
    prof_repr[0] = dt ** (0.5 - h) / np.sqrt(2.0 - 2.0 * h)
    node_prof = np.empty(grid.n_steps)
    node_prof[0] = cell_profile_average(grid, 0.5 - h)[0]  # what row 0 holds
    node_prof[1:] = t[1:-1] ** (0.5 - h)
    adjust = prof_repr - node_prof
    zeta_cells = zeta_r2[:, :-1, :] + c1 * adjust[None, :, None] * v[:, :-1, :]

    num = np.sqrt(np.mean(np.sum((zeta_r2[:, 1:, :] - zeta_gen[:, 1:, :]) ** 2, axis=2)))
    den = np.sqrt(np.mean(np.sum(zeta_gen[:, 1:, :] ** 2, axis=2)))
    gap = float(num / den) if den > 0 else 0.0
    return zeta_r2, zeta_gen, zeta_cells, gap


def _integrate_leftpoint(grid: TimeGrid, v: np.ndarray) -> np.ndarray:
    """Cumulative left-point integral of node values, zero at t=0."""
    out = np.zeros_like(v)
    np.cumsum(v[:, :-1, :] * grid.dt, axis=1, out=out[:, 1:, :])
    return out


def build_h_nondegenerate(
    ensemble: ParticleEnsemble,
    variation: VariationEnsemble,
    drift: DriftSpec,
    diff: DiffusionSpec,
    hurst: float,
) -> BismutIntegrand:
    """Bismut direction for the invertible-diffusion model.

    The integrated direction satisfies (d/dt) rh = sigma^(-1)(t) rho(t) with
    rho(t) = Gamma_t / T + (t/T) * ensemble-averaged measure-derivative
    pairing; zeta is the inverse kernel transform of rh, evaluated along
    the split expansion and the generic route.
    """
    if diff.sigma_inverse is None:
        raise ValueError("non-degenerate weight needs sigma_inverse")
    grid = ensemble.grid
    diff.check_inverse([0.0, grid.horizon / 2.0, grid.horizon])
    horizon = grid.horizon
    t = grid.nodes[None, :, None]
    mf = np.broadcast_to(variation.mean_field, variation.gammas.shape)
    rho = variation.gammas / horizon + (t / horizon) * mf
    zeta, zeta_gen, zeta_cells, gap = _zeta_routes(grid, hurst, rho, diff)
    si = _sigma_inverse_nodes(diff, grid)
    rh = _integrate_leftpoint(grid, _apply_sigma_inverse(si, rho))
    return BismutIntegrand(
        grid=grid,
        hurst=hurst,
        rho=rho,
        rh_path=rh,
        zeta=zeta,
        zeta_generic=zeta_gen,
        zeta_cells=zeta_cells,
        kind="nondegenerate",
        route_gap=gap,
        route_warning=gap > ROUTE_GAP_TOL,
    )


def skorokhod_delta(bi: BismutIntegrand, noise) -> np.ndarray:
    """Per-path divergence: left-point Ito sum of <zeta, dW>."""
    if noise.grid.key() != bi.grid.key():
        from .grid import GridMismatchError

        raise GridMismatchError("integrand and noise grids differ")
    dw = noise.increments()
    return np.einsum("nkc,nkc->n", bi.zeta_cells, dw)


# ---------------------------------------------------------------------------
# degenerate (hypoelliptic block) model
# ---------------------------------------------------------------------------

class GramianError(ValueError):
    pass


@dataclass
class DegenerateModel:
    """Two-block system: dX1 = (A X1 + B X2) dt, dX2 = b2 dt + sigma dB^H.

    ``drift`` is the full (m+l)-dimensional drift spec (used by the solver
    and the variation flow); ``b2_grad``/``b2_lions`` expose the noisy
    block's derivatives separately for the weight construction.  ``sigma``
    is the full (m+l, l) diffusion spec and ``sigma_ll`` the invertible
    l x l block with its inverse.
    """

    a_mat: np.ndarray
    b_mat: np.ndarray
    drift: DriftSpec
    sigma: DiffusionSpec
    sigma_ll: DiffusionSpec
    b2_grad: Callable | None = None
    b2_lions: Callable | None = None
    lions_x_dependent: bool = False
    name: str = "degenerate"

    def __post_init__(self):
        self.a_mat = np.atleast_2d(np.asarray(self.a_mat, dtype=float))
        self.b_mat = np.atleast_2d(np.asarray(self.b_mat, dtype=float))
        m, l = self.b_mat.shape
        if self.a_mat.shape != (m, m):
            raise ValueError("A must be m x m matching B's row count")
        if not kalman_condition_holds(self.a_mat, self.b_mat):
            raise ValueError("Kalman rank condition fails: rank[B, AB, ...] < m")

    @property
    def m(self) -> int:
        return self.b_mat.shape[0]

    @property
    def l(self) -> int:
        return self.b_mat.shape[1]


def kalman_condition_holds(a: np.ndarray, b: np.ndarray, rtol: float = 1e-8) -> bool:
    """Rank[B, AB, ..., A^(m-1) B] == m, judged on singular values."""
    m = a.shape[0]
    blocks = [b]
    for _ in range(m - 1):
        blocks.append(a @ blocks[-1])
    stacked = np.hstack(blocks)
    sv = np.linalg.svd(stacked, compute_uv=False)
    return bool(sv.min() > rtol * sv.max())


def _composite_rule(grid: TimeGrid, per_cell: int = 4):
    u, w = gauss_legendre01(per_cell)
    dt = grid.dt
    s = (grid.nodes[:-1, None] + dt * u[None, :]).ravel()
    wt = np.tile(w * dt, grid.n_steps)
    return s, wt


def steering_gramian(model: DegenerateModel, grid: TimeGrid) -> dict:
    """Weighted controllability Gramian and companion integrals.

    U = int_0^T s (T-s)/T^2 e^((T-s)A) B B* e^((T-s)A*) ds computed with a
    composite per-cell Gauss rule; the same rule later evaluates the first
    block of the steering path so that g(T) = 0 holds to rounding by
    construction rather than up to quadrature error.
    """
    a, b = model.a_mat, model.b_mat
    horizon = grid.horizon
    s, w = _composite_rule(grid)
    eb = np.stack([expm((horizon - si) * a) @ b for si in s])  # (nq, m, l)
    u_mat = np.einsum("q,qil,qjl->ij", w * s * (horizon - s) / horizon ** 2, eb, eb)
    v_mat = np.einsum("q,qil->il", w * (horizon - s) / horizon, eb)
    cond = float(np.linalg.cond(u_mat))
    if cond > 1e12:
        raise GramianError(
            f"steering Gramian condition number {cond:.2e} exceeds 1e12; "
            "the Gramian lower bound rho(t) > 0 is numerically void"
        )
    eig_min = float(np.linalg.eigvalsh(u_mat).min())
    return {
        "u_mat": u_mat,
        "v_mat": v_mat,
        "quad_s": s,
        "quad_w": w,
        "exp_b": eb,
        "cond": cond,
        "eig_min": eig_min,
    }


def build_h_degenerate(
    model: DegenerateModel,
    ensemble: ParticleEnsemble,
    variation: VariationEnsemble,
    hurst: float,
) -> BismutIntegrand:
    """Bismut direction for the two-block degenerate model (base point 0).

    Builds the steering pair (g1, g2) that transports the initial variation
    to zero at time T through the weighted Gramian, then the integrand

        nu(t) = sigma_ll^(-1)(t) [ grad b2 . g(t) + avg measure-derivative
                pairing with Gamma - (g2)'(t) ],

    with (g2)' in closed form (polynomial times matrix exponential), and
    finally zeta along the same two routes as the non-degenerate case.
    """
    m, l = model.m, model.l
    grid = ensemble.grid
    horizon = grid.horizon
    n = grid.n_steps
    t = grid.nodes
    a, b = model.a_mat, model.b_mat
    gram = steering_gramian(model, grid)
    u_mat, v_mat = gram["u_mat"], gram["v_mat"]

    p = variation.gammas[:, 0, :]  # phi(X_0), (N, m+l)
    p1, p2 = p[:, :m], p[:, m:]
    n_paths = p.shape[0]

    e_ta = expm(horizon * a)
    q_vec = np.linalg.solve(u_mat, (p1 @ e_ta.T + p2 @ v_mat.T).T).T  # (N, m)

    def g2_at(times: np.ndarray) -> np.ndarray:
        """g2 along arbitrary times, (N, len(times), l)."""
        alpha = (horizon - times) / horizon
        beta = times * (horizon - times) / horizon ** 2
        mt = np.stack([b.T @ expm((horizon - s) * a.T) for s in times])  # (K, l, m)
        return (
            alpha[None, :, None] * p2[:, None, :]
            - beta[None, :, None] * np.einsum("kli,ni->nkl", mt, q_vec)
        )

    def g2_prime_at(times: np.ndarray) -> np.ndarray:
        dbeta = (horizon - 2.0 * times) / horizon ** 2
        beta = times * (horizon - times) / horizon ** 2
        mt = np.stack([b.T @ expm((horizon - s) * a.T) for s in times])
        mta = np.einsum("kli,ij->klj", mt, a.T)
        core = dbeta[:, None, None] * mt - beta[:, None, None] * mta
        return -p2[:, None, :] / horizon - np.einsum("kli,ni->nkl", core, q_vec)

    g2_nodes = g2_at(t)
    g2p_nodes = g2_prime_at(t)

    # g1 via the same composite rule as the Gramian, so g1(T) = 0 exactly
    s_q, w_q = gram["quad_s"], gram["quad_w"]
    g2_quad = g2_at(s_q)  # (N, nq, l)
    p_q = np.stack([expm(-sq * a) @ b for sq in s_q])  # (nq, m, l)
    contrib = np.einsum("q,qml,nql->nqm", w_q, p_q, g2_quad)
    per_cell = contrib.reshape(n_paths, n, -1, m).sum(axis=2)
    cum = np.concatenate(
        [np.zeros((n_paths, 1, m)), np.cumsum(per_cell, axis=1)], axis=1
    )
    e_ta_nodes = np.stack([expm(tk * a) for tk in t])  # (n+1, m, m)
    g1_nodes = np.einsum("kij,nkj->nki", e_ta_nodes, p1[:, None, :] + cum)

    g_nodes = np.concatenate([g1_nodes, g2_nodes], axis=2)  # (N, n+1, m+l)

    # bracket trajectory rho(t) = grad b2 . g + mean-field pairing - g2'
    x = ensemble.states
    rho = np.empty((n_paths, n + 1, l))
    for k in range(n + 1):
        mu = EmpiricalMeasure(x[:, k, :])
        if model.b2_grad is not None:
            gb = np.asarray(model.b2_grad(t[k], x[:, k, :], mu), dtype=float)
            if gb.ndim == 2:
                grad_term = g_nodes[:, k, :] @ gb.T
            else:
                grad_term = np.einsum("nab,nb->na", gb, g_nodes[:, k, :])
        else:
            grad_term = np.zeros((n_paths, l))
        if model.b2_lions is not None:
            if model.lions_x_dependent:
                dl = np.asarray(model.b2_lions(t[k], x[:, k, :], mu, x[:, k, :]), dtype=float)
                mf = np.einsum("ijab,jb->ia", dl, variation.gammas[:, k, :]) / n_paths
            else:
                dl = np.asarray(model.b2_lions(t[k], None, mu, x[:, k, :]), dtype=float)
                mf = np.broadcast_to(
                    np.einsum("jab,jb->a", dl, variation.gammas[:, k, :]) / n_paths,
                    (n_paths, l),
                )
        else:
            mf = np.zeros((n_paths, l))
        rho[:, k, :] = grad_term + mf - g2p_nodes[:, k, :]
    _check_finite(rho.reshape(n_paths, -1), "degenerate integrand", -1)

    zeta, zeta_gen, zeta_cells, gap = _zeta_routes(grid, hurst, rho, model.sigma_ll)
    si = _sigma_inverse_nodes(model.sigma_ll, grid)
    rh = _integrate_leftpoint(grid, _apply_sigma_inverse(si, rho))
    return BismutIntegrand(
        grid=grid,
        hurst=hurst,
        rho=rho,
        rh_path=rh,
        zeta=zeta,
        zeta_generic=zeta_gen,
        zeta_cells=zeta_cells,
        kind="degenerate",
        route_gap=gap,
        route_warning=gap > ROUTE_GAP_TOL,
        extras={
            "g_nodes": g_nodes,
            "g2_prime": g2p_nodes,
            "gramian": gram["u_mat"],
            "gramian_eig_min": gram["eig_min"],
            "gramian_cond": gram["cond"],
        },
    )


def dump_zeta_csv(bi: BismutIntegrand, particle: int, stream) -> None:
    """Diagnostic dump of one particle's integrand: t, zeta_1..zeta_d."""
    d = bi.zeta.shape[2]
    stream.write(",".join(["t"] + [f"zeta_{j + 1}" for j in range(d)]) + "\n")
    for k, tk in enumerate(bi.grid.nodes):
        row = [f"{tk:.12g}"] + [f"{bi.zeta[particle, k, j]:.17g}" for j in range(d)]
        stream.write(",".join(row) + "\n")
