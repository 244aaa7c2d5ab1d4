"""Fractional Riemann-Liouville/Weyl operators and the fBm Volterra kernel.

All operators act on node values of a :class:`~mvfbm.grid.GridFunction` and
are assembled as dense lower-triangular weight matrices.  Singular factors
((x-y)^(a-1) near the diagonal, s^(1/2-H) near the origin) are never sampled
pointwise; each cell is integrated with either exact power moments against a
piecewise-linear interpolant or a Gauss-Jacobi rule that absorbs the
singular weight.  Matrices depend only on (horizon, n_steps, order) and are
cached.

Conventions for the kernel operators (H in (1/2, 1) throughout):

* ``volterra_kernel``   K(t, s) = c_H s^(1/2-H) int_s^t (u-s)^(H-3/2) u^(H-1/2) du
* ``forward_transform``     h(t) = int_0^t K(t, s) f(s) ds
* ``inverse_transform``     recovers f from h via s^(H-1/2) D^(H-1/2) [s^(1/2-H) h']
* ``adjoint_transform``     (K* psi)(s) = K(T, s) psi(s) + int_s^T (psi(r)-psi(s)) dK/dr dr
"""

from __future__ import annotations

import numpy as np
from scipy.special import beta as beta_fn
from scipy.special import gamma as gamma_fn

from ._quad import gauss_jacobi01, gauss_legendre01
from .grid import GridFunction, TimeGrid, validate_hurst

# quadrature orders: interior cells are smooth, singular cells get more nodes
N_GAUSS_CELL = 8
N_GAUSS_SING = 16
N_GAUSS_KERNEL = 24

_matrix_cache: dict[tuple, np.ndarray] = {}


# ---------------------------------------------------------------------------
# closed-form constants
# ---------------------------------------------------------------------------

def kernel_normalizer(hurst: float) -> float:
    """Normalizing constant c_H = sqrt(H (2H-1) / B(2-2H, H-1/2))."""
    h = validate_hurst(hurst)
    return np.sqrt(h * (2.0 * h - 1.0) / beta_fn(2.0 - 2.0 * h, h - 0.5))


def inverse_normalizer(hurst: float) -> float:
    """1 / (c_H Gamma(H-1/2)).

    Swapping the integration order in h = int_0^t K(t,s) f(s) ds shows the
    forward kernel operator factors as

        c_H Gamma(H-1/2) * I^1 [ u^(H-1/2) I^(H-1/2) ( u^(1/2-H) f ) ](t),

    so the genuine inverse of the integral operator is the fractional
    composition s^(H-1/2) D^(H-1/2) [s^(1/2-H) h'] scaled by this constant.
    Omitting it breaks every forward/inverse round trip (and the divergence
    integrand of the sensitivity weights) by the factor c_H Gamma(H-1/2).
    """
    h = validate_hurst(hurst)
    return 1.0 / (kernel_normalizer(h) * gamma_fn(h - 0.5))


def power_rule_constant(hurst: float) -> float:
    """Exact inverse-transform output for unit slope.

    A linear h (constant integrand c) maps to c * this * s^(1/2-H); the
    value is Gamma(3/2-H) / Gamma(2-2H) / (c_H Gamma(H-1/2)), combining the
    fractional power rule with the operator normalization.
    """
    h = validate_hurst(hurst)
    return gamma_fn(1.5 - h) / gamma_fn(2.0 - 2.0 * h) * inverse_normalizer(h)


def singular_tail_constant(hurst: float) -> float:
    """kappa_H = int_0^1 (r^(1/2-H) - 1) (1-r)^(-1/2-H) dr.

    Each piece diverges at r=1; the difference converges and equals the
    analytic continuation Gamma(3/2-H) Gamma(1/2-H) / Gamma(2-2H) + 1/(H-1/2)
    (Gamma(1/2-H) is negative here, so kappa_H > 0).  Used by the split
    four-term evaluation of the inverse transform, where
    int_0^t (t^(1/2-H) - s^(1/2-H)) (t-s)^(-1/2-H) ds = -kappa_H t^(1-2H).
    """
    h = validate_hurst(hurst)
    return gamma_fn(1.5 - h) * gamma_fn(0.5 - h) / gamma_fn(2.0 - 2.0 * h) + 1.0 / (h - 0.5)


def fbm_covariance(t, s, hurst: float):
    """R_H(t, s) = (t^2H + s^2H - |t-s|^2H) / 2, vectorized."""
    h = validate_hurst(hurst)
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    return 0.5 * (t ** (2 * h) + s ** (2 * h) - np.abs(t - s) ** (2 * h))


def cell_profile_average(grid: TimeGrid, power: float) -> np.ndarray:
    """Cell averages of s^power over [t_k, t_k+1], k = 0..n-1.

    Exact moments; used wherever a left-point evaluation of an s^power
    profile would misrepresent the first cells.
    """
    t = grid.nodes
    p1 = power + 1.0
    return (t[1:] ** p1 - t[:-1] ** p1) / (p1 * grid.dt)


# ---------------------------------------------------------------------------
# Riemann-Liouville integral (left-sided), product integration
# ---------------------------------------------------------------------------

def frac_integral_matrix(grid: TimeGrid, order: float) -> np.ndarray:
    """Lower-triangular W with (I^a f)(t_k) = sum_j W[k, j] f(t_j)."""
    a = float(order)
    if not 0.0 < a <= 1.0:
        raise ValueError(f"integral order must be in (0, 1], got {a}")
    key = ("rlint", grid.key(), a)
    if key in _matrix_cache:
        return _matrix_cache[key]

    n = grid.n_steps
    dt = grid.dt
    lags = np.arange(1, n + 1, dtype=float)
    # exact moments of (x-y)^(a-1) and (y - t_j)(x-y)^(a-1) over one cell,
    # x - t_j = lag*dt
    m0 = dt ** a * (lags ** a - (lags - 1.0) ** a) / a
    m1 = lags * dt * m0 - dt ** (a + 1.0) * (lags ** (a + 1.0) - (lags - 1.0) ** (a + 1.0)) / (a + 1.0)
    left = m0 - m1 / dt
    right = m1 / dt

    w = np.zeros((n + 1, n + 1))
    for lag in range(1, n + 1):
        ks = np.arange(lag, n + 1)
        w[ks, ks - lag] += left[lag - 1]
        w[ks, ks - lag + 1] += right[lag - 1]
    w /= gamma_fn(a)
    _matrix_cache[key] = w
    return w


def frac_integral(f: GridFunction, order: float) -> GridFunction:
    """Left-sided fractional integral of ``f`` of the given order."""
    if not np.all(np.isfinite(f.values)):
        raise ValueError("integrand contains non-finite values")
    w = frac_integral_matrix(f.grid, order)
    return GridFunction(f.grid, np.tensordot(w, f.values, axes=(1, 0)))


# ---------------------------------------------------------------------------
# Weyl (Marchaud-form) derivative, left-sided
# ---------------------------------------------------------------------------

def weyl_derivative_matrix(grid: TimeGrid, order: float) -> np.ndarray:
    """Lower-triangular W with (D^a f)(t_k) = sum_j W[k, j] f(t_j), k >= 1.

    Row 0 is zero: the derivative at x = 0 only exists when f(0) = 0, in
    which case it vanishes in this discretization.  The difference quotient
    (f(x) - f(y)) / (x-y)^(a+1) is integrated cell-exactly for the
    piecewise-linear interpolant; on the cell touching y = x the difference
    reduces to slope * (x-y), which kills the non-integrable singularity.
    """
    a = float(order)
    if not 0.0 < a < 1.0:
        raise ValueError(f"derivative order must be in (0, 1), got {a}")
    key = ("weyl", grid.key(), a)
    if key in _matrix_cache:
        return _matrix_cache[key]

    n = grid.n_steps
    dt = grid.dt
    t = grid.nodes
    w = np.zeros((n + 1, n + 1))

    # off-diagonal cells, lag >= 2: exact moments of u^(-a-1), u = x - y
    lags = np.arange(2, n + 1, dtype=float)
    p0 = dt ** (-a) * ((lags - 1.0) ** (-a) - lags ** (-a)) / a
    p1 = lags * dt * p0 - dt ** (1.0 - a) * (lags ** (1.0 - a) - (lags - 1.0) ** (1.0 - a)) / (1.0 - a)
    for lag in range(2, n + 1):
        ks = np.arange(lag, n + 1)
        c0 = p0[lag - 2]
        c1 = p1[lag - 2]
        w[ks, ks] += c0
        w[ks, ks - lag] -= c0 - c1 / dt
        w[ks, ks - lag + 1] -= c1 / dt

    # diagonal cell: integrand slope * (x-y)^(-a), exact moment
    diag = dt ** (-a) / (1.0 - a)
    ks = np.arange(1, n + 1)
    w[ks, ks] += diag
    w[ks, ks - 1] -= diag

    w *= a
    w[ks, ks] += t[ks] ** (-a)
    w /= gamma_fn(1.0 - a)
    _matrix_cache[key] = w
    return w


def weyl_derivative(f: GridFunction, order: float) -> GridFunction:
    """Left-sided fractional derivative of ``f`` in Weyl difference form.

    The node-0 value is set to 0, which is the correct limit when f(0) = 0;
    for f(0) != 0 the derivative diverges at the origin and callers should
    ignore that node.
    """
    w = weyl_derivative_matrix(f.grid, order)
    return GridFunction(f.grid, np.tensordot(w, f.values, axes=(1, 0)))


# ---------------------------------------------------------------------------
# Volterra kernel of fBm (H > 1/2)
# ---------------------------------------------------------------------------

def _kernel_profile(s, t, hurst: float):
    """Smooth factor G(s, t) = int_0^1 w^(H-3/2) (s + (t-s) w)^(H-1/2) dw.

    The w-singularity is integrable and absorbed by a Gauss-Jacobi rule, so
    the returned array is a smooth function of (s, t) for 0 <= s < t.
    """
    h = float(hurst)
    u, wq = gauss_jacobi01(N_GAUSS_KERNEL, 0.0, h - 1.5)
    s = np.asarray(s, dtype=float)[..., None]
    t = np.asarray(t, dtype=float)[..., None]
    vals = (s + (t - s) * u) ** (h - 0.5)
    return vals @ wq


def volterra_kernel(t, s, hurst: float):
    """K_H(t, s) for 0 < s < t, vectorized over broadcastable arrays."""
    h = validate_hurst(hurst)
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(s <= 0.0) or np.any(s >= t):
        raise ValueError("kernel requires 0 < s < t")
    c = kernel_normalizer(h)
    return c * s ** (0.5 - h) * (t - s) ** (h - 0.5) * _kernel_profile(s, t, h)


def volterra_kernel_rate(r, s, hurst: float):
    """dK_H/dr (r, s) = c_H (r/s)^(H-1/2) (r-s)^(H-3/2), for 0 < s < r."""
    h = validate_hurst(hurst)
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    c = kernel_normalizer(h)
    return c * (r / s) ** (h - 0.5) * (r - s) ** (h - 1.5)


def _cell_rule(grid: TimeGrid, j: int, k: int, hurst: float):
    """Quadrature nodes/weights on cell j targeting node k.

    Returns (s_q, w_q, sing) where the weights absorb whichever of the
    endpoint singular factors s^(1/2-H) (cell 0) and (t_k - s)^(H-1/2)
    (cell k-1) is active; ``sing`` flags what was absorbed so callers know
    which factors to leave out of the smooth evaluation.
    """
    h = float(hurst)
    dt = grid.dt
    lo = j * dt
    first = j == 0
    diag = j == k - 1
    if first and diag:
        # (t1-s)^(H-1/2) s^(1/2-H) ds over [0, dt]: exponents cancel, scale dt
        u, w = gauss_jacobi01(N_GAUSS_SING, h - 0.5, 0.5 - h)
        return lo + dt * u, w * dt, "both"
    if first:
        u, w = gauss_jacobi01(N_GAUSS_SING, 0.0, 0.5 - h)
        return lo + dt * u, w * dt ** (1.5 - h), "left"
    if diag:
        u, w = gauss_jacobi01(N_GAUSS_SING, h - 0.5, 0.0)
        return lo + dt * u, w * dt ** (h + 0.5), "right"
    u, w = gauss_legendre01(N_GAUSS_CELL)
    return lo + dt * u, w * dt, "none"


def volterra_weight_matrix(grid: TimeGrid, hurst: float) -> np.ndarray:
    """Cell weights V with B^H(t_k) ~ sum_j V[k, j] dW_j (dW_j over cell j).

    V[k, j] is the cell average of K_H(t_k, .) for every cell except the
    first.  On cell 0 the kernel behaves like s^(1/2-H) and its plain
    average systematically under-weights the L2 mass (badly so for large H),
    which would bias all node variances; the first column instead projects
    the kernel onto that profile, which reproduces cell-0 contributions to
    every covariance pair to leading order.
    """
    h = validate_hurst(hurst)
    key = ("volterra", grid.key(), h)
    if key in _matrix_cache:
        return _matrix_cache[key]

    n = grid.n_steps
    dt = grid.dt
    t = grid.nodes
    c = kernel_normalizer(h)
    v = np.zeros((n + 1, n))

    for j in range(n):
        # interior targets share the cell rule; vectorize over k
        s_q, w_q, _ = _cell_rule(grid, j, j + 2, h) if j + 2 <= n else (None, None, None)
        if s_q is not None:
            ks = np.arange(j + 2, n + 1)
            if j == 0:
                smooth = c * (t[ks, None] - s_q) ** (h - 0.5) * _kernel_profile(
                    np.broadcast_to(s_q, (ks.size, s_q.size)), t[ks, None], h
                )
            else:
                smooth = volterra_kernel(t[ks, None], s_q[None, :], h)
            v[ks, j] = (smooth @ w_q) / dt
        # diagonal target k = j + 1
        k = j + 1
        s_q, w_q, sing = _cell_rule(grid, j, k, h)
        prof = _kernel_profile(s_q, np.full_like(s_q, t[k]), h)
        if sing == "both":
            smooth = c * prof
        elif sing == "right":
            smooth = c * s_q ** (0.5 - h) * prof
        else:
            smooth = volterra_kernel(np.full_like(s_q, t[k]), s_q, h)
        v[k, j] = (smooth @ w_q) / dt

    # first column: L2 projection onto the s^(1/2-H) profile
    norm2 = dt ** (2.0 - 2.0 * h) / (2.0 - 2.0 * h)  # int_0^dt s^(1-2H) ds
    u, w = gauss_jacobi01(N_GAUSS_SING, 0.0, 1.0 - 2.0 * h)
    s_q = dt * u
    w_q = w * dt ** (2.0 - 2.0 * h)
    ks = np.arange(2, n + 1)
    smooth = c * (t[ks, None] - s_q) ** (h - 0.5) * _kernel_profile(
        np.broadcast_to(s_q, (ks.size, s_q.size)), t[ks, None], h
    )
    v[ks, 0] = (smooth @ w_q) / np.sqrt(norm2 * dt)
    # k = 1: the diagonal factor joins in
    u, w = gauss_jacobi01(N_GAUSS_SING, h - 0.5, 1.0 - 2.0 * h)
    s_q = dt * u
    w_q = w * dt ** (h - 0.5) * dt ** (1.0 - 2.0 * h) * dt
    prof = _kernel_profile(s_q, np.full_like(s_q, t[1]), h)
    v[1, 0] = (c * prof @ w_q) / np.sqrt(norm2 * dt)

    _matrix_cache[key] = v
    return v


def forward_transform_matrix(grid: TimeGrid, hurst: float) -> np.ndarray:
    """M with (K_H f)(t_k) = sum_j M[k, j] f(t_j), f piecewise linear."""
    h = validate_hurst(hurst)
    key = ("fwd", grid.key(), h)
    if key in _matrix_cache:
        return _matrix_cache[key]

    n = grid.n_steps
    dt = grid.dt
    t = grid.nodes
    c = kernel_normalizer(h)
    m = np.zeros((n + 1, n + 1))

    for k in range(1, n + 1):
        for j in range(k):
            s_q, w_q, sing = _cell_rule(grid, j, k, h)
            if sing == "both":
                smooth = c * _kernel_profile(s_q, np.full_like(s_q, t[k]), h)
            elif sing == "left":
                smooth = c * (t[k] - s_q) ** (h - 0.5) * _kernel_profile(
                    s_q, np.full_like(s_q, t[k]), h
                )
            elif sing == "right":
                smooth = c * s_q ** (0.5 - h) * _kernel_profile(
                    s_q, np.full_like(s_q, t[k]), h
                )
            else:
                smooth = volterra_kernel(np.full_like(s_q, t[k]), s_q, h)
            hat = (s_q - t[j]) / dt
            m[k, j] += np.sum(smooth * (1.0 - hat) * w_q)
            m[k, j + 1] += np.sum(smooth * hat * w_q)
    _matrix_cache[key] = m
    return m


def forward_transform(f: GridFunction, hurst: float) -> GridFunction:
    """h(t) = int_0^t K_H(t, s) f(s) ds on the grid."""
    m = forward_transform_matrix(f.grid, hurst)
    return GridFunction(f.grid, np.tensordot(m, f.values, axes=(1, 0)))


def forward_rate_matrix(grid: TimeGrid, hurst: float) -> np.ndarray:
    """M' with h'(t_k) = sum_j M'[k, j] f(t_j) for h = K_H f.

    Differentiating under the integral (K_H(t, t) = 0 for H > 1/2) gives
    h'(t) = int_0^t dK/dt (t, s) f(s) ds with the (t-s)^(H-3/2) singular
    rate kernel; the diagonal cell uses the matching Jacobi rule.
    """
    h = validate_hurst(hurst)
    key = ("fwdrate", grid.key(), h)
    if key in _matrix_cache:
        return _matrix_cache[key]

    n = grid.n_steps
    dt = grid.dt
    t = grid.nodes
    c = kernel_normalizer(h)
    m = np.zeros((n + 1, n + 1))

    for k in range(1, n + 1):
        tk = t[k]
        for j in range(k):
            lo = t[j]
            first = j == 0
            diag = j == k - 1
            if first and diag:
                u, w = gauss_jacobi01(N_GAUSS_SING, h - 1.5, 0.5 - h)
                s_q = lo + dt * u
                w_q = w * dt ** ((h - 1.5) + (0.5 - h) + 1.0)
                vals = np.full_like(s_q, c * tk ** (h - 0.5))
            elif diag:
                u, w = gauss_jacobi01(N_GAUSS_SING, h - 1.5, 0.0)
                s_q = lo + dt * u
                w_q = w * dt ** (h - 0.5)
                vals = c * (tk / s_q) ** (h - 0.5)
            elif first:
                u, w = gauss_jacobi01(N_GAUSS_SING, 0.0, 0.5 - h)
                s_q = lo + dt * u
                w_q = w * dt ** (1.5 - h)
                vals = c * tk ** (h - 0.5) * (tk - s_q) ** (h - 1.5)
            else:
                u, w = gauss_legendre01(N_GAUSS_CELL)
                s_q = lo + dt * u
                w_q = w * dt
                vals = volterra_kernel_rate(tk, s_q, h)
            hat = (s_q - lo) / dt
            m[k, j] += np.sum(vals * (1.0 - hat) * w_q)
            m[k, j + 1] += np.sum(vals * hat * w_q)
    _matrix_cache[key] = m
    return m


# ---------------------------------------------------------------------------
# inverse transform  zeta = s^(H-1/2) D^(H-1/2) [ s^(1/2-H) h' ]
# ---------------------------------------------------------------------------

def inverse_transform_matrix(grid: TimeGrid, hurst: float, cells: bool = False) -> np.ndarray:
    """Z mapping integrand node values v_j = h'(t_j) to zeta values.

    Splitting u(y) = y^(1/2-H) v(y) inside the Weyl difference form and
    integrating the pure-power difference in closed form leaves

        zeta(x) = c1 x^(1/2-H) v(x)
                + c2 x^(H-1/2) int_0^x y^(1/2-H) (v(x)-v(y)) (x-y)^(-H-1/2) dy

    with c1 = Gamma(3/2-H)/Gamma(2-2H) and c2 = (H-1/2)/Gamma(3/2-H).  The
    remaining integral is regular under product integration (the diagonal
    cell reduces to slope * (x-y)^(1/2-H)).

    With ``cells=False`` row k (k >= 1) evaluates zeta at node t_k and row 0
    holds the first-cell average (the pointwise value diverges at 0).  With
    ``cells=True`` the matrix has n rows; row k represents cell [t_k, t_k+1]
    by averaging the singular local profile over the cell while keeping the
    adapted left-node value of v, which is what the Ito sum against dW and
    the discrete L2 norm need.
    """
    h = validate_hurst(hurst)
    key = ("inv", grid.key(), h, bool(cells))
    if key in _matrix_cache:
        return _matrix_cache[key]

    n = grid.n_steps
    dt = grid.dt
    t = grid.nodes
    c1 = power_rule_constant(h)
    c2 = (h - 0.5) / gamma_fn(1.5 - h) * inverse_normalizer(h)

    n_rows = n if cells else n + 1
    z = np.zeros((n_rows, n + 1))

    if cells:
        local = c1 * cell_profile_average(grid, 0.5 - h)  # rows 0..n-1
        rows = range(n)
    else:
        local = np.empty(n + 1)
        local[0] = c1 * cell_profile_average(grid, 0.5 - h)[0]
        local[1:] = c1 * t[1:] ** (0.5 - h)
        rows = range(n + 1)

    for k in rows:
        z[k, k] += local[k]
        if k == 0:
            continue
        x = t[k]
        pref = c2 * x ** (h - 0.5)
        for j in range(k):
            lo = t[j]
            first = j == 0
            diag = j == k - 1
            if first and diag:
                u, w = gauss_jacobi01(N_GAUSS_SING, 0.5 - h, 0.5 - h)
                w_q = w * dt ** (2.0 - 2.0 * h)
                slope_int = np.sum(w_q)
                z[k, k] += pref * slope_int / dt
                z[k, k - 1] -= pref * slope_int / dt
                continue
            if diag:
                u, w = gauss_jacobi01(N_GAUSS_SING, 0.5 - h, 0.0)
                s_q = lo + dt * u
                w_q = w * dt ** (1.5 - h)
                slope_int = np.sum(s_q ** (0.5 - h) * w_q)
                z[k, k] += pref * slope_int / dt
                z[k, k - 1] -= pref * slope_int / dt
                continue
            if first:
                u, w = gauss_jacobi01(N_GAUSS_SING, 0.0, 0.5 - h)
                s_q = lo + dt * u
                w_q = w * dt ** (1.5 - h) * (x - s_q) ** (-h - 0.5)
            else:
                u, w = gauss_legendre01(N_GAUSS_CELL)
                s_q = lo + dt * u
                w_q = w * dt * s_q ** (0.5 - h) * (x - s_q) ** (-h - 0.5)
            tot = np.sum(w_q)
            hat = (s_q - lo) / dt
            z[k, k] += pref * tot
            z[k, j] -= pref * np.sum((1.0 - hat) * w_q)
            z[k, j + 1] -= pref * np.sum(hat * w_q)

    _matrix_cache[key] = z
    return z


def integrand_from_slopes(h: GridFunction) -> np.ndarray:
    """Forward-difference slopes of h, extended to all n+1 nodes.

    When h was accumulated by a left-point rule the slope on cell k *is*
    the integrand at t_k, so no differencing error is introduced; the final
    node reuses the last slope.
    """
    dv = np.diff(h.values, axis=0) / h.grid.dt
    return np.concatenate([dv, dv[-1:]], axis=0)


def inverse_transform(h: GridFunction, hurst: float, integrand: np.ndarray | None = None) -> GridFunction:
    """Apply the inverse kernel operator to an absolutely continuous h.

    ``integrand`` optionally supplies h' at the nodes directly (shape like
    h.values); otherwise forward-difference slopes are used.  Node 0 of the
    result holds the first-cell average of the diverging t^(1/2-H) profile.
    """
    if not np.allclose(np.asarray(h.values)[0], 0.0, atol=1e-12):
        raise ValueError("inverse transform requires h(0) = 0")
    v = integrand_from_slopes(h) if integrand is None else np.asarray(integrand, dtype=float)
    if v.shape != h.values.shape:
        raise ValueError(f"integrand shape {v.shape} != h shape {h.values.shape}")
    z = inverse_transform_matrix(h.grid, hurst)
    return GridFunction(h.grid, np.tensordot(z, v, axes=(1, 0)))


# ---------------------------------------------------------------------------
# adjoint transform K*
# ---------------------------------------------------------------------------

def adjoint_transform_at(psi: GridFunction, hurst: float, points: np.ndarray) -> np.ndarray:
    """(K* psi)(s) at interior evaluation points 0 < s < T.

    psi is interpolated linearly between nodes.  On the partial cell next to
    each evaluation point the difference psi(r) - psi(s) is exactly
    slope * (r - s), which regularizes the (r-s)^(H-3/2) rate kernel; later
    cells are smooth.
    """
    h = validate_hurst(hurst)
    grid = psi.grid
    if psi.values.ndim != 1:
        raise ValueError("adjoint transform expects scalar grid functions")
    t_nodes = grid.nodes
    horizon = grid.horizon
    dt = grid.dt
    c = kernel_normalizer(h)
    pts = np.asarray(points, dtype=float)
    if np.any(pts <= 0.0) or np.any(pts >= horizon):
        raise ValueError("evaluation points must lie strictly inside (0, T)")

    out = np.empty(pts.shape)
    u_sing, w_sing = gauss_jacobi01(N_GAUSS_SING, 0.0, h - 0.5)
    u_gl, w_gl = gauss_legendre01(N_GAUSS_CELL)
    vals = psi.values
    slopes = np.diff(vals) / dt

    for i, s in enumerate(pts):
        cell = min(int(s / dt), grid.n_steps - 1)
        psi_s = vals[cell] + slopes[cell] * (s - t_nodes[cell])
        acc = volterra_kernel(horizon, s, h) * psi_s
        # partial cell [s, t_{cell+1}]: slope rule
        length = t_nodes[cell + 1] - s
        if length > 0:
            r_q = s + length * u_sing
            w_q = w_sing * length ** (h + 0.5)
            acc += slopes[cell] * c * np.sum((r_q / s) ** (h - 0.5) * w_q)
        # remaining full cells
        for j in range(cell + 1, grid.n_steps):
            r_q = t_nodes[j] + dt * u_gl
            w_q = w_gl * dt
            psi_r = vals[j] + slopes[j] * (r_q - t_nodes[j])
            acc += np.sum((psi_r - psi_s) * volterra_kernel_rate(r_q, s, h) * w_q)
        out[i] = acc
    return out


def adjoint_transform(psi: GridFunction, hurst: float) -> GridFunction:
    """K* psi evaluated at the grid nodes.

    The value at t_0 = 0 diverges whenever psi(0) != 0 (the K(T, s) factor
    blows up like s^(1/2-H)); the node-0 slot repeats the node-1 value so
    the result stays finite.  L2 pairings should use midpoint evaluation via
    :func:`adjoint_transform_at`.
    """
    vals = adjoint_transform_at(psi, hurst, psi.grid.nodes[1:-1])
    # (K* psi)(T) = K(T, T) psi(T) = 0 for H > 1/2
    out = np.concatenate([[vals[0]], vals, [0.0]])
    return GridFunction(psi.grid, out)
