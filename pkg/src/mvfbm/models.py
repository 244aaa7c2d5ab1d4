"""Shipped model presets and observables.

Each preset documents its oracle: pure-noise has the Gaussian
integration-by-parts value, linear-meanfield a closed-form mean ODE,
sin-interaction a finite-difference cross-check, kinetic-degenerate the
polynomial steering pair.  Measure-derivative kernels of all presets ignore
the frozen state slot, so the ensemble-averaged pairing costs O(N).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .measure import TestFunction, smooth_clamp
from .sensitivity import DegenerateModel
from .solver import DiffusionSpec, DriftSpec, InitialLaw


@dataclass
class ModelSpec:
    """Bundle of drift, diffusion and initial law defining one experiment."""

    name: str
    kind: str  # "nondegenerate" | "degenerate"
    drift: DriftSpec
    diff: DiffusionSpec
    init: InitialLaw
    dim: int
    noise_dim: int
    degenerate: DegenerateModel | None = None
    params: dict = field(default_factory=dict)

    def init_for_seed(self, seed: int) -> InitialLaw:
        """Initial law re-keyed to the run seed (kept distinct from noise keys)."""
        return replace(self.init, seed=(self.init.seed ^ (seed * 0x9E3779B9)) & ((1 << 63) - 1))


def pure_noise(sigma: float = 1.0) -> ModelSpec:
    """b = 0, sigma * I: X_t = X_0 + sigma B^H_t.

    Oracle: for f ~ identity and unit direction, the measure derivative of
    E f(X_T) equals E f'(X_T) = 1 up to the (negligible) clamp.
    """
    s = float(sigma)
    drift = DriftSpec(
        b=lambda t, x, mu: np.zeros_like(x),
        grad_b=lambda t, x, mu: np.zeros((1, 1)),
        lions_b=None,
        lipschitz=0.0,
        name="pure-noise",
    )
    diff = DiffusionSpec(sigma=s * np.eye(1), sigma_inverse=np.eye(1) / s)
    return ModelSpec(
        "pure-noise", "nondegenerate", drift, diff, InitialLaw("point", (0.0,)),
        dim=1, noise_dim=1, params={"sigma": s},
    )


def linear_meanfield(a: float = 0.4, beta: float = 0.3, sigma: float = 1.0) -> ModelSpec:
    """b(t, x, mu) = a x + beta mean(mu), scalar.

    With sigma = 0 the ensemble mean solves m' = (a + beta) m; with noise
    the model stays exactly linear, so difference quotients equal the
    variation flow to rounding.
    """
    a, beta, s = float(a), float(beta), float(sigma)
    drift = DriftSpec(
        b=lambda t, x, mu: a * x + beta * mu.mean(),
        grad_b=lambda t, x, mu: a * np.eye(1),
        lions_b=lambda t, x, mu, y: np.tile(beta * np.eye(1), (len(y), 1, 1)),
        lipschitz=abs(a) + abs(beta),
        name="linear-meanfield",
    )
    diff = DiffusionSpec(sigma=s * np.eye(1), sigma_inverse=np.eye(1) / s)
    return ModelSpec(
        "linear-meanfield", "nondegenerate", drift, diff,
        InitialLaw("gaussian", (0.5,), 0.3),
        dim=1, noise_dim=1, params={"a": a, "beta": beta, "sigma": s},
    )


def sin_interaction(a: float = 0.4, beta: float = 0.3, sigma: float = 1.0) -> ModelSpec:
    """b(t, x, mu) = a x + beta E_mu[sin], scalar; genuinely nonlinear in mu."""
    a, beta, s = float(a), float(beta), float(sigma)
    drift = DriftSpec(
        b=lambda t, x, mu: a * x + beta * np.mean(np.sin(mu.atoms[:, 0])),
        grad_b=lambda t, x, mu: a * np.eye(1),
        lions_b=lambda t, x, mu, y: beta * np.cos(y)[:, None, :],
        lipschitz=abs(a) + abs(beta),
        name="sin-interaction",
    )
    diff = DiffusionSpec(sigma=s * np.eye(1), sigma_inverse=np.eye(1) / s)
    return ModelSpec(
        "sin-interaction", "nondegenerate", drift, diff,
        InitialLaw("gaussian", (0.5,), 0.3),
        dim=1, noise_dim=1, params={"a": a, "beta": beta, "sigma": s},
    )


def kinetic_degenerate(sigma: float = 1.0) -> ModelSpec:
    """m = l = 1, A = 0, B = 1, b2 = 0: dX1 = X2 dt, dX2 = sigma dB^H.

    The steering pair and the divergence integrand are closed-form
    polynomials in t (frozen in the tests).
    """
    s = float(sigma)
    a_mat = np.zeros((1, 1))
    b_mat = np.ones((1, 1))
    drift = DriftSpec(
        b=lambda t, x, mu: np.stack([x[:, 1], np.zeros(len(x))], axis=1),
        grad_b=lambda t, x, mu: np.array([[0.0, 1.0], [0.0, 0.0]]),
        lions_b=None,
        lipschitz=1.0,
        name="kinetic-degenerate",
    )
    diff = DiffusionSpec(sigma=np.array([[0.0], [s]]))
    sig_ll = DiffusionSpec(sigma=s * np.eye(1), sigma_inverse=np.eye(1) / s)
    degen = DegenerateModel(a_mat, b_mat, drift, diff, sig_ll, b2_grad=None, b2_lions=None)
    return ModelSpec(
        "kinetic-degenerate", "degenerate", drift, diff,
        InitialLaw("gaussian", (0.2, -0.1), 0.2),
        dim=2, noise_dim=1, degenerate=degen, params={"sigma": s},
    )


PRESETS = {
    "pure-noise": pure_noise,
    "linear-meanfield": linear_meanfield,
    "sin-interaction": sin_interaction,
    "kinetic-degenerate": kinetic_degenerate,
}


def make_model(name: str, **params) -> ModelSpec:
    if name not in PRESETS:
        raise ValueError(f"unknown model preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name](**params)


# ---------------------------------------------------------------------------
# observables
# ---------------------------------------------------------------------------

def clamped_linear(terminal: np.ndarray, component: int = 0) -> TestFunction:
    """First-coordinate observable, soft-clipped at 10x the terminal rms.

    The clip activates only beyond 5 rms, so the observable is honestly
    bounded while E f'(X_T) stays 1 to within Gaussian tail mass.
    """
    rms = float(np.sqrt(np.mean(np.sum(terminal ** 2, axis=1))))
    radius = 10.0 * max(rms, 1e-12)
    clamp = smooth_clamp(radius)
    return TestFunction(
        fn=lambda x: clamp(x[:, component]),
        sup_bound=radius,
        lipschitz=1.0,
        name=f"clamped-linear[{component}]@{radius:.3g}",
    )


def sin_observable(component: int = 0, freq: float = 1.0) -> TestFunction:
    return TestFunction(
        fn=lambda x: np.sin(freq * x[:, component]),
        sup_bound=1.0,
        lipschitz=freq,
        name=f"sin({freq}x[{component}])",
    )


def sum_sin_observable(freq: float = 1.0) -> TestFunction:
    """sin of the coordinate sum; useful for multi-component states."""
    return TestFunction(
        fn=lambda x: np.sin(freq * np.sum(x, axis=1)),
        sup_bound=1.0,
        name=f"sin({freq}*sum)",
    )


def resolve_observable(spec: str | TestFunction, terminal: np.ndarray) -> TestFunction:
    """Build a named observable, resolving data-dependent clamp radii."""
    if isinstance(spec, TestFunction):
        return spec
    if spec == "clamped-linear":
        return clamped_linear(terminal)
    if spec == "sin":
        return sin_observable()
    if spec == "sum-sin":
        return sum_sin_observable()
    raise ValueError(f"unknown observable {spec!r}")


def random_bounded_family(count: int, dim: int, seed: int, scale: float = 1.0) -> list[TestFunction]:
    """Random cosine ridges cos(<w, x> + phase), all bounded by 1."""
    gen = np.random.Generator(np.random.Philox(key=seed))
    fams = []
    for i in range(count):
        w = gen.normal(0.0, scale, size=dim)
        phase = gen.uniform(0.0, 2.0 * np.pi)
        fams.append(
            TestFunction(
                fn=lambda x, w=w, phase=phase: np.cos(x @ w + phase),
                sup_bound=1.0,
                name=f"cos-ridge-{i}",
            )
        )
    return fams
