"""Diffusion models and one-step transition kernels.

The step functions are written against numpy ufuncs so the same code advances
a scalar state, a replicate vector, or a path array.  All of them evaluate
drift and diffusion at the left grid point; the within-interval interpolation
of the discrete scheme is handled by :func:`genuine_interpolate`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import gamma as gamma_dist

from .streams import GaussianStream

__all__ = [
    "SchemeBlowUpError",
    "PoissonSolution",
    "AnalyticExtras",
    "DiffusionModel",
    "SchemeState",
    "GaussianStream",
    "CirParams",
    "euler_step",
    "genuine_interpolate",
    "cir_reflected_step",
    "heston_logprice_step",
    "ou_exact_step",
    "ou_model",
    "cir_model",
    "bs_log_model",
    "make_model",
    "check_poisson_solution",
    "lyapunov_grid_check",
    "LyapunovReport",
]


class SchemeBlowUpError(RuntimeError):
    """A scheme produced a non-finite state; the replicate must be aborted."""


@dataclass(frozen=True)
class PoissonSolution:
    """Solution g of the Poisson equation A g = f - nu(f) for a marginal f.

    ``nu_f`` is the invariant average of f.  The pair (g, grad_g) feeds the
    asymptotic-variance formulas; :func:`check_poisson_solution` verifies the
    generator identity numerically.
    """

    f: Callable[[np.ndarray], float]
    nu_f: float
    g: Callable[[np.ndarray], float]
    grad_g: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class AnalyticExtras:
    """Optional closed-form knowledge about a model.

    invariant_sampler(stream, size) draws from the invariant law;
    invariant_moments lists known (power, value) pairs of it;
    exact_transition(t, x, h, noise) samples the exact one-step transition.
    """

    invariant_sampler: Optional[Callable[[GaussianStream, int], np.ndarray]] = None
    invariant_moments: tuple = ()
    poisson_solution: Optional[PoissonSolution] = None
    exact_transition: Optional[Callable] = None


@dataclass(frozen=True)
class DiffusionModel:
    """Time-homogeneous SDE dX = b(X) dt + sigma(X) dW on R^d.

    ``drift`` maps a state vector to R^d and ``diffusion`` to a (d, q)
    matrix.  Both must be finite for finite inputs.  ``lipschitz_bound`` is
    documentation, not enforced.
    """

    d: int
    q: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"
    lipschitz_bound: Optional[float] = None
    analytic: Optional[AnalyticExtras] = None
    params: dict = field(default_factory=dict)


@dataclass
class SchemeState:
    """Scheme position: step index n, grid value, and clock = Gamma_n."""

    n: int
    x: np.ndarray
    clock: float


@dataclass(frozen=True)
class CirParams:
    k: float
    theta: float
    varsigma: float


def euler_step(
    model: DiffusionModel,
    state: SchemeState,
    dW: np.ndarray,
    h: float,
    clock: float | None = None,
) -> SchemeState:
    """One Euler step x' = x + h b(x) + sigma(x) dW.

    ``dW`` carries N(0, h) increments supplied by the caller.  Passing
    ``clock`` pins the new clock to the schedule's exact grid time instead of
    the accumulated sum.  Non-finite output raises :class:`SchemeBlowUpError`.
    """
    x = np.asarray(state.x, dtype=float)
    dw = np.atleast_1d(np.asarray(dW, dtype=float))
    with np.errstate(invalid="ignore", over="ignore"):
        xn = x + h * model.drift(x) + np.asarray(model.diffusion(x)) @ dw
    if not np.all(np.isfinite(xn)):
        raise SchemeBlowUpError(
            f"non-finite state after step {state.n + 1} of model {model.name!r}"
        )
    return SchemeState(n=state.n + 1, x=xn, clock=state.clock + h if clock is None else clock)


def genuine_interpolate(
    model: DiffusionModel,
    state: SchemeState,
    t: float,
    bridge_noise: np.ndarray,
    h_next: float | None = None,
) -> np.ndarray:
    """Scheme value at an intermediate time of the current grid interval.

    ``bridge_noise`` represents W_t - W_{Gamma_n}.  With t = Gamma_{n+1} and
    the full Brownian increment this reproduces :func:`euler_step` exactly.
    """
    dt = t - state.clock
    if dt < 0.0 or (h_next is not None and dt > h_next):
        raise ValueError(
            f"t={t} outside the current grid interval "
            f"[{state.clock}, {state.clock + (h_next if h_next is not None else math.inf)}]"
        )
    x = np.asarray(state.x, dtype=float)
    noise = np.atleast_1d(np.asarray(bridge_noise, dtype=float))
    return x + dt * model.drift(x) + np.asarray(model.diffusion(x)) @ noise


def cir_reflected_step(params: CirParams, v, h, dW2):
    """Reflected Euler step for the square-root process, |...| keeps v >= 0."""
    return np.abs(v + params.k * h * (params.theta - v) + params.varsigma * np.sqrt(v) * dW2)


def heston_logprice_step(r: float, rho_corr: float, xi, vbar, h, dW1, dW2):
    """Log-price step with variance frozen at the left grid point.

    dW2 drives the variance process, dW1 is independent; the price picks up
    rho_corr * sqrt(vbar) from the former and sqrt((1-rho_corr^2) vbar) from
    the latter.
    """
    if abs(rho_corr) > 1.0:
        raise ValueError(f"correlation must lie in [-1,1], got {rho_corr}")
    return (
        xi
        + (r - 0.5 * vbar) * h
        + rho_corr * np.sqrt(vbar) * dW2
        + np.sqrt((1.0 - rho_corr**2) * vbar) * dW1
    )


def ou_exact_step(lam: float, sigma0: float, x, h, z):
    """Exact Ornstein-Uhlenbeck transition over a step of length h."""
    decay = np.exp(-lam * h)
    sd = sigma0 * np.sqrt((1.0 - decay * decay) / (2.0 * lam))
    return decay * x + sd * z


# ---------------------------------------------------------------------------
# built-in models
# ---------------------------------------------------------------------------


def ou_model(lam: float = 1.0, sigma0: float = math.sqrt(2.0)) -> DiffusionModel:
    """dX = -lam X dt + sigma0 dW with invariant law N(0, sigma0^2 / (2 lam)).

    Ships the exact transition, the invariant sampler, and the Poisson
    solution for f(x) = x (namely g(x) = -x / lam), which together drive the
    analytic variance oracles.
    """
    if lam <= 0 or sigma0 < 0:
        raise ValueError("need lam > 0 and sigma0 >= 0")
    sd_inf = sigma0 / math.sqrt(2.0 * lam)

    def drift(x):
        return -lam * x

    def diffusion(x):
        return np.array([[sigma0]])

    def sampler(stream: GaussianStream, size: int) -> np.ndarray:
        return sd_inf * stream.normal(size)

    poisson = PoissonSolution(
        f=lambda x: np.asarray(x, dtype=float).reshape(-1)[0],
        nu_f=0.0,
        g=lambda x: -np.asarray(x, dtype=float).reshape(-1)[0] / lam,
        grad_g=lambda x: np.array([-1.0 / lam]),
    )

    def exact(t, x, h, noise):
        return ou_exact_step(lam, sigma0, x, h, noise)

    return DiffusionModel(
        d=1,
        q=1,
        drift=drift,
        diffusion=diffusion,
        name="ou",
        lipschitz_bound=lam,
        analytic=AnalyticExtras(
            invariant_sampler=sampler,
            invariant_moments=((1, 0.0), (2, sd_inf**2)),
            poisson_solution=poisson,
            exact_transition=exact,
        ),
        params={"lambda": lam, "sigma0": sigma0},
    )


def cir_model(k: float = 2.0, theta: float = 0.01, varsigma: float = 0.1) -> DiffusionModel:
    """dv = k (theta - v) dt + varsigma sqrt(v) dW.

    When 2 k theta > varsigma^2 the invariant law is Gamma with shape
    2 k theta / varsigma^2 and rate 2 k / varsigma^2 (mean theta).  The drift
    and diffusion are exposed for generic stepping, but simulation should use
    :func:`cir_reflected_step`, which preserves nonnegativity.
    """
    if k <= 0 or theta <= 0 or varsigma <= 0:
        raise ValueError("need positive k, theta, varsigma")
    shape = 2.0 * k * theta / varsigma**2
    rate = 2.0 * k / varsigma**2

    def drift(v):
        return k * (theta - v)

    def diffusion(v):
        return np.array([[varsigma * math.sqrt(max(float(v[0]), 0.0))]])

    def sampler(stream: GaussianStream, size: int) -> np.ndarray:
        if not 2.0 * k * theta > varsigma**2:
            raise ValueError("stationary sampling needs 2 k theta > varsigma^2")
        return gamma_dist.ppf(stream.uniform(size), a=shape, scale=1.0 / rate)

    var = theta * varsigma**2 / (2.0 * k)
    return DiffusionModel(
        d=1,
        q=1,
        drift=drift,
        diffusion=diffusion,
        name="cir",
        analytic=AnalyticExtras(
            invariant_sampler=sampler,
            invariant_moments=((1, theta), (2, theta**2 + var)),
        ),
        params={"k": k, "theta": theta, "varsigma": varsigma},
    )


def bs_log_model(r: float = 0.05, sigma: float = 0.1) -> DiffusionModel:
    """Log-price of the constant-volatility Black-Scholes model (not ergodic)."""

    def drift(x):
        return np.full_like(np.asarray(x, dtype=float), r - 0.5 * sigma**2)

    def diffusion(x):
        return np.array([[sigma]])

    return DiffusionModel(
        d=1, q=1, drift=drift, diffusion=diffusion, name="bs-log",
        params={"r": r, "sigma": sigma},
    )


_MODEL_FACTORIES = {
    "ou": lambda p: ou_model(lam=p.get("lambda", 1.0), sigma0=p.get("sigma0", math.sqrt(2.0))),
    "cir": lambda p: cir_model(
        k=p.get("k", 2.0), theta=p.get("theta", 0.01), varsigma=p.get("varsigma", 0.1)
    ),
    "bs-log": lambda p: bs_log_model(r=p.get("r", 0.05), sigma=p.get("sigma", 0.1)),
}


def make_model(name: str, **params) -> DiffusionModel:
    """Resolve a built-in model identifier ("ou", "cir", "bs-log").

    The stationary Heston pricer is not a plain DiffusionModel; use
    ergodicmc.heston for the "heston" config identifier.
    """
    if name == "heston":
        raise ValueError("the 'heston' model is handled by ergodicmc.heston, not make_model")
    try:
        factory = _MODEL_FACTORIES[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; built-ins: {sorted(_MODEL_FACTORIES)}")
    return factory(params)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def check_poisson_solution(
    model: DiffusionModel,
    n_points: int = 100,
    tol: float = 1e-8,
    seed: int = 7,
    span: float = 3.0,
) -> float:
    """Verify A g = f - nu(f) at random points; returns the worst residual.

    The generator uses the model's drift/diffusion and a central finite
    difference of grad_g for the Hessian.  Raises if the residual exceeds
    ``tol``.
    """
    extras = model.analytic
    if extras is None or extras.poisson_solution is None:
        raise ValueError(f"model {model.name!r} has no poisson_solution")
    ps = extras.poisson_solution
    stream = GaussianStream(seed, stream_id=101)
    pts = span * stream.normal(n_points * model.d).reshape(n_points, model.d)
    eps = 1e-5
    worst = 0.0
    for x in pts:
        g1 = np.asarray(ps.grad_g(x), dtype=float)
        b = np.asarray(model.drift(x), dtype=float)
        sig = np.atleast_2d(np.asarray(model.diffusion(x), dtype=float))
        hess = np.empty((model.d, model.d))
        for j in range(model.d):
            dx = np.zeros(model.d)
            dx[j] = eps
            hess[:, j] = (
                np.asarray(ps.grad_g(x + dx), dtype=float)
                - np.asarray(ps.grad_g(x - dx), dtype=float)
            ) / (2 * eps)
        a_g = float(g1 @ b + 0.5 * np.trace(sig.T @ hess @ sig))
        resid = abs(a_g - (ps.f(x) - ps.nu_f))
        worst = max(worst, resid)
    if worst > tol:
        raise ValueError(f"generator identity violated: max residual {worst:.3e} > {tol}")
    return worst


@dataclass
class LyapunovReport:
    """Grid diagnostic of the mean-reverting inequality (not a proof)."""

    lambda_p_hat: float
    rho_hat: float
    beta_hat: float
    satisfied: bool
    growth_ok: bool


def lyapunov_grid_check(
    model: DiffusionModel,
    V: Callable,
    grad_V: Callable,
    hess_V: Callable,
    a: float,
    p: float,
    grid: np.ndarray,
) -> LyapunovReport:
    """Numerically probe the Lyapunov mean-reversion inequality on a grid.

    Estimates lambda_p as half the largest positive eigenvalue of
    D^2 V + (p-1) (grad V x grad V) / V over the grid, then fits
    <grad V, b> + lambda_p Tr(sigma sigma*) <= beta - rho V^a by least
    squares.  ``satisfied`` requires a strictly positive fitted rho;
    ``growth_ok`` probes V^(p+a-1)(x) / |x| at the outermost grid points.
    """
    if not 0.0 < a <= 1.0:
        raise ValueError(f"a must lie in (0,1], got {a}")
    if p <= 1.0:
        raise ValueError(f"p must exceed 1, got {p}")
    pts = np.atleast_2d(np.asarray(grid, dtype=float))
    if pts.shape[0] == model.d and pts.shape[1] != model.d:
        pts = pts.T
    if pts.shape[1] != model.d:
        pts = pts.reshape(-1, model.d)
    n = pts.shape[0]
    if n == 0:
        raise ValueError("grid must be nonempty")

    v_vals = np.array([float(V(x)) for x in pts])
    if np.any(v_vals <= 0.0):
        raise ValueError("V must be positive on the grid")

    lam_p = 0.0
    lhs = np.empty(n)
    for i, x in enumerate(pts):
        g = np.asarray(grad_V(x), dtype=float).reshape(model.d)
        H = np.asarray(hess_V(x), dtype=float).reshape(model.d, model.d)
        M = H + (p - 1.0) * np.outer(g, g) / v_vals[i]
        lam_plus = max(0.0, float(np.linalg.eigvalsh(M)[-1]))
        lam_p = max(lam_p, 0.5 * lam_plus)
        lhs[i] = float(g @ np.asarray(model.drift(x), dtype=float))
    for i, x in enumerate(pts):
        sig = np.atleast_2d(np.asarray(model.diffusion(x), dtype=float))
        lhs[i] += lam_p * float(np.trace(sig @ sig.T))

    va = v_vals**a
    # least-squares fit lhs ~ beta - rho * V^a; rho clipped at 0
    va_c = va - va.mean()
    denom = float(va_c @ va_c)
    slope = float(va_c @ (lhs - lhs.mean())) / denom if denom > 0 else 0.0
    rho_hat = max(-slope, 0.0)
    scale = max(1.0, float(np.abs(lhs).max()))
    if rho_hat * va.max() < 1e-10 * scale:
        rho_hat = 0.0
    beta_hat = float(np.max(lhs + rho_hat * va))

    r = np.hypot.reduce(pts.T) if model.d > 1 else np.abs(pts[:, 0])
    outer = r >= np.quantile(r, 0.9)
    growth = v_vals[outer] ** (p + a - 1.0) / np.maximum(r[outer], 1e-12)
    growth_ok = bool(np.min(growth) > 0.0)

    return LyapunovReport(
        lambda_p_hat=lam_p,
        rho_hat=rho_hat,
        beta_hat=beta_hat,
        satisfied=rho_hat > 0.0,
        growth_ok=growth_ok,
    )
