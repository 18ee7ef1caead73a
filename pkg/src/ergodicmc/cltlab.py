"""Asymptotic-variance formulas and replicated normalized-error experiments.

Two independent routes compute the functional limit variance on models with
an analytic Poisson solution: a nested conditional-expectation estimator and
a covariance-function form.  Both are unbiased Monte Carlo constructions
(the nested one multiplies two conditionally independent halves instead of
squaring one noisy estimate) and must agree within statistical error; the
experiment harness then checks that replicated normalized errors of the
empirical averages are Gaussian with that variance.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import kolmogi, ndtri
from scipy.stats import kstest, kurtosis, skew

from .engines import run_windowed_functional
from .pathfun import PathFunctional
from .stepgrid import StepSchedule, check_conditions
from .streams import GaussianStream

__all__ = [
    "CltExperiment",
    "CovarianceCurve",
    "FunctionalOracle",
    "NormalityStats",
    "ScheduleConditionError",
    "kernel_density",
    "normality_stats",
    "ks_critical",
    "marginal_sigma2",
    "ou_marginal_start_oracle",
    "ou_terminal_oracle",
    "constant_oracle",
    "sigma2_conditional_form",
    "sigma2_covariance_form",
    "run_clt_experiment",
]


class ScheduleConditionError(RuntimeError):
    """The step schedule violates the condition required by the experiment."""


@dataclass
class CltExperiment:
    """Replicated normalized-error sample and its summaries."""

    M: int
    N: int
    samples: np.ndarray
    sigma2_hat: float
    density_grid: np.ndarray  # columns (x, f_hat)
    h: float
    gamma_terms: float
    terms: int
    seed: int
    stats: "NormalityStats"
    meta: dict = field(default_factory=dict)


@dataclass
class CovarianceCurve:
    lags: np.ndarray
    values: np.ndarray
    mc_error: np.ndarray


@dataclass
class NormalityStats:
    ks_stat: float
    skewness: float
    excess_kurtosis: float
    stderr_skewness: float
    stderr_kurtosis: float


def ks_critical(alpha: float, n: int) -> float:
    """Asymptotic Kolmogorov-Smirnov critical value at level alpha."""
    return float(kolmogi(alpha)) / math.sqrt(n)


def kernel_density(samples, h: float, grid=None) -> np.ndarray:
    """Gaussian-kernel density of the samples at bandwidth h.

    f_h(x) = (1 / (M h)) sum_l phi((x - s_l) / h).  Returns columns
    (x, f_h(x)); the default grid spans the samples plus 4 h of margin.
    """
    s = np.asarray(samples, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("samples must be nonempty")
    if h <= 0.0:
        raise ValueError("bandwidth must be positive")
    if grid is None:
        grid = np.linspace(s.min() - 4 * h, s.max() + 4 * h, 513)
    grid = np.asarray(grid, dtype=float)
    inv = 1.0 / (math.sqrt(2.0 * math.pi) * h * s.size)
    vals = np.zeros_like(grid)
    chunk = max(1, int(4_000_000 // max(s.size, 1)))
    for i in range(0, grid.size, chunk):
        gx = grid[i : i + chunk, None]
        vals[i : i + chunk] = inv * np.exp(-0.5 * ((gx - s[None, :]) / h) ** 2).sum(axis=1)
    return np.column_stack([grid, vals])


def normality_stats(samples, sigma2: float) -> NormalityStats:
    """KS distance of samples / sqrt(sigma2) to N(0,1), plus moment stats."""
    s = np.asarray(samples, dtype=float).ravel()
    if s.size < 100:
        raise ValueError(f"need at least 100 samples, got {s.size}")
    if sigma2 <= 0.0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    m = s.size
    return NormalityStats(
        ks_stat=float(kstest(s / math.sqrt(sigma2), "norm").statistic),
        skewness=float(skew(s)),
        excess_kurtosis=float(kurtosis(s, fisher=True)),
        stderr_skewness=math.sqrt(6.0 / m),
        stderr_kurtosis=math.sqrt(24.0 / m),
    )


# ---------------------------------------------------------------------------
# variance formulas
# ---------------------------------------------------------------------------


def _sgrad_values(model, pts: np.ndarray) -> np.ndarray:
    """|sigma*(x) grad g(x)|^2 at each point, via the model's Poisson solution."""
    ps = model.analytic.poisson_solution
    out = np.empty(len(pts))
    for i, x in enumerate(np.atleast_2d(np.asarray(pts, dtype=float).reshape(len(pts), -1))):
        sig = np.atleast_2d(np.asarray(model.diffusion(x), dtype=float))
        grad = np.asarray(ps.grad_g(x), dtype=float).reshape(-1)
        out[i] = float(np.sum((sig.T @ grad) ** 2))
    return out


def marginal_sigma2(
    model,
    n_samples: int = 20_000,
    seed: int = 0,
    schedule: Optional[StepSchedule] = None,
    n_steps: int = 200_000,
) -> float:
    """Limit variance of the marginal CLT: integral of |sigma* grad g|^2 dnu.

    Uses the invariant sampler when the model has one, otherwise a long
    weighted trajectory average.  Requires the model's Poisson solution.
    """
    if model.analytic is None or model.analytic.poisson_solution is None:
        raise ValueError(f"model {model.name!r} has no poisson_solution")
    extras = model.analytic
    if extras.invariant_sampler is not None:
        stream = GaussianStream(seed, stream_id=11)
        pts = np.asarray(extras.invariant_sampler(stream, n_samples), dtype=float)
        return float(np.mean(_sgrad_values(model, pts.reshape(n_samples, -1))))
    from .empirical import marginal_average

    if schedule is None:
        schedule = StepSchedule(gamma1=0.5, rho=0.4)
    f = np.vectorize(lambda v: _sgrad_values(model, np.array([[v]]))[0])
    out = marginal_average(model, schedule, f, n_steps, seed=seed)
    return float(out["values"])


@dataclass(frozen=True)
class FunctionalOracle:
    """Analytic ingredients of the variance formulas for one functional.

    ``phi`` is the marginal map (vectorized), ``f_F`` the conditional mean
    x -> E[F_T(X^x)], ``s_grad_gF`` the vectorized map
    x -> sigma*(x) grad g_F(x) for the functional's Poisson solution, and
    ``sigma2_exact`` the known limit variance when available.
    """

    kind: str  # "marginal-start" | "terminal" | "constant"
    horizon: float
    phi: Callable[[np.ndarray], np.ndarray]
    f_F: Callable[[np.ndarray], np.ndarray]
    s_grad_gF: Callable[[np.ndarray], np.ndarray]
    sigma2_exact: Optional[float] = None


def ou_marginal_start_oracle(model, horizon: float) -> FunctionalOracle:
    """Oracle for F(alpha) = alpha(0) on an OU model."""
    lam = model.params["lambda"]
    sig = model.params["sigma0"]
    c = -sig / lam
    return FunctionalOracle(
        kind="marginal-start",
        horizon=horizon,
        phi=lambda x: x,
        f_F=lambda x: x,
        s_grad_gF=lambda x: np.full_like(np.asarray(x, dtype=float), c),
        sigma2_exact=sig**2 / lam**2,
    )


def ou_terminal_oracle(model, horizon: float) -> FunctionalOracle:
    """Oracle for F(alpha) = alpha(T) on an OU model.

    f_F(x) = exp(-lam T) x, and g_F is exp(-lam T) times the marginal
    Poisson solution, so the limit variance reduces to the marginal one,
    sigma0^2 / lam^2.
    """
    lam = model.params["lambda"]
    sig = model.params["sigma0"]
    decay = math.exp(-lam * horizon)
    c = -sig * decay / lam
    return FunctionalOracle(
        kind="terminal",
        horizon=horizon,
        phi=lambda x: x,
        f_F=lambda x: decay * np.asarray(x, dtype=float),
        s_grad_gF=lambda x: np.full_like(np.asarray(x, dtype=float), c),
        sigma2_exact=sig**2 / lam**2,
    )


def constant_oracle(horizon: float, value: float = 1.0) -> FunctionalOracle:
    return FunctionalOracle(
        kind="constant",
        horizon=horizon,
        phi=lambda x: np.full_like(np.asarray(x, dtype=float), value),
        f_F=lambda x: np.full_like(np.asarray(x, dtype=float), value),
        s_grad_gF=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        sigma2_exact=0.0,
    )


def _ou_joint_step(lam, sig, h):
    """Per-step coefficients of the exact OU transition jointly with its
    driving Brownian increment: X' = decay X + a z1 + b z2, dW = sqrt(h) z1."""
    decay = math.exp(-lam * h)
    var_i = (1.0 - decay * decay) / (2.0 * lam)
    cov = (1.0 - decay) / lam
    a = sig * cov / math.sqrt(h)
    b = sig * math.sqrt(max(var_i - cov * cov / h, 0.0))
    return decay, a, b


def _simulate_outer(model, x0: np.ndarray, n_pts: int, dt: float, stream: GaussianStream):
    """(O, n_pts+1) paths and their (O, n_pts) Brownian increments.

    Exact transitions with jointly sampled increments for OU, Euler with
    explicit increments otherwise (constant diffusion only).
    """
    O = x0.size
    paths = np.empty((O, n_pts + 1))
    incs = np.empty((O, n_pts))
    paths[:, 0] = x0
    x = x0.copy()
    if model.name == "ou":
        lam, sig = model.params["lambda"], model.params["sigma0"]
        decay, a, b = _ou_joint_step(lam, sig, dt)
        rdt = math.sqrt(dt)
        for j in range(n_pts):
            z = stream.normal(2 * O).reshape(2, O)
            incs[:, j] = rdt * z[0]
            x = decay * x + a * z[0] + b * z[1]
            paths[:, j + 1] = x
        return paths, incs
    sig0 = float(np.asarray(model.diffusion(np.zeros(1)))[0, 0])
    rdt = math.sqrt(dt)
    for j in range(n_pts):
        z = stream.normal(O)
        incs[:, j] = rdt * z
        x = x + dt * model.drift(x) + sig0 * incs[:, j]
        paths[:, j + 1] = x
    return paths, incs


def _simulate_inner_means(model, phi, start: np.ndarray, n_inner: int, m: int, dt: float, stream):
    """(O, m+1) running means over n_inner fresh continuations of phi(state)."""
    O = start.size
    x = np.repeat(start, n_inner)
    means = np.empty((O, m + 1))
    means[:, 0] = phi(start)
    if model.name == "ou":
        lam, sig = model.params["lambda"], model.params["sigma0"]
        decay = math.exp(-lam * dt)
        sd = sig * math.sqrt((1.0 - decay * decay) / (2.0 * lam))
        for j in range(m):
            x = decay * x + sd * stream.normal(x.size)
            means[:, j + 1] = phi(x).reshape(O, n_inner).mean(axis=1)
        return means
    sig0 = float(np.asarray(model.diffusion(np.zeros(1)))[0, 0])
    rdt = math.sqrt(dt)
    for j in range(m):
        x = x + dt * model.drift(x) + sig0 * rdt * stream.normal(x.size)
        means[:, j + 1] = phi(x).reshape(O, n_inner).mean(axis=1)
    return means


def _draw_stationary(model, stream: GaussianStream, size: int) -> np.ndarray:
    if model.analytic is None or model.analytic.invariant_sampler is None:
        raise ValueError(f"model {model.name!r} has no invariant sampler")
    return np.asarray(model.analytic.invariant_sampler(stream, size), dtype=float)


def sigma2_conditional_form(
    model,
    oracle: FunctionalOracle,
    outer_points: int = 2000,
    inner_paths: int = 64,
    m_steps: int = 128,
    seed: int = 0,
) -> tuple[float, float]:
    """Nested Monte Carlo estimate of the conditional-expectation variance form.

    For each stationary start, one path is frozen on [0, 2T]; the portions of
    the time integrals that look beyond the conditioning horizon are averaged
    over fresh Brownian continuations.  Two independent halves of the inner
    budget give two conditionally independent estimates whose product is an
    unbiased estimate of the squared bracket, so the inner noise adds no bias.
    Returns (estimate, standard error).
    """
    if inner_paths < 2:
        raise ValueError("inner_paths must be at least 2 for the conditional averages")
    kind = oracle.kind
    if kind not in ("marginal-start", "terminal", "constant"):
        raise ValueError(
            f"conditional-form estimator needs an analytic oracle kind, got {kind!r}; "
            "for generic functionals use the replicate variance of an experiment"
        )
    T = oracle.horizon
    m = int(m_steps)
    dt = T / m
    O = int(outer_points)

    x0 = _draw_stationary(model, GaussianStream(seed, stream_id=21), O)
    paths, incs = _simulate_outer(model, x0, 2 * m, dt, GaussianStream(seed, stream_id=22))
    fvals = oracle.f_F(paths)
    sgrad = oracle.s_grad_gF(paths[:, m : 2 * m])
    stoch = (sgrad * incs[:, m : 2 * m]).sum(axis=1)

    if kind in ("marginal-start", "constant"):
        # the conditional F values coincide with f_F on the frozen path: the
        # time-integral terms vanish identically and no inner paths are needed
        psi = -stoch
        prods = psi * psi
    else:
        phi_paths = oracle.phi(paths)
        halves = []
        n_half = inner_paths // 2
        for h_idx in (0, 1):
            s1 = GaussianStream(seed, stream_id=23 + 2 * h_idx)
            s2 = GaussianStream(seed, stream_id=24 + 2 * h_idx)
            mean1 = _simulate_inner_means(model, oracle.phi, paths[:, m], n_half, m, dt, s1)
            mean2 = _simulate_inner_means(model, oracle.phi, paths[:, 2 * m], n_half, m, dt, s2)
            # E(A_T | F_T): u_i = i dt, i < m, evaluation index i + m
            ea_t = np.zeros(O)
            for i in range(m):
                e = i + m
                cf = phi_paths[:, e] if e <= m else mean1[:, e - m]
                ea_t += cf - fvals[:, i]
            # E(A_2T | F_2T): i < 2m, evaluation index i + m
            ea_2t = np.zeros(O)
            for i in range(2 * m):
                e = i + m
                cf = phi_paths[:, e] if e <= 2 * m else mean2[:, e - 2 * m]
                ea_2t += cf - fvals[:, i]
            halves.append(dt * (ea_2t - ea_t) - stoch)
        prods = halves[0] * halves[1]

    est = float(prods.mean() / T)
    se = float(prods.std(ddof=1) / math.sqrt(O) / T)
    return est, se


def sigma2_covariance_form(
    model,
    oracle: FunctionalOracle,
    lag_count: int = 33,
    path_budget: int = 4000,
    m_steps: int = 128,
    seed: int = 0,
    nu_samples: int = 20_000,
) -> tuple[float, float, dict, CovarianceCurve]:
    """Covariance-function form of the limit variance under the stationary start.

    sigma_F^2 = 2 int_0^T (1 - v/T) C_F(v) dv
                - 2 E_nu[F_T(X) int_0^T sigma* grad g_F dW]
                + int |sigma* grad g_F|^2 dnu.

    Returns (estimate, stderr, the three addends, the covariance curve).
    """
    kind = oracle.kind
    if kind not in ("marginal-start", "terminal", "constant"):
        raise ValueError(f"covariance-form estimator needs an analytic oracle kind, got {kind!r}")
    T = oracle.horizon
    m = int(m_steps)
    dt = T / m
    O = int(path_budget)

    x0 = _draw_stationary(model, GaussianStream(seed, stream_id=31), O)
    paths, incs = _simulate_outer(model, x0, 2 * m, dt, GaussianStream(seed, stream_id=32))
    fvals = oracle.f_F(paths)
    phi_paths = oracle.phi(paths)

    def F_at(lag: int) -> np.ndarray:
        if kind == "terminal":
            return phi_paths[:, lag + m]
        return phi_paths[:, lag]  # marginal-start / constant

    lag_idx = np.unique(np.linspace(0, m, lag_count).astype(int))
    lags = lag_idx * dt
    base = F_at(0) - fvals[:, 0]
    prods = np.empty((O, lag_idx.size))
    for j, lag in enumerate(lag_idx):
        prods[:, j] = (F_at(int(lag)) - fvals[:, int(lag)]) * base
    weights = 1.0 - lags / T
    addend1 = 2.0 * np.trapezoid(weights[None, :] * prods, lags, axis=1)

    sgrad = oracle.s_grad_gF(paths[:, :m])
    mart = (sgrad * incs[:, :m]).sum(axis=1)
    addend2 = -2.0 * F_at(0) * mart

    pts = _draw_stationary(model, GaussianStream(seed, stream_id=33), nu_samples)
    sg2 = oracle.s_grad_gF(pts) ** 2
    addend3 = float(sg2.mean())
    se3 = float(sg2.std(ddof=1) / math.sqrt(nu_samples))

    psi = addend1 + addend2
    total = float(psi.mean() + addend3)
    se = float(math.hypot(psi.std(ddof=1) / math.sqrt(O), se3))
    curve = CovarianceCurve(
        lags=lags,
        values=prods.mean(axis=0),
        mc_error=prods.std(axis=0, ddof=1) / math.sqrt(O),
    )
    addends = {
        "functional_lag_integral": float(addend1.mean()),
        "cross_martingale": float(addend2.mean()),
        "marginal": addend3,
    }
    return total, se, addends, curve


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def _gate_schedule(schedule, scheme, functional_kind, strict, stepwise_delta):
    if scheme == "exact":
        return  # no discretization: the step conditions are not hypotheses here
    if functional_kind == "marginal-start":
        report = check_conditions(schedule, condition="marginal")
        label = "marginal step condition"
    elif scheme == "stepwise":
        report = check_conditions(schedule, delta=stepwise_delta, condition="functional")
        label = f"stepwise step condition (delta={stepwise_delta})"
    else:
        report = check_conditions(schedule, condition="functional")
        label = "functional step condition"
    if not report.converges:
        msg = f"schedule fails the {label}: tail exponent {report.fitted_tail_exponent:.3f}"
        if strict:
            raise ScheduleConditionError(msg)
        warnings.warn(msg, stacklevel=3)


def run_clt_experiment(
    model,
    functional: PathFunctional,
    schedule: StepSchedule,
    target: float,
    M: int,
    N: int,
    seed: int = 0,
    scheme: str = "genuine",
    strict_schedule: bool = True,
    stepwise_delta: float = 0.05,
    h: float | None = None,
    x0=None,
) -> CltExperiment:
    """M replicates of the normalized error sqrt(Gamma) (nu_bar - target).

    Each replicate runs the chosen scheme for N steps and folds the
    functional into its empirical average; the normalized errors are
    summarized by their empirical variance, a Gaussian-kernel density on the
    default bandwidth M^(-1/5), and normality statistics.
    """
    _gate_schedule(schedule, scheme, functional.kind, strict_schedule, stepwise_delta)
    out = run_windowed_functional(
        model,
        schedule,
        functional,
        n_steps=N,
        n_replicates=M,
        seed=seed,
        scheme=scheme,
        x0=x0,
    )
    samples = math.sqrt(out["gamma_terms"]) * (np.asarray(out["values"]) - target)
    sigma2_hat = float(samples.var(ddof=1)) if M > 1 else 0.0
    if h is None:
        h = float(M) ** (-0.2)
    density = kernel_density(samples, h)
    stats = (
        normality_stats(samples, sigma2_hat)
        if M >= 100 and sigma2_hat > 0
        else None
    )
    return CltExperiment(
        M=M,
        N=N,
        samples=samples,
        sigma2_hat=sigma2_hat,
        density_grid=density,
        h=h,
        gamma_terms=out["gamma_terms"],
        terms=out["terms"],
        seed=seed,
        stats=stats,
        meta={"scheme": scheme, "model": model.name, "functional": functional.kind},
    )
