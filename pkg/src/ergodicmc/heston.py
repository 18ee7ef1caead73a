"""Stationary-Heston barrier option pricing with decreasing-step schemes.

The volatility process starts from its Gamma invariant law and advances by
the reflected Euler scheme; the log price advances by the frozen-volatility
scheme with one bridge-sampled supremum per grid interval; the up-and-out
payoff folds into the weighted empirical average online.  A Black-Scholes
companion with constant volatility sqrt(theta) consumes the same increments
and serves as control variate against its closed-form barrier price.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import ndtr
from scipy.stats import gamma as gamma_dist

from . import cltlab
from .empirical import EmpiricalAccumulator, on_step
from .engines import HestonRunResult, run_stationary_heston
from .pathfun import PathWindow, bridge_sup_sample, make_functional
from .schemes import CirParams, cir_reflected_step
from .stepgrid import StepSchedule
from .streams import GaussianStream

__all__ = [
    "HestonConfig",
    "DEFAULT_CONFIG",
    "REFERENCE_PRICE",
    "sample_stationary_v",
    "bs_barrier_price",
    "bs_vanilla_call",
    "mc_bs_barrier_oracle",
    "price_stationary_heston",
    "compute_reference_price",
    "run_figure1",
]


@dataclass(frozen=True)
class HestonConfig:
    """Stationary Heston barrier-option setup.

    Units: prices for s0/K/L, rate per year for r, years for T, 1/years for
    the mean-reversion speed k, variance units for theta, vol-of-vol for
    varsigma.  Requires 2 k theta > varsigma^2 (positive variance process)
    and L > K > 0.
    """

    s0: float = 50.0
    r: float = 0.05
    T: float = 1.0
    rho_corr: float = 0.5
    theta: float = 0.01
    varsigma: float = 0.1
    k: float = 2.0
    K: float = 50.0
    L: float = 55.0

    def __post_init__(self):
        if not 2.0 * self.k * self.theta > self.varsigma**2:
            raise ValueError(
                f"need 2 k theta > varsigma^2 for a positive variance process, "
                f"got 2*{self.k}*{self.theta} <= {self.varsigma}^2"
            )
        if not self.L > self.K > 0.0:
            raise ValueError(f"need L > K > 0, got L={self.L}, K={self.K}")
        if abs(self.rho_corr) > 1.0:
            raise ValueError(f"correlation must lie in [-1,1], got {self.rho_corr}")
        if self.s0 <= 0.0 or self.T <= 0.0:
            raise ValueError("need s0 > 0 and T > 0")


DEFAULT_CONFIG = HestonConfig()


def sample_stationary_v(cfg: HestonConfig, stream: GaussianStream, size: int = 1) -> np.ndarray:
    """Draw from the invariant law of the variance process.

    Gamma with shape 2 k theta / varsigma^2 and rate 2 k / varsigma^2; this
    is the only shape/rate assignment with mean theta, the long-run variance.
    """
    shape = 2.0 * cfg.k * cfg.theta / cfg.varsigma**2
    rate = 2.0 * cfg.k / cfg.varsigma**2
    return gamma_dist.ppf(stream.uniform(size), a=shape, scale=1.0 / rate)


# ---------------------------------------------------------------------------
# Black-Scholes barrier closed form
# ---------------------------------------------------------------------------


def bs_vanilla_call(s0: float, r: float, sigma: float, T: float, K: float) -> float:
    """Plain Black-Scholes call, used as the L -> infinity limit check."""
    if sigma <= 0 or T <= 0:
        raise ValueError("need sigma > 0 and T > 0")
    st = sigma * math.sqrt(T)
    d1 = (math.log(s0 / K) + (r + 0.5 * sigma**2) * T) / st
    return s0 * ndtr(d1) - K * math.exp(-r * T) * ndtr(d1 - st)


def bs_barrier_price(
    s0: float, r: float, sigma: float, T: float, K: float, L: float
) -> float:
    """Up-and-out call under geometric Brownian motion, closed form.

    Integrates the payoff against the reflection-principle joint density of
    (log S_T, running max) restricted below the barrier:

        f(x) = [phi((x - nu T)/(s)) - e^(2 nu m / sigma^2) phi((x - 2m - nu T)/s)] / s

    with nu = r - sigma^2/2, m = ln(L/s0), s = sigma sqrt(T), and x the
    terminal log return.  Knocked out at inception (s0 >= L) prices to 0.
    """
    if not L > K > 0:
        raise ValueError(f"need L > K > 0, got L={L}, K={K}")
    if sigma <= 0 or T <= 0:
        raise ValueError("need sigma > 0 and T > 0")
    if s0 >= L:
        return 0.0
    nu = r - 0.5 * sigma**2
    st = sigma * math.sqrt(T)
    m = math.log(L / s0)
    a = math.log(K / s0)

    def _piece(shift: float) -> float:
        # integral of (s0 e^x - K) phi((x - shift - nu T)/st)/st over [a, m]
        lo, hi = a - shift, m - shift
        d_hi = (hi - nu * T) / st
        d_lo = (lo - nu * T) / st
        call_part = (
            s0
            * math.exp(shift)
            * math.exp(r * T)
            * (ndtr(d_hi - st) - ndtr(d_lo - st))
        )
        strike_part = K * (ndtr(d_hi) - ndtr(d_lo))
        return call_part - strike_part

    direct = _piece(0.0)
    reflected = math.exp(2.0 * nu * m / sigma**2) * _piece(2.0 * m)
    return math.exp(-r * T) * (direct - reflected)


def mc_bs_barrier_oracle(
    s0: float,
    r: float,
    sigma: float,
    T: float,
    K: float,
    L: float,
    n_paths: int = 2_000_000,
    n_steps: int = 64,
    seed: int = 12345,
) -> tuple[float, float]:
    """Independent Monte Carlo price of the up-and-out call under GBM.

    Exact log-normal grid transitions plus the exact conditional law of each
    interval maximum (Brownian bridge) make the estimator unbiased for any
    step count; the step count only spreads the knock-out decision over more
    conditionally independent pieces.  Returns (price, standard error).
    """
    stream = GaussianStream(seed, stream_id=3001)
    dt = T / n_steps
    drift = (r - 0.5 * sigma**2) * dt
    vol = sigma * math.sqrt(dt)
    log_barrier = math.log(L / s0)
    disc = math.exp(-r * T)
    total = 0.0
    total2 = 0.0
    done = 0
    block = 200_000
    while done < n_paths:
        b = min(block, n_paths - done)
        x = np.zeros(b)
        peak = np.full(b, -np.inf)
        for _ in range(n_steps):
            z = stream.normal(b)
            x_new = x + drift + vol * z
            u = stream.uniform(b)
            vmax = bridge_sup_sample(x, x_new, sigma, dt, u)
            peak = np.maximum(peak, vmax)
            x = x_new
        payoff = disc * np.maximum(s0 * np.exp(x) - K, 0.0) * (peak <= log_barrier)
        total += payoff.sum()
        total2 += (payoff**2).sum()
        done += b
    mean = total / n_paths
    var = total2 / n_paths - mean**2
    return float(mean), float(math.sqrt(max(var, 0.0) / n_paths))


# ---------------------------------------------------------------------------
# pricing pipeline
# ---------------------------------------------------------------------------


def _reference_run(
    cfg: HestonConfig,
    schedule: StepSchedule,
    n_steps: int,
    seed: int,
    stream_id: int,
    with_companion: bool,
    sup_mode: str,
) -> HestonRunResult:
    """Single-trajectory run through the pathfun/empirical reference surfaces.

    Consumes noise in the same counter order as the vectorized engine with
    one replicate, so the two backends must agree; the engine is
    cross-checked against this in the tests.
    """
    from scipy.special import ndtri

    T, r, s0, K, L = cfg.T, cfg.r, cfg.s0, cfg.K, cfg.L
    rho, theta = cfg.rho_corr, cfg.theta
    cir = CirParams(k=cfg.k, theta=cfg.theta, varsigma=cfg.varsigma)
    c_rho = math.sqrt(1.0 - rho * rho)
    sq_theta = math.sqrt(theta)
    use_bridge = sup_mode == "bridge"
    blocks = 3 if use_bridge else 2

    stream = GaussianStream(seed, stream_id=stream_id)
    v = float(sample_stationary_v(cfg, stream, size=1)[0])
    xi = 0.0
    xibs = 0.0

    functional = make_functional("barrier-uo-call", T, s0=s0, r=r, K=K, L=L)
    window = PathWindow(T)
    window.append(0.0, 0.0)
    acc = EmpiricalAccumulator(schedule)
    window_bs = PathWindow(T) if with_companion else None
    acc_bs = EmpiricalAccumulator(schedule) if with_companion else None
    if with_companion:
        window_bs.append(0.0, 0.0)

    vacc = v2acc = 0.0
    for n in range(1, n_steps + 1):
        gam = schedule.gamma(n)
        t = schedule.cum_time(n)
        rt = math.sqrt(gam)
        u3 = stream.uniform(blocks)
        dW1 = rt * float(ndtri(u3[0]))
        dW2 = rt * float(ndtri(u3[1]))
        sqv = math.sqrt(v)
        comb = rho * dW2 + c_rho * dW1
        xi_new = xi + (r - 0.5 * v) * gam + sqv * comb
        v_new = float(cir_reflected_step(cir, v, gam, dW2))
        if use_bridge:
            V = float(bridge_sup_sample(xi, xi_new, sqv, gam, u3[2]))
        else:
            V = max(xi, xi_new)
        window.append(t, xi_new, interval_sup=V)
        on_step(acc, window, functional, schedule)
        vacc += gam * v
        v2acc += gam * v * v
        if with_companion:
            xibs_new = xibs + (r - 0.5 * theta) * gam + sq_theta * comb
            if use_bridge:
                Vb = float(bridge_sup_sample(xibs, xibs_new, sq_theta, gam, u3[2]))
            else:
                Vb = max(xibs, xibs_new)
            window_bs.append(t, xibs_new, interval_sup=Vb)
            on_step(acc_bs, window_bs, functional, schedule)
            xibs = xibs_new
        xi, v = xi_new, v_new

    snap = acc.snapshot()
    gamma_n = schedule.cum_time(n_steps)
    return HestonRunResult(
        raw=np.array([snap.value]),
        bs_raw=np.array([acc_bs.snapshot().value]) if with_companion else None,
        terms=snap.terms,
        gamma_terms=snap.gamma_total,
        vbar_mean=np.array([vacc / gamma_n]),
        vbar_second=np.array([v2acc / gamma_n]),
        trace=[],
    )


def price_stationary_heston(
    cfg: HestonConfig,
    schedule: StepSchedule,
    n_steps: int,
    seed: int = 0,
    control_variate: bool = True,
    n_replicates: int = 1,
    sup_mode: str = "bridge",
    backend: str = "fast",
    v0=None,
    trace_every: int | None = None,
) -> dict:
    """Price the up-and-out call in the stationary Heston model.

    Runs ``n_replicates`` independent trajectories of ``n_steps`` decreasing
    steps each.  With the control variate on, each trajectory's estimate is
    raw - companion + closed-form companion price, the companion being the
    Black-Scholes barrier value under the same Brownian increments.
    """
    if backend == "reference":
        if n_replicates != 1:
            raise ValueError("the reference backend runs a single trajectory")
        res = _reference_run(
            cfg, schedule, n_steps, seed, 0, control_variate, sup_mode
        )
    elif backend == "fast":
        res = run_stationary_heston(
            cfg,
            schedule,
            n_steps,
            n_replicates=n_replicates,
            seed=seed,
            with_companion=control_variate,
            sup_mode=sup_mode,
            v0=v0,
            trace_every=trace_every,
        )
    else:
        raise ValueError(f"unknown backend {backend!r}")

    c_bs = bs_barrier_price(cfg.s0, cfg.r, math.sqrt(cfg.theta), cfg.T, cfg.K, cfg.L)
    raw = res.raw
    if control_variate:
        per_rep = raw - res.bs_raw + c_bs
    else:
        per_rep = raw
    M = per_rep.size
    price = float(per_rep.mean())
    stderr = float(per_rep.std(ddof=1) / math.sqrt(M)) if M > 1 else float("nan")
    return {
        "price": price,
        "stderr": stderr,
        "raw_value": float(raw.mean()),
        "bs_companion": float(res.bs_raw.mean()) if res.bs_raw is not None else None,
        "cv_adjustment": float(c_bs - res.bs_raw.mean()) if res.bs_raw is not None else 0.0,
        "bs_closed_form": c_bs,
        "per_replicate": per_rep,
        "terms": res.terms,
        "gamma_terms": res.gamma_terms,
        "vbar_mean": float(res.vbar_mean.mean()),
        "vbar_second": float(res.vbar_second.mean()),
        "trace": res.trace,
        "config": asdict(cfg),
        "seed": seed,
        "n_steps": n_steps,
        "control_variate": control_variate,
    }


# Long control-variate run frozen for desk-scale experiments; regenerate with
# compute_reference_price (see demos/recompute_reference.py).
REFERENCE_PRICE = {
    "value": 1.6885,
    "stderr": 0.0013,
    "config": asdict(DEFAULT_CONFIG),
    "schedule": {"family": "poly", "gamma1": 1.0, "rho": 0.6},
    "n_steps": 1_000_000,
    "replicates": 128,
    "seed": 20240501,
}


def compute_reference_price(
    cfg: HestonConfig = DEFAULT_CONFIG,
    schedule: StepSchedule | None = None,
    n_steps: int = 1_000_000,
    n_replicates: int = 128,
    seed: int = 20240501,
) -> dict:
    """Recompute the cached reference premium (control variate on)."""
    if schedule is None:
        schedule = StepSchedule(gamma1=1.0, rho=0.6)
    out = price_stationary_heston(
        cfg,
        schedule,
        n_steps,
        seed=seed,
        control_variate=True,
        n_replicates=n_replicates,
    )
    return {
        "value": out["price"],
        "stderr": out["stderr"],
        "config": asdict(cfg),
        "schedule": {"family": "poly", "gamma1": schedule.gamma1, "rho": schedule.rho},
        "n_steps": n_steps,
        "replicates": n_replicates,
        "seed": seed,
    }


def run_figure1(
    cfg: HestonConfig,
    schedule: StepSchedule,
    N: int = 500_000,
    M: int = 2000,
    seed: int = 0,
    reference: float | None = None,
    h: float | None = None,
) -> cltlab.CltExperiment:
    """Replicated normalized errors of the raw barrier estimator.

    Each replicate contributes sqrt(Gamma) (nu_bar - reference); the sample
    is summarized by its empirical variance, the Gaussian-kernel density at
    bandwidth M^(-1/5), and normality statistics.  ``reference`` defaults to
    the cached long control-variate run.
    """
    if reference is None:
        reference = REFERENCE_PRICE["value"]
    res = run_stationary_heston(
        cfg,
        schedule,
        N,
        n_replicates=M,
        seed=seed,
        with_companion=False,
        sup_mode="bridge",
    )
    samples = math.sqrt(res.gamma_terms) * (res.raw - reference)
    sigma2_hat = float(samples.var(ddof=1))
    if h is None:
        h = float(M) ** (-0.2)
    density = cltlab.kernel_density(samples, h)
    stats = cltlab.normality_stats(samples, sigma2_hat) if M >= 100 else None
    return cltlab.CltExperiment(
        M=M,
        N=N,
        samples=samples,
        sigma2_hat=sigma2_hat,
        density_grid=density,
        h=h,
        gamma_terms=res.gamma_terms,
        terms=res.terms,
        seed=seed,
        stats=stats,
        meta={
            "model": "heston-barrier",
            "reference": reference,
            "config": asdict(cfg),
            "vbar_mean": float(res.vbar_mean.mean()),
        },
    )
