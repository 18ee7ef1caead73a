"""Vectorized drivers for windowed empirical averages over many replicates.

All replicates advance in lockstep through the shared step schedule, so the
pending-origin bookkeeping is scalar while states, interval maxima and folds
are (M,) vectors.  The sliding window maximum uses a two-stack max-queue
(amortized O(1) per step, vectorized across replicates); it is the engine
twin of pathfun.SlidingMax and is cross-checked against it in the tests.

Noise layout: each step consumes fixed-size blocks from one counter stream
(normals for the increments, then one uniform per bridge draw), so a run is
a pure function of (seed, stream_id, schedule, model, mode, M).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .pathfun import PathFunctional, bridge_sup_sample
from .schemes import CirParams, SchemeBlowUpError
from .stepgrid import StepSchedule
from .streams import GaussianStream

__all__ = [
    "VectorMaxQueue",
    "VectorRing",
    "VectorKahanFold",
    "run_windowed_functional",
    "HestonRunResult",
    "run_stationary_heston",
]

_NOISE_CHUNK = 1024


class VectorMaxQueue:
    """Max over a FIFO queue of (M,) rows; push right, pop left, O(1) amortized."""

    def __init__(self):
        self._in_vals: list[np.ndarray] = []
        self._in_max: list[np.ndarray] = []
        self._out_max: list[np.ndarray] = []

    def push(self, row: np.ndarray) -> None:
        m = row if not self._in_max else np.maximum(row, self._in_max[-1])
        self._in_vals.append(row)
        self._in_max.append(m)

    def popleft(self) -> None:
        if not self._out_max:
            if not self._in_vals:
                raise IndexError("pop from empty max-queue")
            block = np.stack(self._in_vals[::-1])  # newest..oldest
            self._out_max = list(np.maximum.accumulate(block, axis=0))
            self._in_vals.clear()
            self._in_max.clear()
        self._out_max.pop()

    def max(self) -> np.ndarray:
        if self._out_max and self._in_max:
            return np.maximum(self._out_max[-1], self._in_max[-1])
        if self._out_max:
            return self._out_max[-1]
        if self._in_max:
            return self._in_max[-1]
        raise ValueError("empty max-queue")

    def __len__(self) -> int:
        return len(self._out_max) + len(self._in_vals)


class VectorRing:
    """Ring of (M,) rows addressed by absolute grid index, grown on demand."""

    def __init__(self, M: int, cap: int = 1024):
        self._buf = np.empty((cap, M))
        self._cap = cap
        self.lo = 0
        self.hi = 0  # valid indices: [lo, hi)

    def append(self, row: np.ndarray) -> None:
        if self.hi - self.lo >= self._cap:
            self._grow()
        self._buf[self.hi % self._cap] = row
        self.hi += 1

    def _grow(self) -> None:
        new_cap = self._cap * 2
        new_buf = np.empty((new_cap, self._buf.shape[1]))
        for idx in range(self.lo, self.hi):
            new_buf[idx % new_cap] = self._buf[idx % self._cap]
        self._buf = new_buf
        self._cap = new_cap

    def get(self, idx: int) -> np.ndarray:
        if not self.lo <= idx < self.hi:
            raise IndexError(f"ring index {idx} outside [{self.lo}, {self.hi})")
        return self._buf[idx % self._cap]

    def release(self, new_lo: int) -> None:
        self.lo = max(self.lo, new_lo)


class VectorKahanFold:
    """Compensated convex fold value <- value + w (y - value) on (M,) rows."""

    def __init__(self, M: int):
        self.value = np.zeros(M)
        self._comp = np.zeros(M)

    def fold(self, w: float, y: np.ndarray) -> None:
        delta = w * (y - self.value) - self._comp
        new = self.value + delta
        self._comp = (new - self.value) - delta
        self.value = new


def _constant_sigma(model) -> float:
    s_a = float(np.asarray(model.diffusion(np.zeros(1)))[0, 0])
    s_b = float(np.asarray(model.diffusion(np.ones(1)))[0, 0])
    if s_a != s_b:
        raise ValueError(
            "vectorized windowed runs support constant-diffusion 1-d models only"
        )
    return s_a


def run_windowed_functional(
    model,
    schedule: StepSchedule,
    functional: PathFunctional,
    n_steps: int,
    n_replicates: int = 1,
    seed: int = 0,
    stream_id: int = 0,
    scheme: str = "genuine",
    x0=None,
) -> dict:
    """Empirical functional average for 1-d constant-diffusion models.

    Supported functional kinds: "marginal-start" (plain weighted average over
    grid states), "terminal" (stepwise reading at the shifted horizon),
    "capped-sup" (running maximum through the per-interval bridge samples for
    the genuine scheme, grid maxima for the stepwise one), "constant".
    scheme is "genuine", "stepwise" or "exact".

    Returns per-replicate values with the emitted-term count and its Gamma.
    """
    if scheme not in ("genuine", "stepwise", "exact"):
        raise ValueError(f"unknown scheme {scheme!r}")
    kind = functional.kind
    if kind == "marginal-start":
        from .empirical import marginal_average
        from .pathfun import _MAP_REGISTRY

        phi = _MAP_REGISTRY[functional.params.get("map", "identity")]
        out = marginal_average(
            model,
            schedule,
            phi,
            n_steps,
            seed=seed,
            stream_id=stream_id,
            n_replicates=n_replicates,
            scheme="exact" if scheme == "exact" else "euler",
            x0=x0,
        )
        vals = np.atleast_1d(np.asarray(out["values"], dtype=float))
        return {"values": vals, "terms": out["terms"], "gamma_terms": out["gamma_total"]}
    if kind == "constant":
        c = functional.params.get("value", 1.0)
        cum = schedule.cum_times(n_steps)
        terms = int(np.searchsorted(cum, cum[n_steps] - functional.horizon, side="left"))
        if terms == 0:
            raise ValueError("run too short: no term's horizon was covered")
        return {
            "values": np.full(n_replicates, float(c)),
            "terms": terms,
            "gamma_terms": float(cum[terms]),
        }
    if kind not in ("terminal", "capped-sup"):
        raise ValueError(
            f"vectorized engine does not handle kind {kind!r}; "
            "use the pathfun/empirical reference surfaces"
        )

    T = functional.horizon
    M = int(n_replicates)
    exact = scheme == "exact"
    if exact and (model.analytic is None or model.analytic.exact_transition is None):
        raise ValueError(f"model {model.name!r} has no exact transition")
    sig0 = _constant_sigma(model)
    use_bridge = scheme in ("genuine", "exact")  # exact mode: bridge as labeled surrogate
    track_sup = kind == "capped-sup"
    cap = functional.params.get("cap", 3.0)
    from .pathfun import _MAP_REGISTRY

    phi = _MAP_REGISTRY[functional.params.get("map", "identity")]

    stream = GaussianStream(seed, stream_id=stream_id)
    if x0 is not None:
        x = np.full(M, float(x0))
    elif model.analytic is not None and model.analytic.invariant_sampler is not None:
        x = np.asarray(model.analytic.invariant_sampler(stream, M), dtype=float)
    else:
        x = np.zeros(M)

    g = schedule.gammas(n_steps)
    cum = schedule.cum_times(n_steps)
    sqg = np.sqrt(g)

    fold = VectorKahanFold(M)
    maxq = VectorMaxQueue() if track_sup else None
    head = 1  # next term to emit; its origin has grid index head-1
    blocks = 2 if use_bridge else 1

    n = 0
    while n < n_steps:
        b = min(_NOISE_CHUNK, n_steps - n)
        u_all = stream.uniform(b * blocks * M).reshape(b, blocks, M)
        for i in range(b):
            k = n + i + 1  # completing step k, grid point Gamma_k
            gam = g[k - 1]
            z = ndtri(u_all[i, 0])
            if exact:
                x_new = model.analytic.exact_transition(None, x, gam, z)
            else:
                x_new = x + gam * model.drift(x) + sig0 * sqg[k - 1] * z
            if track_sup:
                if use_bridge:
                    V = bridge_sup_sample(x, x_new, sig0, gam, u_all[i, 1])
                else:
                    V = np.maximum(x, x_new)
                maxq.push(V)
            # every origin whose horizon this grid point strictly covers has
            # floor index k-1 (it was not covered at the previous point)
            while cum[k] > cum[head - 1] + T:
                if kind == "terminal":
                    y = phi(x)
                else:
                    y = np.clip(maxq.max(), -cap, cap)
                fold.fold(g[head - 1] / cum[head], y)
                if track_sup:
                    maxq.popleft()
                head += 1
            x = x_new
        if not np.all(np.isfinite(x)):
            raise SchemeBlowUpError(f"non-finite state near step {n + b}")
        n += b

    terms = head - 1
    if terms == 0:
        raise ValueError("run too short: no term's horizon was covered")
    return {"values": fold.value, "terms": terms, "gamma_terms": float(cum[terms])}


@dataclass
class HestonRunResult:
    raw: np.ndarray            # per-replicate empirical barrier value, Heston
    bs_raw: np.ndarray | None  # same functional on the Black-Scholes companion
    terms: int
    gamma_terms: float
    vbar_mean: np.ndarray      # weighted marginal average of the variance scheme
    vbar_second: np.ndarray
    trace: list                # (term k, Gamma_k, raw value of replicate 0)


def run_stationary_heston(
    cfg,
    schedule: StepSchedule,
    n_steps: int,
    n_replicates: int = 1,
    seed: int = 0,
    stream_id: int = 0,
    with_companion: bool = True,
    sup_mode: str = "bridge",
    v0=None,
    trace_every: int | None = None,
) -> HestonRunResult:
    """Stationary-Heston barrier run: one trajectory per replicate.

    Per step: reflected Euler for the variance, log-price step driven by the
    combined Brownian increment, one bridge-sampled supremum per interval
    (volatility frozen at the left point), and a Black-Scholes companion with
    constant volatility sqrt(theta) consuming the same increments and bridge
    uniforms.  Terms fold into the empirical average once the grid strictly
    covers the shifted horizon.
    """
    if sup_mode not in ("bridge", "grid"):
        raise ValueError(f"unknown sup_mode {sup_mode!r}")
    M = int(n_replicates)
    T, r, K, L, s0 = cfg.T, cfg.r, cfg.K, cfg.L, cfg.s0
    rho, theta, k_rev, varsigma = cfg.rho_corr, cfg.theta, cfg.k, cfg.varsigma
    cir = CirParams(k=k_rev, theta=theta, varsigma=varsigma)
    c_rho = math.sqrt(1.0 - rho * rho)
    sq_theta = math.sqrt(theta)
    disc = math.exp(-r * T)
    log_ratio = math.log(L / s0)

    stream = GaussianStream(seed, stream_id=stream_id)
    if v0 is None:
        from .heston import sample_stationary_v

        v = sample_stationary_v(cfg, stream, size=M)
    else:
        v = np.full(M, float(v0))
    xi = np.zeros(M)
    xibs = np.zeros(M) if with_companion else None

    g = schedule.gammas(n_steps)
    cum = schedule.cum_times(n_steps)
    sqg = np.sqrt(g)

    ring_xi = VectorRing(M)
    ring_xi.append(xi)
    ring_bs = None
    maxq_bs = None
    fold_bs = None
    if with_companion:
        ring_bs = VectorRing(M)
        ring_bs.append(xibs)
        maxq_bs = VectorMaxQueue()
        fold_bs = VectorKahanFold(M)
    maxq = VectorMaxQueue()
    fold = VectorKahanFold(M)
    vacc = np.zeros(M)
    v2acc = np.zeros(M)
    trace: list = []

    use_bridge = sup_mode == "bridge"
    blocks = 3 if use_bridge else 2
    head = 1

    n = 0
    while n < n_steps:
        b = min(_NOISE_CHUNK, n_steps - n)
        u_all = stream.uniform(b * blocks * M).reshape(b, blocks, M)
        for i in range(b):
            k = n + i + 1
            gam = g[k - 1]
            rt = sqg[k - 1]
            dW1 = rt * ndtri(u_all[i, 0])
            dW2 = rt * ndtri(u_all[i, 1])
            sqv = np.sqrt(v)
            comb = rho * dW2 + c_rho * dW1
            xi_new = xi + (r - 0.5 * v) * gam + sqv * comb
            v_new = np.abs(v + k_rev * gam * (theta - v) + varsigma * sqv * dW2)
            if use_bridge:
                u = u_all[i, 2]
                V = bridge_sup_sample(xi, xi_new, sqv, gam, u)
            else:
                V = np.maximum(xi, xi_new)
            maxq.push(V)
            ring_xi.append(xi_new)
            vacc += gam * v
            v2acc += gam * v * v
            if with_companion:
                xibs_new = xibs + (r - 0.5 * theta) * gam + sq_theta * comb
                if use_bridge:
                    Vb = bridge_sup_sample(xibs, xibs_new, sq_theta, gam, u)
                else:
                    Vb = np.maximum(xibs, xibs_new)
                maxq_bs.push(Vb)
                ring_bs.append(xibs_new)
                xibs = xibs_new
            while cum[k] > cum[head - 1] + T:
                anchor = ring_xi.get(head - 1)
                term_val = ring_xi.get(k - 1)
                alive = (maxq.max() - anchor) <= log_ratio
                y = disc * np.maximum(s0 * np.exp(term_val - anchor) - K, 0.0) * alive
                fold.fold(g[head - 1] / cum[head], y)
                maxq.popleft()
                if with_companion:
                    anchor_b = ring_bs.get(head - 1)
                    term_b = ring_bs.get(k - 1)
                    alive_b = (maxq_bs.max() - anchor_b) <= log_ratio
                    yb = disc * np.maximum(s0 * np.exp(term_b - anchor_b) - K, 0.0) * alive_b
                    fold_bs.fold(g[head - 1] / cum[head], yb)
                    maxq_bs.popleft()
                    ring_bs.release(head)
                ring_xi.release(head)
                if trace_every and (head % trace_every == 0):
                    trace.append(
                        (
                            head,
                            float(cum[head]),
                            float(fold.value[0]),
                            float(fold_bs.value[0]) if with_companion else float("nan"),
                        )
                    )
                head += 1
            xi = xi_new
            v = v_new
        if not (np.all(np.isfinite(xi)) and np.all(np.isfinite(v))):
            raise SchemeBlowUpError(f"non-finite state near step {n + b}")
        n += b

    terms = head - 1
    if terms == 0:
        raise ValueError("run too short: no term's horizon was covered")
    gamma_n = float(cum[n_steps])
    return HestonRunResult(
        raw=fold.value,
        bs_raw=fold_bs.value if with_companion else None,
        terms=terms,
        gamma_terms=float(cum[terms]),
        vbar_mean=vacc / gamma_n,
        vbar_second=v2acc / gamma_n,
        trace=trace,
    )
