"""Path windows, stopped functionals, and Brownian-bridge interval maxima.

A window holds the trailing grid points of one trajectory together with one
sampled supremum per grid interval.  Stopped functionals read the window
through a restricted view anchored at a shift origin: grid values are read
stepwise (no sub-grid interpolation) and suprema are taken over whole stored
intervals, so the covered range ends at the first grid point past the
horizon.  Window maxima over the moving origin use a monotone deque.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "bridge_sup_cdf",
    "bridge_sup_sample",
    "SlidingMax",
    "PathWindow",
    "WindowView",
    "WindowCoverageError",
    "PathFunctional",
    "eval_stopped",
    "barrier_payoff",
    "make_functional",
]


# ---------------------------------------------------------------------------
# Brownian-bridge supremum
# ---------------------------------------------------------------------------


def bridge_sup_cdf(x, y, lam, gam, z):
    """P(sup <= z) for the bridge from x to y over a step of length gam.

    The underlying segment is the linear interpolation of (x, y) plus
    lam * (Brownian bridge on [0, gam]); by the reflection principle the
    supremum has CDF 1 - exp(-2 (z-x)(z-y) / (gam lam^2)) for
    z >= max(x, y), and 0 below.
    """
    x, y, z = np.asarray(x, dtype=float), np.asarray(y, dtype=float), np.asarray(z, dtype=float)
    expo = -2.0 * (z - x) * (z - y) / (gam * np.asarray(lam, dtype=float) ** 2)
    out = np.where(z >= np.maximum(x, y), -np.expm1(expo), 0.0)
    if out.ndim == 0:
        return float(out)
    return out


def bridge_sup_sample(x, y, lam, gam, u):
    """Invert the supremum CDF at the uniform u.

    Solving 1 - exp(-2 (z-x)(z-y) / (gam lam^2)) = u for z >= max(x, y)
    gives z = ((x+y) + sqrt((x-y)^2 - 2 gam lam^2 ln(1-u))) / 2; it is
    evaluated here in the cancellation-free form max(x,y) + q with
    q = -gam lam^2 ln(1-u) / (sqrt(...) + |x-y|), so the output dominates
    both endpoints exactly.
    """
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise ValueError("u must lie strictly inside (0,1)")
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    neg_log = -np.log1p(-u)
    amp = gam * np.asarray(lam, dtype=float) ** 2 * neg_log
    d = np.abs(x - y)
    s = np.sqrt(d * d + 2.0 * amp)
    denom = s + d
    q = np.where(denom > 0.0, amp / np.where(denom > 0.0, denom, 1.0), 0.0)
    out = np.maximum(x, y) + q
    if out.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# sliding maximum
# ---------------------------------------------------------------------------


class SlidingMax:
    """Monotone deque tracking the max over a moving index window.

    Push entries in increasing index order; drop_older advances the left
    edge.  Amortized O(1) per operation, equivalent to rescanning the window
    whenever the previous maximum falls out.
    """

    def __init__(self):
        self._dq = deque()  # (index, value), values strictly decreasing

    def push(self, index: int, value: float) -> None:
        dq = self._dq
        while dq and dq[-1][1] <= value:
            dq.pop()
        dq.append((index, value))

    def drop_older(self, min_index: int) -> None:
        dq = self._dq
        while dq and dq[0][0] < min_index:
            dq.popleft()

    def max(self) -> float:
        if not self._dq:
            raise ValueError("window is empty")
        return self._dq[0][1]

    def __len__(self) -> int:
        return len(self._dq)


# ---------------------------------------------------------------------------
# path windows
# ---------------------------------------------------------------------------


class WindowCoverageError(RuntimeError):
    """The window no longer holds the grid range a functional needs."""


class PathWindow:
    """Trailing buffer of grid points (time, value) with per-interval sups.

    ``base_index`` is the grid index of the oldest retained point.  The
    interval supremum pushed with grid point n covers [Gamma_{n-1}, Gamma_n].
    Retention is the caller's job via :meth:`drop_before`, keyed to the
    oldest shift origin still pending.
    """

    def __init__(self, horizon: float):
        if horizon <= 0.0:
            raise ValueError("horizon must be positive")
        self.horizon = float(horizon)
        self.base_index = 0
        self.times: deque[float] = deque()
        self.values: deque = deque()
        self.interval_sups: deque = deque()  # aligned with times[1:]

    def append(self, t: float, value, interval_sup: float | None = None) -> None:
        if self.times:
            if t <= self.times[-1]:
                raise ValueError("grid times must be strictly increasing")
            self.interval_sups.append(interval_sup)
        self.times.append(float(t))
        self.values.append(value)

    @property
    def last_index(self) -> int:
        return self.base_index + len(self.times) - 1

    @property
    def last_time(self) -> float:
        return self.times[-1]

    def drop_before(self, grid_index: int) -> None:
        """Release grid points with index < grid_index."""
        while self.base_index < grid_index and len(self.times) > 1:
            self.times.popleft()
            self.values.popleft()
            self.interval_sups.popleft()
            self.base_index += 1

    def view(self, origin_index: int) -> "WindowView":
        """Restricted view of the path shifted to start at a grid origin.

        Covers whole intervals up to the first grid point strictly past
        origin + horizon; raises WindowCoverageError if the window does not
        hold that range.
        """
        if origin_index < self.base_index:
            raise WindowCoverageError(
                f"origin {origin_index} already dropped (base {self.base_index})"
            )
        i0 = origin_index - self.base_index
        times = list(self.times)
        t_origin = times[i0]
        t_end = t_origin + self.horizon
        if times[-1] <= t_end:
            raise WindowCoverageError(
                f"window ends at {times[-1]}, needs coverage past {t_end}"
            )
        # first grid point strictly past the horizon
        i1 = i0 + 1
        while times[i1] <= t_end:
            i1 += 1
        values = list(self.values)
        sups = list(self.interval_sups)
        return WindowView(
            origin_time=t_origin,
            horizon=self.horizon,
            times=np.array(times[i0 : i1 + 1]),
            values=values[i0 : i1 + 1],
            interval_sups=None
            if any(s is None for s in sups[i0:i1])
            else np.array(sups[i0:i1], dtype=float),
        )


@dataclass
class WindowView:
    """One shifted path segment: grid times/values on [u, u + T] plus the
    first grid point beyond, and the sampled sups of the covered intervals."""

    origin_time: float
    horizon: float
    times: np.ndarray
    values: list
    interval_sups: Optional[np.ndarray]

    def value_start(self):
        return self.values[0]

    def value_terminal_floor(self):
        """Stepwise reading of the path at origin + horizon (floor grid point)."""
        return self.values[-2] if len(self.values) >= 2 else self.values[0]

    def window_sup(self) -> float:
        """Supremum over the covered whole intervals.

        Uses the per-interval bridge samples when present (genuine scheme),
        else the grid values alone (stepwise-constant scheme).
        """
        if self.interval_sups is not None:
            return float(np.max(self.interval_sups))
        return float(max(float(np.asarray(v).reshape(-1)[0]) for v in self.values))

    def shifted_times(self) -> np.ndarray:
        return self.times - self.origin_time


# ---------------------------------------------------------------------------
# functionals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathFunctional:
    """Stopped functional F_T with boundedness/Lipschitz metadata.

    ``evaluate`` consumes a WindowView.  ``bound`` and ``lip`` document the
    sup-norm bound and Lipschitz constant (inf when unknown); a finite bound
    is enforced at evaluation time.  ``kind``/``params`` let the vectorized
    engines shortcut the generic evaluation path.
    """

    horizon: float
    evaluate: Callable[[WindowView], float]
    bound: float = math.inf
    lip: float = math.inf
    kind: str = "generic"
    params: dict = field(default_factory=dict)


def eval_stopped(f: PathFunctional, window: PathWindow, origin_index: int) -> float:
    """Evaluate F on the window shifted to the given grid origin."""
    if f.horizon != window.horizon:
        raise ValueError("functional and window horizons differ")
    out = float(f.evaluate(window.view(origin_index)))
    if math.isfinite(f.bound) and abs(out) > f.bound * (1 + 1e-12):
        raise ValueError(f"functional value {out} exceeds declared bound {f.bound}")
    return out


def barrier_payoff(view: WindowView, s0: float, r: float, K: float, L: float) -> float:
    """Discounted up-and-out call payoff read from a log-price window.

    The window carries the log price; readings are taken relative to the
    shift origin, so each term re-anchors the spot at s0.  Knock-out uses
    the whole-interval supremum.
    """
    if L <= 0.0 or K < 0.0:
        raise ValueError("need L > 0 and K >= 0")
    T = view.horizon
    xi0 = float(np.asarray(view.value_start()).reshape(-1)[0])
    xi_T = float(np.asarray(view.value_terminal_floor()).reshape(-1)[0])
    # knock-out compared in log space: s0 exp(sup - xi0) <= L
    if view.window_sup() - xi0 > math.log(L / s0):
        return 0.0
    return math.exp(-r * T) * max(s0 * math.exp(xi_T - xi0) - K, 0.0)


_MAP_REGISTRY = {
    "identity": lambda v: v,
    "square": lambda v: v * v,
}


def _scalar(v) -> float:
    return float(np.asarray(v).reshape(-1)[0])


def make_functional(name: str, horizon: float, **params) -> PathFunctional:
    """Named functionals: "barrier-uo-call" {s0, r, K, L}, "marginal"
    {which: start|end, map}, "terminal-call" {s0, r, K}, "capped-sup" {cap},
    "constant" {value}."""
    if name == "barrier-uo-call":
        s0, r, K, L = params["s0"], params.get("r", 0.0), params["K"], params["L"]
        if not L > K > 0:
            raise ValueError("need L > K > 0")
        return PathFunctional(
            horizon=horizon,
            evaluate=lambda view: barrier_payoff(view, s0=s0, r=r, K=K, L=L),
            bound=max(L - K, 0.0) * math.exp(-r * horizon),
            kind="barrier-uo-call",
            params={"s0": s0, "r": r, "K": K, "L": L},
        )
    if name == "marginal":
        which = params.get("which", "start")
        phi = _MAP_REGISTRY[params.get("map", "identity")]
        if which == "start":
            return PathFunctional(
                horizon=horizon,
                evaluate=lambda view: phi(_scalar(view.value_start())),
                kind="marginal-start",
                params={"map": params.get("map", "identity")},
            )
        if which == "end":
            return PathFunctional(
                horizon=horizon,
                evaluate=lambda view: phi(_scalar(view.value_terminal_floor())),
                kind="terminal",
                params={"map": params.get("map", "identity")},
            )
        raise ValueError(f"marginal 'which' must be start or end, got {which!r}")
    if name == "terminal-call":
        s0, r, K = params["s0"], params.get("r", 0.0), params["K"]
        return PathFunctional(
            horizon=horizon,
            evaluate=lambda view: math.exp(-r * horizon)
            * max(s0 * math.exp(_scalar(view.value_terminal_floor()) - _scalar(view.value_start())) - K, 0.0),
            kind="terminal-call",
            params={"s0": s0, "r": r, "K": K},
        )
    if name == "capped-sup":
        cap = params.get("cap", 3.0)
        return PathFunctional(
            horizon=horizon,
            evaluate=lambda view: min(max(view.window_sup(), -cap), cap),
            bound=cap,
            lip=1.0,
            kind="capped-sup",
            params={"cap": cap},
        )
    if name == "constant":
        c = params.get("value", 1.0)
        return PathFunctional(
            horizon=horizon,
            evaluate=lambda view: c,
            bound=abs(c),
            lip=0.0,
            kind="constant",
            params={"value": c},
        )
    raise ValueError(f"unknown functional {name!r}")
