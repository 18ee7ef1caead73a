"""Decreasing step sequences and the time-index machinery built on them.

A schedule owns the step sequence ``gamma_n`` and its running times
``Gamma_n = gamma_1 + ... + gamma_n``.  Every scheme, empirical average and
experiment in this package advances along one of these grids, so the
cumulative times must be exact and strictly increasing at working precision;
they are accumulated in extended precision before rounding to float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "StepSchedule",
    "ScheduleReport",
    "check_conditions",
    "schedule_from_config",
]

_CACHE_BLOCK = 4096


class StepSchedule:
    """Step sequence gamma_n = gamma1 * n^(-rho), or a user-supplied sequence.

    The polynomial family is the built-in default (rho in (0,1) gives
    gamma_n -> 0 and Gamma_n -> infinity).  An explicit nonincreasing
    positive sequence can be loaded through :meth:`explicit`; it is validated
    once and becomes exhausted past its last entry.
    """

    def __init__(self, gamma1: float = 1.0, rho: float = 0.6):
        if not gamma1 > 0.0:
            raise ValueError(f"gamma1 must be positive, got {gamma1}")
        if not 0.0 < rho < 1.0:
            raise ValueError(f"rho must lie in (0,1), got {rho}")
        self.gamma1 = float(gamma1)
        self.rho = float(rho)
        self._explicit = None
        self._gammas = np.empty(0)
        self._cum = np.zeros(1)  # cum[n] = Gamma_n, cum[0] = 0
        self._cum_hi = np.longdouble(0.0)  # running total, extended precision

    @classmethod
    def explicit(cls, values) -> "StepSchedule":
        """Schedule from an explicit nonincreasing sequence of positive steps."""
        values = np.asarray(values, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("explicit schedule needs a non-empty 1-d sequence")
        if not np.all(values > 0.0):
            raise ValueError("explicit schedule steps must be positive")
        if np.any(np.diff(values) > 0.0):
            raise ValueError("explicit schedule steps must be nonincreasing")
        self = cls.__new__(cls)
        self.gamma1 = float(values[0])
        self.rho = float("nan")
        self._explicit = values
        self._gammas = np.empty(0)
        self._cum = np.zeros(1)
        self._cum_hi = np.longdouble(0.0)
        self._extend(values.size)
        return self

    @property
    def is_polynomial(self) -> bool:
        return self._explicit is None

    @property
    def size(self) -> int:
        """Number of steps currently cached (unbounded for the polynomial family)."""
        return self._gammas.size

    def _raw_block(self, start: int, stop: int) -> np.ndarray:
        # steps gamma_{start+1} .. gamma_{stop}, 0-based slice semantics
        if self._explicit is not None:
            if stop > self._explicit.size:
                raise IndexError(
                    f"explicit schedule has {self._explicit.size} steps, "
                    f"requested index {stop}"
                )
            return self._explicit[start:stop]
        n = np.arange(start + 1, stop + 1, dtype=float)
        return self.gamma1 * n ** (-self.rho)

    def _extend(self, n: int) -> None:
        have = self._gammas.size
        if n <= have:
            return
        target = max(n, have + _CACHE_BLOCK)
        if self._explicit is not None:
            target = min(target, self._explicit.size)
            if n > target:
                raise IndexError(
                    f"explicit schedule has {self._explicit.size} steps, "
                    f"requested index {n}"
                )
        block = self._raw_block(have, target)
        # extended-precision prefix sums keep Gamma_n monotone and exact to
        # the last float64 ulp over very long horizons
        hi = self._cum_hi + np.cumsum(block.astype(np.longdouble))
        self._cum_hi = hi[-1]
        self._gammas = np.concatenate([self._gammas, block])
        self._cum = np.concatenate([self._cum, hi.astype(float)])

    def gamma(self, n: int) -> float:
        """Step gamma_n, n >= 1."""
        if n < 1:
            raise ValueError(f"step index must be >= 1, got {n}")
        self._extend(n)
        return float(self._gammas[n - 1])

    def cum_time(self, n: int) -> float:
        """Grid time Gamma_n = sum of the first n steps; Gamma_0 = 0."""
        if n < 0:
            raise ValueError(f"grid index must be >= 0, got {n}")
        self._extend(n)
        return float(self._cum[n])

    def gammas(self, n: int) -> np.ndarray:
        """Array [gamma_1, ..., gamma_n]."""
        self._extend(n)
        return self._gammas[:n].copy()

    def cum_times(self, n: int) -> np.ndarray:
        """Array [Gamma_0, ..., Gamma_n] of length n+1."""
        self._extend(n)
        return self._cum[: n + 1].copy()

    def locate(self, t: float) -> tuple[int, float]:
        """Index N(t) = min{n >= 0 : Gamma_{n+1} > t} and its grid time.

        Returns ``(N(t), Gamma_{N(t)})`` with Gamma_{N(t)} <= t < Gamma_{N(t)+1}.
        """
        if t < 0.0:
            raise ValueError(f"t must be >= 0, got {t}")
        while self._cum[-1] <= t:
            if self._explicit is not None and self._gammas.size == self._explicit.size:
                raise IndexError(f"explicit schedule exhausted before reaching t={t}")
            self._extend(self._gammas.size + _CACHE_BLOCK)
        m = int(np.searchsorted(self._cum, t, side="right"))  # first Gamma_m > t
        n = m - 1
        return n, float(self._cum[n])


@dataclass
class ScheduleReport:
    """Verdict of a step-condition check."""

    condition: str
    delta: float
    converges: bool
    partial_sum: float
    fitted_tail_exponent: float
    analytic: bool  # verdict from the closed-form criterion vs. tail fit only


def _tail_fit(k: np.ndarray, s: np.ndarray) -> float:
    # log-log slope over the last decade of indices
    lo = max(1, k[-1] // 10)
    mask = (k >= lo) & (s > 0.0)
    if mask.sum() < 8:
        return float("nan")
    return float(np.polyfit(np.log(k[mask]), np.log(s[mask]), 1)[0])


def check_conditions(
    schedule: StepSchedule,
    delta: float = 0.0,
    horizon: int = 10_000,
    condition: str = "functional",
) -> ScheduleReport:
    """Check the step-sequence summability condition for the CLTs.

    ``condition="functional"`` checks convergence of
    sum_k gamma_k^(3/2 - delta) / sqrt(Gamma_k): delta = 0 is the genuine-scheme
    requirement, delta > 0 the stronger stepwise-scheme one.  For the
    polynomial family the verdict is analytic: convergence iff
    rho > 1 / (2 (1 - delta)).  ``condition="marginal"`` checks the weaker
    marginal-CLT requirement (sum_k gamma_k^2) / sqrt(Gamma_n) -> 0, which for
    the polynomial family holds iff rho > 1/3.

    A tail-exponent fit of the summand is reported as a diagnostic and
    supplies the verdict for explicit (non-polynomial) schedules.
    """
    if horizon < 1000:
        raise ValueError(f"horizon must be >= 1000, got {horizon}")
    if delta >= 0.5:
        raise ValueError(f"delta must be < 1/2, got {delta}")
    if delta < 0.0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    if condition not in ("functional", "marginal"):
        raise ValueError(f"unknown condition {condition!r}")

    n = horizon
    if schedule._explicit is not None:
        n = min(n, schedule._explicit.size)
    g = schedule.gammas(n)
    cum = schedule.cum_times(n)[1:]  # Gamma_1..Gamma_n
    k = np.arange(1, n + 1)

    if condition == "functional":
        summand = g ** (1.5 - delta) / np.sqrt(cum)
        partial = float(summand.sum())
        slope = _tail_fit(k, summand)
        if schedule.is_polynomial:
            converges = schedule.rho > 1.0 / (2.0 * (1.0 - delta))
        else:
            converges = bool(np.isfinite(slope) and slope < -1.0)
    else:
        ratio = np.cumsum(g**2) / np.sqrt(cum)
        partial = float(ratio[-1])
        slope = _tail_fit(k, ratio)
        if schedule.is_polynomial:
            converges = schedule.rho > 1.0 / 3.0
        else:
            converges = bool(np.isfinite(slope) and slope < 0.0)

    return ScheduleReport(
        condition=condition,
        delta=delta,
        converges=converges,
        partial_sum=partial,
        fitted_tail_exponent=slope,
        analytic=schedule.is_polynomial,
    )


def schedule_from_config(cfg: dict) -> StepSchedule:
    """Build a schedule from {"family": "poly", "gamma1", "rho"} or
    {"family": "explicit", "values": [...]}."""
    family = cfg.get("family", "poly")
    if family == "poly":
        return StepSchedule(gamma1=cfg.get("gamma1", 1.0), rho=cfg.get("rho", 0.6))
    if family == "explicit":
        return StepSchedule.explicit(cfg["values"])
    raise ValueError(f"unknown schedule family {family!r}")
