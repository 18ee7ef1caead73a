"""Counter-based deterministic random streams.

Every variate is a pure function of (seed, stream_id, counter): the k-th raw
64-bit word of a Philox generator keyed by (seed, stream_id) is mapped to a
uniform in (0,1) and, for normals, through the exact inverse CDF.  Distinct
stream ids give independent-quality streams, and replicate workers can seek
anywhere without generating the prefix.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

__all__ = ["GaussianStream"]

_INV_2_53 = 1.0 / 9007199254740992.0  # 2^-53


class GaussianStream:
    """Seekable stream of uniforms / standard normals.

    One raw 64-bit word is consumed per variate, so the counter advances by
    exactly ``size`` per call and two streams with the same (seed, stream_id,
    counter) always produce the same output.
    """

    def __init__(self, seed: int, stream_id: int = 0, counter: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.counter = int(counter)
        self._bg = None
        self._bg_pos = -1

    def _key(self) -> np.ndarray:
        return np.array(
            [np.uint64(self.seed & 0xFFFFFFFFFFFFFFFF),
             np.uint64(self.stream_id & 0xFFFFFFFFFFFFFFFF)],
            dtype=np.uint64,
        )

    def _raw(self, size: int) -> np.ndarray:
        if self._bg is None or self._bg_pos != self.counter:
            self._bg = np.random.Philox(key=self._key())
            # Philox advances in blocks of 4 raw words; burn the remainder
            self._bg.advance(self.counter // 4)
            rem = self.counter % 4
            if rem:
                self._bg.random_raw(rem)
            self._bg_pos = self.counter
        out = self._bg.random_raw(size)
        self.counter += size
        self._bg_pos = self.counter
        return out

    def uniform(self, size: int | None = None):
        """Uniform variates on the open interval (0,1)."""
        n = 1 if size is None else int(size)
        raw = self._raw(n)
        u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53
        return float(u[0]) if size is None else u

    def normal(self, size: int | None = None):
        """Standard normal variates (exact inverse-CDF of the uniforms)."""
        u = self.uniform(size=1 if size is None else size)
        z = ndtri(u)
        return float(z[0]) if size is None else z

    def spawn(self, stream_id: int) -> "GaussianStream":
        """Fresh stream with the same seed and a different stream id."""
        return GaussianStream(self.seed, stream_id=stream_id)

    def __repr__(self) -> str:  # pragma: no cover
        return (
            f"GaussianStream(seed={self.seed}, stream_id={self.stream_id}, "
            f"counter={self.counter})"
        )
