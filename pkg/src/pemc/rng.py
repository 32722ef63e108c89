"""Reproducible, splittable random streams and the sampling primitives built on them.

Every stream is a Philox counter-based generator keyed by ``(master_seed,
stream_id)``. Child streams get their id from a keyed hash of the parent id and
a label path, so any worker can rebuild exactly the stream it needs without
coordinating with the others.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

_MASK64 = (1 << 64) - 1
_SUM_TOL = 1e-9


def _hash64(*parts: object) -> int:
    h = hashlib.blake2b(digest_size=8, person=b"pemc-rng")
    for part in parts:
        data = repr(part).encode()
        h.update(struct.pack("<Q", len(data)))
        h.update(data)
    return int.from_bytes(h.digest(), "little")


class RngStream:
    """A single-owner random stream identified by ``(master_seed, stream_id)``.

    Two streams with equal identifiers produce bit-identical sequences. Do not
    share one stream between threads; spawn a child per worker instead.
    """

    __slots__ = ("master_seed", "stream_id", "_gen")

    def __init__(self, master_seed: int, stream_id: int = 0):
        self.master_seed = int(master_seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        key = np.array([self.master_seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def spawn(self, *labels: object) -> "RngStream":
        """Child stream for a label path, e.g. ``stream.spawn("repeat", 3)``."""
        return RngStream(self.master_seed, _hash64(self.stream_id, *labels))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def __repr__(self) -> str:
        return f"RngStream(master_seed={self.master_seed}, stream_id={self.stream_id})"


def gaussian_pair(rho: float, dt: float, stream: RngStream, size=None):
    """Correlated Brownian increments ``(sqrt(dt) Z1, sqrt(dt) (rho Z1 + sqrt(1-rho^2) Z2))``."""
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"correlation must lie in [-1, 1], got {rho}")
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    shape = (2,) if size is None else (2,) + tuple(np.atleast_1d(size))
    z = stream.normal(shape)
    sq = math.sqrt(dt)
    dw1 = sq * z[0]
    dw2 = sq * (rho * z[0] + math.sqrt(1.0 - rho * rho) * z[1])
    if size is None:
        return float(dw1), float(dw2)
    return dw1, dw2


@dataclass(frozen=True)
class RateSchedule:
    """Piecewise-constant intensity: ``rates[k]`` applies on ``[k*width, (k+1)*width)``."""

    rates: np.ndarray
    width: float = 1.0

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float).ravel()
        if rates.size == 0:
            raise ValueError("rate schedule is empty")
        if not np.all(np.isfinite(rates)) or np.any(rates < 0):
            raise ValueError("rates must be finite and nonnegative")
        if not self.width > 0:
            raise ValueError("segment width must be positive")
        object.__setattr__(self, "rates", rates)

    @property
    def horizon(self) -> float:
        return self.rates.size * self.width

    def integrated(self) -> float:
        return float(self.rates.sum() * self.width)

    def rate_at(self, t) -> np.ndarray:
        idx = np.clip((np.asarray(t) / self.width).astype(int), 0, self.rates.size - 1)
        return self.rates[idx]

    def scaled(self, factor: float) -> "RateSchedule":
        return RateSchedule(self.rates * factor, self.width)


def sample_nhpp(schedule: RateSchedule, stream: RngStream) -> np.ndarray:
    """Event times of a nonhomogeneous Poisson process, by thinning at the peak rate."""
    lam_max = float(schedule.rates.max())
    if lam_max == 0.0:
        return np.empty(0)
    horizon = schedule.horizon
    count = stream.generator.poisson(lam_max * horizon)
    cand = np.sort(stream.uniform(count) * horizon)
    keep = stream.uniform(count) * lam_max < schedule.rate_at(cand)
    return cand[keep]


# --- standard distributions -------------------------------------------------


@dataclass(frozen=True)
class Exponential:
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"exponential rate must be positive, got {self.rate}")


@dataclass(frozen=True)
class Gamma:
    shape: float
    rate: float

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ValueError("gamma shape and rate must be positive")


@dataclass(frozen=True)
class Uniform:
    a: float
    b: float

    def __post_init__(self):
        if not self.b >= self.a:
            raise ValueError(f"uniform bounds out of order: ({self.a}, {self.b})")


@dataclass(frozen=True)
class Multinomial:
    """Counts over categories for ``trials`` draws; ``trials=1`` gives one-hot rows."""

    probabilities: tuple
    trials: int = 1

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0):
            raise ValueError("multinomial probabilities must be a nonnegative vector")
        total = p.sum()
        if abs(total - 1.0) > _SUM_TOL:
            raise ValueError(f"multinomial probabilities sum to {total}, not 1")
        if self.trials < 0:
            raise ValueError("trials must be nonnegative")
        object.__setattr__(self, "probabilities", tuple(p / total))


DistSpec = Union[Exponential, Gamma, Uniform, Multinomial]


def sample_standard(dist: DistSpec, stream: RngStream, size=None):
    """Draw from one of the standard laws above."""
    g = stream.generator
    if isinstance(dist, Exponential):
        return g.exponential(1.0 / dist.rate, size)
    if isinstance(dist, Gamma):
        return g.gamma(dist.shape, 1.0 / dist.rate, size)
    if isinstance(dist, Uniform):
        if dist.a == dist.b:
            return dist.a if size is None else np.full(size, dist.a, dtype=float)
        return g.uniform(dist.a, dist.b, size)
    if isinstance(dist, Multinomial):
        return g.multinomial(dist.trials, dist.probabilities, size)
    raise TypeError(f"unsupported distribution spec: {dist!r}")


def sample_categories(probabilities: Sequence[float], count: int, stream: RngStream) -> np.ndarray:
    """Category indices ``0..k-1`` for ``count`` independent draws (inverse CDF)."""
    p = Multinomial(tuple(probabilities)).probabilities
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, stream.uniform(count), side="right")
