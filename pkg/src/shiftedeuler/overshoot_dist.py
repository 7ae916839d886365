"""Limit law of the renormalized overshoot and the shift constant ``c0``.

The normalized overshoot of a discretely monitored diffusion converges to the
stationary overshoot ``Y`` of a standard Gaussian random walk, whose CDF is

    H(y) = E[s]^-1 * integral_0^y P(s > z) dz,

``s`` being the first strictly positive partial sum (ladder height).  Its mean
``E[s^2] / (2 E[s])`` equals ``c0 = -zeta(1/2) / sqrt(2 pi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, Union

import numba as nb
import numpy as np

from ._random import normal, stream_key

DEFAULT_LADDER_CAP = 10**6


class NoSamples(ValueError):
    """No uncapped ladder sample is available."""


# --------------------------------------------------------------------------
# analytic constant


def eta(s: float, terms: int = 64, head: int = 0) -> float:
    """Dirichlet eta function for real ``s > 0``.

    Sums the first ``head`` terms of ``sum (-1)^n (n+1)^-s`` directly and the
    remainder with the Euler transform over ``terms`` forward differences.
    """
    n = np.arange(head, head + terms, dtype=float)
    a = (n + 1.0) ** (-s)
    direct = math.fsum((-1.0) ** k / (k + 1.0) ** s for k in range(head))
    tail = []
    diffs = a.copy()
    for k in range(terms):
        tail.append((-1.0) ** k * diffs[0] / 2.0 ** (k + 1))
        diffs = np.diff(diffs)
    return direct + (-1.0) ** head * math.fsum(tail)


def zeta_half() -> float:
    """``zeta(1/2)`` via ``eta(1/2) / (1 - sqrt(2))``."""
    return eta(0.5) / (1.0 - math.sqrt(2.0))


def c0_analytic() -> float:
    """``-zeta(1/2) / sqrt(2 pi)``, approximately 0.5826."""
    return -zeta_half() / math.sqrt(2.0 * math.pi)


C0 = c0_analytic()


# --------------------------------------------------------------------------
# ladder heights


@dataclass(frozen=True)
class LadderSample:
    height: float
    epoch: int
    capped: bool = False


def sample_ladder_height(stream, cap: int = DEFAULT_LADDER_CAP) -> LadderSample:
    """Run a standard Gaussian walk until its first strictly positive value.

    Stops after ``cap`` steps; a capped sample has ``height = nan``.
    """
    if cap < 1:
        raise ValueError("cap must be >= 1")
    s = 0.0
    for k in range(1, cap + 1):
        s += float(stream.normals(1)[0])
        if s > 0.0:
            return LadderSample(s, k)
    return LadderSample(math.nan, cap, capped=True)


@nb.njit(cache=True)
def _ladder_kernel(seed, first, cap, heights, epochs):
    for i in range(heights.shape[0]):
        state, gamma = stream_key(seed, first + np.uint64(i))
        counter = 0
        s = 0.0
        k = 0
        while k < cap:
            z, counter = normal(state, gamma, counter)
            s += z
            k += 1
            if s > 0.0:
                break
        epochs[i] = k
        heights[i] = s if s > 0.0 else np.nan


@dataclass(frozen=True)
class LadderSet:
    """Ladder samples stored column-wise; capped samples carry ``nan``."""

    heights: np.ndarray
    epochs: np.ndarray
    cap: int

    @property
    def capped(self) -> np.ndarray:
        return np.isnan(self.heights)

    @property
    def n(self) -> int:
        return self.heights.shape[0]

    @property
    def capped_fraction(self) -> float:
        return float(self.capped.mean()) if self.n else 0.0

    @property
    def uncapped_heights(self) -> np.ndarray:
        return self.heights[~self.capped]

    def __iter__(self):
        for h, e in zip(self.heights, self.epochs):
            yield LadderSample(float(h), int(e), bool(np.isnan(h)))

    def c0_estimate(self) -> tuple[float, float]:
        """``E[s^2] / (2 E[s])`` over uncapped samples, with a delta-method standard error."""
        h = self.uncapped_heights
        if h.size == 0:
            raise NoSamples("no uncapped ladder samples")
        m1 = math.fsum(h) / h.size
        m2 = math.fsum(h * h) / h.size
        ratio = m2 / (2.0 * m1)
        if h.size < 2:
            return ratio, math.nan
        influence = (0.5 * h * h - ratio * h) / m1
        return ratio, float(np.std(influence, ddof=1) / math.sqrt(h.size))


def sample_ladder_heights(n: int, seed: int, cap: int = DEFAULT_LADDER_CAP, first: int = 0) -> LadderSet:
    """Simulate ``n`` ladder samples, sample ``i`` on stream ``(seed, first + i)``."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    heights = np.empty(n)
    epochs = np.empty(n, dtype=np.int64)
    _ladder_kernel(np.uint64(seed), np.uint64(first), cap, heights, epochs)
    return LadderSet(heights, epochs, cap)


def _heights_of(samples) -> np.ndarray:
    if isinstance(samples, LadderSet):
        h = samples.uncapped_heights
    else:
        h = np.array([s.height for s in samples if not s.capped], dtype=float)
    if h.size == 0:
        raise NoSamples("no uncapped ladder samples")
    return h


class LimitOvershootCdf:
    """Plug-in estimate of ``H`` from ladder heights.

    Uses ``integral_0^y P(s > z) dz = E[min(s, y)]``, evaluated exactly from
    the sorted heights.
    """

    def __init__(self, samples: Union[LadderSet, Iterable[LadderSample]]):
        h = np.sort(_heights_of(samples))
        self.heights = h
        self._cumsum = np.concatenate(([0.0], np.cumsum(h)))
        self._total = math.fsum(h)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y < 0):
            raise ValueError("y must be >= 0")
        k = np.searchsorted(self.heights, y, side="right")
        val = (self._cumsum[k] + (self.heights.size - k) * y) / self._total
        val = np.minimum(val, 1.0)
        return float(val) if val.ndim == 0 else val

    @property
    def mean(self) -> float:
        """Mean of ``H``: ``E[s^2] / (2 E[s])``."""
        return float(np.sum(self.heights**2) / (2.0 * self._total))


def limit_overshoot_cdf(y, samples):
    """``H(y)`` estimated from ladder samples."""
    return LimitOvershootCdf(samples)(y)


# --------------------------------------------------------------------------
# empirical CDFs and distances


class EmpiricalCdf:
    """Right-continuous empirical CDF of a finite sample."""

    def __init__(self, values: Sequence[float]):
        v = np.sort(np.asarray(values, dtype=float))
        if v.size == 0:
            raise ValueError("empty sample")
        self.values = v

    @property
    def n(self) -> int:
        return self.values.size

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        out = np.searchsorted(self.values, y, side="right") / self.values.size
        return float(out) if out.ndim == 0 else out

    def left_limit(self, y):
        y = np.asarray(y, dtype=float)
        out = np.searchsorted(self.values, y, side="left") / self.values.size
        return float(out) if out.ndim == 0 else out

    @property
    def mean(self) -> float:
        return math.fsum(self.values) / self.values.size


def ks_distance(cdf_a: Callable, cdf_b: Callable, grid) -> float:
    """Maximum of ``|cdf_a - cdf_b|`` over ``grid``."""
    grid = np.asarray(grid, dtype=float)
    return float(np.max(np.abs(np.asarray(cdf_a(grid)) - np.asarray(cdf_b(grid)))))


def ks_distance_to_continuous(empirical: EmpiricalCdf, cdf: Callable) -> float:
    """Exact sup distance between an empirical CDF and a continuous CDF.

    The supremum is attained at a jump, so both one-sided limits of the
    empirical CDF are compared there.
    """
    pts = np.unique(empirical.values)
    ref = np.asarray(cdf(np.maximum(pts, 0.0)))
    return float(max(np.max(np.abs(empirical(pts) - ref)), np.max(np.abs(empirical.left_limit(pts) - ref))))
