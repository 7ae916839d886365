"""Time-dependent domains described by their signed distance function.

``F(t, x) > 0`` inside ``D_t``, ``< 0`` outside and ``= 0`` on the boundary.
Near the boundary ``grad F`` is the unit inward normal, which gives both the
nearest-point projection and the Delta-shrunken domain used by the shifted
stopping rule.

Each built-in domain also exposes ``compiled``: a triple
``(distance_fn, gradient_fn, params)`` of numba kernels with signatures
``distance_fn(t, x, params) -> float`` and
``gradient_fn(t, x, params, out) -> None``.  Kernels write a zero gradient on
the medial axis, where the nearest boundary point is not unique.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numba as nb
import numpy as np

from .overshoot_dist import C0

DEGENERATE_TOL = 1e-8


class DegenerateNormal(ValueError):
    """Raised when the inward normal is undefined at the queried point."""


# --------------------------------------------------------------------------
# compiled kernels


@nb.njit(cache=True)
def _halfspace_distance(t, x, p):
    # p = [level, velocity, u_0, ..., u_{d-1}]
    s = 0.0
    for i in range(x.shape[0]):
        s += p[2 + i] * x[i]
    return p[0] + p[1] * t - s


@nb.njit(cache=True)
def _halfspace_gradient(t, x, p, out):
    for i in range(x.shape[0]):
        out[i] = -p[2 + i]


@nb.njit(cache=True)
def _ball_distance(t, x, p):
    # p = [radius, c_0, ..., c_{d-1}]
    s = 0.0
    for i in range(x.shape[0]):
        dx = x[i] - p[1 + i]
        s += dx * dx
    return p[0] - math.sqrt(s)


@nb.njit(cache=True)
def _ball_gradient(t, x, p, out):
    s = 0.0
    for i in range(x.shape[0]):
        dx = x[i] - p[1 + i]
        s += dx * dx
    r = math.sqrt(s)
    if r == 0.0:
        for i in range(x.shape[0]):
            out[i] = 0.0
        return
    for i in range(x.shape[0]):
        out[i] = -(x[i] - p[1 + i]) / r


@nb.njit(cache=True)
def _interval_distance(t, x, p):
    # p = [a_lo, b_lo, a_hi, b_hi]; boundaries a + b t
    lo = x[0] - (p[0] + p[1] * t)
    hi = (p[2] + p[3] * t) - x[0]
    return min(lo, hi)


@nb.njit(cache=True)
def _interval_gradient(t, x, p, out):
    lo = x[0] - (p[0] + p[1] * t)
    hi = (p[2] + p[3] * t) - x[0]
    if lo < hi:
        out[0] = 1.0
    elif hi < lo:
        out[0] = -1.0
    else:
        out[0] = 0.0


# --------------------------------------------------------------------------
# domain types


class TimeSpaceDomain:
    """Base class: a family of spatial domains ``D_t`` for ``t`` in ``[0, horizon]``.

    ``horizon=None`` stands for an open horizon (stationary problems).
    """

    horizon: Optional[float] = None
    dim: Optional[int] = None

    def signed_distance(self, t: float, x: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, t: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def tube_radius(self, t: float) -> float:
        raise NotImplementedError

    @property
    def compiled(self):
        return None


def _check_horizon(horizon):
    if horizon is not None and not horizon > 0:
        raise ValueError("horizon must be > 0 or None")


@dataclass(frozen=True, eq=False)
class HalfSpace(TimeSpaceDomain):
    """``{x : direction . x < level + velocity * t}``."""

    direction: np.ndarray
    level: float
    velocity: float = 0.0
    horizon: Optional[float] = None

    def __post_init__(self):
        u = np.atleast_1d(np.asarray(self.direction, dtype=float))
        norm = np.linalg.norm(u)
        if not norm > 0:
            raise ValueError("direction must be non-zero")
        object.__setattr__(self, "direction", u / norm)
        _check_horizon(self.horizon)

    @property
    def dim(self) -> int:
        return self.direction.shape[0]

    @property
    def params(self) -> np.ndarray:
        return np.concatenate(([self.level, self.velocity], self.direction))

    def signed_distance(self, t, x):
        return float(_halfspace_distance(float(t), np.atleast_1d(np.asarray(x, dtype=float)), self.params))

    def gradient(self, t, x):
        return -self.direction.copy()

    def tube_radius(self, t):
        return math.inf

    @property
    def compiled(self):
        return _halfspace_distance, _halfspace_gradient, self.params


@dataclass(frozen=True, eq=False)
class Ball(TimeSpaceDomain):
    center: np.ndarray
    radius: float
    horizon: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        if not self.radius > 0:
            raise ValueError("radius must be > 0")
        _check_horizon(self.horizon)

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @property
    def params(self) -> np.ndarray:
        return np.concatenate(([self.radius], self.center))

    def signed_distance(self, t, x):
        return float(_ball_distance(float(t), np.atleast_1d(np.asarray(x, dtype=float)), self.params))

    def gradient(self, t, x):
        out = np.empty(self.dim)
        _ball_gradient(float(t), np.atleast_1d(np.asarray(x, dtype=float)), self.params, out)
        return out

    def tube_radius(self, t):
        return float(self.radius)

    @property
    def compiled(self):
        return _ball_distance, _ball_gradient, self.params


class MovingInterval(TimeSpaceDomain):
    """One-dimensional domain ``(lower(t), upper(t))``.

    ``lower``/``upper`` are callables of time.  Use :meth:`affine` for
    boundaries ``a + b t``; those also get a compiled kernel.
    """

    dim = 1

    def __init__(
        self,
        lower: Callable[[float], float],
        upper: Callable[[float], float],
        horizon: Optional[float] = None,
    ):
        _check_horizon(horizon)
        self.lower = lower
        self.upper = upper
        self.horizon = horizon
        self._affine: Optional[np.ndarray] = None
        if horizon is not None:
            for t in np.linspace(0.0, horizon, 33):
                if not lower(t) < upper(t):
                    raise ValueError(f"lower boundary must stay below upper boundary (fails at t={t:g})")

    @classmethod
    def affine(cls, lower: tuple[float, float], upper: tuple[float, float], horizon=None) -> "MovingInterval":
        a_lo, b_lo = map(float, lower)
        a_hi, b_hi = map(float, upper)
        dom = cls(lambda t: a_lo + b_lo * t, lambda t: a_hi + b_hi * t, horizon)
        dom._affine = np.array([a_lo, b_lo, a_hi, b_hi])
        return dom

    def __reduce__(self):
        if self._affine is None:
            return object.__reduce__(self)
        p = self._affine
        return (_rebuild_affine_interval, ((p[0], p[1]), (p[2], p[3]), self.horizon))

    def signed_distance(self, t, x):
        xv = float(np.asarray(x, dtype=float).reshape(-1)[0])
        return min(xv - self.lower(t), self.upper(t) - xv)

    def gradient(self, t, x):
        xv = float(np.asarray(x, dtype=float).reshape(-1)[0])
        lo = xv - self.lower(t)
        hi = self.upper(t) - xv
        if lo < hi:
            return np.array([1.0])
        if hi < lo:
            return np.array([-1.0])
        return np.array([0.0])

    def tube_radius(self, t):
        return 0.5 * (self.upper(t) - self.lower(t))

    @property
    def compiled(self):
        if self._affine is None:
            return None
        return _interval_distance, _interval_gradient, self._affine

    def __repr__(self):
        if self._affine is not None:
            a = self._affine
            return f"MovingInterval.affine(lower=({a[0]:g}, {a[1]:g}), upper=({a[2]:g}, {a[3]:g}), horizon={self.horizon})"
        return f"MovingInterval(lower={self.lower!r}, upper={self.upper!r}, horizon={self.horizon})"


def _rebuild_affine_interval(lower, upper, horizon):
    return MovingInterval.affine(lower, upper, horizon)


@dataclass(frozen=True, eq=False)
class UserDefined(TimeSpaceDomain):
    """Domain given by a user signed-distance function and its gradient.

    Both callables must be pure (they may be called concurrently).
    ``compiled`` may carry a numba kernel triple for fast simulation.
    """

    distance: Callable[[float, np.ndarray], float]
    grad: Callable[[float, np.ndarray], np.ndarray]
    radius: float = math.inf
    horizon: Optional[float] = None
    dim: Optional[int] = None
    kernels: Optional[tuple] = field(default=None, repr=False)

    def signed_distance(self, t, x):
        return float(self.distance(t, np.atleast_1d(np.asarray(x, dtype=float))))

    def gradient(self, t, x):
        return np.atleast_1d(np.asarray(self.grad(t, np.atleast_1d(np.asarray(x, dtype=float))), dtype=float))

    def tube_radius(self, t):
        return self.radius

    @property
    def compiled(self):
        return self.kernels


# --------------------------------------------------------------------------
# operations


def signed_distance(domain: TimeSpaceDomain, t: float, x) -> float:
    return domain.signed_distance(t, x)


def inward_normal(domain: TimeSpaceDomain, t: float, x) -> np.ndarray:
    """Unit inward normal ``grad F(t, x)``.

    Raises :class:`DegenerateNormal` where the gradient vanishes (for example
    at the center of a ball), i.e. outside the tube around the boundary.
    """
    g = domain.gradient(t, x)
    norm = float(np.linalg.norm(g))
    if norm < DEGENERATE_TOL:
        raise DegenerateNormal(f"gradient norm {norm:.3g} at t={t!r}, x={np.asarray(x)!r}")
    return g / norm


def project_to_boundary(domain: TimeSpaceDomain, t: float, x) -> np.ndarray:
    """Nearest boundary point ``x - F(t, x) grad F(t, x)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = inward_normal(domain, t, x)
    return x - domain.signed_distance(t, x) * n


def normal_noise_amplitude(domain: TimeSpaceDomain, t: float, x, model) -> float:
    """``|grad F(t, x) sigma(t, x)|``: noise amplitude along the normal."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    g = domain.gradient(t, x)
    if float(np.linalg.norm(g)) < DEGENERATE_TOL:
        raise DegenerateNormal(f"gradient vanishes at t={t!r}, x={x!r}")
    return float(np.linalg.norm(g @ model.diffusion(t, x)))


def shifted_signed_distance(domain: TimeSpaceDomain, t: float, x, dt: float, model) -> float:
    """Signed distance to the shrunken domain ``D^dt_t``.

    ``F(t, x) - c0 sqrt(dt) |grad F(t, x) sigma(t, x)|``, positive iff ``x`` lies
    in the shrunken domain.  Points on the medial axis (no unique normal) lie
    at least one tube radius away from the boundary; there the shift is
    irrelevant and ``F`` itself is returned.
    """
    if dt < 0:
        raise ValueError("dt must be >= 0")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    f = domain.signed_distance(t, x)
    if dt == 0:
        return f
    g = domain.gradient(t, x)
    if float(np.linalg.norm(g)) < DEGENERATE_TOL:
        if abs(f) >= domain.tube_radius(t):
            return f
        raise DegenerateNormal(f"gradient vanishes inside the tube at t={t!r}, x={x!r}")
    amp = float(np.linalg.norm(g @ np.atleast_2d(model.diffusion(t, x))))
    return f - C0 * math.sqrt(dt) * amp
