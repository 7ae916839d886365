"""Diffusion models, the Euler step and per-path Gaussian increment streams."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numba as nb
import numpy as np

from . import _random


class NonFiniteCoefficient(ArithmeticError):
    """Drift or diffusion returned (or the scheme produced) a non-finite value."""


class _IntoCallable:
    """Adapts an out-parameter kernel ``fn(t, x, params, out)`` to ``f(t, x) -> array``."""

    def __init__(self, fn, params, shape):
        self.fn = fn
        self.params = params
        self.shape = shape

    def __call__(self, t, x):
        out = np.empty(self.shape)
        self.fn(float(t), np.atleast_1d(np.asarray(x, dtype=float)), self.params, out)
        return out


@dataclass(frozen=True, eq=False)
class SdeModel:
    """``dX = b(t, X) dt + sigma(t, X) dW`` with ``X`` in R^d and ``W`` in R^d'.

    ``drift(t, x)`` returns a length-``d`` vector and ``diffusion(t, x)`` a
    ``d x d'`` matrix; both must be pure.  ``compiled`` optionally holds
    ``(drift_fn, diffusion_fn, params)`` numba kernels writing into an output
    array, which the batch simulator uses instead of the Python callables.
    """

    dim_state: int
    dim_noise: int
    drift: Callable[[float, np.ndarray], np.ndarray]
    diffusion: Callable[[float, np.ndarray], np.ndarray]
    time_homogeneous: bool = False
    name: str = "custom"
    compiled: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        if self.dim_state < 1 or self.dim_noise < 1:
            raise ValueError("dimensions must be >= 1")

    @classmethod
    def from_kernels(cls, drift_fn, diffusion_fn, params, dim_state, dim_noise, **kw) -> "SdeModel":
        params = np.asarray(params, dtype=float)
        return cls(
            dim_state,
            dim_noise,
            _IntoCallable(drift_fn, params, (dim_state,)),
            _IntoCallable(diffusion_fn, params, (dim_state, dim_noise)),
            compiled=(drift_fn, diffusion_fn, params),
            **kw,
        )


# --------------------------------------------------------------------------
# built-in models


@nb.njit(cache=True)
def _zero_drift(t, x, p, out):
    for i in range(out.shape[0]):
        out[i] = 0.0


@nb.njit(cache=True)
def _scaled_identity(t, x, p, out):
    # p = [scale]
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            out[i, j] = p[0] if i == j else 0.0


@nb.njit(cache=True)
def _section6_drift(t, x, p, out):
    out[0] = x[1]
    out[1] = x[2]
    out[2] = x[0]


@nb.njit(cache=True)
def _section6_diffusion(t, x, p, out):
    r1 = math.sqrt(1.0 + abs(x[0]))
    r2 = math.sqrt(1.0 + abs(x[1]))
    r3 = math.sqrt(1.0 + abs(x[2]))
    h = math.sqrt(0.75)
    out[0, 0] = r3
    out[0, 1] = 0.0
    out[0, 2] = 0.0
    out[1, 0] = 0.5 * r1
    out[1, 1] = h * r1
    out[1, 2] = 0.0
    out[2, 0] = 0.0
    out[2, 1] = 0.5 * r2
    out[2, 2] = h * r2


def brownian_motion(dim: int = 1) -> SdeModel:
    """Standard Brownian motion (``b = 0``, ``sigma = I``)."""
    return scaled_brownian_motion(dim, 1.0, name="bm")


def scaled_brownian_motion(dim: int, scale: float, name: str = "scaled-bm") -> SdeModel:
    return SdeModel.from_kernels(
        _zero_drift, _scaled_identity, [float(scale)], dim, dim, time_homogeneous=True, name=name
    )


def section6_model() -> SdeModel:
    """Three-dimensional benchmark diffusion with cyclic linear drift.

    ``b(x) = (x2, x3, x1)`` and a lower-triangular ``sigma`` whose rows scale
    with ``sqrt(1 + |x3|)``, ``sqrt(1 + |x1|)`` and ``sqrt(1 + |x2|)``.
    """
    return SdeModel.from_kernels(
        _section6_drift, _section6_diffusion, np.empty(0), 3, 3, time_homogeneous=True, name="section6"
    )


MODELS = {
    "bm": brownian_motion,
    "scaled-bm": scaled_brownian_motion,
    "section6": section6_model,
}


def model_by_name(name: str, dim: int = 1, scale: float = 1.0) -> SdeModel:
    if name == "bm":
        return brownian_motion(dim)
    if name == "scaled-bm":
        return scaled_brownian_motion(dim, scale)
    if name == "section6":
        if dim not in (None, 3):
            raise ValueError("section6 model is three-dimensional")
        return section6_model()
    raise KeyError(f"unknown model {name!r}; expected one of {sorted(MODELS)}")


# --------------------------------------------------------------------------
# stepping


def euler_step(model: SdeModel, t: float, x, dt: float, dw) -> np.ndarray:
    """One Euler step ``x + b(t, x) dt + sigma(t, x) dw``."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    dw = np.atleast_1d(np.asarray(dw, dtype=float))
    if dw.shape != (model.dim_noise,):
        raise ValueError(f"dw must have length {model.dim_noise}, got shape {dw.shape}")
    b = np.atleast_1d(np.asarray(model.drift(t, x), dtype=float))
    s = np.asarray(model.diffusion(t, x), dtype=float).reshape(model.dim_state, model.dim_noise)
    if not (np.all(np.isfinite(b)) and np.all(np.isfinite(s))):
        raise NonFiniteCoefficient(f"non-finite coefficient at t={t!r}, x={x!r}")
    return x + b * dt + s @ dw


# --------------------------------------------------------------------------
# noise


class NoiseStream:
    """Deterministic standard normal stream for one ``(seed, path_index)``.

    Two streams with equal keys yield identical sequences.  Normals come from
    a ziggurat sampler over a counter-addressed SplitMix64 sequence, see
    :mod:`shiftedeuler._random`.
    """

    def __init__(self, seed: int, path_index: int = 0):
        if seed < 0 or path_index < 0:
            raise ValueError("seed and path_index must be non-negative")
        self.seed = int(seed)
        self.path_index = int(path_index)
        state, gamma = _random.stream_key(np.uint64(seed), np.uint64(path_index))
        self._state, self._gamma = np.uint64(state), np.uint64(gamma)
        self.counter = 0  # raw 64-bit draws consumed
        self.step = 0  # normal vectors handed out

    def normals(self, n: int) -> np.ndarray:
        out = np.empty(n)
        self.counter = int(_random.normals_into(self._state, self._gamma, self.counter, out, 1.0))
        self.step += 1
        return out

    def __repr__(self):
        return f"NoiseStream(seed={self.seed}, path_index={self.path_index}, step={self.step})"


class ScriptedStream:
    """Stream replaying prescribed standard normal values (for tests and what-if runs)."""

    def __init__(self, values: Sequence[float]):
        self._values = np.asarray(values, dtype=float).ravel()
        self._pos = 0
        self.step = 0

    def normals(self, n: int) -> np.ndarray:
        if self._pos + n > self._values.size:
            raise IndexError("scripted stream exhausted")
        out = self._values[self._pos : self._pos + n].copy()
        self._pos += n
        self.step += 1
        return out


def gaussian_increment(stream, dt: float, dim_noise: int) -> np.ndarray:
    """Brownian increment ``sqrt(dt) * Z`` drawn from ``stream``."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    return math.sqrt(dt) * stream.normals(dim_noise)
