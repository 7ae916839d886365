"""Counter-addressed normal streams shared by the Python and compiled paths.

Every path owns a stream keyed by ``(seed, path_index)``.  Draw ``n`` of a
stream is ``mix64(state + n * gamma)`` (a SplitMix64 sequence with a
per-stream odd increment), so any draw can be recomputed from its index and
streams never depend on how paths are scheduled.  Standard normals come from
a 128-layer ziggurat (Doornik's ZIGNOR layout); each normal consumes one
64-bit draw on the fast path and a few more on the rare slow paths.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_SEED_SALT = np.uint64(0xD1B54A32D192ED03)
_PATH_SALT = np.uint64(0x8CB92BA72F3D8DD7)

_ZIG_LAYERS = 128
_ZIG_R = 3.442619855899
_ZIG_V = 9.91256303526217e-3
_INV_2_53 = 1.0 / 9007199254740992.0


def _ziggurat_tables() -> tuple[np.ndarray, np.ndarray]:
    x = np.zeros(_ZIG_LAYERS + 1)
    f = math.exp(-0.5 * _ZIG_R * _ZIG_R)
    x[0] = _ZIG_V / f
    x[1] = _ZIG_R
    x[_ZIG_LAYERS] = 0.0
    for i in range(2, _ZIG_LAYERS):
        x[i] = math.sqrt(-2.0 * math.log(_ZIG_V / x[i - 1] + f))
        f = math.exp(-0.5 * x[i] * x[i])
    ratio = x[1:] / x[:-1]
    return x, ratio


ZIG_X, ZIG_RATIO = _ziggurat_tables()


@nb.njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True)
def stream_key(seed, path_index):
    """Return ``(state, gamma)`` of the stream for one path."""
    base = mix64(np.uint64(seed) * _GOLDEN + _SEED_SALT)
    state = mix64(base ^ mix64(np.uint64(path_index) + _PATH_SALT))
    gamma = mix64(state + _GOLDEN) | np.uint64(1)
    return state, gamma


@nb.njit(cache=True, inline="always")
def raw_draw(state, gamma, counter):
    return mix64(state + np.uint64(counter) * gamma)


@nb.njit(cache=True, inline="always")
def _open_uniform(bits):
    # (0, 1) from the top 53 bits
    return (np.float64(np.int64(bits >> np.uint64(11))) + 0.5) * _INV_2_53


@nb.njit(cache=True, inline="always")
def normal(state, gamma, counter):
    """One standard normal starting at draw ``counter``.

    Returns ``(value, next_counter)``.
    """
    while True:
        bits = raw_draw(state, gamma, counter)
        counter += 1
        layer = np.int64(bits & np.uint64(_ZIG_LAYERS - 1))
        u = 2.0 * _open_uniform(bits) - 1.0
        if abs(u) < ZIG_RATIO[layer]:
            return u * ZIG_X[layer], counter
        if layer == 0:
            # tail beyond R
            while True:
                a = _open_uniform(raw_draw(state, gamma, counter))
                b = _open_uniform(raw_draw(state, gamma, counter + 1))
                counter += 2
                xt = math.log(a) / _ZIG_R
                yt = math.log(b)
                if -2.0 * yt >= xt * xt:
                    break
            if u < 0.0:
                return xt - _ZIG_R, counter
            return _ZIG_R - xt, counter
        x = u * ZIG_X[layer]
        f0 = math.exp(-0.5 * (ZIG_X[layer] * ZIG_X[layer] - x * x))
        f1 = math.exp(-0.5 * (ZIG_X[layer + 1] * ZIG_X[layer + 1] - x * x))
        w = _open_uniform(raw_draw(state, gamma, counter))
        counter += 1
        if f1 + w * (f0 - f1) < 1.0:
            return x, counter


@nb.njit(cache=True)
def normals_into(state, gamma, counter, out, scale):
    """Fill ``out`` with ``scale * N(0, 1)`` draws; return the next counter."""
    for i in range(out.shape[0]):
        z, counter = normal(state, gamma, counter)
        out[i] = scale * z
    return counter


@nb.njit(cache=True)
def normal_block(seed, path_index, n):
    state, gamma = stream_key(seed, path_index)
    out = np.empty(n)
    normals_into(state, gamma, 0, out, 1.0)
    return out
