"""Scalar coefficient functions ``h(t, x) -> float`` with compiled kernels.

Payoffs, sources and potentials built from these helpers run inside the
compiled path simulator.  Plain Python callables work too, through the slower
reference simulator.
"""

from __future__ import annotations

import numba as nb
import numpy as np


class ScalarFunction:
    """``h(t, x)`` backed by a numba kernel ``fn(t, x, params) -> float``."""

    def __init__(self, fn, params, name: str = ""):
        self.fn = fn
        self.params = np.asarray(params, dtype=float)
        self.name = name or getattr(fn, "__name__", "kernel")

    def __call__(self, t, x) -> float:
        return float(self.fn(float(t), np.atleast_1d(np.asarray(x, dtype=float)), self.params))

    @property
    def compiled(self):
        return self.fn, self.params

    def __repr__(self):
        return f"ScalarFunction({self.name})"


@nb.njit(cache=True)
def _constant(t, x, p):
    return p[0]


@nb.njit(cache=True)
def _polynomial(t, x, p):
    # p = [n_terms, n_vars, (coef, e_t, e_x1, ..., e_xd) * n_terms]
    n_terms = int(p[0])
    n_vars = int(p[1])
    total = 0.0
    pos = 2
    for _ in range(n_terms):
        term = p[pos]
        e_t = int(p[pos + 1])
        for _k in range(e_t):
            term *= t
        for j in range(n_vars - 1):
            e = int(p[pos + 2 + j])
            for _k in range(e):
                term *= x[j]
        total += term
        pos += n_vars + 1
    return total


def constant(value: float) -> ScalarFunction:
    return ScalarFunction(_constant, [float(value)], name=f"constant({value:g})")


def polynomial(terms, dim: int) -> ScalarFunction:
    """Polynomial in ``(t, x)``.

    ``terms`` is a sequence of ``(coef, exponents)`` where ``exponents`` has
    length ``dim`` (powers of ``x``) or ``dim + 1`` (power of ``t`` first).
    """
    n_vars = dim + 1
    params = [float(len(terms)), float(n_vars)]
    for coef, exps in terms:
        exps = [int(e) for e in exps]
        if len(exps) == dim:
            exps = [0] + exps
        if len(exps) != n_vars or min(exps, default=0) < 0:
            raise ValueError(f"exponents {exps} do not match dimension {dim}")
        params.append(float(coef))
        params.extend(float(e) for e in exps)
    return ScalarFunction(_polynomial, params, name=f"polynomial({len(terms)} terms)")


def as_scalar_function(value):
    """Numbers become compiled constants; callables pass through."""
    if value is None:
        return None
    if isinstance(value, (int, float, np.integer, np.floating)):
        return constant(float(value))
    if not callable(value):
        raise TypeError(f"expected a number or callable, got {type(value).__name__}")
    return value
