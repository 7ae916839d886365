"""Feynman-Kac functionals of stopped Euler paths and their Monte Carlo estimates.

For a path stopped at ``tau`` (side exit) or at the horizon ``T`` the payoff is

    g(tau ^ T, X_{tau ^ T}) * Z_{tau ^ T} + sum_{t_i < tau ^ T} Z_{t_i} f(t_i, X_{t_i}) dt

with ``Z`` the discount from the potential ``k``.  ``g`` is evaluated at the
raw exit point; it must be defined in a neighborhood of the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Union

import numba as nb
import numpy as np

from .coefficients import ScalarFunction, as_scalar_function
from .exit_sim import (
    ExitBatch,
    ExitRecord,
    StoppingMode,
    evaluate_payoff,
    simulate_paths,
)
from .geometry import Ball

Z_95 = 1.96

Scalar = Union[float, Callable[[float, np.ndarray], float]]


@dataclass(eq=False)
class FeynmanKacProblem:
    """Boundary payoff ``g``, source ``f``, potential ``k``, start point and horizon.

    ``horizon=None`` selects the stationary (elliptic) problem, which needs a
    time-homogeneous model; there the time argument of ``g``, ``f``, ``k`` is
    ignored by convention.  ``terminal``, when given, replaces ``g`` for
    paths that reach the horizon without exiting.
    """

    g: Scalar
    start: np.ndarray
    f: Scalar = 0.0
    k: Scalar = 0.0
    horizon: Optional[float] = None
    terminal: Optional[Scalar] = None
    name: str = "custom"

    def __post_init__(self):
        self.g = as_scalar_function(self.g)
        self.f = as_scalar_function(self.f)
        self.k = as_scalar_function(self.k)
        self.terminal = as_scalar_function(self.terminal)
        self.start = np.atleast_1d(np.asarray(self.start, dtype=float))
        if self.horizon is not None and not self.horizon > 0:
            raise ValueError("horizon must be > 0 or None")

    @property
    def elliptic(self) -> bool:
        return self.horizon is None

    def with_start(self, start) -> "FeynmanKacProblem":
        return FeynmanKacProblem(self.g, start, self.f, self.k, self.horizon, self.terminal, self.name)


@dataclass(frozen=True)
class EstimateReport:
    mean: float
    std_error: float
    ci_low: float
    ci_high: float
    n_paths: int
    dt: float
    mode: StoppingMode
    side_exit_fraction: float
    mean_normalized_overshoot: float

    @property
    def half_width(self) -> float:
        return Z_95 * self.std_error

    def __str__(self):
        return (
            f"{self.mode.value:>7} dt={self.dt:<8g} n={self.n_paths:<8d} "
            f"mean={self.mean:+.5f} +/- {self.half_width:.5f} "
            f"[side exits {self.side_exit_fraction:.3f}, mean norm. overshoot {self.mean_normalized_overshoot:.4f}]"
        )


def payoff(record: ExitRecord, problem: FeynmanKacProblem) -> float:
    """Discounted payoff plus running source of one exit record."""
    return evaluate_payoff(
        problem,
        record.exit_time,
        record.exit_position,
        record.matured,
        record.discount_at_exit,
        record.path_functional_f,
    )


def summarize(batch: ExitBatch) -> EstimateReport:
    """Sample mean, standard error and 95% normal CI of the batch payoffs.

    Sums are exactly rounded (``math.fsum``), so the report does not depend
    on the order in which paths were produced.
    """
    n = len(batch)
    if n < 2:
        raise ValueError("need at least two paths")
    values = batch.payoff
    mean = math.fsum(values) / n
    var = math.fsum((values - mean) ** 2) / (n - 1)
    se = math.sqrt(var / n)
    side = batch.side_exit
    n_side = int(side.sum())
    mno = math.fsum(batch.normalized_overshoot[side]) / n_side if n_side else math.nan
    return EstimateReport(
        mean,
        se,
        mean - Z_95 * se,
        mean + Z_95 * se,
        n,
        batch.dt,
        batch.mode,
        n_side / n,
        mno,
    )


def check_problem(model, domain, problem: FeynmanKacProblem) -> None:
    if problem.start.shape[0] != model.dim_state:
        raise ValueError(f"start has dimension {problem.start.shape[0]}, model has {model.dim_state}")
    if domain.dim is not None and domain.dim != model.dim_state:
        raise ValueError(f"domain dimension {domain.dim} does not match model dimension {model.dim_state}")
    if problem.elliptic:
        if not model.time_homogeneous:
            raise ValueError("the stationary problem needs a time-homogeneous model")
        if problem.k(0.0, problem.start) < 0:
            raise ValueError("the stationary problem needs k >= 0")
    elif domain.horizon is not None and abs(domain.horizon - problem.horizon) > 1e-12:
        raise ValueError("domain and problem horizons differ")


def monte_carlo_compare(
    model,
    domain,
    problem: FeynmanKacProblem,
    dt: float,
    n_paths: int,
    seed: int,
    modes: Iterable = (StoppingMode.PLAIN, StoppingMode.SHIFTED),
    *,
    workers: Optional[int] = None,
    max_steps: Optional[int] = None,
    keep_batches: bool = False,
):
    """Estimates for several stopping modes on common random numbers.

    Returns ``{mode: EstimateReport}``, or ``({mode: report}, {mode: batch})``
    with ``keep_batches``.
    """
    if n_paths < 2:
        raise ValueError("n_paths must be >= 2")
    check_problem(model, domain, problem)
    batches = simulate_paths(model, domain, problem, dt, n_paths, seed, modes, workers=workers, max_steps=max_steps)
    reports = {mode: summarize(b) for mode, b in batches.items()}
    return (reports, batches) if keep_batches else reports


def monte_carlo_estimate(
    model,
    domain,
    problem: FeynmanKacProblem,
    dt: float,
    mode,
    n_paths: int,
    seed: int,
    *,
    workers: Optional[int] = None,
    max_steps: Optional[int] = None,
) -> EstimateReport:
    mode = StoppingMode(mode)
    return monte_carlo_compare(model, domain, problem, dt, n_paths, seed, (mode,), workers=workers, max_steps=max_steps)[
        mode
    ]


REPORT_COLUMNS = [
    "preset",
    "x0",
    "delta",
    "mode",
    "n",
    "mean",
    "stderr",
    "ci_low",
    "ci_high",
    "side_exit_fraction",
    "mean_norm_overshoot",
]


def report_row(report: EstimateReport, preset: str, x0) -> list:
    x0s = ";".join(f"{v:g}" for v in np.atleast_1d(x0))
    return [
        preset,
        x0s,
        repr(report.dt),
        report.mode.value,
        report.n_paths,
        repr(report.mean),
        repr(report.std_error),
        repr(report.ci_low),
        repr(report.ci_high),
        repr(report.side_exit_fraction),
        repr(report.mean_normalized_overshoot),
    ]


# --------------------------------------------------------------------------
# benchmark problem in the ball of radius 2


SECTION6_RADIUS = 2.0


@nb.njit(cache=True)
def _s6_solution(t, x, p):
    return x[0] * x[1] * x[2]


@nb.njit(cache=True)
def _s6_source(t, x, p):
    x1 = x[0]
    x2 = x[1]
    x3 = x[2]
    r1 = math.sqrt(1.0 + abs(x1))
    r2 = math.sqrt(1.0 + abs(x2))
    r3 = math.sqrt(1.0 + abs(x3))
    minus_f = x2 * x2 * x3 + x3 * x3 * x1 + x1 * x1 * x2 + 0.5 * (x3 * r1 * r3 + x1 * math.sqrt(0.75) * r1 * r2)
    return -minus_f


@nb.njit(cache=True)
def _s6_boundary(t, x, p):
    # boundary values of x1 x2 x3, extended constantly along rays from the center
    r = math.sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])
    if r == 0.0:
        return 0.0
    s = p[0] / r
    return (s * x[0]) * (s * x[1]) * (s * x[2])


def exact_solution_section6(x) -> float:
    """``u(x) = x1 x2 x3``."""
    x = np.asarray(x, dtype=float)
    return float(x[0] * x[1] * x[2])


def source_section6(x) -> float:
    """``f = -L u`` for ``u = x1 x2 x3`` under the benchmark diffusion."""
    return float(_s6_source(0.0, np.asarray(x, dtype=float), np.empty(0)))


def section6_domain() -> Ball:
    return Ball(np.zeros(3), SECTION6_RADIUS)


def section6_problem(start) -> FeynmanKacProblem:
    """Stationary problem with boundary data ``x1 x2 x3`` on the sphere of radius 2.

    The payoff at an exit point outside the ball is the boundary value at its
    radial projection, i.e. boundary data extended constantly along normals.
    """
    return FeynmanKacProblem(
        g=ScalarFunction(_s6_boundary, [SECTION6_RADIUS], "section6-boundary"),
        start=start,
        f=ScalarFunction(_s6_source, [], "section6-source"),
        k=0.0,
        horizon=None,
        name="section6",
    )


def section6_solution_function() -> ScalarFunction:
    return ScalarFunction(_s6_solution, [], "section6-solution")
