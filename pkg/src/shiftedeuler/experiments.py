"""Benchmark presets, convergence fits and result tables."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erfc

from .coefficients import constant
from .exit_sim import StoppingMode
from .feynman_kac import (
    EstimateReport,
    FeynmanKacProblem,
    exact_solution_section6,
    monte_carlo_compare,
    section6_domain,
    section6_problem,
)
from .geometry import HalfSpace, MovingInterval
from .sde import brownian_motion, section6_model

BOTH_MODES = (StoppingMode.PLAIN, StoppingMode.SHIFTED)
SECTION6_COORDS = (-0.7, -0.3, 0.3, 0.7)
SECTION6_DELTAS = (0.1, 0.05, 0.01)
HALFSPACE_DELTAS = tuple(2.0**-k for k in range(6, 11))


class DegenerateFit(ValueError):
    pass


class NonPositiveError(ValueError):
    pass


@dataclass(frozen=True)
class Cell:
    """One start point of a preset, with everything needed to simulate it."""

    label: str
    model: object
    domain: object
    problem: FeynmanKacProblem
    exact: Optional[float] = None


@dataclass
class Section6Grid:
    deltas: Sequence[float] = SECTION6_DELTAS
    n_paths: int = 100_000
    modes: Sequence = BOTH_MODES
    name: str = "section6-grid"

    def cells(self) -> list[Cell]:
        model, domain = section6_model(), section6_domain()
        out = []
        for x0 in itertools.product(SECTION6_COORDS, repeat=3):
            out.append(Cell(_fmt_point(x0), model, domain, section6_problem(x0), exact_solution_section6(x0)))
        return out


@dataclass
class Section6Point:
    x0: Sequence[float] = (-0.7, 0.3, 0.7)
    deltas: Sequence[float] = SECTION6_DELTAS
    n_paths: int = 100_000
    modes: Sequence = BOTH_MODES
    name: str = "section6"

    def cells(self) -> list[Cell]:
        return [
            Cell(
                _fmt_point(self.x0),
                section6_model(),
                section6_domain(),
                section6_problem(self.x0),
                exact_solution_section6(self.x0),
            )
        ]


def hitting_probability_halfspace(x0: float, level: float, horizon: float) -> float:
    """``P(max_{s <= T} (x0 + W_s) >= level) = 2 Phi(-(level - x0) / sqrt(T))``."""
    return float(erfc((level - x0) / math.sqrt(2.0 * horizon)))


@dataclass
class HalfSpaceBM:
    """Probability that a 1D Brownian motion reaches ``level`` before ``horizon``."""

    x0: float = 0.0
    level: float = 1.0
    horizon: float = 1.0
    deltas: Sequence[float] = HALFSPACE_DELTAS
    n_paths: int = 1_000_000
    modes: Sequence = BOTH_MODES
    name: str = "halfspace-bm"

    def problem(self) -> FeynmanKacProblem:
        return FeynmanKacProblem(
            g=constant(1.0), terminal=constant(0.0), start=[self.x0], horizon=self.horizon, name=self.name
        )

    def cells(self) -> list[Cell]:
        domain = HalfSpace([1.0], self.level, horizon=self.horizon)
        exact = hitting_probability_halfspace(self.x0, self.level, self.horizon)
        return [Cell(_fmt_point([self.x0]), brownian_motion(1), domain, self.problem(), exact)]


@dataclass
class MovingInterval1D:
    """Exit probability of a 1D Brownian motion from ``(a1 + b1 t, a2 + b2 t)`` before ``horizon``."""

    lower: tuple = (-1.0, -0.2)
    upper: tuple = (1.0, 0.1)
    x0: float = 0.0
    horizon: float = 1.0
    deltas: Sequence[float] = (1 / 16, 1 / 32, 1 / 64, 1 / 128)
    n_paths: int = 1_000_000
    modes: Sequence = BOTH_MODES
    name: str = "moving-interval"

    def cells(self) -> list[Cell]:
        domain = MovingInterval.affine(self.lower, self.upper, horizon=self.horizon)
        problem = FeynmanKacProblem(
            g=constant(1.0), terminal=constant(0.0), start=[self.x0], horizon=self.horizon, name=self.name
        )
        return [Cell(_fmt_point([self.x0]), brownian_motion(1), domain, problem, None)]


PRESETS = {
    "section6-grid": Section6Grid,
    "section6": Section6Point,
    "halfspace-bm": HalfSpaceBM,
    "moving-interval": MovingInterval1D,
}


def _fmt_point(x) -> str:
    return "(" + ", ".join(f"{v:g}" for v in np.atleast_1d(x)) + ")"


# --------------------------------------------------------------------------
# running presets


@dataclass(frozen=True)
class ResultRow:
    preset: str
    cell: str
    x0: np.ndarray
    report: EstimateReport
    exact: Optional[float] = None
    reference_std_error: float = 0.0

    @property
    def error(self) -> float:
        return self.report.mean - self.exact if self.exact is not None else math.nan

    @property
    def abs_error(self) -> float:
        return abs(self.error)

    @property
    def rel_error(self) -> float:
        if self.exact is None or self.exact == 0:
            return math.nan
        return self.abs_error / abs(self.exact)

    @property
    def combined_std_error(self) -> float:
        return math.hypot(self.report.std_error, self.reference_std_error)


@dataclass(frozen=True)
class SupRow:
    dt: float
    mode: StoppingMode
    sup_abs_error: float
    sup_rel_error: float
    argmax: str


@dataclass
class PresetResult:
    preset: str
    rows: list = field(default_factory=list)

    def select(self, mode=None, dt=None, cell=None) -> list[ResultRow]:
        out = self.rows
        if mode is not None:
            out = [r for r in out if r.report.mode is StoppingMode(mode)]
        if dt is not None:
            out = [r for r in out if math.isclose(r.report.dt, dt)]
        if cell is not None:
            out = [r for r in out if r.cell == cell]
        return out

    def sup_rows(self) -> list[SupRow]:
        """Supremum of absolute (and relative) errors over cells per ``(dt, mode)``."""
        out = []
        keys = sorted({(r.report.dt, r.report.mode) for r in self.rows if r.exact is not None}, key=lambda k: (-k[0], k[1].value))
        for dt, mode in keys:
            rows = self.select(mode, dt)
            worst = max(rows, key=lambda r: r.abs_error)
            out.append(SupRow(dt, mode, worst.abs_error, max(r.rel_error for r in rows), worst.cell))
        return out


def run_preset(
    preset,
    seed: int,
    *,
    workers=None,
    sink: Optional[Callable[[ResultRow], None]] = None,
    exact_override=None,
    reference_std_error: float = 0.0,
) -> PresetResult:
    """Run every ``(cell, dt)`` of a preset; modes share random numbers.

    ``sink`` receives each row as soon as it exists, so partial results
    survive a failure later in the run.  ``exact_override`` replaces the
    cells' exact values, typically with a reference solution whose standard
    error is ``reference_std_error``.
    """
    result = PresetResult(preset.name)
    for cell in preset.cells():
        exact = cell.exact if exact_override is None else exact_override
        for dt in preset.deltas:
            reports = monte_carlo_compare(cell.model, cell.domain, cell.problem, dt, preset.n_paths, seed, preset.modes, workers=workers)
            for mode in preset.modes:
                row = ResultRow(preset.name, cell.label, cell.problem.start, reports[StoppingMode(mode)], exact, reference_std_error)
                result.rows.append(row)
                if sink is not None:
                    sink(row)
    return result


@dataclass(frozen=True)
class ReferenceValue:
    value: float
    std_error: float
    dt: float
    n_paths: int


def reference_solution(preset, dt_ref: float, n_ref: int, seed: int, smallest_dt: Optional[float] = None, workers=None) -> ReferenceValue:
    """Shifted-mode estimate at a fine step, used where no closed form exists."""
    smallest = min(preset.deltas) if smallest_dt is None else smallest_dt
    if dt_ref > smallest / 8 * (1 + 1e-12):
        raise ValueError(f"dt_ref={dt_ref:g} must be at most {smallest / 8:g} (smallest dt / 8)")
    cell = preset.cells()[0]
    rep = monte_carlo_compare(cell.model, cell.domain, cell.problem, dt_ref, n_ref, seed, (StoppingMode.SHIFTED,), workers=workers)[
        StoppingMode.SHIFTED
    ]
    return ReferenceValue(rep.mean, rep.std_error, dt_ref, n_ref)


# --------------------------------------------------------------------------
# convergence


@dataclass(frozen=True)
class ConvergenceFit:
    slope: float
    intercept: float
    n_points: int


def fit_convergence_slope(points) -> ConvergenceFit:
    """Least-squares line through ``(-log dt, -log |error|)``."""
    pts = [(float(d), float(e)) for d, e in points]
    if len(pts) < 2:
        raise DegenerateFit("need at least two points")
    dts = np.array([p[0] for p in pts])
    errs = np.array([p[1] for p in pts])
    if np.any(errs <= 0):
        raise NonPositiveError("errors must be > 0; drop statistically insignificant ones first")
    if np.any(dts <= 0):
        raise ValueError("dt must be > 0")
    if np.ptp(dts) == 0:
        raise DegenerateFit("all dt are equal")
    slope, intercept = np.polyfit(-np.log(dts), -np.log(errs), 1)
    return ConvergenceFit(float(slope), float(intercept), len(pts))


def significant_error_points(rows: Sequence[ResultRow], factor: float = 2.0) -> list[tuple[float, float]]:
    """``(dt, |error|)`` for rows whose error exceeds ``factor`` combined standard errors."""
    return [(r.report.dt, r.abs_error) for r in rows if r.abs_error >= factor * r.combined_std_error]


# --------------------------------------------------------------------------
# text output


def format_sup_table(result: PresetResult) -> str:
    lines = ["dt        plain                    shifted"]
    sups = {(s.dt, s.mode): s for s in result.sup_rows()}
    for dt in sorted({k[0] for k in sups}, reverse=True):
        cells = []
        for mode in BOTH_MODES:
            s = sups.get((dt, mode))
            cells.append(f"{s.sup_abs_error:.4f} ({100 * s.sup_rel_error:5.1f}%)" if s else "-")
        lines.append(f"{dt:<9g} {cells[0]:<24} {cells[1]}")
    return "\n".join(lines)


def format_point_table(result: PresetResult, cell: Optional[str] = None) -> str:
    rows = result.rows if cell is None else result.select(cell=cell)
    lines = []
    for label in dict.fromkeys(r.cell for r in rows):
        sub = [r for r in rows if r.cell == label]
        exact = sub[0].exact
        head = f"x0 = {label}" + (f", exact {exact:.4f}" if exact is not None else "")
        lines.append(head)
        lines.append("dt        plain                shifted")
        for dt in sorted({r.report.dt for r in sub}, reverse=True):
            cells = []
            for mode in BOTH_MODES:
                rr = [r for r in sub if r.report.mode is mode and math.isclose(r.report.dt, dt)]
                cells.append(f"{rr[0].report.mean:+.4f} +/- {rr[0].report.half_width:.4f}" if rr else "-")
            lines.append(f"{dt:<9g} {cells[0]:<20} {cells[1]}")
    return "\n".join(lines)


def plot_data(points) -> str:
    """Two-column whitespace-separated text."""
    return "".join(f"{x!r} {y!r}\n" for x, y in points)
