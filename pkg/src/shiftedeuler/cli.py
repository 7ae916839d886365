"""Command-line interface: ``shiftedeuler {estimate,convergence,overshoot,ladder,preset}``.

Settings come from an optional TOML file (``--config``) and from flags; flags
win.  Exit codes: 0 success, 1 simulation error, 2 configuration error.
Errors go to stderr as ``error:<kind>:<key>: <reason>``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import re
import sys
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .coefficients import constant, polynomial
from .exit_sim import MaxStepsExceeded, NoSideExits, StartOutsideDomain, StoppingMode, grid_steps
from .experiments import (
    BOTH_MODES,
    Cell,
    DegenerateFit,
    HalfSpaceBM,
    MovingInterval1D,
    NonPositiveError,
    PresetResult,
    ResultRow,
    Section6Grid,
    Section6Point,
    fit_convergence_slope,
    format_point_table,
    format_sup_table,
    plot_data,
    run_preset,
    significant_error_points,
)
from .feynman_kac import REPORT_COLUMNS, FeynmanKacProblem, monte_carlo_compare, report_row
from .geometry import Ball, DegenerateNormal, HalfSpace, MovingInterval
from .overshoot_dist import (
    C0,
    DEFAULT_LADDER_CAP,
    EmpiricalCdf,
    LimitOvershootCdf,
    NoSamples,
    ks_distance_to_continuous,
    sample_ladder_heights,
)
from .sde import NonFiniteCoefficient, model_by_name

COMMANDS = ("estimate", "convergence", "overshoot", "ladder", "preset")
PRESET_NAMES = ("section6-grid", "section6", "halfspace-bm", "moving-interval")
RESULT_COLUMNS = REPORT_COLUMNS + ["exact", "reference_stderr", "abs_error", "rel_error"]

SIMULATION_ERRORS = (
    MaxStepsExceeded,
    NonFiniteCoefficient,
    StartOutsideDomain,
    NoSideExits,
    NoSamples,
    DegenerateFit,
    NonPositiveError,
    DegenerateNormal,
    ArithmeticError,
    ValueError,
)


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, key: str, reason: str):
        super().__init__(f"{key}: {reason}" if key else reason)
        self.key = key
        self.reason = reason


# --------------------------------------------------------------------------
# configuration


_TOP_KEYS = {
    "command", "preset", "x0", "delta", "n", "seed", "mode", "output", "plot_data",
    "workers", "max_steps", "cap", "ladder_n", "reference_n", "grid", "model", "domain", "problem",
}
_SECTION_KEYS = {
    "model": {"name", "dim", "scale"},
    "domain": {"kind", "direction", "level", "velocity", "center", "radius", "lower", "upper", "horizon"},
    "problem": {"g", "f", "k", "terminal", "horizon"},
}
# settings that do not change results, left out of the config hash
_UNHASHED = {"output", "plot_data", "workers"}


@dataclass
class RunConfig:
    command: str
    preset: Optional[str] = None
    x0: Optional[tuple] = None
    deltas: Optional[tuple] = None
    n_paths: int = 100_000
    seed: int = 1
    modes: tuple = BOTH_MODES
    output: Optional[str] = None
    plot_data: Optional[str] = None
    workers: Optional[int] = None
    max_steps: Optional[int] = None
    cap: int = DEFAULT_LADDER_CAP
    ladder_n: int = 1_000_000
    reference_n: Optional[int] = None
    grid: tuple = tuple(np.linspace(0.0, 4.0, 81).tolist())
    model: dict = field(default_factory=dict)
    domain: dict = field(default_factory=dict)
    problem: dict = field(default_factory=dict)

    def canonical(self) -> dict:
        d = dataclasses.asdict(self)
        d["modes"] = [m.value for m in self.modes]
        return {k: v for k, v in d.items() if k not in _UNHASHED}

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, default=repr)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def parse_deltas(value, key: str = "delta") -> tuple:
    """Number, list, comma list (``"0.1,0.05"``) or halving range (``"1/64..1/1024"``)."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        items = [float(value)]
    elif isinstance(value, (list, tuple)):
        items = [_number(v, key) for v in value]
    elif isinstance(value, str):
        if ".." in value:
            lo, _, hi = value.partition("..")
            a, b = _number(lo, key), _number(hi, key)
            if not (a > 0 and b > 0):
                raise ConfigError(key, "delta must be > 0")
            k = math.log2(a / b)
            if b >= a or abs(k - round(k)) > 1e-9:
                raise ConfigError(key, f"range {value!r} must halve from its start down to its end")
            items = [a / 2**i for i in range(int(round(k)) + 1)]
        else:
            items = [_number(v, key) for v in value.split(",") if v.strip()]
    else:
        raise ConfigError(key, f"expected a number, list or string, got {type(value).__name__}")
    if not items:
        raise ConfigError(key, "empty delta list")
    for d in items:
        if not (d > 0 and math.isfinite(d)):
            raise ConfigError(key, "delta must be > 0")
    return tuple(items)


def parse_grid(value, key: str = "grid") -> tuple:
    """``"start:stop:num"`` (inclusive, evenly spaced) or an explicit list of points >= 0."""
    if isinstance(value, str) and ":" in value:
        parts = value.split(":")
        if len(parts) != 3:
            raise ConfigError(key, "expected start:stop:num")
        a, b = _number(parts[0], key), _number(parts[1], key)
        num = _integer(parts[2], key, 2)
        if not b > a:
            raise ConfigError(key, "stop must exceed start")
        pts = np.linspace(a, b, num).tolist()
    else:
        pts = list(_vector(value, key))
    if min(pts) < 0:
        raise ConfigError(key, "grid points must be >= 0")
    return tuple(pts)


def _number(v, key) -> float:
    if isinstance(v, bool):
        raise ConfigError(key, "expected a number")
    if isinstance(v, (int, float)):
        return float(v)
    try:
        return float(Fraction(str(v).strip()))
    except (ValueError, ZeroDivisionError):
        raise ConfigError(key, f"not a number: {v!r}") from None


def _vector(v, key) -> tuple:
    if isinstance(v, str):
        v = [s for s in v.split(",") if s.strip()]
    elif not isinstance(v, (list, tuple)):
        v = [v]
    out = tuple(_number(x, key) for x in v)
    if not out:
        raise ConfigError(key, "empty vector")
    return out


def _integer(v, key, minimum) -> int:
    if isinstance(v, bool):
        raise ConfigError(key, "expected an integer")
    try:
        f = float(v)
    except (TypeError, ValueError):
        raise ConfigError(key, f"expected an integer, got {v!r}") from None
    if not f.is_integer():
        raise ConfigError(key, f"expected an integer, got {v!r}")
    if f < minimum:
        raise ConfigError(key, f"{key} must be >= {minimum}")
    return int(f)


def _modes(v, key="mode") -> tuple:
    if isinstance(v, str):
        v = [s.strip() for s in v.split(",") if s.strip()]
    out = []
    for m in v:
        if m == "both":
            out.extend(BOTH_MODES)
            continue
        try:
            out.append(StoppingMode(m))
        except ValueError:
            raise ConfigError(key, f"unknown mode {m!r}; expected plain, shifted or both") from None
    if not out:
        raise ConfigError(key, "no mode given")
    return tuple(dict.fromkeys(out))


def load_config_file(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("config", f"invalid TOML: {exc}") from None
    _check_keys(data)
    return data


def _check_keys(data: dict) -> None:
    for key, value in data.items():
        if key not in _TOP_KEYS:
            raise ConfigError(key, f"unknown key {key!r}")
        if key in _SECTION_KEYS:
            if not isinstance(value, dict):
                raise ConfigError(key, "expected a table")
            for sub in value:
                if sub not in _SECTION_KEYS[key]:
                    raise ConfigError(f"{key}.{sub}", f"unknown key {sub!r}")
        elif isinstance(value, dict):
            raise ConfigError(key, "unexpected table")


def build_config(command: str, file_data: Optional[dict], flags: dict) -> RunConfig:
    """Merge file values and flags (flags win) and validate everything."""
    raw = dict(file_data or {})
    file_cmd = raw.pop("command", None)
    if file_cmd is not None and file_cmd != command:
        raise ConfigError("command", f"config is for {file_cmd!r}, not {command!r}")
    for k, v in flags.items():
        if v is not None:
            raw[k] = v
    _check_keys(raw)

    cfg = RunConfig(command)
    if "preset" in raw:
        if raw["preset"] not in PRESET_NAMES:
            raise ConfigError("preset", f"unknown preset {raw['preset']!r}; expected one of {', '.join(PRESET_NAMES)}")
        cfg.preset = raw["preset"]
    if "x0" in raw:
        cfg.x0 = _vector(raw["x0"], "x0")
    if "delta" in raw:
        cfg.deltas = parse_deltas(raw["delta"])
    if "n" in raw:
        cfg.n_paths = _integer(raw["n"], "n", 2)
    if "seed" in raw:
        cfg.seed = _integer(raw["seed"], "seed", 0)
    if "mode" in raw:
        cfg.modes = _modes(raw["mode"])
    if "workers" in raw:
        cfg.workers = _integer(raw["workers"], "workers", 1)
    if "max_steps" in raw:
        cfg.max_steps = _integer(raw["max_steps"], "max_steps", 1)
    if "cap" in raw:
        cfg.cap = _integer(raw["cap"], "cap", 1)
    if "ladder_n" in raw:
        cfg.ladder_n = _integer(raw["ladder_n"], "ladder_n", 2)
    if "reference_n" in raw:
        cfg.reference_n = _integer(raw["reference_n"], "reference_n", 2)
    if "grid" in raw:
        cfg.grid = parse_grid(raw["grid"])
    for key in ("output", "plot_data"):
        if key in raw:
            if not isinstance(raw[key], str) or not raw[key]:
                raise ConfigError(key, "expected a path")
            setattr(cfg, key, raw[key])
    for key in ("model", "domain", "problem"):
        cfg.__dict__[key] = dict(raw.get(key, {}))

    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    custom = bool(cfg.model or cfg.domain or cfg.problem)
    if cfg.command == "ladder":
        return
    if cfg.preset and custom:
        raise ConfigError("preset", "a preset excludes the model, domain and problem sections")
    if cfg.command == "preset" and not cfg.preset:
        raise ConfigError("preset", "the preset command needs a preset")
    if cfg.command == "overshoot" and not (cfg.preset or custom):
        cfg.preset = "halfspace-bm"
    if not (cfg.preset or custom):
        raise ConfigError("preset", "give a preset or model, domain and problem sections")
    if cfg.preset == "section6-grid" and cfg.command != "preset":
        raise ConfigError("preset", "section6-grid is only available to the preset command")
    if cfg.preset == "section6-grid" and cfg.x0 is not None:
        raise ConfigError("x0", "section6-grid fixes its start points")
    if cfg.command == "overshoot" and cfg.deltas is not None and len(cfg.deltas) != 1:
        raise ConfigError("delta", "overshoot takes a single delta")
    if cfg.command == "convergence" and cfg.deltas is not None and len(cfg.deltas) < 2:
        raise ConfigError("delta", "convergence needs at least two deltas")
    # building the cells checks dimensions and parameters before any simulation
    for cell in cells_for(cfg):
        _check_cell(cell, cfg)


def _check_cell(cell: Cell, cfg: RunConfig) -> None:
    if cell.problem.start.shape[0] != cell.model.dim_state:
        raise ConfigError("x0", f"x0 has {cell.problem.start.shape[0]} components, model dimension is {cell.model.dim_state}")
    dom_dim = getattr(cell.domain, "dim", None)
    if dom_dim is not None and dom_dim != cell.model.dim_state:
        raise ConfigError("domain", f"domain dimension {dom_dim} differs from model dimension {cell.model.dim_state}")
    horizon = cell.problem.horizon
    if horizon is None and not cell.model.time_homogeneous:
        raise ConfigError("problem.horizon", "time-dependent models need a finite horizon")
    for dt in deltas_for(cfg):
        try:
            grid_steps(horizon, dt)
        except ValueError as exc:
            raise ConfigError("delta", str(exc)) from None


# --------------------------------------------------------------------------
# building presets and custom problems


def _preset_object(cfg: RunConfig):
    kw = {"n_paths": cfg.n_paths, "modes": cfg.modes}
    if cfg.deltas is not None:
        kw["deltas"] = cfg.deltas
    name = cfg.preset
    if name == "section6-grid":
        return Section6Grid(**kw)
    if name == "section6":
        x0 = cfg.x0 if cfg.x0 is not None else Section6Point.x0
        if len(x0) != 3:
            raise ConfigError("x0", "section6 needs a three-component x0")
        if math.hypot(*x0) >= 2.0:
            raise ConfigError("x0", "x0 must lie inside the ball of radius 2")
        return Section6Point(x0=tuple(x0), **kw)
    x0 = cfg.x0
    if x0 is not None and len(x0) != 1:
        raise ConfigError("x0", f"{name} is one-dimensional")
    if name == "halfspace-bm":
        if cfg.command == "overshoot":
            kw.setdefault("deltas", (1e-4,))
        p = HalfSpaceBM(**kw) if x0 is None else HalfSpaceBM(x0=x0[0], **kw)
        if not p.x0 < p.level:
            raise ConfigError("x0", "x0 must lie below the level")
        return p
    if name == "moving-interval":
        if cfg.command == "overshoot":
            kw.setdefault("deltas", (1e-3,))
        p = MovingInterval1D(**kw) if x0 is None else MovingInterval1D(x0=x0[0], **kw)
        if not p.lower[0] < p.x0 < p.upper[0]:
            raise ConfigError("x0", "x0 must lie inside the interval")
        return p
    raise ConfigError("preset", f"unknown preset {name!r}")


def _coefficient(spec, key: str, dim: int):
    if spec is None:
        return None
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return constant(float(spec))
    if isinstance(spec, dict):
        unknown = set(spec) - {"polynomial"}
        if unknown:
            raise ConfigError(f"{key}.{sorted(unknown)[0]}", "unknown key")
        terms = spec.get("polynomial")
        if not isinstance(terms, list) or not terms:
            raise ConfigError(f"{key}.polynomial", "expected a list of [coef, exponents...] rows")
        rows = []
        for row in terms:
            if not isinstance(row, list) or len(row) < 2:
                raise ConfigError(f"{key}.polynomial", f"bad term {row!r}")
            rows.append((_number(row[0], key), [_integer(e, f"{key}.polynomial", 0) for e in row[1:]]))
        try:
            return polynomial(rows, dim)
        except ValueError as exc:
            raise ConfigError(f"{key}.polynomial", str(exc)) from None
    raise ConfigError(key, "expected a number or a {polynomial = [...]} table")


def _custom_cell(cfg: RunConfig) -> Cell:
    m = cfg.model
    name = m.get("name", "bm")
    dim = _integer(m.get("dim", 3 if name == "section6" else 1), "model.dim", 1)
    scale = _number(m.get("scale", 1.0), "model.scale")
    if not scale > 0:
        raise ConfigError("model.scale", "scale must be > 0")
    try:
        model = model_by_name(name, dim, scale)
    except (KeyError, ValueError) as exc:
        raise ConfigError("model.name", str(exc).strip("'\"")) from None

    d = cfg.domain
    kind = d.get("kind")
    horizon = d.get("horizon")
    if horizon is not None:
        horizon = _number(horizon, "domain.horizon")
        if not horizon > 0:
            raise ConfigError("domain.horizon", "horizon must be > 0")
    try:
        if kind == "halfspace":
            direction = _vector(d.get("direction", [1.0] * dim), "domain.direction")
            domain = HalfSpace(
                direction,
                _number(d.get("level", 1.0), "domain.level"),
                _number(d.get("velocity", 0.0), "domain.velocity"),
                horizon=horizon,
            )
        elif kind == "ball":
            if "radius" not in d:
                raise ConfigError("domain.radius", "missing radius")
            radius = _number(d["radius"], "domain.radius")
            if not radius > 0:
                raise ConfigError("domain.radius", "radius must be > 0")
            domain = Ball(_vector(d.get("center", [0.0] * dim), "domain.center"), radius, horizon=horizon)
        elif kind == "interval":
            lower = _vector(d.get("lower", []), "domain.lower")
            upper = _vector(d.get("upper", []), "domain.upper")
            if len(lower) != 2 or len(upper) != 2:
                raise ConfigError("domain", "lower and upper are [a, b] for a + b t")
            domain = MovingInterval.affine(lower, upper, horizon=horizon)
        else:
            raise ConfigError("domain.kind", f"unknown domain kind {kind!r}; expected halfspace, ball or interval")
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("domain", str(exc)) from None

    p = cfg.problem
    if "g" not in p:
        raise ConfigError("problem.g", "missing boundary payoff g")
    p_horizon = p.get("horizon", horizon)
    if p_horizon is not None:
        p_horizon = _number(p_horizon, "problem.horizon")
        if not p_horizon > 0:
            raise ConfigError("problem.horizon", "horizon must be > 0")
        if horizon is not None and abs(p_horizon - horizon) > 1e-12:
            raise ConfigError("problem.horizon", "differs from domain.horizon")
    if cfg.x0 is None:
        raise ConfigError("x0", "missing start point")
    k = _coefficient(p.get("k", 0.0), "problem.k", dim)
    if p_horizon is None and k(0.0, np.zeros(dim)) < 0:
        raise ConfigError("problem.k", "the stationary problem needs k >= 0")
    problem = FeynmanKacProblem(
        g=_coefficient(p["g"], "problem.g", dim),
        start=cfg.x0,
        f=_coefficient(p.get("f", 0.0), "problem.f", dim),
        k=k,
        horizon=p_horizon,
        terminal=_coefficient(p.get("terminal"), "problem.terminal", dim),
    )
    return Cell(f"({', '.join(f'{v:g}' for v in cfg.x0)})", model, domain, problem, None)


def cells_for(cfg: RunConfig) -> list:
    if cfg.preset:
        return _preset_object(cfg).cells()
    return [_custom_cell(cfg)]


def deltas_for(cfg: RunConfig) -> tuple:
    if cfg.deltas is not None:
        return cfg.deltas
    if cfg.preset:
        return tuple(_preset_object(cfg).deltas)
    raise ConfigError("delta", "missing delta")


# --------------------------------------------------------------------------
# output


class AtomicOutput:
    """Text sink written to a temporary file and renamed into place on commit.

    On failure the partial content is kept as ``<path>.partial``.  ``path=None``
    writes straight to ``stream`` instead.
    """

    def __init__(self, path: Optional[str], stream=None):
        self.path = path
        if path is None:
            self.fh = stream if stream is not None else sys.stdout
            self._tmp = None
        else:
            directory = os.path.dirname(os.path.abspath(path))
            fd, self._tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
            self.fh = io.open(fd, "w", newline="")

    def write(self, text: str) -> None:
        self.fh.write(text)
        self.fh.flush()

    def commit(self) -> None:
        if self._tmp is not None:
            self.fh.close()
            os.replace(self._tmp, self.path)
            self._tmp = None

    def abort(self) -> Optional[str]:
        if self._tmp is None:
            return None
        self.fh.close()
        partial = self.path + ".partial"
        os.replace(self._tmp, partial)
        self._tmp = None
        return partial

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.commit()
        else:
            partial = self.abort()
            if partial and exc is not None:
                exc.partial_path = partial  # reported by main after the error line
        return False


def write_atomic(path: str, text: str) -> None:
    with AtomicOutput(path) as out:
        out.write(text)


def comment_line(cfg: RunConfig) -> str:
    return f"# shiftedeuler {__version__} seed={cfg.seed} config={cfg.config_hash}\n"


def _csv_line(row) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(row)
    return buf.getvalue()


def result_line(row: ResultRow) -> str:
    exact = row.exact
    fields = report_row(row.report, row.preset, row.x0)
    fields += [
        "" if exact is None else repr(exact),
        repr(row.reference_std_error) if row.reference_std_error else "",
        "" if exact is None else repr(row.abs_error),
        "" if exact is None or exact == 0 else repr(row.rel_error),
    ]
    return _csv_line(fields)


# --------------------------------------------------------------------------
# commands


def _run_cells(cfg: RunConfig, out: AtomicOutput, exact_override=None, ref_se=0.0) -> PresetResult:
    result = PresetResult(cfg.preset or "custom")
    for cell in cells_for(cfg):
        exact = cell.exact if exact_override is None else exact_override
        for dt in deltas_for(cfg):
            reports = monte_carlo_compare(
                cell.model, cell.domain, cell.problem, dt, cfg.n_paths, cfg.seed, cfg.modes,
                workers=cfg.workers, max_steps=cfg.max_steps,
            )
            for mode in cfg.modes:
                row = ResultRow(result.preset, cell.label, cell.problem.start, reports[mode], exact, ref_se)
                result.rows.append(row)
                out.write(result_line(row))
    return result


def _open_results(cfg: RunConfig) -> AtomicOutput:
    out = AtomicOutput(cfg.output)
    out.write(comment_line(cfg))
    out.write(_csv_line(RESULT_COLUMNS))
    return out


def cmd_estimate(cfg: RunConfig) -> None:
    with _open_results(cfg) as out:
        result = _run_cells(cfg, out)
    if cfg.output:
        for row in result.rows:
            print(row.report)


def cmd_preset(cfg: RunConfig) -> None:
    preset = _preset_object(cfg)
    with _open_results(cfg) as out:
        result = run_preset(preset, cfg.seed, workers=cfg.workers, sink=lambda r: out.write(result_line(r)))
    summary = format_sup_table(result) if cfg.preset == "section6-grid" else format_point_table(result)
    print(summary, file=sys.stdout if cfg.output else sys.stderr)


def cmd_convergence(cfg: RunConfig) -> None:
    cell = cells_for(cfg)[0]
    deltas = deltas_for(cfg)
    exact, ref_se = cell.exact, 0.0
    if exact is None:
        dt_ref = min(deltas) / 8
        n_ref = cfg.reference_n or cfg.n_paths
        ref = reference_solution_for(cell, dt_ref, n_ref, cfg.seed + 1, cfg)
        exact, ref_se = ref
        print(f"reference {exact:.6f} +/- {1.96 * ref_se:.6f} (dt={dt_ref:g}, n={n_ref})", file=sys.stderr)
    with _open_results(cfg) as out:
        result = _run_cells(cfg, out, exact_override=exact, ref_se=ref_se)

    blocks = []
    summary = []
    for mode in cfg.modes:
        rows = result.select(mode)
        pts = significant_error_points(rows)
        blocks.append(f"# mode {mode.value}: dt abs_error\n" + plot_data([(r.report.dt, r.abs_error) for r in rows]))
        try:
            fit = fit_convergence_slope(pts)
            summary.append(f"slope {mode.value}: {fit.slope:.4f} ({fit.n_points} significant points)")
        except DegenerateFit:
            summary.append(f"slope {mode.value}: n/a ({len(pts)} significant points)")
    plot_path = cfg.plot_data or _default_plot_path(cfg, "convergence")
    write_atomic(plot_path, "\n\n".join(blocks))
    for line in summary:
        print(line)
    print(f"plot data written to {plot_path}")


def reference_solution_for(cell: Cell, dt_ref: float, n_ref: int, seed: int, cfg: RunConfig) -> tuple:
    """Shifted estimate at ``dt_ref``; callers pass a seed distinct from the main run."""
    rep = monte_carlo_compare(
        cell.model, cell.domain, cell.problem, dt_ref, n_ref, seed, (StoppingMode.SHIFTED,),
        workers=cfg.workers, max_steps=cfg.max_steps,
    )[StoppingMode.SHIFTED]
    return rep.mean, rep.std_error


def _default_plot_path(cfg: RunConfig, what: str) -> str:
    if cfg.output:
        return os.path.splitext(cfg.output)[0] + ".dat"
    return f"{what}-{cfg.preset or 'custom'}.dat"


def cmd_overshoot(cfg: RunConfig) -> None:
    cell = cells_for(cfg)[0]
    dt = deltas_for(cfg)[0]
    mode = cfg.modes[0]
    _, batches = monte_carlo_compare(
        cell.model, cell.domain, cell.problem, dt, cfg.n_paths, cfg.seed, (mode,),
        workers=cfg.workers, max_steps=cfg.max_steps, keep_batches=True,
    )
    batch = batches[mode]
    side = batch.side_exit
    if not side.any():
        raise NoSideExits("no path left through the side boundary")
    emp = EmpiricalCdf(batch.normalized_overshoot[side])
    limit = LimitOvershootCdf(sample_ladder_heights(cfg.ladder_n, cfg.seed, cfg.cap))
    ks = ks_distance_to_continuous(emp, limit)
    if cfg.output:
        buf = io.StringIO()
        buf.write(comment_line(cfg))
        batch.write_csv(buf)
        write_atomic(cfg.output, buf.getvalue())
    grid = np.linspace(0.0, 4.0, 201)
    text = "# empirical: y F(y)\n" + plot_data(zip(grid, emp(grid))) + "\n\n# limit: y H(y)\n" + plot_data(zip(grid, limit(grid)))
    plot_path = cfg.plot_data or _default_plot_path(cfg, "overshoot")
    write_atomic(plot_path, text)
    print(f"side exits {emp.n} of {len(batch)} (dt={dt:g}, mode {mode.value})")
    print(f"mean normalized overshoot {emp.mean:.4f} (c0 = {C0:.4f})")
    print(f"KS distance to H {ks:.4f}")
    print(f"plot data written to {plot_path}")


def cmd_ladder(cfg: RunConfig) -> None:
    samples = sample_ladder_heights(cfg.n_paths, cfg.seed, cfg.cap)
    est, se = samples.c0_estimate()
    if cfg.output:
        cdf = LimitOvershootCdf(samples)
        buf = io.StringIO()
        buf.write(comment_line(cfg))
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["y", "H"])
        grid = np.asarray(cfg.grid)
        w.writerows(zip(map(repr, grid.tolist()), map(repr, np.atleast_1d(cdf(grid)).tolist())))
        write_atomic(cfg.output, buf.getvalue())
    print(f"c0 estimate {est:.5f} +/- {1.96 * se:.5f} ({samples.n} samples, capped fraction {samples.capped_fraction:.2e})")
    print(f"c0 analytic {C0:.10f}")


HANDLERS = {
    "estimate": cmd_estimate,
    "convergence": cmd_convergence,
    "overshoot": cmd_overshoot,
    "ladder": cmd_ladder,
    "preset": cmd_preset,
}


# --------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError("argv", message)


_FLAG_DEST = {
    "--preset": "preset", "--x0": "x0", "--delta": "delta", "--deltas": "delta", "--n": "n",
    "--seed": "seed", "--mode": "mode", "--modes": "mode", "--output": "output", "-o": "output",
    "--plot-data": "plot_data", "--workers": "workers", "--max-steps": "max_steps", "--cap": "cap",
    "--ladder-n": "ladder_n", "--reference-n": "reference_n", "--grid": "grid",
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="shiftedeuler", description="Exit-time Monte Carlo with plain and boundary-shifted Euler stopping.")
    parser.add_argument("--version", action="version", version=f"shiftedeuler {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="TOML file; flags override its values")
        p.add_argument("--preset", choices=PRESET_NAMES)
        p.add_argument("--x0", help="start point, comma separated")
        p.add_argument("--delta", "--deltas", dest="delta", help="step(s): 0.1 | 0.1,0.05 | 1/64..1/1024")
        p.add_argument("--n", help="number of paths (ladder: samples)")
        p.add_argument("--seed")
        p.add_argument("--mode", "--modes", dest="mode", help="plain, shifted or both")
        p.add_argument("--output", "-o")
        p.add_argument("--plot-data", dest="plot_data")
        p.add_argument("--workers", help="worker processes (default: $SHIFTEDEULER_WORKERS or 1)")
        p.add_argument("--max-steps", dest="max_steps")
        p.add_argument("--cap", help="ladder walk step cap")
        p.add_argument("--ladder-n", dest="ladder_n", help="ladder samples for the limit law (overshoot)")
        p.add_argument("--reference-n", dest="reference_n", help="paths for the reference solution (convergence)")
        p.add_argument("--grid", help="ladder: y grid for H(y), start:stop:num or comma list")
    return parser


_NEGATIVE_VALUE = re.compile(r"^-[\d.]")


def _join_negative_values(argv: list) -> list:
    """``--x0 -0.7,0.3`` becomes ``--x0=-0.7,0.3`` so argparse does not read it as a flag."""
    out = []
    i = 0
    while i < len(argv):
        a = argv[i]
        if a in _FLAG_DEST and i + 1 < len(argv) and _NEGATIVE_VALUE.match(argv[i + 1]):
            out.append(f"{a}={argv[i + 1]}")
            i += 2
        else:
            out.append(a)
            i += 1
    return out


def parse_config(argv) -> RunConfig:
    ns = build_parser().parse_args(_join_negative_values(list(argv)))
    file_data = load_config_file(ns.config) if ns.config else None
    flags = {k: v for k, v in vars(ns).items() if k not in ("command", "config")}
    if ns.command == "ladder" and flags["n"] is None and "n" not in (file_data or {}):
        flags["n"] = 1_000_000  # ladder samples
    return build_config(ns.command, file_data, flags)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"error:config:{exc.key}: {exc.reason}", file=sys.stderr)
        return 2
    try:
        HANDLERS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"error:config:{exc.key}: {exc.reason}", file=sys.stderr)
        return 2
    except SIMULATION_ERRORS as exc:
        print(f"error:simulation:{type(exc).__name__}: {exc}", file=sys.stderr)
        _report_partial(exc)
        return 1
    except OSError as exc:
        print(f"error:io:{type(exc).__name__}: {exc}", file=sys.stderr)
        _report_partial(exc)
        return 1
    return 0


def _report_partial(exc: BaseException) -> None:
    partial = getattr(exc, "partial_path", None)
    if partial:
        print(f"partial results saved to {partial}", file=sys.stderr)


def run() -> None:
    sys.exit(main())
