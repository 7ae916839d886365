"""Discretely monitored Euler paths stopped at the boundary.

A path is stopped at the first grid time ``t_i = i * dt`` where it is outside
the domain (``PLAIN``) or outside the shrunken domain (``SHIFTED``), or at the
horizon.  Along the way it accumulates the discount
``Z = exp(-sum k(t_j, X_j) dt)`` and the running source ``sum Z_j f(t_j, X_j) dt``
with left-point rules.

:func:`simulate_until_exit` is the readable single-path reference.
:func:`simulate_paths` runs many paths through a numba kernel when every
coefficient is compiled, monitoring both stopping rules on the same Brownian
path, and falls back to the reference loop otherwise.
"""

from __future__ import annotations

import csv
import enum
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
import multiprocessing
from typing import Iterable, Optional, Sequence

import numba as nb
import numpy as np

from . import _random
from .geometry import DEGENERATE_TOL, shifted_signed_distance
from .overshoot_dist import C0, EmpiricalCdf
from .sde import NonFiniteCoefficient, NoiseStream, euler_step, gaussian_increment

DEFAULT_MAX_STEPS = 10**8


class StoppingMode(str, enum.Enum):
    PLAIN = "plain"
    SHIFTED = "shifted"


class StartOutsideDomain(ValueError):
    """The start point fails the stopping rule's membership test at time 0."""


class MaxStepsExceeded(RuntimeError):
    """An open-horizon path did not exit within the step budget."""


class NoSideExits(ValueError):
    """No record in the collection is a side exit."""


def grid_steps(horizon: Optional[float], dt: float) -> Optional[int]:
    """Number of steps ``m`` with ``m * dt == horizon``; ``None`` for an open horizon."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if horizon is None:
        return None
    m = int(round(horizon / dt))
    if m < 1 or abs(m * dt - horizon) > 1e-9 * horizon:
        raise ValueError(f"dt={dt!r} does not divide the horizon {horizon!r}")
    return m


def grid_time(i: int, dt: float, m: Optional[int], horizon: Optional[float]) -> float:
    return horizon if m is not None and i == m else i * dt


@dataclass(frozen=True, eq=False)
class ExitRecord:
    """Outcome of one path.

    ``signed_overshoot`` is ``-F`` at the exit point, measured against the
    true boundary in both modes (it is negative when a shifted path stops
    while still inside ``D``).  ``overshoot`` clamps it at zero.
    """

    exit_step: int
    matured: bool
    exit_time: float
    exit_position: np.ndarray
    signed_overshoot: float
    path_functional_f: float
    discount_at_exit: float
    dt: float

    @property
    def side_exit(self) -> bool:
        return not self.matured

    @property
    def overshoot(self) -> float:
        return 0.0 if self.matured else max(0.0, self.signed_overshoot)

    @property
    def normalized_overshoot(self) -> float:
        return self.overshoot / math.sqrt(self.dt)


def _mode_distance(domain, model, dt, mode):
    if StoppingMode(mode) is StoppingMode.PLAIN:
        return domain.signed_distance
    return lambda t, x: shifted_signed_distance(domain, t, x, dt, model)


def simulate_until_exit(model, domain, problem, dt: float, mode, stream, max_steps: Optional[int] = None) -> ExitRecord:
    """Simulate one Euler path from ``problem.start`` until the stopping rule fires.

    ``problem`` supplies ``start``, ``horizon``, source ``f`` and potential
    ``k``.  The start point is tested once; exits are only looked for at
    ``t_i > 0``.
    """
    mode = StoppingMode(mode)
    m = grid_steps(problem.horizon, dt)
    x = np.atleast_1d(np.asarray(problem.start, dtype=float))
    dist = _mode_distance(domain, model, dt, mode)
    if not dist(0.0, x) > 0:
        raise StartOutsideDomain(f"start {x} is not inside the {mode.value} domain")
    limit = m if m is not None else (DEFAULT_MAX_STEPS if max_steps is None else max_steps)
    disc = 1.0
    fsum = 0.0
    for i in range(limit):
        t = i * dt
        fsum += disc * problem.f(t, x) * dt
        disc *= math.exp(-problem.k(t, x) * dt)
        x = euler_step(model, t, x, dt, gaussian_increment(stream, dt, model.dim_noise))
        if not np.all(np.isfinite(x)):
            raise NonFiniteCoefficient(f"Euler iterate became non-finite at step {i + 1}")
        t_next = grid_time(i + 1, dt, m, problem.horizon)
        if dist(t_next, x) <= 0:
            return ExitRecord(i + 1, False, t_next, x, -domain.signed_distance(t_next, x), fsum, disc, dt)
    if m is None:
        raise MaxStepsExceeded(f"no exit after {limit} steps")
    return ExitRecord(m, True, problem.horizon, x, 0.0, fsum, disc, dt)


def evaluate_payoff(problem, exit_time, exit_position, matured, discount, path_functional_f) -> float:
    g = problem.terminal if (matured and problem.terminal is not None) else problem.g
    return g(exit_time, exit_position) * discount + path_functional_f


# --------------------------------------------------------------------------
# batches


@dataclass(eq=False)
class ExitBatch:
    """Column-wise exit records of consecutive paths for one stopping mode."""

    mode: StoppingMode
    dt: float
    path_index: np.ndarray
    exit_step: np.ndarray
    matured: np.ndarray
    exit_time: np.ndarray
    exit_position: np.ndarray
    signed_overshoot: np.ndarray
    discount_at_exit: np.ndarray
    path_functional_f: np.ndarray
    payoff: np.ndarray

    def __len__(self):
        return self.path_index.shape[0]

    @property
    def side_exit(self) -> np.ndarray:
        return ~self.matured

    @property
    def overshoot(self) -> np.ndarray:
        return np.where(self.matured, 0.0, np.maximum(self.signed_overshoot, 0.0))

    @property
    def normalized_overshoot(self) -> np.ndarray:
        return self.overshoot / math.sqrt(self.dt)

    def record(self, i: int) -> ExitRecord:
        return ExitRecord(
            int(self.exit_step[i]),
            bool(self.matured[i]),
            float(self.exit_time[i]),
            self.exit_position[i].copy(),
            float(self.signed_overshoot[i]),
            float(self.path_functional_f[i]),
            float(self.discount_at_exit[i]),
            self.dt,
        )

    def __iter__(self):
        return (self.record(i) for i in range(len(self)))

    @classmethod
    def concat(cls, batches: Sequence["ExitBatch"]) -> "ExitBatch":
        first = batches[0]
        cols = {
            name: np.concatenate([getattr(b, name) for b in batches])
            for name in (
                "path_index",
                "exit_step",
                "matured",
                "exit_time",
                "exit_position",
                "signed_overshoot",
                "discount_at_exit",
                "path_functional_f",
                "payoff",
            )
        }
        return cls(first.mode, first.dt, **cols)

    def csv_rows(self):
        d = self.exit_position.shape[1]
        yield (
            ["path_index", "exit_step", "kind", "exit_time"]
            + [f"exit_position_{j}" for j in range(d)]
            + ["overshoot", "normalized_overshoot", "discount_at_exit", "payoff"]
        )
        over = self.overshoot
        nover = self.normalized_overshoot
        for i in range(len(self)):
            yield (
                [int(self.path_index[i]), int(self.exit_step[i]), "matured" if self.matured[i] else "side"]
                + [repr(float(self.exit_time[i]))]
                + [repr(float(v)) for v in self.exit_position[i]]
                + [repr(float(over[i])), repr(float(nover[i])), repr(float(self.discount_at_exit[i])), repr(float(self.payoff[i]))]
            )

    def write_csv(self, fh) -> None:
        csv.writer(fh, lineterminator="\n").writerows(self.csv_rows())


def overshoot_histogram(records, bins=None):
    """Empirical CDF of the normalized overshoot over side exits.

    ``records`` is an :class:`ExitBatch` or an iterable of :class:`ExitRecord`.
    With ``bins`` (count or edges) a ``numpy.histogram`` of the same values is
    attached as ``cdf.histogram``.
    """
    if isinstance(records, ExitBatch):
        values = records.normalized_overshoot[records.side_exit]
    else:
        values = np.array([r.normalized_overshoot for r in records if r.side_exit], dtype=float)
    if values.size == 0:
        raise NoSideExits("no side exits among the records")
    cdf = EmpiricalCdf(values)
    cdf.histogram = np.histogram(values, bins=bins) if bins is not None else None
    return cdf


# --------------------------------------------------------------------------
# compiled kernel


@nb.njit
def _paths_kernel(
    drift, diffusion, mparams, dist, grad, dparams,
    g, gp, term, tp, f, fp, k, kp,
    x0, dim_noise, dt, m, horizon, max_steps, c0, seed, first, want_plain, want_shifted,
    out_step, out_matured, out_time, out_pos, out_signed, out_disc, out_f, out_payoff,
):  # fmt: skip
    d = x0.shape[0]
    n = out_step.shape[1]
    sq = math.sqrt(dt)
    x = np.empty(d)
    xn = np.empty(d)
    b = np.empty(d)
    s = np.empty((d, dim_noise))
    dw = np.empty(dim_noise)
    gv = np.empty(d)
    for p in range(n):
        state, gamma = _random.stream_key(seed, first + np.uint64(p))
        counter = 0
        for a in range(d):
            x[a] = x0[a]
        alive_plain = want_plain
        alive_shift = want_shifted
        disc = 1.0
        fsum = 0.0
        i = 0
        diffusion(0.0, x, mparams, s)
        drift(0.0, x, mparams, b)
        while True:
            if m < 0 and i >= max_steps:
                return 1, p
            t = i * dt
            fsum += disc * f(t, x, fp) * dt
            disc *= math.exp(-k(t, x, kp) * dt)
            counter = _random.normals_into(state, gamma, counter, dw, sq)
            for a in range(d):
                v = 0.0
                for c in range(dim_noise):
                    v += s[a, c] * dw[c]
                xn[a] = x[a] + b[a] * dt + v
            for a in range(d):
                x[a] = xn[a]
                if not np.isfinite(x[a]):
                    return 2, p
            i += 1
            t = horizon if i == m else i * dt
            fdist = dist(t, x, dparams)
            diffusion(t, x, mparams, s)
            for a in range(d):
                for c in range(dim_noise):
                    if not np.isfinite(s[a, c]):
                        return 2, p
            if alive_shift:
                grad(t, x, dparams, gv)
                gn = 0.0
                for a in range(d):
                    gn += gv[a] * gv[a]
                shifted = fdist
                if math.sqrt(gn) >= 1e-8:
                    w2 = 0.0
                    for c in range(dim_noise):
                        v = 0.0
                        for a in range(d):
                            v += gv[a] * s[a, c]
                        w2 += v * v
                    shifted = fdist - c0 * sq * math.sqrt(w2)
                if shifted <= 0.0:
                    _store(1, p, i, False, t, x, -fdist, disc, fsum, g(t, x, gp) * disc + fsum,
                           out_step, out_matured, out_time, out_pos, out_signed, out_disc, out_f, out_payoff)
                    alive_shift = False
            if alive_plain and fdist <= 0.0:
                _store(0, p, i, False, t, x, -fdist, disc, fsum, g(t, x, gp) * disc + fsum,
                       out_step, out_matured, out_time, out_pos, out_signed, out_disc, out_f, out_payoff)
                alive_plain = False
            if not (alive_plain or alive_shift):
                break
            if i == m:
                pay = term(t, x, tp) * disc + fsum
                if alive_plain:
                    _store(0, p, i, True, t, x, 0.0, disc, fsum, pay,
                           out_step, out_matured, out_time, out_pos, out_signed, out_disc, out_f, out_payoff)
                if alive_shift:
                    _store(1, p, i, True, t, x, 0.0, disc, fsum, pay,
                           out_step, out_matured, out_time, out_pos, out_signed, out_disc, out_f, out_payoff)
                break
            drift(t, x, mparams, b)
    return 0, -1


@nb.njit(inline="always")
def _store(slot, p, i, matured, t, x, signed, disc, fsum, pay,
           out_step, out_matured, out_time, out_pos, out_signed, out_disc, out_f, out_payoff):  # fmt: skip
    out_step[slot, p] = i
    out_matured[slot, p] = matured
    out_time[slot, p] = t
    for a in range(x.shape[0]):
        out_pos[slot, p, a] = x[a]
    out_signed[slot, p] = signed
    out_disc[slot, p] = disc
    out_f[slot, p] = fsum
    out_payoff[slot, p] = pay


def _compiled_parts(model, domain, problem):
    parts = [model.compiled, domain.compiled]
    funcs = [problem.g, problem.terminal if problem.terminal is not None else problem.g, problem.f, problem.k]
    for fn in funcs:
        parts.append(getattr(fn, "compiled", None))
    if any(p is None for p in parts):
        return None
    return parts


def _run_compiled(parts, model, problem, dt, first, n, seed, want_plain, want_shifted, max_steps):
    (drift, diffusion, mp), (dist, grad, dp), (g, gp), (term, tp), (f, fp), (k, kp) = parts
    m = grid_steps(problem.horizon, dt)
    x0 = np.atleast_1d(np.asarray(problem.start, dtype=float))
    d = x0.shape[0]
    out = dict(
        out_step=np.zeros((2, n), dtype=np.int64),
        out_matured=np.zeros((2, n), dtype=np.bool_),
        out_time=np.zeros((2, n)),
        out_pos=np.zeros((2, n, d)),
        out_signed=np.zeros((2, n)),
        out_disc=np.zeros((2, n)),
        out_f=np.zeros((2, n)),
        out_payoff=np.zeros((2, n)),
    )
    status, bad = _paths_kernel(
        drift, diffusion, mp, dist, grad, dp, g, gp, term, tp, f, fp, k, kp,
        x0, model.dim_noise, float(dt), -1 if m is None else m,
        float(problem.horizon) if problem.horizon is not None else 0.0,
        DEFAULT_MAX_STEPS if max_steps is None else int(max_steps),
        C0, np.uint64(seed), np.uint64(first), want_plain, want_shifted, *out.values(),
    )  # fmt: skip
    if status == 1:
        raise MaxStepsExceeded(f"path {first + bad} did not exit within {max_steps or DEFAULT_MAX_STEPS} steps")
    if status == 2:
        raise NonFiniteCoefficient(f"non-finite value on path {first + bad}")
    return out


def _batch_from_slot(out, slot, mode, dt, first, n):
    return ExitBatch(
        mode,
        dt,
        np.arange(first, first + n, dtype=np.int64),
        out["out_step"][slot].copy(),
        out["out_matured"][slot].copy(),
        out["out_time"][slot].copy(),
        out["out_pos"][slot].copy(),
        out["out_signed"][slot].copy(),
        out["out_disc"][slot].copy(),
        out["out_f"][slot].copy(),
        out["out_payoff"][slot].copy(),
    )


def _immediate_batch(problem, mode, dt, first, n, domain):
    x0 = np.atleast_1d(np.asarray(problem.start, dtype=float))
    pay = problem.g(0.0, x0)
    return ExitBatch(
        mode,
        dt,
        np.arange(first, first + n, dtype=np.int64),
        np.zeros(n, dtype=np.int64),
        np.zeros(n, dtype=np.bool_),
        np.zeros(n),
        np.tile(x0, (n, 1)),
        np.full(n, -domain.signed_distance(0.0, x0)),
        np.ones(n),
        np.zeros(n),
        np.full(n, pay),
    )


def _reference_batch(model, domain, problem, dt, mode, first, n, seed, max_steps):
    cols = {key: [] for key in ("step", "mat", "time", "pos", "signed", "disc", "f", "pay")}
    for p in range(first, first + n):
        r = simulate_until_exit(model, domain, problem, dt, mode, NoiseStream(seed, p), max_steps)
        cols["step"].append(r.exit_step)
        cols["mat"].append(r.matured)
        cols["time"].append(r.exit_time)
        cols["pos"].append(r.exit_position)
        cols["signed"].append(r.signed_overshoot)
        cols["disc"].append(r.discount_at_exit)
        cols["f"].append(r.path_functional_f)
        cols["pay"].append(
            evaluate_payoff(problem, r.exit_time, r.exit_position, r.matured, r.discount_at_exit, r.path_functional_f)
        )
    d = np.atleast_1d(np.asarray(problem.start)).shape[0]
    return ExitBatch(
        mode,
        dt,
        np.arange(first, first + n, dtype=np.int64),
        np.array(cols["step"], dtype=np.int64),
        np.array(cols["mat"], dtype=np.bool_),
        np.array(cols["time"], dtype=float),
        np.array(cols["pos"], dtype=float).reshape(n, d),
        np.array(cols["signed"], dtype=float),
        np.array(cols["disc"], dtype=float),
        np.array(cols["f"], dtype=float),
        np.array(cols["pay"], dtype=float),
    )


def _simulate_chunk(model, domain, problem, dt, modes, first, n, seed, max_steps, compiled=True):
    modes = [StoppingMode(mm) for mm in modes]
    x0 = np.atleast_1d(np.asarray(problem.start, dtype=float))
    result = {}
    if StoppingMode.PLAIN in modes and not domain.signed_distance(0.0, x0) > 0:
        raise StartOutsideDomain(f"start {x0} is not inside the domain")
    run_shifted = StoppingMode.SHIFTED in modes
    if run_shifted and not shifted_signed_distance(domain, 0.0, x0, dt, model) > 0:
        result[StoppingMode.SHIFTED] = _immediate_batch(problem, StoppingMode.SHIFTED, dt, first, n, domain)
        run_shifted = False
    run_plain = StoppingMode.PLAIN in modes
    if run_plain or run_shifted:
        parts = _compiled_parts(model, domain, problem) if compiled else None
        if parts is not None:
            out = _run_compiled(parts, model, problem, dt, first, n, seed, run_plain, run_shifted, max_steps)
            if run_plain:
                result[StoppingMode.PLAIN] = _batch_from_slot(out, 0, StoppingMode.PLAIN, dt, first, n)
            if run_shifted:
                result[StoppingMode.SHIFTED] = _batch_from_slot(out, 1, StoppingMode.SHIFTED, dt, first, n)
        else:
            for mode, flag in ((StoppingMode.PLAIN, run_plain), (StoppingMode.SHIFTED, run_shifted)):
                if flag:
                    result[mode] = _reference_batch(model, domain, problem, dt, mode, first, n, seed, max_steps)
    return {mm: result[mm] for mm in modes}


_TASK = None


def _worker(chunk):
    model, domain, problem, dt, modes, seed, max_steps, compiled = _TASK
    first, n = chunk
    return _simulate_chunk(model, domain, problem, dt, modes, first, n, seed, max_steps, compiled)


def default_workers() -> int:
    return max(1, int(os.environ.get("SHIFTEDEULER_WORKERS", "1")))


def simulate_paths(
    model,
    domain,
    problem,
    dt: float,
    n_paths: int,
    seed: int,
    modes: Iterable = (StoppingMode.PLAIN,),
    *,
    first_path: int = 0,
    workers: Optional[int] = None,
    chunk_size: int = 65536,
    max_steps: Optional[int] = None,
    compiled: bool = True,
) -> dict:
    """Simulate paths ``first_path .. first_path + n_paths - 1`` for each mode.

    Path ``i`` is driven by ``NoiseStream(seed, i)`` in every mode, so the
    modes share Brownian increments.  Results do not depend on ``workers``
    or ``chunk_size``.  With ``compiled=False`` the reference loop is used
    even when kernels are available.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    modes = tuple(StoppingMode(mm) for mm in modes)
    workers = default_workers() if workers is None else workers
    chunks = [(first_path + s, min(chunk_size, n_paths - s)) for s in range(0, n_paths, chunk_size)]
    if workers <= 1 or len(chunks) == 1:
        parts = [_simulate_chunk(model, domain, problem, dt, modes, a, n, seed, max_steps, compiled) for a, n in chunks]
    else:
        global _TASK
        _TASK = (model, domain, problem, dt, modes, seed, max_steps, compiled)
        try:
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
                parts = list(pool.map(_worker, chunks))
        finally:
            _TASK = None
    return {mm: ExitBatch.concat([p[mm] for p in parts]) for mm in modes}
