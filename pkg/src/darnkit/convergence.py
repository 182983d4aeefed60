"""Convergence of augmented forms to the darned limit.

Mosco convergence is checked through its resolvent characterization: the
gap ``||G^(lambda)_alpha f - T^-1 G*_alpha f*||`` must vanish as lambda grows,
where ``G*`` is the resolvent of the sticky darned form.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from darnkit.augmentation import MeasureFamily, augment_conductance, augment_jump
from darnkit.darning import HoleSet, darn, star, transport, project
from darnkit.errors import DimensionError
from darnkit.forms import SymmetricForm, _as_vector, inner, norm, resolvent, semigroup

__all__ = [
    "resolvent_gap",
    "semigroup_gap",
    "fdd_exact",
    "sweep",
    "sweep_forms",
    "SweepRow",
    "SeriesFit",
    "SweepReport",
    "fit_power_law",
]

MIN_FIT_POINTS = 4
CSV_HEADER = ("lambda", "kind", "param", "function", "gap", "form_gap")


def _fmt(x: float) -> str:
    return repr(float(x))


class _Limit:
    """Sticky darned limit of ``base``, with cached resolvent/semigroup values."""

    def __init__(self, base: SymmetricForm, holes: HoleSet):
        self.base = base
        self.holes = holes if isinstance(holes, HoleSet) else HoleSet(holes)
        self.darned, self.qmap = darn(base, self.holes, "sticky")
        self._cache: dict = {}

    def resolvent(self, alpha: float, f: np.ndarray, key=None) -> np.ndarray:
        cache_key = ("G", alpha, key)
        if key is None or cache_key not in self._cache:
            value = transport(self.qmap, "lift", resolvent(self.darned, alpha, star(self.base, self.qmap, f)))
            if key is None:
                return value
            self._cache[cache_key] = value
        return self._cache[cache_key]

    def semigroup(self, t: float, f: np.ndarray, key=None) -> np.ndarray:
        cache_key = ("P", t, key)
        if key is None or cache_key not in self._cache:
            value = transport(self.qmap, "lift", semigroup(self.darned, t, star(self.base, self.qmap, f)))
            if key is None:
                return value
            self._cache[cache_key] = value
        return self._cache[cache_key]


def _check_pair(aug: SymmetricForm, base: SymmetricForm) -> None:
    if aug.n != base.n:
        raise DimensionError(f"augmented form has {aug.n} states, base has {base.n}")
    if not np.array_equal(aug.m, base.m):
        raise DimensionError("augmented and base forms must share the node measure")


def _require_hole_constant(f: np.ndarray, holes: HoleSet) -> None:
    tol = 1e-12 * max(1.0, float(np.max(np.abs(f))))
    for j, hole in enumerate(holes):
        if np.ptp(f[list(hole)]) > tol:
            raise ValueError(f"f must be constant on every hole; hole {j} spreads by {np.ptp(f[list(hole)]):.3e}")


def resolvent_gap(aug: SymmetricForm, base: SymmetricForm, holes: HoleSet, alpha: float, f) -> float:
    """``||G^aug_alpha f - T^-1 G*_alpha f*||`` in L^2(m)."""
    _check_pair(aug, base)
    f = _as_vector(f, base.n, "f")
    limit = _Limit(base, holes)
    return norm(resolvent(aug, alpha, f) - limit.resolvent(alpha, f), base.m)


def semigroup_gap(aug: SymmetricForm, base: SymmetricForm, holes: HoleSet, t: float, f) -> float:
    """``||P^aug_t f - T^-1 P*_t f*||`` in L^2(m) for ``f`` constant on every hole."""
    _check_pair(aug, base)
    holes = holes if isinstance(holes, HoleSet) else HoleSet(holes)
    f = _as_vector(f, base.n, "f")
    _require_hole_constant(f, holes)
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    if t == 0:
        return 0.0
    limit = _Limit(base, holes)
    return norm(semigroup(aug, t, f) - limit.semigroup(t, f), base.m)


def fdd_exact(form: SymmetricForm, initial, times: Sequence[float], functions: Sequence) -> float:
    """``sum_x initial(x) f_0(x) P_{t_1}(f_1 P_{t_2 - t_1}(f_2 ...))(x)``.

    ``functions[0]`` is evaluated at time 0 and ``functions[j]`` at
    ``times[j-1]``; killed mass contributes nothing.
    """
    initial = _as_vector(initial, form.n, "initial")
    if np.any(initial < 0):
        raise ValueError("initial measure must be nonnegative")
    times = [float(t) for t in times]
    if len(functions) != len(times) + 1:
        raise ValueError(f"need {len(times) + 1} functions for {len(times)} times")
    if times and times[0] <= 0:
        raise ValueError("times must start strictly after 0")
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("times must be strictly increasing")
    fs = [_as_vector(f, form.n, f"functions[{i}]") for i, f in enumerate(functions)]
    g = fs[-1]
    grid = [0.0] + times
    for j in range(len(times), 0, -1):
        g = fs[j - 1] * semigroup(form, grid[j] - grid[j - 1], g)
    return float(np.sum(initial * g))


@dataclass(frozen=True)
class SweepRow:
    lam: float
    kind: str
    param: float
    function: int
    gap: float
    form_gap: float

    def as_csv(self) -> list[str]:
        return [_fmt(self.lam), self.kind, _fmt(self.param), str(self.function), _fmt(self.gap), _fmt(self.form_gap)]


@dataclass(frozen=True)
class SeriesFit:
    kind: str
    param: float
    function: int
    exponent: float | None
    constant: float | None
    points: int
    final_gap: float
    converged: bool
    monotone: bool | None


def fit_power_law(lams: Sequence[float], gaps: Sequence[float]) -> tuple[float, float] | None:
    """Least-squares fit of ``gap ~ C lambda^-p`` on log-log axes; ``(p, C)`` or None."""
    lams = np.asarray(lams, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    ok = (gaps > 0) & (lams > 0)
    if np.count_nonzero(ok) < MIN_FIT_POINTS:
        return None
    slope, intercept = np.polyfit(np.log(lams[ok]), np.log(gaps[ok]), 1)
    return float(-slope), float(math.exp(intercept))


@dataclass
class SweepReport:
    """Gaps per lambda with fitted decay and convergence flags."""

    mode: str
    schedule: list[float]
    rows: list[SweepRow]
    fits: list[SeriesFit]
    tolerance: float
    notes: list[str] = field(default_factory=list)

    def series(self, kind: str, param: float, function: int) -> list[SweepRow]:
        return [r for r in self.rows if r.kind == kind and r.param == param and r.function == function]

    @property
    def converged(self) -> bool:
        return bool(self.fits) and all(f.converged for f in self.fits)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in self.rows:
            writer.writerow(row.as_csv())
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "schedule": list(self.schedule),
            "tolerance": self.tolerance,
            "converged": self.converged,
            "fits": [asdict(f) for f in self.fits],
            "notes": list(self.notes),
        }


def _row_block(
    lam: float,
    form: SymmetricForm,
    limit: _Limit,
    alphas: Sequence[float],
    ts: Sequence[float],
    fs: list[np.ndarray],
    projected: list[np.ndarray],
) -> list[SweepRow]:
    m = limit.base.m
    rows = []
    for alpha in alphas:
        for i, f in enumerate(fs):
            approx = resolvent(form, alpha, f)
            target = limit.resolvent(alpha, f, key=i)
            gap = norm(approx - target, m)
            form_gap = inner(f, approx, m) - inner(f, target, m)
            rows.append(SweepRow(lam, "resolvent", float(alpha), i, gap, form_gap))
    for t in ts:
        for i, f in enumerate(projected):
            approx = semigroup(form, t, f)
            target = limit.semigroup(t, f, key=i)
            gap = norm(approx - target, m)
            form_gap = inner(f, approx, m) - inner(f, target, m)
            rows.append(SweepRow(lam, "semigroup", float(t), i, gap, form_gap))
    return rows


def sweep_forms(
    base: SymmetricForm,
    holes: HoleSet,
    build: Callable[[float], SymmetricForm],
    schedule: Sequence[float],
    alphas: Sequence[float],
    ts: Sequence[float],
    test_functions: Sequence,
    *,
    mode: str,
    tolerance: float = 1e-6,
    workers: int | None = None,
) -> SweepReport:
    """Evaluate gaps of ``build(lambda)`` against the sticky darning of ``base``."""
    schedule = [float(x) for x in schedule]
    if not schedule:
        raise ValueError("schedule is empty")
    if any(b <= a for a, b in zip(schedule, schedule[1:])) or schedule[0] <= 0:
        raise ValueError("schedule must be positive and strictly increasing")
    if not test_functions:
        raise ValueError("no test functions given")
    if not alphas and not ts:
        raise ValueError("need at least one alpha or t")
    holes = holes if isinstance(holes, HoleSet) else HoleSet(holes)
    fs = [_as_vector(f, base.n, f"test_functions[{i}]") for i, f in enumerate(test_functions)]
    projected = [project(base, holes, f) for f in fs]
    limit = _Limit(base, holes)
    # fill the limit cache up front so worker threads only read it
    for alpha in alphas:
        for i, f in enumerate(fs):
            limit.resolvent(alpha, f, key=i)
    for t in ts:
        for i, f in enumerate(projected):
            limit.semigroup(t, f, key=i)

    def task(lam):
        return _row_block(lam, build(lam), limit, alphas, ts, fs, projected)

    workers = workers or os.cpu_count() or 1
    if workers > 1 and len(schedule) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(task, schedule))
    else:
        blocks = [task(lam) for lam in schedule]
    rows = [row for block in blocks for row in block]

    fits = []
    keys = [("resolvent", float(a), i) for a in alphas for i in range(len(fs))]
    keys += [("semigroup", float(t), i) for t in ts for i in range(len(fs))]
    for kind, param, i in keys:
        series = [r for r in rows if r.kind == kind and r.param == param and r.function == i]
        fit = fit_power_law([r.lam for r in series], [r.gap for r in series])
        forms = [r.form_gap for r in series]
        slack = 1e-12 * max(1.0, max(abs(x) for x in forms))
        # (f, G f)_m decreases with the form; no such ordering holds for semigroups
        monotone = all(b <= a + slack for a, b in zip(forms, forms[1:])) if kind == "resolvent" else None
        fits.append(
            SeriesFit(
                kind=kind,
                param=param,
                function=i,
                exponent=None if fit is None else fit[0],
                constant=None if fit is None else fit[1],
                points=len(series),
                final_gap=series[-1].gap,
                converged=series[-1].gap < tolerance,
                monotone=monotone,
            )
        )
    notes = [
        "semigroup rows use the projection of each test function onto hole-constant functions",
        "fitted exponents are empirical observations; no rate is asserted",
    ]
    return SweepReport(mode=mode, schedule=schedule, rows=rows, fits=fits, tolerance=tolerance, notes=notes)


def sweep(
    base: SymmetricForm,
    holes: HoleSet,
    mu: MeasureFamily | None,
    mode: str,
    schedule: Sequence[float],
    alphas: Sequence[float],
    ts: Sequence[float],
    test_functions: Sequence,
    *,
    tolerance: float = 1e-6,
    workers: int | None = None,
) -> SweepReport:
    """Gap sweep for jump augmentation (``mode="jump"``) or conductance boosting."""
    holes = holes if isinstance(holes, HoleSet) else HoleSet(holes)
    if mode == "jump":
        if mu is None:
            mu = MeasureFamily.from_mass(base, holes)

        def build(lam):
            return augment_jump(base, holes, mu, lam)

    elif mode == "conductance":

        def build(lam):
            return augment_conductance(base, holes, lam)

    else:
        raise ValueError(f"mode must be 'jump' or 'conductance', got {mode!r}")
    return sweep_forms(
        base, holes, build, schedule, alphas, ts, test_functions,
        mode=mode, tolerance=tolerance, workers=workers,
    )
