"""Pathwise simulation of finite-state symmetric Markov processes.

Seed splitting: path ``i`` of a run with master seed ``s`` draws from
``numpy.random.default_rng([s, i])``. SeedSequence hashes the pair into an
independent PCG64 stream, so paths can be generated in any order or in
parallel and each path is reproducible on its own.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from darnkit.augmentation import MeasureFamily, PiecingRates, piecing_rates
from darnkit.darning import HoleSet
from darnkit.forms import SymmetricForm, _as_vector

__all__ = [
    "Trace",
    "MCEstimate",
    "simulate_ctmc",
    "simulate_piecing",
    "estimate_fdd",
    "path_rng",
    "transition_counts",
    "empirical_marginals",
]

KILL = -1
REBIRTH = -2
DEAD = -1


def path_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(master_seed), int(index)])


@dataclass(frozen=True, eq=False)
class Trace:
    """Right-continuous sample path: ``states[i]`` is held for ``holding[i]``.

    Consecutive states differ. A killed trace ends before ``horizon``; an
    alive one has total holding time equal to ``horizon``.
    """

    seed: object
    states: np.ndarray
    holding: np.ndarray
    killed: bool
    horizon: float

    @property
    def lifetime(self) -> float:
        return float(np.sum(self.holding))

    def state_at(self, t: float) -> int:
        """State occupied at time ``t`` (``-1`` once killed)."""
        if t < 0 or t > self.horizon:
            raise ValueError(f"t={t} outside [0, {self.horizon}]")
        ends = np.cumsum(self.holding)
        i = int(np.searchsorted(ends, t, side="right"))
        if i >= len(self.states):
            return DEAD if self.killed else int(self.states[-1])
        return int(self.states[i])

    def export(self) -> str:
        """One ``time,state`` line per entry, then ``time,killed`` or ``time,alive``."""
        lines = []
        t = 0.0
        for state, hold in zip(self.states, self.holding):
            lines.append(f"{t!r},{int(state)}")
            t += float(hold)
        lines.append(f"{t!r},{'killed' if self.killed else 'alive'}")
        return "\n".join(lines) + "\n"

    def __eq__(self, other):
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            self.killed == other.killed
            and self.horizon == other.horizon
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.holding, other.holding)
        )


@dataclass(frozen=True)
class MCEstimate:
    estimate: float
    stderr: float
    paths: int

    def covers(self, value: float, k: float = 3.0) -> bool:
        return abs(self.estimate - value) <= k * self.stderr


class _JumpTable:
    """Per-state exit rates and cumulative next-event tables."""

    def __init__(self, form: SymmetricForm, extra: PiecingRates | None = None):
        c = form.c
        self.n = form.n
        self.rates = np.zeros(self.n)
        self.targets: list[np.ndarray] = []
        self.cums: list[np.ndarray] = []
        extra_kill = np.zeros(self.n) if extra is None else extra.kill_rate
        for x in range(self.n):
            lo, hi = c.indptr[x], c.indptr[x + 1]
            nbrs = c.indices[lo:hi].astype(np.intp)
            weights = c.data[lo:hi] / form.m[x]
            tgts = list(nbrs)
            w = list(weights)
            if form.kappa[x] > 0:
                tgts.append(KILL)
                w.append(form.kappa[x] / form.m[x])
            if extra_kill[x] > 0:
                tgts.append(REBIRTH)
                w.append(extra_kill[x])
            w = np.asarray(w, dtype=float)
            total = float(np.sum(w))
            self.rates[x] = total
            self.targets.append(np.asarray(tgts, dtype=np.intp))
            if total > 0:
                cum = np.cumsum(w) / total
                cum[-1] = 1.0
            else:
                cum = np.zeros(0)
            self.cums.append(cum)
        self.rebirth_nodes: list[np.ndarray] = []
        self.rebirth_cums: list[np.ndarray] = []
        self.hole_of = None
        if extra is not None:
            self.hole_of = extra.hole_of
            for hole, law in zip(extra.holes, extra.rebirth):
                cum = np.cumsum(law)
                cum[-1] = 1.0
                self.rebirth_nodes.append(np.asarray(hole, dtype=np.intp))
                self.rebirth_cums.append(cum)

    def run(self, start: int, horizon: float, rng: np.random.Generator, seed=None) -> Trace:
        x = int(start)
        t = 0.0
        states = [x]
        holding = []
        current = 0.0
        killed = False
        while True:
            rate = self.rates[x]
            if rate <= 0:
                current += horizon - t
                break
            dt = rng.exponential(1.0 / rate)
            if t + dt >= horizon:
                current += horizon - t
                break
            t += dt
            current += dt
            k = int(np.searchsorted(self.cums[x], rng.random(), side="right"))
            target = int(self.targets[x][k])
            if target == REBIRTH:
                j = int(self.hole_of[x])
                i = int(np.searchsorted(self.rebirth_cums[j], rng.random(), side="right"))
                target = int(self.rebirth_nodes[j][i])
                if target == x:
                    continue
            holding.append(current)
            current = 0.0
            if target == KILL:
                killed = True
                break
            x = target
            states.append(x)
        if not killed:
            holding.append(current)
        return Trace(
            seed=seed,
            states=np.asarray(states, dtype=np.intp),
            holding=np.asarray(holding, dtype=float),
            killed=killed,
            horizon=float(horizon),
        )


def _check_start(form: SymmetricForm, start: int, horizon: float) -> None:
    if not 0 <= int(start) < form.n:
        raise ValueError(f"start state {start} outside 0..{form.n - 1}")
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")


def simulate_ctmc(form: SymmetricForm, start: int, horizon: float, seed) -> Trace:
    """Exact path of the Markov chain of ``form`` up to ``horizon``.

    Holding rate at ``x`` is ``(sum_y c(x,y) + kappa(x)) / m(x)``; the next
    state is ``y`` with probability proportional to ``c(x,y)``, killing with
    probability proportional to ``kappa(x)``.
    """
    _check_start(form, start, horizon)
    return _JumpTable(form).run(start, horizon, np.random.default_rng(seed), seed)


def simulate_piecing(
    base: SymmetricForm,
    holes: HoleSet,
    mu: MeasureFamily,
    lam: float,
    start: int,
    horizon: float,
    seed,
) -> Trace:
    """Base chain with extra killing on the holes, reborn inside the same hole.

    An extra-kill event in hole ``j`` restarts the path at a node drawn from
    ``mu_j / mu_j(K_j)``; genuine killing ends the path.
    """
    _check_start(base, start, horizon)
    rates = piecing_rates(base, holes, mu, lam)
    return _JumpTable(base, rates).run(start, horizon, np.random.default_rng(seed), seed)


def _path_values(args) -> np.ndarray:
    table, cdf, times, fs, seed, lo, hi, skeleton = args
    horizon = times[-1] if times else 0.0
    out = np.empty(hi - lo)
    for k, i in enumerate(range(lo, hi)):
        rng = path_rng(seed, i)
        x0 = int(np.searchsorted(cdf, rng.random(), side="right"))
        value = fs[0][x0]
        if times and value != 0:
            if skeleton is not None:
                x = x0
                for j, t in enumerate(times):
                    row = skeleton[j][x]
                    u = rng.random()
                    y = int(np.searchsorted(row, u, side="right"))
                    if y >= len(row):
                        value = 0.0
                        break
                    x = y
                    value *= fs[j + 1][x]
            else:
                trace = table.run(x0, horizon, rng, seed)
                for j, t in enumerate(times):
                    x = trace.state_at(t)
                    if x == DEAD:
                        value = 0.0
                        break
                    value *= fs[j + 1][x]
        out[k] = value
    return out


def estimate_fdd(
    form: SymmetricForm,
    initial,
    times: Sequence[float],
    functions: Sequence,
    paths: int,
    seed: int,
    *,
    piecing: PiecingRates | None = None,
    method: str = "paths",
    workers: int = 1,
) -> MCEstimate:
    """Monte Carlo estimate of ``E_initial[prod_j f_j(X_{t_j})]``.

    ``initial`` is a nonnegative measure (or a start state index); paths
    start from its normalization and the mean is rescaled by its total mass.
    Killed paths contribute zero. ``method="paths"`` simulates trajectories
    event by event (through the kill-and-rebirth construction when
    ``piecing`` is given); ``method="skeleton"`` samples the chain only at
    the requested times from the exact transition kernels, which stays
    cheap for very stiff forms.
    """
    if paths < 1:
        raise ValueError("paths must be at least 1")
    if np.isscalar(initial):
        start = int(initial)
        initial = np.zeros(form.n)
        initial[start] = 1.0
    initial = _as_vector(initial, form.n, "initial")
    if np.any(initial < 0) or not np.sum(initial) > 0:
        raise ValueError("initial must be a nonnegative measure with positive mass")
    times = [float(t) for t in times]
    if len(functions) != len(times) + 1:
        raise ValueError(f"need {len(times) + 1} functions for {len(times)} times")
    if times and times[0] <= 0:
        raise ValueError("times must start strictly after 0")
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("times must be strictly increasing")
    fs = [_as_vector(f, form.n, f"functions[{i}]") for i, f in enumerate(functions)]
    total = float(np.sum(initial))
    cdf = np.cumsum(initial) / total
    cdf[-1] = 1.0

    skeleton = None
    table = None
    if method == "skeleton":
        if piecing is not None:
            raise ValueError("skeleton sampling uses the form's own kernel; drop piecing")
        grid = [0.0] + times
        skeleton = []
        for a, b in zip(grid, grid[1:]):
            kernel = np.clip(form.spectral.kernel(b - a), 0.0, None)
            skeleton.append(np.cumsum(kernel, axis=1))
    elif method == "paths":
        table = _JumpTable(form, piecing)
    else:
        raise ValueError(f"method must be 'paths' or 'skeleton', got {method!r}")

    workers = max(1, int(workers))
    bounds = np.linspace(0, paths, workers + 1).astype(int)
    jobs = [(table, cdf, times, fs, seed, int(lo), int(hi), skeleton) for lo, hi in zip(bounds, bounds[1:])]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_path_values, jobs))
    else:
        parts = [_path_values(job) for job in jobs]
    values = np.concatenate(parts)
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(paths)) if paths > 1 else 0.0
    return MCEstimate(estimate=total * mean, stderr=total * se, paths=paths)


def transition_counts(traces: Sequence[Trace], n: int) -> np.ndarray:
    """Counts of observed moves ``x -> y``; column ``n`` counts kills from ``x``."""
    counts = np.zeros((n, n + 1), dtype=np.int64)
    for trace in traces:
        s = trace.states
        np.add.at(counts, (s[:-1], s[1:]), 1)
        if trace.killed:
            counts[s[-1], n] += 1
    return counts


def empirical_marginals(traces: Sequence[Trace], t: float, n: int) -> np.ndarray:
    """Fraction of traces in each state at time ``t`` (killed paths in none)."""
    counts = np.zeros(n)
    for trace in traces:
        x = trace.state_at(t)
        if x != DEAD:
            counts[x] += 1
    return counts / len(traces)
