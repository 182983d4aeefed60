"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line."""

import json
import time

import numpy as np
from click.testing import CliRunner
from scipy import stats

from darnkit.augmentation import MeasureFamily, augment_conductance, augment_jump
from darnkit.cli import main
from darnkit.convergence import fdd_exact, sweep
from darnkit.darning import (
    HoleSet,
    constrained_resolvent,
    constrained_semigroup,
    darn,
    hitting_decomposition,
    project,
    star,
    transport,
)
from darnkit.flagpole import COARSE_PRESET, bmvd_report, build_flagpole_lattice
from darnkit.forms import SymmetricForm, energy, inner, resolvent, semigroup
from darnkit.instances import random_form, random_holes, split_hole_instance, two_hole_instance
from darnkit.simulator import empirical_marginals, estimate_fdd, simulate_piecing, transition_counts


def instance(rng, n_lo=10, n_hi=50):
    n = int(rng.integers(n_lo, n_hi + 1))
    form = random_form(n, rng, density=float(rng.uniform(0.05, 0.3)))
    return form, random_holes(n, rng, n_holes=int(rng.integers(1, 4)), max_size=5)


def hole_constant(holes, n, rng):
    u = rng.standard_normal(n)
    for hole in holes:
        u[list(hole)] = rng.standard_normal()
    return u


def test_c01_resolvent_contract(criterion):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        form, _ = instance(rng, 2, 50)
        n = form.n
        f, g = rng.standard_normal((2, n))
        a, b = rng.uniform(0.1, 5.0, 2)
        ga_f, ga_g, gb_f = resolvent(form, a, f), resolvent(form, a, g), resolvent(form, b, f)
        defining = energy(form, ga_f, g) + a * inner(ga_f, g, form.m) - inner(f, g, form.m)
        equation = ga_f - gb_f - (b - a) * resolvent(form, a, gb_f)
        symmetry = inner(ga_f, g, form.m) - inner(f, ga_g, form.m)
        box = rng.random(n)
        u = a * resolvent(form, a, box)
        contraction = max(0.0, -u.min(), u.max() - 1.0)
        worst = max(worst, abs(defining), np.max(np.abs(equation)), abs(symmetry), contraction)
    elapsed = time.perf_counter() - start
    ok = criterion(1, worst < 1e-10 and elapsed < 10, f"max violation {worst:.2e} over 100 forms in {elapsed:.2f}s")
    assert ok


def test_c02_darning_energy_identity(criterion):
    rng = np.random.default_rng(102)
    worst = 0.0
    for k in range(100):
        form, holes = instance(rng)
        if k % 2 == 0:
            c = form.c.tolil()
            for hole in holes:
                for x, y in zip(hole, hole[1:]):
                    c[x, y] = c[y, x] = 10.0 ** rng.uniform(3, 8)
            form = form.replace(c=c.tocsr())
        darned, qmap = darn(form, holes)
        u = hole_constant(holes, form.n, rng)
        diff = energy(darned, transport(qmap, "push", u)) - energy(form, u)
        worst = max(worst, abs(diff) / max(1.0, energy(form, u)))
    assert criterion(2, worst < 1e-12, f"max relative energy mismatch {worst:.2e} over 100 forms")


def test_c03_entrance_probabilities(criterion):
    rng = np.random.default_rng(103)
    worst = 0.0
    for _ in range(50):
        form, holes = instance(rng)
        darned, qmap = darn(form, holes)
        phi = hitting_decomposition(form, holes)
        phi_star = hitting_decomposition(darned, qmap.target_holes())
        worst = max(worst, np.max(np.abs(phi[qmap.interior] - phi_star[: qmap.n_interior])))
    assert criterion(3, worst < 1e-10, f"max hitting-probability mismatch {worst:.2e} over 50 instances")


def test_c04_constrained_equals_darned_route(criterion):
    rng = np.random.default_rng(104)
    worst_g = worst_p = 0.0
    for _ in range(50):
        form, holes = instance(rng)
        darned, qmap = darn(form, holes)
        f = rng.standard_normal(form.n)
        fs = star(form, qmap, f)
        alpha = rng.uniform(0.1, 5.0)
        via = transport(qmap, "lift", resolvent(darned, alpha, fs))
        worst_g = max(worst_g, np.max(np.abs(constrained_resolvent(form, holes, alpha, f) - via)))
        for t in (0.1, 1.0, 10.0):
            via = transport(qmap, "lift", semigroup(darned, t, fs))
            worst_p = max(worst_p, np.max(np.abs(constrained_semigroup(form, holes, t, f) - via)))
    ok = worst_g < 1e-10 and worst_p < 1e-10
    assert criterion(4, ok, f"resolvent {worst_g:.2e}, semigroup {worst_p:.2e} over 50 instances")


def test_c05_jump_mode_convergence(criterion):
    rng = np.random.default_rng(105)
    schedule = [10.0**k for k in range(9)]
    worst, monotone, exponents = 0.0, True, []
    for _ in range(10):
        form, holes = instance(rng)
        mu = MeasureFamily(holes, tuple(rng.uniform(0.2, 3.0, len(h)) for h in holes))
        fs = list(rng.standard_normal((3, form.n)))
        report = sweep(form, holes, mu, "jump", schedule, [0.5, 2.0], [], fs, workers=1)
        for fit in report.fits:
            worst = max(worst, fit.final_gap)
            monotone &= bool(fit.monotone)
            if fit.exponent is not None:
                exponents.append(fit.exponent)
    detail = (f"max gap at 1e8 {worst:.2e}, monotone {monotone}, "
              f"fitted exponents {min(exponents):.2f}..{max(exponents):.2f}")
    assert criterion(5, worst < 1e-6 and monotone, detail)


def test_c06_finite_dimensional_limit(criterion):
    form, holes = two_hole_instance()
    mu = MeasureFamily.from_mass(form, holes)
    darned, qmap = darn(form, holes)
    rng = np.random.default_rng(106)
    fs = [rng.uniform(0.5, 1.5, form.n) for _ in range(3)]
    fs_star = [star(form, qmap, f) for f in fs]
    times = [0.5, 1.5]
    aug = augment_jump(form, holes, mu, 1e6)
    exact_aug = fdd_exact(aug, form.m, times, fs)
    exact_star = fdd_exact(darned, darned.m, times, fs_star)
    rel = abs(exact_aug - exact_star) / abs(exact_star)
    sticky_mc = estimate_fdd(darned, darned.m, times, fs_star, 100_000, seed=6)
    aug_mc = estimate_fdd(aug, form.m, times, fs, 100_000, seed=60, method="skeleton")
    covers = sticky_mc.covers(exact_star) and sticky_mc.covers(exact_aug) and aug_mc.covers(exact_aug)
    detail = (f"relative gap {rel:.2e}; sticky MC {sticky_mc.estimate:.5f}+-{sticky_mc.stderr:.1e}, "
              f"augmented skeleton MC {aug_mc.estimate:.5f}+-{aug_mc.stderr:.1e}, exact {exact_star:.5f}")
    assert criterion(6, rel < 1e-4 and covers, detail)


def test_c07_conductance_mode(criterion):
    form, holes = two_hole_instance()
    fs = list(np.random.default_rng(107).standard_normal((3, form.n)))
    schedule = [10.0**k for k in range(9)]
    connected = sweep(form, holes, None, "conductance", schedule, [1.0], [], fs, workers=1)
    split, split_holes = split_hole_instance()
    plateau = sweep(split, split_holes, None, "conductance", schedule, [1.0], [], [np.eye(5)[0]], workers=1)
    best = max(f.final_gap for f in connected.fits)
    floor = min(r.gap for r in plateau.rows)
    assert augment_conductance(split, split_holes, 1e8).c.nnz == split.c.nnz
    ok = best < 1e-6 and floor > 1e-3
    assert criterion(7, ok, f"connected holes gap at 1e8 {best:.2e}; split hole gap stays >= {floor:.4f}")


def test_c08_piecing_together(criterion):
    form = SymmetricForm.from_edges(
        5, [1.0, 2.0, 1.0, 0.5, 1.0],
        [(0, 1, 1.0), (1, 2, 0.5), (2, 3, 1.0), (3, 4, 2.0), (0, 3, 0.3)],
        kappa=[0.0, 0.0, 0.0, 0.0, 0.2],
    )
    holes = HoleSet([[1, 2], [3, 4]])
    mu = MeasureFamily(holes, ([1.0, 0.5], [0.4, 1.2]))
    lam, t = 10.0, 1.0
    aug = augment_jump(form, holes, mu, lam)

    traces, events, seed = [], 0, 0
    while events < 100_000:
        trace = simulate_piecing(form, holes, mu, lam, seed % 5, 5.0, seed)
        traces.append(trace)
        events += len(trace.states) - 1 + int(trace.killed)
        seed += 1
    counts = transition_counts(traces, 5).astype(float)
    c = aug.c.toarray()
    probs = np.column_stack([c, aug.kappa]) / (c.sum(axis=1) + aug.kappa)[:, None]
    statistic, dof = 0.0, 0
    for x in range(5):
        expected = probs[x] * counts[x].sum()
        keep = expected > 0
        statistic += np.sum((counts[x][keep] - expected[keep]) ** 2 / expected[keep])
        dof += np.count_nonzero(keep) - 1
    p_kernel = stats.chi2.sf(statistic, dof)

    paths = 100_000
    marg = empirical_marginals([simulate_piecing(form, holes, mu, lam, 0, t, s) for s in range(paths)], t, 5)
    exact = np.array([semigroup(aug, t, e)[0] for e in np.eye(5)])
    z = np.max(np.abs(marg - exact) / np.sqrt(exact * (1 - exact) / paths))
    ok = p_kernel > 0.01 and z <= 3
    assert criterion(8, ok, f"kernel chi2 p={p_kernel:.3f} on {events} events; marginals max |z|={z:.2f}")


def test_c09_lattice_demo(criterion):
    start = time.perf_counter()
    report, entrance = bmvd_report(**COARSE_PRESET, workers=1)
    lattice = build_flagpole_lattice(**COARSE_PRESET)
    darned, qmap = darn(lattice.form, lattice.holes)
    f = np.random.default_rng(109).standard_normal(lattice.form.n)
    proj_err = np.max(np.abs(project(lattice.form, lattice.holes, f)
                             - transport(qmap, "lift", star(lattice.form, qmap, f))))
    via = transport(qmap, "lift", resolvent(darned, 1.0, star(lattice.form, qmap, f)))
    res_err = np.max(np.abs(constrained_resolvent(lattice.form, lattice.holes, 1.0, f) - via))
    elapsed = time.perf_counter() - start
    gaps = [r.gap for r in report.rows]
    decreasing = bool(np.all(np.diff(gaps) < 0))
    ok = decreasing and proj_err < 1e-10 and res_err < 1e-10 and elapsed < 60
    detail = (f"gaps {', '.join(f'{g:.3e}' for g in gaps)}; identities {proj_err:.1e}/{res_err:.1e}; "
              f"pole entrance {entrance['pole_entrance_probability']:.4f} "
              f"(continuum reference {entrance['continuum_reference']:.4f}, not gated); {elapsed:.1f}s")
    assert criterion(9, ok, detail)


def test_c10_determinism(criterion, tmp_path):
    runner = CliRunner()
    chain = {"n": 4, "m": [1, 2, 1, 1], "edges": [[0, 1, 1.0], [1, 2, 2.0], [2, 3, 1.0]], "kappa": [0, 0, 0, 0.3]}
    configs = {
        "jump": {"form": chain, "holes": [[1, 2]], "schedule": [1, 10, 100, 1000], "ts": [0.5, 1.0],
                 "test_functions": [{"kind": "random", "seed": 1}], "mc": {"paths": 2000, "master_seed": 5}},
        "conductance": {"form": chain, "holes": [[1, 2]], "mode": "conductance", "schedule": [1, 10],
                        "ts": [1.0], "test_functions": [{"kind": "indicator", "nodes": [0]}],
                        "mc": {"paths": 2000, "master_seed": 5, "method": "skeleton"}},
        "bmvd": {"bmvd": {"preset": "coarse", "schedule": [1, 10]}},
    }
    compared, same = 0, True
    for name, fields in configs.items():
        tables = []
        for run in ("first", "second"):
            out = tmp_path / f"{name}-{run}"
            path = tmp_path / f"{name}-{run}.json"
            path.write_text(json.dumps({"schema_version": 1, "output_dir": str(out), **fields}))
            result = runner.invoke(main, ["all", str(path)])
            assert result.exit_code == 0, result.output
            tables.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
        compared += len(tables[0])
        same &= tables[0] == tables[1] and bool(tables[0])
    assert criterion(10, same, f"{compared} CSV files byte-identical across repeated runs of {len(configs)} configs")
