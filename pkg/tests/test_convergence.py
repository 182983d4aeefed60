import numpy as np
import pytest
import scipy.linalg

from darnkit.augmentation import MeasureFamily, augment_conductance, augment_jump
from darnkit.convergence import fdd_exact, fit_power_law, resolvent_gap, semigroup_gap, sweep
from darnkit.darning import HoleSet, constrained_resolvent, darn, star, transport
from darnkit.errors import DimensionError
from darnkit.forms import SymmetricForm, inner, resolvent
from darnkit.instances import random_form, random_holes, split_hole_instance, two_hole_instance


def four_state():
    form = SymmetricForm.from_edges(4, [1.0, 2.0, 1.0, 1.0], [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)])
    return form, HoleSet([[1, 2]])


def test_limit_route_agrees_with_constrained_oracle():
    form, holes = two_hole_instance()
    darned, qmap = darn(form, holes)
    f = np.random.default_rng(0).standard_normal(form.n)
    lifted = transport(qmap, "lift", resolvent(darned, 1.0, star(form, qmap, f)))
    diff = constrained_resolvent(form, holes, 1.0, f) - lifted
    assert np.sqrt(inner(diff, diff, form.m)) < 1e-10


def test_gap_positive_without_augmentation():
    form, holes = four_state()
    assert resolvent_gap(form, form, holes, 1.0, [1.0, 0.0, 0.0, 0.0]) > 1e-2


def test_gap_requires_shared_measure():
    form, holes = four_state()
    other = form.replace(m=np.array([1.0, 1.0, 1.0, 1.0]))
    with pytest.raises(DimensionError):
        resolvent_gap(other, form, holes, 1.0, np.ones(4))


def test_gap_bounded_by_form_gap():
    # E_alpha(diff, diff) equals the form gap for the augmented resolvent
    form, holes = two_hole_instance()
    mu = MeasureFamily.from_mass(form, holes)
    f = np.random.default_rng(1).standard_normal(form.n)
    report = sweep(form, holes, mu, "jump", [1.0, 10.0, 100.0, 1000.0], [0.5, 2.0], [], [f], workers=1)
    for row in report.rows:
        assert row.gap**2 <= row.form_gap / row.param * (1 + 1e-9) + 1e-20


def test_semigroup_gap_trivial_cases():
    form, holes = two_hole_instance()
    mu = MeasureFamily.from_mass(form, holes)
    aug = augment_jump(form, holes, mu, 10.0)
    f = np.ones(form.n)
    assert semigroup_gap(aug, form, holes, 0.0, f) == 0.0
    for t in (0.5, 5.0):
        assert semigroup_gap(aug, form, holes, t, f) < 1e-12


def test_semigroup_gap_rejects_non_constant_f():
    form, holes = two_hole_instance()
    f = np.arange(float(form.n))
    with pytest.raises(ValueError, match="hole 0"):
        semigroup_gap(form, form, holes, 1.0, f)


def test_semigroup_gap_decreases():
    rng = np.random.default_rng(2)
    form = random_form(20, rng)
    holes = random_holes(20, rng)
    mu = MeasureFamily.from_mass(form, holes)
    f = rng.standard_normal(20)
    for hole in holes:
        f[list(hole)] = 1.0
    gaps = [semigroup_gap(augment_jump(form, holes, mu, lam), form, holes, 1.0, f) for lam in (1, 10, 1e2, 1e3, 1e4)]
    assert np.all(np.diff(gaps) < 0)
    assert gaps[-1] < 1e-2 * gaps[0]


def test_fdd_no_dynamics_and_conservation():
    form, _ = two_hole_instance()
    rng = np.random.default_rng(3)
    init, f0 = rng.random((2, form.n))
    assert fdd_exact(form, init, [], [f0]) == pytest.approx(float(init @ f0))
    ones = np.ones(form.n)
    assert fdd_exact(form, init, [0.5, 2.0], [ones, ones, ones]) == pytest.approx(init.sum(), rel=1e-12)


def test_fdd_matches_matrix_exponential():
    rng = np.random.default_rng(4)
    form = random_form(8, rng)
    Q = -(form.energy_matrix.toarray()) / form.m[:, None]
    init = form.m
    f0, f1, f2 = rng.standard_normal((3, 8))
    inner_vec = scipy.linalg.expm(0.4 * Q) @ (f1 * (scipy.linalg.expm(0.9 * Q) @ f2))
    expected = float(np.sum(init * f0 * inner_vec))
    assert fdd_exact(form, init, [0.4, 1.3], [f0, f1, f2]) == pytest.approx(expected, rel=1e-10)


def test_fdd_rejects_bad_times():
    form, _ = two_hole_instance()
    ones = np.ones(form.n)
    with pytest.raises(ValueError):
        fdd_exact(form, ones, [1.0, 1.0], [ones, ones, ones])
    with pytest.raises(ValueError):
        fdd_exact(form, ones, [0.0], [ones, ones])
    with pytest.raises(ValueError):
        fdd_exact(form, ones, [1.0], [ones])


def test_fdd_augmented_approaches_sticky_limit():
    form, holes = two_hole_instance()
    mu = MeasureFamily.from_mass(form, holes)
    darned, qmap = darn(form, holes)
    rng = np.random.default_rng(5)
    fs = [rng.standard_normal(form.n) for _ in range(3)]
    fs = [transport(qmap, "lift", star(form, qmap, f)) for f in fs]
    limit = fdd_exact(darned, darned.m, [0.5, 1.5], [star(form, qmap, f) for f in fs])
    errs = []
    for lam in (1e2, 1e4, 1e6):
        value = fdd_exact(augment_jump(form, holes, mu, lam), form.m, [0.5, 1.5], fs)
        errs.append(abs(value - limit) / abs(limit))
    assert errs[0] > errs[1] > errs[2]
    assert errs[-1] < 1e-4


def test_sweep_constant_function_is_already_in_the_limit():
    form, holes = two_hole_instance()
    report = sweep(form, holes, None, "jump", [1.0, 10.0, 100.0], [1.0], [1.0], [np.ones(form.n)], workers=1)
    assert max(r.gap for r in report.rows) < 1e-12
    assert report.converged


def test_sweep_jump_mode_converges_with_fitted_rate():
    form, holes = two_hole_instance(n=6, seed=1)
    f = np.random.default_rng(6).standard_normal(6)
    schedule = [10.0**k for k in range(9)]
    report = sweep(form, holes, None, "jump", schedule, [1.0], [], [f], workers=1)
    fit = report.fits[0]
    assert fit.converged and fit.monotone
    # recorded observation: decay is close to 1/lambda here
    assert fit.exponent == pytest.approx(1.0, abs=0.2)


def test_sweep_conductance_without_internal_edges_is_flat():
    form, holes = split_hole_instance()
    f = np.array([1.0, 0.0, 0.0, 0.0, 0.0])
    report = sweep(form, holes, None, "conductance", [1.0, 10.0, 100.0, 1000.0], [1.0], [], [f], workers=1)
    gaps = [r.gap for r in report.rows]
    assert max(gaps) - min(gaps) < 1e-14
    assert gaps[0] > 1e-3
    assert not report.converged
    assert augment_conductance(form, holes, 5.0).c.nnz == form.c.nnz


def test_sweep_rejects_bad_input():
    form, holes = two_hole_instance()
    f = [np.ones(form.n)]
    with pytest.raises(ValueError):
        sweep(form, holes, None, "jump", [], [1.0], [], f)
    with pytest.raises(ValueError):
        sweep(form, holes, None, "jump", [10.0, 1.0], [1.0], [], f)
    with pytest.raises(ValueError):
        sweep(form, holes, None, "jump", [1.0], [1.0], [], [])
    with pytest.raises(ValueError):
        sweep(form, holes, None, "diagonal", [1.0], [1.0], [], f)


def test_sweep_parallel_matches_serial():
    form, holes = two_hole_instance()
    f = np.random.default_rng(7).standard_normal(form.n)
    args = (form, holes, None, "jump", [1.0, 10.0, 100.0, 1000.0], [1.0, 3.0], [0.5], [f, np.ones(form.n)])
    serial = sweep(*args, workers=1).to_csv()
    assert serial == sweep(*args, workers=3).to_csv()
    assert serial.splitlines()[0] == "lambda,kind,param,function,gap,form_gap"


def test_semigroup_series_carry_no_monotonicity_flag():
    form, holes = two_hole_instance()
    f = np.random.default_rng(8).standard_normal(form.n)
    report = sweep(form, holes, None, "jump", [1.0, 10.0], [1.0], [1.0], [f], workers=1)
    flags = {fit.kind: fit.monotone for fit in report.fits}
    assert flags == {"resolvent": True, "semigroup": None}


def test_power_law_fit():
    lams = np.array([1.0, 10.0, 100.0, 1000.0])
    p, c = fit_power_law(lams, 3.0 * lams**-1.5)
    assert p == pytest.approx(1.5) and c == pytest.approx(3.0)
    assert fit_power_law(lams[:3], lams[:3] ** -1.0) is None
