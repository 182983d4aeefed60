"""Darning of finite-state symmetric Markov processes and its approximations."""

from darnkit.augmentation import MeasureFamily, augment_conductance, augment_jump, piecing_rates
from darnkit.convergence import SweepReport, fdd_exact, resolvent_gap, semigroup_gap, sweep
from darnkit.darning import (
    HoleSet,
    QuotientMap,
    constrained_resolvent,
    constrained_semigroup,
    darn,
    hitting_decomposition,
    project,
    star,
    transport,
)
from darnkit.flagpole import bmvd_report, build_flagpole_lattice
from darnkit.forms import SymmetricForm, apply_generator, energy, resolvent, semigroup
from darnkit.simulator import MCEstimate, Trace, estimate_fdd, simulate_ctmc, simulate_piecing

__all__ = [
    "SymmetricForm", "energy", "apply_generator", "resolvent", "semigroup",
    "HoleSet", "QuotientMap", "darn", "transport", "star", "project",
    "constrained_resolvent", "constrained_semigroup", "hitting_decomposition",
    "MeasureFamily", "augment_jump", "augment_conductance", "piecing_rates",
    "SweepReport", "resolvent_gap", "semigroup_gap", "fdd_exact", "sweep",
    "Trace", "MCEstimate", "simulate_ctmc", "simulate_piecing", "estimate_fdd",
    "build_flagpole_lattice", "bmvd_report",
]
