"""Approximating forms: jump augmentation within holes and conductance boosting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from darnkit.darning import HoleSet
from darnkit.errors import DimensionError
from darnkit.forms import SymmetricForm

__all__ = [
    "MeasureFamily",
    "augment_jump",
    "augment_conductance",
    "PiecingRates",
    "piecing_rates",
]


@dataclass(frozen=True, eq=False)
class MeasureFamily:
    """Per-hole weights ``mu_j``, stored aligned with the hole node lists.

    ``weights[j][i]`` is ``mu_j`` at node ``holes[j][i]``; every weight is
    strictly positive, so ``mu_j`` is supported exactly on ``K_j``.
    """

    holes: HoleSet
    weights: tuple[np.ndarray, ...]

    def __post_init__(self):
        holes = self.holes if isinstance(self.holes, HoleSet) else HoleSet(self.holes)
        if len(self.weights) != len(holes):
            raise DimensionError(f"{len(self.weights)} weight vectors for {len(holes)} holes")
        weights = []
        for j, (hole, w) in enumerate(zip(holes, self.weights)):
            w = np.array(w, dtype=float).ravel()
            if w.shape != (len(hole),):
                raise DimensionError(f"mu_{j} has {w.shape[0]} entries, hole {j} has {len(hole)} nodes")
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise ValueError(f"mu_{j} must be strictly positive on every node of hole {j}")
            w.setflags(write=False)
            weights.append(w)
        object.__setattr__(self, "holes", holes)
        object.__setattr__(self, "weights", tuple(weights))

    @classmethod
    def from_mass(cls, form: SymmetricForm, holes: HoleSet) -> "MeasureFamily":
        """Default family: ``mu_j = m`` restricted to ``K_j``."""
        holes = holes if isinstance(holes, HoleSet) else HoleSet(holes)
        holes.validate(form.n)
        return cls(holes, tuple(form.m[list(h)] for h in holes))

    def total(self, j: int) -> float:
        return float(np.sum(self.weights[j]))

    def check(self, form: SymmetricForm, holes: HoleSet) -> None:
        holes = holes if isinstance(holes, HoleSet) else HoleSet(holes)
        holes.validate(form.n)
        if self.holes != holes:
            raise ValueError("measure family was built for a different hole set")


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not lam >= 0 or not np.isfinite(lam):
        raise ValueError(f"lambda must be a finite nonnegative number, got {lam}")
    return lam


def augment_jump(form: SymmetricForm, holes: HoleSet, mu: MeasureFamily, lam: float) -> SymmetricForm:
    """Add jumps of intensity ``lambda mu_j(dx) mu_j(dy)`` inside each hole.

    The added term ``lambda sum_j sum_{x,y in K_j} (u(x)-u(y))^2 mu_j(x) mu_j(y)``
    counts each unordered pair twice; under the ``1/2 sum c`` energy
    convention that is conductance ``2 lambda mu_j(x) mu_j(y)``. For a
    two-node hole with ``mu = (1, 1)`` the added energy of ``u = (1, 0)`` is
    ``lambda (1 + 1) = 2 lambda``, which is exactly one edge of weight
    ``2 lambda``.
    """
    holes = holes if isinstance(holes, HoleSet) else HoleSet(holes)
    mu.check(form, holes)
    lam = _check_lambda(lam)
    if lam == 0:
        return form
    rows, cols, vals = [], [], []
    for hole, w in zip(holes, mu.weights):
        idx = np.asarray(hole, dtype=np.intp)
        block = 2.0 * lam * np.outer(w, w)
        np.fill_diagonal(block, 0.0)
        r, c = np.meshgrid(idx, idx, indexing="ij")
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(block.ravel())
    added = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=form.c.shape
    )
    return form.replace(c=form.c + added)


def augment_conductance(form: SymmetricForm, holes: HoleSet, lam: float) -> SymmetricForm:
    """Scale every edge with both endpoints in the same hole by ``1 + lambda``."""
    holes = holes if isinstance(holes, HoleSet) else HoleSet(holes)
    labels = holes.labels(form.n)
    lam = _check_lambda(lam)
    if lam == 0:
        return form
    coo = form.c.tocoo()
    same = (labels[coo.row] >= 0) & (labels[coo.row] == labels[coo.col])
    data = np.where(same, (1.0 + lam) * coo.data, coo.data)
    return form.replace(c=sp.csr_matrix((data, (coo.row, coo.col)), shape=form.c.shape))


@dataclass(frozen=True, eq=False)
class PiecingRates:
    """Kill-and-rebirth data for the pieced-together process.

    ``kill_rate[x]`` is the extra killing rate at ``x`` (zero off the holes),
    ``hole_of[x]`` the hole containing ``x`` or -1, and ``rebirth[j]`` the
    rebirth law ``mu_j / mu_j(K_j)`` aligned with ``holes[j]``.
    """

    holes: HoleSet
    kill_rate: np.ndarray
    hole_of: np.ndarray
    rebirth: tuple[np.ndarray, ...]


def piecing_rates(form: SymmetricForm, holes: HoleSet, mu: MeasureFamily, lam: float) -> PiecingRates:
    """Extra killing ``r_j(x) = 2 lambda mu_j(K_j) mu_j(x) / m(x)`` with rebirth ``mu_j / mu_j(K_j)``.

    Killing at ``r_j`` followed by rebirth from ``nu_j`` moves ``x -> y`` at
    rate ``2 lambda mu_j(x) mu_j(y) / m(x)``, the jump rate of
    :func:`augment_jump`. Rebirth onto ``x`` itself is a no-op.
    """
    holes = holes if isinstance(holes, HoleSet) else HoleSet(holes)
    mu.check(form, holes)
    lam = _check_lambda(lam)
    labels = holes.labels(form.n)
    kill = np.zeros(form.n)
    rebirth = []
    for j, (hole, w) in enumerate(zip(holes, mu.weights)):
        idx = list(hole)
        total = float(np.sum(w))
        kill[idx] = 2.0 * lam * total * w / form.m[idx]
        rebirth.append(w / total)
    return PiecingRates(holes=holes, kill_rate=kill, hole_of=labels, rebirth=tuple(rebirth))
