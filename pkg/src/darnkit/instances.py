"""Random and hand-built test instances."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from darnkit.darning import HoleSet
from darnkit.forms import SymmetricForm

__all__ = ["random_form", "random_holes", "chain", "two_hole_instance", "split_hole_instance"]


def random_form(
    n: int,
    rng: np.random.Generator,
    *,
    density: float = 0.15,
    kill_prob: float = 0.3,
    mass_range: tuple[float, float] = (0.1, 10.0),
    connected: bool = True,
) -> SymmetricForm:
    """Random sparse form; connected through a random spanning tree by default."""
    rows, cols, vals = [], [], []
    if connected and n > 1:
        order = rng.permutation(n)
        for k in range(1, n):
            a, b = order[k], order[rng.integers(0, k)]
            rows.append(a)
            cols.append(b)
    extra = rng.random((n, n)) < density
    iu = np.triu_indices(n, k=1)
    for a, b in zip(iu[0][extra[iu]], iu[1][extra[iu]]):
        rows.append(a)
        cols.append(b)
    w = rng.uniform(0.1, 2.0, size=len(rows))
    upper = sp.coo_matrix((w, (rows, cols)), shape=(n, n)).tocsr()
    upper = sp.triu(upper + upper.T, k=1)
    c = upper + upper.T
    kappa = np.where(rng.random(n) < kill_prob, rng.uniform(0.0, 1.0, n), 0.0)
    m = rng.uniform(*mass_range, size=n)
    return SymmetricForm(m=m, c=c, kappa=kappa)


def random_holes(n: int, rng: np.random.Generator, n_holes: int = 2, max_size: int = 4) -> HoleSet:
    """Disjoint random holes leaving at least one interior state."""
    perm = rng.permutation(n)
    holes, pos = [], 0
    for _ in range(n_holes):
        size = int(rng.integers(1, max_size + 1))
        if pos + size >= n:
            break
        holes.append(sorted(perm[pos : pos + size].tolist()))
        pos += size
    return HoleSet(holes)


def chain(weights, m=None, kappa=None) -> SymmetricForm:
    """Path graph ``0 - 1 - ... - k`` with the given edge weights."""
    n = len(weights) + 1
    edges = [(i, i + 1, w) for i, w in enumerate(weights)]
    return SymmetricForm.from_edges(n, np.ones(n) if m is None else m, edges, kappa)


def two_hole_instance(n: int = 10, seed: int = 7) -> tuple[SymmetricForm, HoleSet]:
    """Connected random form with two holes whose internal edges connect them.

    Holes are ``[1, 2, 3]`` and ``[6, 7]`` for ``n >= 9`` and ``[0, 1]``,
    ``[3, 4]`` for ``6 <= n < 9``.
    """
    if n < 6:
        raise ValueError("two_hole_instance needs at least 6 states")
    rng = np.random.default_rng(seed)
    form = random_form(n, rng, density=0.25, kill_prob=0.0, mass_range=(0.5, 2.0))
    holes = HoleSet([[1, 2, 3], [6, 7]] if n >= 9 else [[0, 1], [3, 4]])
    c = form.c.tolil()
    for hole in holes:
        for a, b in zip(hole, hole[1:]):
            if c[a, b] == 0:
                c[a, b] = c[b, a] = 1.0
    return form.replace(c=c.tocsr()), holes


def split_hole_instance() -> tuple[SymmetricForm, HoleSet]:
    """A hole whose two nodes share no edge: conductance boosting cannot short it."""
    edges = [(0, 1, 1.0), (1, 2, 1.0), (0, 3, 1.0), (3, 2, 1.0), (3, 4, 1.0)]
    m = np.array([1.0, 1.0, 1.0, 1.0, 1.0])
    form = SymmetricForm.from_edges(5, m, edges, kappa=[0.0, 0.0, 0.0, 0.0, 0.5])
    return form, HoleSet([[0, 2]])
