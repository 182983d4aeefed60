"""Darning (shorting) of hole sets into single states.

Target indexing of a darned form is fixed: interior states ``D`` keep their
relative order and come first, followed by one state ``a*_j`` per hole in
the order the holes were given.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from darnkit.errors import DimensionError, HoleError, SingularSystemError
from darnkit.forms import Spectral, SymmetricForm, _as_vector

__all__ = [
    "HoleSet",
    "QuotientMap",
    "darn",
    "transport",
    "star",
    "project",
    "aggregation_matrix",
    "constrained_resolvent",
    "constrained_semigroup",
    "hitting_decomposition",
    "compose",
]

PUSH_TOL = 1e-12


@dataclass(frozen=True)
class HoleSet:
    """Disjoint nonempty node sets ``K_1..K_N`` to be collapsed."""

    holes: tuple[tuple[int, ...], ...]

    def __init__(self, holes):
        object.__setattr__(self, "holes", tuple(tuple(int(x) for x in hole) for hole in holes))

    def __len__(self) -> int:
        return len(self.holes)

    def __iter__(self):
        return iter(self.holes)

    def __getitem__(self, j):
        return self.holes[j]

    def validate(self, n: int) -> None:
        owner: dict[int, int] = {}
        for j, hole in enumerate(self.holes):
            if not hole:
                raise HoleError(f"hole {j} is empty")
            if len(set(hole)) != len(hole):
                raise HoleError(f"hole {j} lists a node twice")
            for x in hole:
                if not 0 <= x < n:
                    raise HoleError(f"hole {j} contains node {x}, outside 0..{n - 1}")
                if x in owner:
                    raise HoleError(f"holes {owner[x]} and {j} overlap at node {x}")
                owner[x] = j
        if len(owner) >= n:
            raise HoleError("holes cover every state; the interior D must be nonempty")

    def labels(self, n: int) -> np.ndarray:
        """Hole index per node, ``-1`` on the interior."""
        self.validate(n)
        out = np.full(n, -1, dtype=np.intp)
        for j, hole in enumerate(self.holes):
            out[list(hole)] = j
        return out


@dataclass(frozen=True, eq=False)
class QuotientMap:
    """Node-level surjection ``E -> E*`` produced by :func:`darn`."""

    n_source: int
    node_map: np.ndarray
    interior: np.ndarray
    holes: HoleSet
    hole_masses: np.ndarray
    dropped_weight: float = field(default=0.0)

    @property
    def n_target(self) -> int:
        return self.interior.shape[0] + len(self.holes)

    @property
    def n_interior(self) -> int:
        return self.interior.shape[0]

    def hole_state(self, j: int) -> int:
        """Target index of ``a*_j``."""
        return self.n_interior + j

    def target_holes(self) -> HoleSet:
        """The collapsed states as singleton holes of the darned form."""
        return HoleSet([[self.hole_state(j)] for j in range(len(self.holes))])


def darn(form: SymmetricForm, holes: HoleSet, masses="sticky") -> tuple[SymmetricForm, QuotientMap]:
    """Collapse each hole into a single state.

    Conductances into a collapsed state are summed over the hole, killing is
    summed over the hole, and intra-hole edges are dropped (their total
    weight is reported as ``QuotientMap.dropped_weight``). With
    ``masses="sticky"`` each ``a*_j`` carries ``m(K_j)``; otherwise
    ``masses`` gives one strictly positive mass per hole.
    """
    if not isinstance(holes, HoleSet):
        holes = HoleSet(holes)
    n = form.n
    labels = holes.labels(n)
    interior = np.flatnonzero(labels < 0)
    n_int = interior.shape[0]
    n_star = n_int + len(holes)
    node_map = np.empty(n, dtype=np.intp)
    node_map[interior] = np.arange(n_int)
    hole_nodes = labels >= 0
    node_map[hole_nodes] = n_int + labels[hole_nodes]

    rows, cols, vals = form._coo
    r_star, c_star = node_map[rows], node_map[cols]
    upper = rows < cols
    r_star, c_star, vals = r_star[upper], c_star[upper], vals[upper]
    keep = r_star != c_star
    dropped = float(np.sum(vals[~keep]))
    # each source edge is summed once, then mirrored, so c* is exactly symmetric
    lo = np.minimum(r_star[keep], c_star[keep])
    hi = np.maximum(r_star[keep], c_star[keep])
    half = sp.csr_matrix((vals[keep], (lo, hi)), shape=(n_star, n_star))
    c_new = half + half.T
    kappa_new = np.bincount(node_map, weights=form.kappa, minlength=n_star)

    pooled = np.bincount(node_map, weights=form.m, minlength=n_star)
    if isinstance(masses, str):
        if masses != "sticky":
            raise ValueError(f"unknown mass mode {masses!r}")
        hole_masses = pooled[n_int:].copy()
    else:
        hole_masses = np.asarray(masses, dtype=float).ravel()
        if hole_masses.shape != (len(holes),):
            raise DimensionError(f"expected {len(holes)} hole masses, got {hole_masses.shape}")
        bad = np.flatnonzero(~(hole_masses > 0))
        if bad.size:
            raise ValueError(f"hole masses must be strictly positive (holes {bad.tolist()})")
    m_new = np.concatenate([form.m[interior], hole_masses])

    darned = SymmetricForm(m=m_new, c=c_new, kappa=kappa_new)
    qmap = QuotientMap(
        n_source=n,
        node_map=node_map,
        interior=interior,
        holes=holes,
        hole_masses=hole_masses,
        dropped_weight=dropped,
    )
    return darned, qmap


def compose(first: QuotientMap, second: QuotientMap) -> QuotientMap:
    """Quotient map of darning with ``first`` and then ``second``.

    The result uses the canonical layout of :func:`darn`: every state that
    was collapsed at either stage becomes a hole, ordered by its index in the
    target of ``second``. It equals the map of darning all holes at once.
    """
    if second.n_source != first.n_target:
        raise DimensionError("second map does not act on the target of the first")
    through = second.node_map[first.node_map]
    collapsed = np.zeros(second.n_target, dtype=bool)
    collapsed[second.n_interior :] = True
    collapsed[second.node_map[first.n_interior :]] = True
    hole_targets = np.flatnonzero(collapsed)
    groups = [np.flatnonzero(through == a).tolist() for a in hole_targets]
    masses = []
    for a in hole_targets:
        if a >= second.n_interior:
            masses.append(second.hole_masses[a - second.n_interior])
        else:
            # a collapsed state of the first stage left untouched by the second
            masses.append(first.hole_masses[second.interior[a] - first.n_interior])
    holes = HoleSet(groups)
    labels = holes.labels(first.n_source)
    interior = np.flatnonzero(labels < 0)
    node_map = np.empty(first.n_source, dtype=np.intp)
    node_map[interior] = np.arange(interior.shape[0])
    node_map[labels >= 0] = interior.shape[0] + labels[labels >= 0]
    return QuotientMap(
        n_source=first.n_source,
        node_map=node_map,
        interior=interior,
        holes=holes,
        hole_masses=np.asarray(masses, dtype=float),
        dropped_weight=first.dropped_weight + second.dropped_weight,
    )


def transport(qmap: QuotientMap, direction: str, f) -> np.ndarray:
    """``push``: ``Tf`` for ``f`` constant on every hole; ``lift``: ``T^-1 g``."""
    if direction == "lift":
        g = _as_vector(f, qmap.n_target, "g")
        return g[qmap.node_map]
    if direction != "push":
        raise ValueError(f"direction must be 'push' or 'lift', got {direction!r}")
    f = _as_vector(f, qmap.n_source, "f")
    tol = PUSH_TOL * max(1.0, float(np.max(np.abs(f))))
    out = np.empty(qmap.n_target)
    out[: qmap.n_interior] = f[qmap.interior]
    for j, hole in enumerate(qmap.holes):
        vals = f[list(hole)]
        if np.ptp(vals) > tol:
            raise ValueError(f"f is not constant on hole {j} (spread {np.ptp(vals):.3e})")
        out[qmap.hole_state(j)] = vals[0]
    return out


def star(form: SymmetricForm, qmap: QuotientMap, f) -> np.ndarray:
    """``f*``: ``f`` on the interior and the m-weighted hole average at each ``a*_j``."""
    f = _as_vector(f, form.n, "f")
    out = np.empty(qmap.n_target)
    out[: qmap.n_interior] = f[qmap.interior]
    for j, hole in enumerate(qmap.holes):
        idx = list(hole)
        out[qmap.hole_state(j)] = np.dot(f[idx], form.m[idx]) / np.sum(form.m[idx])
    return out


def project(form: SymmetricForm, holes: HoleSet, f) -> np.ndarray:
    """Orthogonal projection in L^2(m) onto functions constant on each hole."""
    if not isinstance(holes, HoleSet):
        holes = HoleSet(holes)
    holes.validate(form.n)
    f = _as_vector(f, form.n, "f")
    out = f.copy()
    for hole in holes:
        idx = list(hole)
        out[idx] = np.dot(f[idx], form.m[idx]) / np.sum(form.m[idx])
    return out


def aggregation_matrix(n: int, holes: HoleSet) -> sp.csr_matrix:
    """Columns: indicators of interior singletons (ascending), then of each hole."""
    if not isinstance(holes, HoleSet):
        holes = HoleSet(holes)
    holes.validate(n)
    covered = set()
    for hole in holes:
        covered.update(hole)
    interior = [x for x in range(n) if x not in covered]
    rows = list(interior)
    cols = list(range(len(interior)))
    for j, hole in enumerate(holes):
        rows += list(hole)
        cols += [len(interior) + j] * len(hole)
    return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, len(interior) + len(holes)))


def _aggregated(form: SymmetricForm, holes: HoleSet):
    S = aggregation_matrix(form.n, holes)
    energy_agg = (S.T @ form.energy_matrix @ S).tocsr()
    mass_agg = np.asarray(S.T @ form.m).ravel()
    return S, energy_agg, mass_agg


def constrained_resolvent(form: SymmetricForm, holes: HoleSet, alpha: float, f) -> np.ndarray:
    """Resolvent of the form restricted to functions constant on each hole.

    Solves ``S^T (alpha M + A) S v = S^T M f`` and returns ``S v``, where ``S``
    is :func:`aggregation_matrix`. This route never builds the darned form.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    f = _as_vector(f, form.n, "f")
    S, energy_agg, mass_agg = _aggregated(form, holes)
    system = energy_agg + sp.diags(alpha * mass_agg)
    rhs = S.T @ (form.m * f)
    if system.shape[0] <= 2000:
        v = scipy.linalg.solve(system.toarray(), rhs, assume_a="pos")
    else:
        v = spla.spsolve(system.tocsc(), rhs)
    return S @ v


def constrained_semigroup(form: SymmetricForm, holes: HoleSet, t: float, f) -> np.ndarray:
    """Semigroup of the constrained form applied to ``Pi f``.

    Exponentiates the aggregated generator ``-(S^T M S)^{-1} S^T A S``.
    """
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    f = _as_vector(f, form.n, "f")
    S, energy_agg, mass_agg = _aggregated(form, holes)
    coeff = (S.T @ (form.m * f)) / mass_agg
    if t == 0:
        return S @ coeff
    spectral = Spectral.from_matrices(energy_agg, mass_agg)
    return S @ spectral.evolve(float(t), coeff)


def _check_reducible(form: SymmetricForm, interior: np.ndarray, labels: np.ndarray) -> None:
    sub = form.c[interior][:, interior]
    n_comp, comp = csgraph.connected_components(sub, directed=False)
    exits = np.asarray(form.c[interior][:, labels >= 0].sum(axis=1)).ravel() + form.kappa[interior]
    reach = np.zeros(n_comp, dtype=bool)
    np.logical_or.at(reach, comp, exits > 0)
    if not np.all(reach):
        stuck = interior[np.isin(comp, np.flatnonzero(~reach))]
        raise SingularSystemError(
            f"interior states {stuck.tolist()} can neither reach a hole nor be killed"
        )


def hitting_decomposition(form: SymmetricForm, holes: HoleSet, alpha: float = 0.0) -> np.ndarray:
    """Columns ``u_alpha^(j)(x) = E_x[exp(-alpha sigma_F); X_{sigma_F} in K_j]``.

    Column ``j`` is 1 on ``K_j``, 0 on the other holes, and on the interior
    solves the Dirichlet problem for ``alpha M + A``. At ``alpha = 0`` these
    are the hitting probabilities.
    """
    if alpha < 0:
        raise ValueError(f"alpha must be nonnegative, got {alpha}")
    if not isinstance(holes, HoleSet):
        holes = HoleSet(holes)
    n = form.n
    labels = holes.labels(n)
    interior = np.flatnonzero(labels < 0)
    boundary = np.zeros((n, len(holes)))
    for j, hole in enumerate(holes):
        boundary[list(hole), j] = 1.0
    if alpha == 0:
        _check_reducible(form, interior, labels)
    system = (form.energy_matrix + sp.diags(alpha * form.m)).tocsr()
    inner_block = system[interior][:, interior]
    coupling = system[interior][:, np.flatnonzero(labels >= 0)]
    rhs = -(coupling @ boundary[labels >= 0])
    try:
        if inner_block.shape[0] <= 2000:
            sol = scipy.linalg.solve(inner_block.toarray(), rhs, assume_a="pos")
        else:
            sol = spla.spsolve(inner_block.tocsc(), rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"interior system is singular: {exc}") from exc
    out = boundary
    out[interior] = np.asarray(sol).reshape(interior.shape[0], len(holes))
    return out
