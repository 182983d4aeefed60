"""Finite-state symmetric Dirichlet forms.

A form on ``n`` states is stored as node masses ``m``, a symmetric sparse
conductance matrix ``c`` with zero diagonal, and killing weights ``kappa``.
The energy convention is

    E(u, v) = 1/2 sum_{x,y} c(x,y) (u(x)-u(y)) (v(x)-v(y)) + sum_x kappa(x) u(x) v(x)

so ``c`` plays the role of the jumping measure J(dx, dy) and the Markov
generator is ``(Lu)(x) = m(x)^-1 [sum_y c(x,y)(u(y)-u(x)) - kappa(x) u(x)]``.

Products with the energy matrix are evaluated edge-by-edge in difference
form. Augmented forms carry conductances of order 1e8 on edges whose
endpoint values agree to 1e-8, and the difference form keeps those
products accurate where ``D u - C u`` would cancel catastrophically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import stats

from darnkit.errors import DimensionError, NumericalError

__all__ = [
    "SymmetricForm",
    "energy",
    "apply_generator",
    "resolvent",
    "semigroup",
    "inner",
    "norm",
    "Spectral",
]

DENSE_SOLVE_MAX = 2000
SPARSE_DIRECT_MAX = 50_000
DENSE_EIGEN_MAX = 2000
CG_RTOL = 1e-12
UNIFORMIZATION_TOL = 1e-12
REFINEMENT_STEPS = 3


def _as_vector(values, n: int, name: str = "vector") -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.shape[0] != n:
        raise DimensionError(f"{name} has shape {arr.shape}, expected ({n},)")
    return arr


@dataclass(frozen=True, eq=False)
class SymmetricForm:
    """Symmetric Dirichlet form on a finite state space.

    Instances are immutable; derived matrices and factorizations are cached
    on first use, so a form can be shared freely between threads once built.
    """

    m: np.ndarray
    c: sp.csr_matrix
    kappa: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=float).ravel()
        n = m.shape[0]
        if n < 1:
            raise ValueError("a form needs at least one state")
        if not np.all(np.isfinite(m)) or np.any(m <= 0):
            raise ValueError("node masses must be finite and strictly positive")
        kappa = np.array(self.kappa, dtype=float).ravel()
        if kappa.shape != (n,):
            raise DimensionError(f"kappa has shape {kappa.shape}, expected ({n},)")
        if not np.all(np.isfinite(kappa)) or np.any(kappa < 0):
            raise ValueError("killing weights must be finite and nonnegative")
        c = sp.csr_matrix(self.c, dtype=float, copy=True)
        if c.shape != (n, n):
            raise DimensionError(f"conductance matrix has shape {c.shape}, expected ({n}, {n})")
        c.sum_duplicates()
        c.eliminate_zeros()
        if c.nnz:
            if not np.all(np.isfinite(c.data)) or np.any(c.data < 0):
                raise ValueError("conductances must be finite and nonnegative")
            if np.any(c.diagonal() != 0):
                raise ValueError("conductance matrix must have a zero diagonal")
            asym = abs(c - c.T)
            if asym.nnz and asym.max() > 0:
                raise ValueError("conductance matrix must be symmetric")
        c.sort_indices()
        m.setflags(write=False)
        kappa.setflags(write=False)
        c.data.setflags(write=False)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "c", c)

    @classmethod
    def from_edges(cls, n: int, m, edges, kappa=None) -> "SymmetricForm":
        """Build a form from an undirected edge list ``[(x, y, c), ...]``.

        Each unordered pair may appear at most once.
        """
        rows, cols, vals = [], [], []
        seen = set()
        for x, y, w in edges:
            x, y = int(x), int(y)
            if x == y:
                raise ValueError(f"self-loop at node {x}")
            if not (0 <= x < n and 0 <= y < n):
                raise ValueError(f"edge ({x}, {y}) out of range for n={n}")
            key = (min(x, y), max(x, y))
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)
            rows += [x, y]
            cols += [y, x]
            vals += [float(w), float(w)]
        c = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        if kappa is None:
            kappa = np.zeros(n)
        return cls(m=m, c=c, kappa=kappa)

    @property
    def n(self) -> int:
        return self.m.shape[0]

    def edges(self) -> list[tuple[int, int, float]]:
        """Undirected edges ``(x, y, c)`` with ``x < y`` in row-major order."""
        upper = sp.triu(self.c, k=1).tocoo()
        order = np.lexsort((upper.col, upper.row))
        return [(int(upper.row[i]), int(upper.col[i]), float(upper.data[i])) for i in order]

    def replace(self, *, m=None, c=None, kappa=None) -> "SymmetricForm":
        return SymmetricForm(
            m=self.m if m is None else m,
            c=self.c if c is None else c,
            kappa=self.kappa if kappa is None else kappa,
        )

    @cached_property
    def _coo(self):
        coo = self.c.tocoo()
        return coo.row.astype(np.intp), coo.col.astype(np.intp), coo.data

    @cached_property
    def degree(self) -> np.ndarray:
        return np.asarray(self.c.sum(axis=1)).ravel()

    @cached_property
    def energy_matrix(self) -> sp.csr_matrix:
        """Sparse ``A`` with ``E(u, v) = u^T A v``."""
        return (sp.diags(self.degree + self.kappa) - self.c).tocsr()

    def energy_product(self, u: np.ndarray) -> np.ndarray:
        """``A u`` evaluated in edge-difference form."""
        rows, cols, vals = self._coo
        flux = vals * (u[rows] - u[cols])
        return np.bincount(rows, weights=flux, minlength=self.n) + self.kappa * u

    @cached_property
    def spectral(self) -> "Spectral":
        return Spectral.from_matrices(self.energy_matrix, self.m)

    def __repr__(self) -> str:
        return f"SymmetricForm(n={self.n}, edges={self.c.nnz // 2}, killing={bool(np.any(self.kappa))})"


def inner(f: np.ndarray, g: np.ndarray, m: np.ndarray) -> float:
    """Inner product in L^2(m)."""
    return float(np.sum(np.asarray(f) * np.asarray(g) * m))


def norm(f: np.ndarray, m: np.ndarray) -> float:
    return math.sqrt(max(inner(f, f, m), 0.0))


def energy(form: SymmetricForm, u, v=None) -> float:
    """Dirichlet energy ``E(u, v)``; ``E(u, u)`` when ``v`` is omitted."""
    u = _as_vector(u, form.n, "u")
    v = u if v is None else _as_vector(v, form.n, "v")
    rows, cols, vals = form._coo
    # each undirected edge is stored twice, matching the 1/2 in front of the sum
    jump = 0.5 * np.sum(vals * (u[rows] - u[cols]) * (v[rows] - v[cols]))
    return float(jump + np.sum(form.kappa * u * v))


def apply_generator(form: SymmetricForm, u) -> np.ndarray:
    """``Lu`` with ``E(u, v) = -(Lu, v)_m``."""
    u = _as_vector(u, form.n, "u")
    return -form.energy_product(u) / form.m


class _Resolver:
    """Solves ``(alpha M + A) u = b`` for one alpha, with refinement."""

    def __init__(self, form: SymmetricForm, alpha: float):
        self.form = form
        self.alpha = alpha
        n = form.n
        matrix = form.energy_matrix + sp.diags(alpha * form.m)
        if n <= DENSE_SOLVE_MAX:
            try:
                self._factor = scipy.linalg.cho_factor(matrix.toarray(), lower=True)
            except np.linalg.LinAlgError as exc:  # pragma: no cover - SPD by construction
                raise NumericalError(f"Cholesky failed for alpha={alpha}: {exc}") from exc
            self._solve = lambda b: scipy.linalg.cho_solve(self._factor, b)
        elif n <= SPARSE_DIRECT_MAX:
            lu = spla.splu(matrix.tocsc())
            self._solve = lu.solve
        else:
            diag = matrix.diagonal()
            precond = spla.LinearOperator(matrix.shape, matvec=lambda x: x / diag)

            def _cg(b):
                x, info = spla.cg(matrix, b, rtol=CG_RTOL, atol=0.0, M=precond, maxiter=20 * n)
                if info != 0:
                    raise NumericalError(f"conjugate gradient did not converge (info={info})")
                return x

            self._solve = _cg

    def apply(self, rhs: np.ndarray) -> np.ndarray:
        """Solve for ``u`` given ``rhs = M f`` (1-d or column-stacked 2-d)."""
        u = self._solve(rhs)
        for _ in range(REFINEMENT_STEPS):
            if u.ndim == 1:
                residual = rhs - self.alpha * self.form.m * u - self.form.energy_product(u)
            else:
                residual = rhs - np.column_stack(
                    [self.alpha * self.form.m * col + self.form.energy_product(col) for col in u.T]
                )
            if not np.any(residual):
                break
            u = u + self._solve(residual)
        if not np.all(np.isfinite(u)):
            raise NumericalError("resolvent solve produced non-finite values")
        return u


def resolvent(form: SymmetricForm, alpha: float, f) -> np.ndarray:
    """``G_alpha f``: the solution of ``E_alpha(u, g) = (f, g)_m`` for all ``g``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    f = np.asarray(f, dtype=float)
    if f.shape[0] != form.n:
        raise DimensionError(f"f has {f.shape[0]} entries, expected {form.n}")
    rhs = form.m * f if f.ndim == 1 else form.m[:, None] * f
    return _Resolver(form, float(alpha)).apply(rhs)


@dataclass(frozen=True)
class Spectral:
    """Eigen-decomposition of ``M^{-1/2} A M^{-1/2}`` for dense semigroup work."""

    eigenvalues: np.ndarray
    vectors: np.ndarray
    sqrt_m: np.ndarray

    @classmethod
    def from_matrices(cls, energy_matrix, mass: np.ndarray) -> "Spectral":
        n = mass.shape[0]
        if n > DENSE_EIGEN_MAX:
            raise NumericalError(f"dense eigendecomposition refused for n={n} > {DENSE_EIGEN_MAX}")
        dense = energy_matrix.toarray() if sp.issparse(energy_matrix) else np.asarray(energy_matrix)
        inv_sqrt = 1.0 / np.sqrt(mass)
        sym = dense * inv_sqrt[:, None] * inv_sqrt[None, :]
        sym = 0.5 * (sym + sym.T)
        w, v = np.linalg.eigh(sym)
        # energy is nonnegative; clip round-off below zero
        return cls(eigenvalues=np.clip(w, 0.0, None), vectors=v, sqrt_m=np.sqrt(mass))

    def evolve(self, t: float, f: np.ndarray) -> np.ndarray:
        coeff = self.vectors.T @ (self.sqrt_m * f)
        return (self.vectors @ (np.exp(-t * self.eigenvalues) * coeff)) / self.sqrt_m

    def kernel(self, t: float) -> np.ndarray:
        """Transition matrix ``P_t(x, y)`` (row ``x`` sums to the survival probability)."""
        scaled = self.vectors * np.exp(-t * self.eigenvalues)
        core = scaled @ self.vectors.T
        return core / self.sqrt_m[:, None] * self.sqrt_m[None, :]


def _uniformized(form: SymmetricForm, t: float, f: np.ndarray) -> np.ndarray:
    rate = float(np.max((form.degree + form.kappa) / form.m))
    if rate == 0.0:
        return f.copy()
    # split the horizon so each piece has a modest Poisson mean
    pieces = max(1, math.ceil(rate * t / 50.0))
    dt = t / pieces
    mean = rate * dt
    kmax = int(stats.poisson.isf(UNIFORMIZATION_TOL / pieces, mean)) + 1
    weights = stats.poisson.pmf(np.arange(kmax + 1), mean)
    g = f.copy()
    for _ in range(pieces):
        term = g
        acc = weights[0] * term
        for k in range(1, kmax + 1):
            term = term + apply_generator(form, term) / rate
            acc = acc + weights[k] * term
        g = acc
    return g


def semigroup(form: SymmetricForm, t: float, f) -> np.ndarray:
    """``P_t f = exp(tL) f``."""
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    f = _as_vector(f, form.n, "f")
    if t == 0:
        return f.copy()
    if form.n <= DENSE_EIGEN_MAX:
        return form.spectral.evolve(float(t), f)
    return _uniformized(form, float(t), f)
