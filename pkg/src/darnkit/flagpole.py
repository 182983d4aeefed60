"""Lattice model of a punched plane joined to a thin vertical cylinder.

The plane is a square grid of step ``h`` on ``[-R, R]^2`` with the open
disk of radius ``eps`` removed. The cylinder of radius ``eps`` and height
``Z`` carries ``n_theta`` nodes per horizontal circle and one circle per
level ``z = k h``. Darning every circle yields a plane with a flag pole.

Weights discretize the energy

    1/2 int |grad f|^2 + lambda p/(4 pi eps) int |d_t f|^2 + p/(4 pi eps) int |d_z f|^2

under ``E = 1/2 sum c (du)^2``: plane edges carry 1/2, angular edges
``lambda p/(4 pi eps) dz/dtheta`` and vertical edges ``p/(4 pi eps) dtheta/dz``.
The cylinder measure is ``p/(2 pi eps)`` times surface area, with half
cells on the bottom and top circles so the total is exactly ``p Z``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from darnkit.convergence import SweepReport, sweep_forms
from darnkit.darning import HoleSet, darn
from darnkit.forms import SymmetricForm

__all__ = ["FlagpoleLattice", "build_flagpole_lattice", "bmvd_report", "COARSE_PRESET", "pole_entrance_probability"]

PLANE_CONDUCTANCE = 0.5

COARSE_PRESET = {"eps": 1.0, "p": 1.0, "R": 4.0, "h": 0.25, "Z": 2.0}


@dataclass(frozen=True, eq=False)
class FlagpoleLattice:
    eps: float
    p: float
    R: float
    h: float
    Z: float
    lam: float
    n_theta: int
    n_z: int
    form: SymmetricForm
    holes: HoleSet
    coords: np.ndarray
    n_plane: int
    glue: tuple[tuple[int, int], ...]

    def coordinates_csv(self) -> str:
        """Node table ``node,x,y,z,region`` for external plotting."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["node", "x", "y", "z", "region"])
        for i, (x, y, z) in enumerate(self.coords):
            region = "plane" if i < self.n_plane else "cylinder"
            writer.writerow([i, repr(float(x)), repr(float(y)), repr(float(z)), region])
        return buf.getvalue()


def build_flagpole_lattice(eps: float, p: float, R: float, h: float, Z: float, lam: float = 1.0) -> FlagpoleLattice:
    """Assemble the plane-plus-cylinder lattice form at angular speed ``lam``."""
    for name, value in (("eps", eps), ("p", p), ("R", R), ("h", h), ("Z", Z)):
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value}")
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    if eps >= R:
        raise ValueError(f"the disk of radius {eps} does not fit inside the box of half-width {R}")
    n_theta = int(round(2 * math.pi * eps / h))
    if n_theta < 3:
        raise ValueError(f"geometry too coarse: n_theta = {n_theta} < 3")
    n_z = int(round(Z / h)) + 1
    if n_z < 2:
        raise ValueError("pole must have at least two circle levels")
    dz = Z / (n_z - 1)
    dtheta = 2 * math.pi * eps / n_theta

    half = int(math.floor(R / h + 1e-9))
    grid = np.arange(-half, half + 1)
    index = {}
    coords = []
    for i in grid:
        for j in grid:
            if math.hypot(i * h, j * h) >= eps - 1e-12:
                index[(i, j)] = len(coords)
                coords.append((i * h, j * h, 0.0))
    n_plane = len(coords)
    if n_plane == 0:
        raise ValueError("geometry too coarse: no plane node outside the disk")

    rows, cols, vals = [], [], []

    def add(a, b, w):
        rows.extend((a, b))
        cols.extend((b, a))
        vals.extend((w, w))

    rim = []
    for (i, j), a in index.items():
        for di, dj in ((1, 0), (0, 1)):
            b = index.get((i + di, j + dj))
            if b is not None:
                add(a, b, PLANE_CONDUCTANCE)
        if any((i + di, j + dj) not in index for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1))
               if abs(i + di) <= half and abs(j + dj) <= half):
            rim.append(a)
    if not rim:
        raise ValueError("geometry too coarse: the disk has no adjacent plane nodes")
    rim = np.asarray(sorted(rim))
    rim_angle = np.arctan2([coords[a][1] for a in rim], [coords[a][0] for a in rim])

    scale = p / (2 * math.pi * eps)
    masses = [h * h] * n_plane
    cyl = np.empty((n_z, n_theta), dtype=np.intp)
    for k in range(n_z):
        level_dz = dz / 2 if k in (0, n_z - 1) else dz
        for s in range(n_theta):
            theta = s * 2 * math.pi / n_theta
            cyl[k, s] = len(coords)
            coords.append((eps * math.cos(theta), eps * math.sin(theta), k * dz))
            masses.append(scale * dtheta * level_dz)

    for k in range(n_z):
        level_dz = dz / 2 if k in (0, n_z - 1) else dz
        angular = lam * 0.5 * scale * level_dz / dtheta
        if angular > 0:
            for s in range(n_theta):
                add(cyl[k, s], cyl[k, (s + 1) % n_theta], angular)
        if k + 1 < n_z:
            vertical = 0.5 * scale * dtheta / dz
            for s in range(n_theta):
                add(cyl[k, s], cyl[k + 1, s], vertical)

    glue = []
    for s in range(n_theta):
        theta = s * 2 * math.pi / n_theta
        diff = np.abs(np.angle(np.exp(1j * (rim_angle - theta))))
        best = np.flatnonzero(diff <= diff.min() + 1e-12)
        # ties resolved toward the rim node closest to the circle
        radii = [math.hypot(*coords[rim[b]][:2]) for b in best]
        a = int(rim[best[int(np.argmin(radii))]])
        glue.append((int(cyl[0, s]), a))
        add(int(cyl[0, s]), a, PLANE_CONDUCTANCE)

    n = len(coords)
    c = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    form = SymmetricForm(m=np.asarray(masses), c=c, kappa=np.zeros(n))
    holes = HoleSet([cyl[k].tolist() for k in range(n_z)])
    return FlagpoleLattice(
        eps=eps, p=p, R=R, h=h, Z=Z, lam=lam, n_theta=n_theta, n_z=n_z,
        form=form, holes=holes, coords=np.asarray(coords), n_plane=n_plane, glue=tuple(glue),
    )


def pole_entrance_probability(lattice: FlagpoleLattice) -> float:
    """Probability that the darned chain at the base vertex steps onto the pole first.

    From ``a*_0`` the first jump goes up the pole with probability
    ``c*(a*_0, a*_1) / sum_y c*(a*_0, y)``.
    """
    darned, qmap = darn(lattice.form, lattice.holes, "sticky")
    base, up = qmap.hole_state(0), qmap.hole_state(1)
    row = darned.c.getrow(base)
    total = float(row.sum())
    return float(darned.c[base, up]) / total


def _default_test_function(lattice: FlagpoleLattice) -> np.ndarray:
    x, y, z = lattice.coords.T
    return x / lattice.eps + np.exp(-(x * x + y * y) / (4 * lattice.eps ** 2)) + z / lattice.Z


def bmvd_report(
    eps: float,
    p: float,
    R: float,
    h: float,
    Z: float,
    schedule=(1.0, 10.0, 100.0, 1000.0),
    alphas=(1.0,),
    *,
    ts=(),
    test_functions=None,
    tolerance: float = 1e-6,
    workers: int | None = None,
) -> tuple[SweepReport, dict]:
    """Gap sweep over angular speeds plus pole-entrance statistics."""
    reference = build_flagpole_lattice(eps, p, R, h, Z, lam=1.0)
    if test_functions is None:
        test_functions = [_default_test_function(reference)]

    def build(lam):
        return build_flagpole_lattice(eps, p, R, h, Z, lam=lam).form

    report = sweep_forms(
        reference.form, reference.holes, build, schedule, alphas, ts, test_functions,
        mode="bmvd", tolerance=tolerance, workers=workers,
    )
    report.notes.append(
        "each lattice circle keeps positive mass, so the lambda -> infinity limit is the sticky "
        "flag pole; the continuum limit with massless circles is not reproduced"
    )
    stats = {
        "n_states": reference.form.n,
        "n_plane": reference.n_plane,
        "n_theta": reference.n_theta,
        "n_z": reference.n_z,
        "pole_entrance_probability": pole_entrance_probability(reference),
        "continuum_reference": p / (2 * math.pi * eps + p),
        "reference_is_binding": False,
        "cylinder_mass": float(np.sum(reference.form.m[reference.n_plane:])),
    }
    return report, stats
