"""Grid norms for solution pairs (Y, Z).

All quadrature is left-point, matching the stochastic sums: the time
integral over [S, T] reads nodes 0..N-1 and the double integral reads
cells (i, j) with both indices below N.

Cell sums run in a canonical order (cells sorted after mapping mirrored
pairs of a symmetric kernel to their upper representative), so the two
rectangle integrals related by swapping the time arguments of a
symmetric kernel agree bit for bit, not merely up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .fields import AdaptedField, SurfaceField


@dataclass(frozen=True)
class NormReport:
    """Squared components and the combined norm of a (Y, Z) pair."""

    y_l2: float
    z_l2: float
    total: float
    region: str  # "full-square" | "dc-doubled"


def y_l2(y: AdaptedField) -> float:
    """E integral of |Y|^2 dt by the left-point rule."""
    dt = y.grid.dt
    vals = y.values[:, : y.grid.steps]
    return float(sum(np.mean(vals[:, i] ** 2) * dt for i in range(vals.shape[1])))


def _sorted_cells(
    z: SurfaceField, cells: Iterable[tuple[int, int]]
) -> list[tuple[int, int]]:
    if z.extension == "symmetric":
        cells = [(min(i, j), max(i, j)) for i, j in cells]
    else:
        cells = list(cells)
    cells.sort()
    return cells


def z_cells_l2(z: SurfaceField, cells: Iterable[tuple[int, int]]) -> float:
    """E sum of |Z(t_i, t_j)|^2 dt^2 over the given cells, canonical order."""
    dt2 = z.grid.dt**2
    total = 0.0
    for i, j in _sorted_cells(z, cells):
        total += float(np.mean(z.at(i, j) ** 2)) * dt2
    return total


def z_rect_l2(z: SurfaceField, rows: Sequence[int], cols: Sequence[int]) -> float:
    """Rectangle integral E int int |Z|^2 over rows x cols (node indices)."""
    return z_cells_l2(z, ((i, j) for i in rows for j in cols))


def z_upper_l2(z: SurfaceField) -> float:
    """Triangle integral over t <= s, the z-part of the S^2-style norm."""
    n = z.grid.steps
    return z_cells_l2(z, ((i, j) for i in range(n) for j in range(i, n)))


def z_diag_l2(z: SurfaceField) -> float:
    """Diagonal band contribution sum_i E|Z(t_i, t_i)|^2 dt^2."""
    n = z.grid.steps
    return z_cells_l2(z, ((i, i) for i in range(n)))


def z_full_l2(z: SurfaceField) -> float:
    """Full-square integral E int int |Z|^2 ds dt."""
    n = z.grid.steps
    return z_cells_l2(z, ((i, j) for i in range(n) for j in range(n)))


def star_h2_norm(y: AdaptedField, z: SurfaceField) -> NormReport:
    """Full-square norm of (Y, Z): E int |Y|^2 dt + E int int |Z|^2 ds dt.

    Symmetric kernels are integrated through their upper representative
    (each off-diagonal cell counted twice) and tagged ``dc-doubled``;
    other full kernels are integrated cell by cell.
    """
    if z.region != "full":
        raise ValueError(
            "full-square norm needs a full kernel; extend the triangle first "
            "or use s2_norm for the triangle-based norm"
        )
    yy = y_l2(y)
    zz = z_full_l2(z)
    region = "dc-doubled" if z.extension == "symmetric" else "full-square"
    return NormReport(y_l2=yy, z_l2=zz, total=float(np.sqrt(yy + zz)), region=region)


def s2_norm(y: AdaptedField, z: SurfaceField) -> float:
    """Triangle-based norm sqrt(E int |Y|^2 + E int int_{t<=s} |Z|^2).

    This is the contraction norm of the fixed-point iteration; it reads
    only the upper triangle and therefore accepts triangle-only kernels.
    """
    return float(np.sqrt(y_l2(y) + z_upper_l2(z)))
