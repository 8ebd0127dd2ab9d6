"""Containers for solution fields on a grid.

An :class:`AdaptedField` stores one value per (path, node).  A
:class:`SurfaceField` represents a two-time kernel Z(t_i, t_j); concrete
backings differ (regression coefficient tables, closed-form callables,
dense arrays) but all expose ``at(i, j) -> (n_paths,)``.

Regions: ``upper`` covers the closed triangle t_i <= t_j, ``lower`` the
strict triangle t_i > t_j, ``full`` the whole square.  Extensions record
how a full surface was completed from its upper part: ``symmetric``
mirrors across the diagonal, ``martingale`` fills the lower triangle with
integrands recovered from the stochastic-integral representation of Y.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .grid import TimeGrid

Region = str  # "upper" | "lower" | "full"
Extension = str  # "none" | "symmetric" | "martingale"


@dataclass(frozen=True)
class AdaptedField:
    """Per-path process values Y[p, i], one column per grid node."""

    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.values.ndim != 2 or self.values.shape[1] != len(self.grid):
            raise ValueError("value array shape disagrees with grid")

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    def at(self, i: int) -> np.ndarray:
        return self.values[:, i]


def _check_region(region: Region, i: int, j: int, steps: int) -> None:
    if not (0 <= i <= steps and 0 <= j <= steps):
        raise IndexError(f"surface index ({i}, {j}) outside the grid")
    if region == "upper" and i > j:
        raise IndexError(f"({i}, {j}) lies outside the upper triangle")
    if region == "lower" and i <= j:
        raise IndexError(f"({i}, {j}) lies outside the strict lower triangle")


class SurfaceField:
    """Base two-time kernel; subclasses supply ``_values``."""

    region: Region = "full"
    extension: Extension = "none"

    def __init__(self, grid: TimeGrid, n_paths: int) -> None:
        self.grid = grid
        self.n_paths = n_paths

    def at(self, i: int, j: int) -> np.ndarray:
        """Kernel values Z[:, i, j] across paths."""
        _check_region(self.region, i, j, self.grid.steps)
        return self._values(i, j)

    def _values(self, i: int, j: int) -> np.ndarray:
        raise NotImplementedError


def design_matrix(state: np.ndarray, degree: int) -> np.ndarray:
    """Vandermonde features 1, x, ..., x^degree of a state vector."""
    return np.vander(state, degree + 1, increasing=True)


class CoeffSurface(SurfaceField):
    """Kernel backed by per-(i, j) regression coefficients.

    Entry (i, j) is a polynomial in the driver state at node j, so the
    stored surface is measurable with respect to the inner time by
    construction.  Evaluation reproduces the fitted values of the sweep
    that produced the coefficients bit for bit.
    """

    def __init__(
        self,
        grid: TimeGrid,
        state: np.ndarray,
        coeffs: np.ndarray,
        region: Region,
    ) -> None:
        super().__init__(grid, state.shape[0])
        if region not in ("upper", "lower"):
            raise ValueError("coefficient surfaces store one triangle")
        if coeffs.shape[:2] != (len(grid), len(grid)):
            raise ValueError("coefficient table shape disagrees with grid")
        self.region = region
        self.state = state
        self.coeffs = coeffs

    def _values(self, i: int, j: int) -> np.ndarray:
        return design_matrix(self.state[:, j], self.coeffs.shape[2] - 1) @ self.coeffs[i, j]


class FuncSurface(SurfaceField):
    """Kernel given in closed form as a callable (i, j) -> values."""

    def __init__(
        self,
        grid: TimeGrid,
        n_paths: int,
        fn: Callable[[int, int], np.ndarray],
        region: Region = "full",
    ) -> None:
        super().__init__(grid, n_paths)
        self.region = region
        self._fn = fn

    def _values(self, i: int, j: int) -> np.ndarray:
        out = np.asarray(self._fn(i, j), dtype=np.float64)
        if out.ndim == 0:
            out = np.full(self.n_paths, float(out))
        return out


class DenseSurface(SurfaceField):
    """Kernel backed by an explicit (n_paths, N+1, N+1) array."""

    def __init__(self, grid: TimeGrid, values: np.ndarray, region: Region = "full") -> None:
        if values.ndim != 3 or values.shape[1] != values.shape[2]:
            raise ValueError("dense surface needs a square (paths, nodes, nodes) array")
        if values.shape[1] != len(grid):
            raise ValueError("dense surface shape disagrees with grid")
        super().__init__(grid, values.shape[0])
        self.region = region
        self.values = values

    def _values(self, i: int, j: int) -> np.ndarray:
        return self.values[:, i, j]


class SymmetricSurface(SurfaceField):
    """Full-square view of an upper-triangle kernel, mirrored exactly.

    ``at(i, j)`` and ``at(j, i)`` both read the upper representative
    ``base.at(min(i, j), max(i, j))``, so the symmetry Z[p, i, j] =
    Z[p, j, i] holds bitwise rather than only up to rounding.
    """

    extension = "symmetric"

    def __init__(self, base: SurfaceField) -> None:
        if base.region != "upper":
            raise ValueError("symmetric extension needs an upper-triangle kernel")
        super().__init__(base.grid, base.n_paths)
        self.base = base

    def _values(self, i: int, j: int) -> np.ndarray:
        return self.base.at(min(i, j), max(i, j))


class CompositeSurface(SurfaceField):
    """Full square stitched from an upper part and a lower part."""

    def __init__(self, upper: SurfaceField, lower: SurfaceField, extension: Extension) -> None:
        if upper.region != "upper" or lower.region != "lower":
            raise ValueError("composite needs an upper and a lower triangle kernel")
        if upper.grid is not lower.grid and len(upper.grid) != len(lower.grid):
            raise ValueError("triangle kernels live on different grids")
        super().__init__(upper.grid, upper.n_paths)
        self.extension = extension
        self.upper = upper
        self.lower = lower

    def _values(self, i: int, j: int) -> np.ndarray:
        return self.upper.at(i, j) if i <= j else self.lower.at(i, j)
