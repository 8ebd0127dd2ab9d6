"""Brownian path ensembles with counter-based, per-path random streams.

Path p is a pure function of (seed, p): every path owns a Philox stream
keyed by the pair, so enlarging the ensemble extends it without
reshuffling existing paths, and identical (seed, M, N) inputs reproduce
bit-identical arrays on any platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import TimeGrid

_KEY_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class PathEnsemble:
    """M discrete Brownian paths on a :class:`TimeGrid`.

    ``increments[p, j]`` holds W(t_{j+1}) - W(t_j); ``values[p, i]`` the
    running sum with values[p, 0] = 0.  Arrays are read-only: solvers
    share one ensemble and must never mutate it.
    """

    grid: TimeGrid
    n_paths: int
    seed: int
    increments: np.ndarray = field(repr=False, compare=False)
    values: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self) -> None:
        m, n = self.increments.shape
        if m != self.n_paths or n != self.grid.steps:
            raise ValueError("increment array shape disagrees with grid/paths")
        if self.values.shape != (m, n + 1):
            raise ValueError("value array shape disagrees with grid/paths")

    @property
    def dt(self) -> float:
        return self.grid.dt

    def terminal(self) -> np.ndarray:
        """W(T) per path."""
        return self.values[:, -1]


def _path_normals(seed: int, first: int, count: int, n: int) -> np.ndarray:
    """Standard normals for paths [first, first+count), one keyed stream each."""
    out = np.empty((count, n), dtype=np.float64)
    hi = (int(seed) & _KEY_MASK) << 64
    for p in range(count):
        bit = np.random.Philox(key=hi + first + p)
        out[p] = np.random.Generator(bit).standard_normal(n)
    return out


def sample_ensemble(grid: TimeGrid, n_paths: int, seed: int) -> PathEnsemble:
    """Draw an ensemble of ``n_paths`` Brownian paths on ``grid``."""
    if n_paths < 1:
        raise ValueError(f"need at least one path, got {n_paths}")
    normals = _path_normals(seed, 0, n_paths, grid.steps)
    increments = normals * np.sqrt(grid.dt)
    values = np.empty((n_paths, grid.steps + 1), dtype=np.float64)
    values[:, 0] = 0.0
    np.cumsum(increments, axis=1, out=values[:, 1:])
    increments.flags.writeable = False
    values.flags.writeable = False
    return PathEnsemble(
        grid=grid, n_paths=n_paths, seed=int(seed),
        increments=increments, values=values,
    )


def ito_sum(integrand: np.ndarray, ensemble: PathEnsemble, first: int = 0) -> np.ndarray:
    """Left-point stochastic sum sum_{j>=first} H[p, j] dW[p, j] per path.

    ``integrand`` is indexed on increment slots, so its second dimension
    must not exceed the number of steps; column j multiplies the
    increment over [t_j, t_{j+1}).
    """
    h = np.asarray(integrand, dtype=np.float64)
    if h.ndim == 1:
        h = h[np.newaxis, :]
        squeeze = True
    else:
        squeeze = False
    steps = ensemble.grid.steps
    if h.shape[1] > steps:
        raise ValueError(
            f"integrand has {h.shape[1]} columns but the grid has {steps} steps"
        )
    if not 0 <= first <= steps:
        raise ValueError(f"first increment index {first} outside 0..{steps}")
    width = h.shape[1]
    dw = ensemble.increments[:, first:first + width]
    if h.shape[0] not in (1, ensemble.n_paths):
        raise ValueError("integrand paths disagree with ensemble")
    out = np.einsum("pj,pj->p", np.broadcast_to(h, dw.shape), dw)
    return out[0] if squeeze and out.shape[0] == 1 else out
