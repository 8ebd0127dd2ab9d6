"""Backward sweeps for two-time stochastic Volterra systems.

The continuous object is a family of backward equations indexed by the
outer time t_i, coupled through the diagonal Y(t_j) and, for the
martingale-extended solution concept, through kernel values mirrored
across the diagonal.  One level kernel serves every mode:

    Z[i][j]   <- regression of Lambda[i][j+1] * dW_j / dt at node j
    Lambda[i][j] <- regression of Lambda[i][j+1] at node j
                    + dt * g(t_i, t_j, y_arg, Z[i][j], zeta_arg)

swept for j = N-1 .. 0 over rows i <= j.  The y-argument at an
off-diagonal cell is the same-level diagonal value Y(t_j) (or a frozen
iterate of it); at the diagonal cell it is the freshly regressed
conditional expectation, which keeps the one-pass sweep and the
fixed-point iteration solving literally the same discrete system.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .ensemble import PathEnsemble
from .expr import Node as ExprNode, eval_expr, format_expr, free_variables, parse
from .fields import (
    AdaptedField,
    CoeffSurface,
    CompositeSurface,
    SurfaceField,
    SymmetricSurface,
)
from .grid import TimeGrid
from .regression import BasisSpec, NodeDesign

_ENV_NAMES = frozenset(("t", "s", "y", "z", "zeta", "w", "wt", "wT", "T1", "T"))
_TERMINAL_NAMES = frozenset(("t", "wt", "wT", "T1", "T"))


class SolverError(RuntimeError):
    """Numerical failure inside a sweep, located by grid indices."""


class Generator:
    """Integrand g(t, s, y, z, zeta) with declared data dependencies."""

    def __init__(self, fn: Callable[[dict], np.ndarray], needs, source: str | None = None):
        unknown = frozenset(needs) - _ENV_NAMES
        if unknown:
            raise ValueError(f"generator reads unknown names {sorted(unknown)}")
        self._fn = fn
        self.needs = frozenset(needs)
        self.source = source

    @classmethod
    def from_expression(cls, src: str | ExprNode) -> "Generator":
        ast = parse(src) if isinstance(src, str) else src
        return cls(lambda env: eval_expr(ast, env), free_variables(ast), format_expr(ast))

    @property
    def uses_z(self) -> bool:
        return "z" in self.needs

    @property
    def uses_zeta(self) -> bool:
        return "zeta" in self.needs

    def __call__(self, env: dict) -> np.ndarray:
        return self._fn(env)


class Terminal:
    """Free term of the system: per-path values at every outer node."""

    def __init__(self, fn: Callable[[TimeGrid, np.ndarray], np.ndarray], source: str | None = None):
        self._fn = fn
        self.source = source

    @classmethod
    def from_expression(cls, src: str | ExprNode) -> "Terminal":
        ast = parse(src) if isinstance(src, str) else src
        stray = free_variables(ast) - _TERMINAL_NAMES
        if stray:
            raise ValueError(
                f"terminal data may only read {sorted(_TERMINAL_NAMES)}, got {sorted(stray)}"
            )

        def fn(grid: TimeGrid, w: np.ndarray) -> np.ndarray:
            env = {
                "t": grid.nodes[:, None],
                "wt": w.T,
                "wT": w[:, -1],
                "T": grid.horizon,
                "T1": grid.start,
            }
            out = eval_expr(ast, env)
            return np.broadcast_to(out, (len(grid), w.shape[0])).astype(np.float64, copy=True)

        return cls(fn, format_expr(ast))

    @classmethod
    def constant(cls, value: float) -> "Terminal":
        v = float(value)
        return cls(lambda grid, w: np.full((len(grid), w.shape[0]), v), source=repr(v))

    def eval_all(self, grid: TimeGrid, w: np.ndarray) -> np.ndarray:
        out = np.asarray(self._fn(grid, w), dtype=np.float64)
        if out.shape != (len(grid), w.shape[0]):
            raise ValueError("terminal evaluator returned a wrong shape")
        return out


@dataclass(frozen=True)
class ProblemSpec:
    """One two-time backward problem on a grid."""

    grid: TimeGrid
    generator: Generator
    terminal: Terminal
    lipschitz: float | None = None
    linear: bool = False

    @property
    def uses_z(self) -> bool:
        return self.generator.uses_z

    @property
    def uses_zeta(self) -> bool:
        return self.generator.uses_zeta


@dataclass(frozen=True)
class Driver:
    """Regression state and martingale increments feeding the sweeps.

    For plain problems this mirrors the ensemble.  A measure change
    supplies shifted state and increments plus likelihood weights, so
    the same sweeps estimate conditional expectations under the tilted
    measure.
    """

    state: np.ndarray
    increments: np.ndarray
    weights: np.ndarray | None = None

    @classmethod
    def from_ensemble(cls, ensemble: PathEnsemble) -> "Driver":
        return cls(state=ensemble.values, increments=ensemble.increments)


@dataclass(frozen=True)
class SolverConfig:
    basis: BasisSpec = BasisSpec()
    picard: bool = False
    tol: float = 1e-6
    max_iter: int = 50
    stitch_level: int | None = None


@dataclass
class SolveReport:
    """Solution fields plus iteration bookkeeping."""

    mode: str
    y: AdaptedField
    z: SurfaceField
    iterations: int
    converged: bool
    update_norms: list[float] = field(default_factory=list)
    contraction_ratios: list[float] = field(default_factory=list)
    stitch_level: int | None = None
    psi_stitch: np.ndarray | None = None


@dataclass
class FamilyReport:
    """Output of one frozen-data family sweep."""

    y: AdaptedField
    z: SurfaceField
    lambda_values: np.ndarray | None = None


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


class _Sweep:
    """Shared machinery: designs, terminal data, one level step."""

    def __init__(
        self,
        problem: ProblemSpec,
        ensemble: PathEnsemble,
        config: SolverConfig,
        driver: Driver | None = None,
    ) -> None:
        grid = problem.grid
        if len(grid) != len(ensemble.grid) or grid.nodes[0] != ensemble.grid.nodes[0] \
                or grid.nodes[-1] != ensemble.grid.nodes[-1]:
            raise ValueError("problem grid and ensemble grid disagree")
        self.problem = problem
        self.grid = grid
        self.ensemble = ensemble
        self.config = config
        self.driver = driver or Driver.from_ensemble(ensemble)
        if self.driver.state.shape != ensemble.values.shape:
            raise ValueError("driver state shape disagrees with ensemble")
        self.n = grid.steps
        self.m = ensemble.n_paths
        self.dt = grid.dt
        self.nodes = grid.nodes
        self.k = config.basis.size
        self.designs = [
            NodeDesign(self.driver.state[:, j], config.basis, self.driver.weights)
            for j in range(self.n)
        ]
        self.terminal = problem.terminal.eval_all(grid, ensemble.values)
        bad = ~np.isfinite(self.terminal)
        if bad.any():
            i = int(np.argwhere(bad.any(axis=1))[0][0])
            raise SolverError(f"terminal data is non-finite at node {i}")
        self.g = problem.generator
        self.needs = self.g.needs

    # -- generator environments ------------------------------------------

    def _env_common(self, j: int) -> dict:
        env = {"s": self.nodes[j], "T": self.grid.horizon, "T1": self.grid.start}
        if "w" in self.needs:
            env["w"] = self.ensemble.values[:, j]
        if "wT" in self.needs:
            env["wT"] = self.ensemble.values[:, -1]
        return env

    def _check_g(self, values: np.ndarray, i_lo: int, i_hi: int, j: int) -> None:
        if np.all(np.isfinite(values)):
            return
        if values.ndim < 2:
            raise SolverError(f"generator returned non-finite values at (i={i_lo}, j={j})")
        row = int(np.argwhere(~np.isfinite(values).all(axis=1))[0][0])
        raise SolverError(f"generator returned non-finite values at (i={row + i_lo}, j={j})")

    # -- one backward level ----------------------------------------------

    def level(
        self,
        j: int,
        lam: np.ndarray,
        z_coeffs: np.ndarray,
        y_values: np.ndarray,
        frozen_y: np.ndarray | None,
        zeta_column: Callable[[int, NodeDesign, np.ndarray], np.ndarray] | None,
    ) -> None:
        """Advance rows 0..j from column j+1 to column j, in place.

        ``zeta_column(j, design, z_fit)`` must return mirrored kernel
        values for rows 0..j; None means the kernel is identified with
        its mirror (the symmetric mode) or is simply never read.
        """
        design = self.designs[j]
        rows = lam[: j + 1]
        increments = self.driver.increments[:, j]
        # both node estimates are variance-reduced by the other: the kernel
        # regresses the one-step martingale difference (same projection,
        # without its 1/dt variance, and constant rows map to exact zeros),
        # then the increment explained by the kernel is removed before the
        # conditional-expectation fit, whose noise then shrinks with dt
        ce_plain = design.evaluate(design.fit(rows))
        bz = design.fit((rows - ce_plain) * (increments / self.dt))
        z_fit = design.evaluate(bz)
        ce_fit = design.evaluate(design.fit(rows - z_fit * increments))
        z_coeffs[: j + 1, j] = bz

        zeta_rows = None
        if "zeta" in self.needs:
            zeta_rows = z_fit if zeta_column is None else zeta_column(j, design, z_fit)

        env = self._env_common(j)
        # diagonal first: its y-argument is the regressed predictor
        env_d = dict(env)
        env_d["t"] = self.nodes[j]
        if "y" in self.needs:
            env_d["y"] = ce_fit[j]
        if "z" in self.needs:
            env_d["z"] = z_fit[j]
        if "zeta" in self.needs:
            env_d["zeta"] = z_fit[j] if zeta_column is None else zeta_rows[j]
        if "wt" in self.needs:
            env_d["wt"] = self.ensemble.values[:, j]
        g_diag = np.asarray(self.g(env_d), dtype=np.float64)
        self._check_g(g_diag, j, j, j)
        lam[j] = ce_fit[j] + self.dt * g_diag
        y_values[:, j] = lam[j]

        if j == 0:
            return
        env_r = dict(env)
        env_r["t"] = self.nodes[:j, None]
        if "y" in self.needs:
            env_r["y"] = y_values[:, j] if frozen_y is None else frozen_y[:, j]
        if "z" in self.needs:
            env_r["z"] = z_fit[:j]
        if "zeta" in self.needs:
            env_r["zeta"] = zeta_rows[:j]
        if "wt" in self.needs:
            env_r["wt"] = self.ensemble.values[:, :j].T
        g_rows = np.asarray(self.g(env_r), dtype=np.float64)
        if g_rows.ndim == 1:  # generator independent of the row index
            g_rows = np.broadcast_to(g_rows, (j, self.m))
        self._check_g(g_rows, 0, j - 1, j)
        lam[:j] = ce_fit[:j] + self.dt * g_rows

    # -- full passes -------------------------------------------------------

    def run_levels(
        self,
        j_hi: int,
        j_lo: int,
        lam: np.ndarray,
        z_coeffs: np.ndarray,
        y_values: np.ndarray,
        frozen_y: np.ndarray | None = None,
        zeta_column=None,
        stitch: dict | None = None,
        lambda_sink: np.ndarray | None = None,
    ) -> None:
        for j in range(j_hi, j_lo - 1, -1):
            self.level(j, lam, z_coeffs, y_values, frozen_y, zeta_column)
            if lambda_sink is not None:
                lambda_sink[: j + 1, j] = lam[: j + 1]
            if stitch is not None and stitch.get("level") == j:
                stitch["values"] = lam[: j + 1].copy()

    def fresh_state(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        lam = self.terminal.copy()
        y_values = np.empty((self.m, self.n + 1))
        y_values[:, self.n] = self.terminal[self.n]
        z_coeffs = np.zeros((self.n + 1, self.n + 1, self.k))
        return lam, z_coeffs, y_values

    # -- iterate distances -------------------------------------------------

    def block_norm_sq(
        self,
        j_hi: int,
        j_lo: int,
        y_new: np.ndarray,
        y_old: np.ndarray | None,
        c_new: np.ndarray,
        c_old: np.ndarray | None,
    ) -> float:
        """Squared triangle norm of an iterate difference over a level block."""
        total = 0.0
        dt, dt2 = self.dt, self.dt**2
        for j in range(j_lo, j_hi + 1):
            dy = y_new[:, j] if y_old is None else y_new[:, j] - y_old[:, j]
            total += float(np.mean(dy**2)) * dt
            dc = c_new[: j + 1, j] if c_old is None else c_new[: j + 1, j] - c_old[: j + 1, j]
            dz = self.designs[j].evaluate(dc)
            total += float(np.sum(np.mean(dz**2, axis=1))) * dt2
        return total


def _upper_kernel(sweep: _Sweep, z_coeffs: np.ndarray) -> CoeffSurface:
    return CoeffSurface(sweep.grid, sweep.driver.state, _readonly(z_coeffs), region="upper")


def _adapted(sweep: _Sweep, y_values: np.ndarray) -> AdaptedField:
    return AdaptedField(grid=sweep.grid, values=_readonly(y_values))


def _frozen_coeff_zeta(sweep: _Sweep, coeffs: np.ndarray):
    """Mirrored kernel values from a frozen symmetric upper table."""

    def column(j: int, design: NodeDesign, z_fit: np.ndarray) -> np.ndarray:
        return design.evaluate(coeffs[: j + 1, j])

    return column


def _frozen_martingale_zeta(sweep: _Sweep, mart_coeffs: np.ndarray):
    """Mirrored values Z(t_j, t_i) from a frozen lower-triangle table.

    Row i of the returned block is a polynomial in the state at node i,
    so each row needs its own design; the diagonal keeps the identity
    zeta = z, which is exact there.
    """

    def column(j: int, design: NodeDesign, z_fit: np.ndarray) -> np.ndarray:
        out = np.empty((j + 1, sweep.m))
        for i in range(j):
            out[i] = sweep.designs[i].x @ mart_coeffs[j, i]
        out[j] = z_fit[j]
        return out

    return column


def _frozen_surface_zeta(sweep: _Sweep, surface: SurfaceField | None):
    if surface is None:
        zeros = np.zeros(sweep.m)

        def column(j: int, design: NodeDesign, z_fit: np.ndarray) -> np.ndarray:
            return np.broadcast_to(zeros, (j + 1, sweep.m))

        return column

    def column(j: int, design: NodeDesign, z_fit: np.ndarray) -> np.ndarray:
        out = np.empty((j + 1, sweep.m))
        for i in range(j + 1):
            out[i] = surface.at(j, i)
        return out

    return column


# ---------------------------------------------------------------------------
# public operations


def family_bsde_sweep(
    problem: ProblemSpec,
    ensemble: PathEnsemble,
    frozen_y: AdaptedField | np.ndarray,
    config: SolverConfig | None = None,
    frozen_zeta: SurfaceField | None = None,
    keep_lambda: bool = False,
    driver: Driver | None = None,
) -> FamilyReport:
    """One backward pass with frozen diagonal data.

    Solves the whole family of backward equations for fixed y (and, when
    the generator reads it, a fixed mirrored kernel), the building block
    of the fixed-point mode.  ``keep_lambda`` additionally materialises
    the full running table, which costs O(N^2 * paths) memory and is
    meant for small diagnostic runs.
    """
    config = config or SolverConfig()
    sweep = _Sweep(problem, ensemble, config, driver)
    fy = frozen_y.values if isinstance(frozen_y, AdaptedField) else np.asarray(frozen_y)
    if fy.shape != (sweep.m, sweep.n + 1):
        raise ValueError("frozen y shape disagrees with ensemble")
    lam, z_coeffs, y_values = sweep.fresh_state()
    sink = None
    if keep_lambda:
        sink = np.zeros((sweep.n + 1, sweep.n + 1, sweep.m))
        sink[:, sweep.n] = sweep.terminal
    zeta_column = None
    if sweep.problem.uses_zeta:
        zeta_column = _frozen_surface_zeta(sweep, frozen_zeta)
    sweep.run_levels(sweep.n - 1, 0, lam, z_coeffs, y_values,
                     frozen_y=fy, zeta_column=zeta_column, lambda_sink=sink)
    return FamilyReport(
        y=_adapted(sweep, y_values),
        z=_upper_kernel(sweep, z_coeffs),
        lambda_values=sink,
    )


def _diagonal_solve(sweep: _Sweep, zeta_column=None) -> tuple[np.ndarray, np.ndarray, dict]:
    lam, z_coeffs, y_values = sweep.fresh_state()
    stitch = {"level": sweep.config.stitch_level}
    sweep.run_levels(sweep.n - 1, 0, lam, z_coeffs, y_values,
                     zeta_column=zeta_column, stitch=stitch)
    return y_values, z_coeffs, stitch


def _picard_s(sweep: _Sweep) -> tuple[np.ndarray, np.ndarray, dict, dict]:
    """Fixed-point mode: freeze (y, mirrored z), sweep, repeat.

    Runs on the whole level range and bisects a block into sub-blocks
    only when the empirical contraction ratios stay at or above one.
    """
    n, m = sweep.n, sweep.m
    lam = sweep.terminal.copy()
    y_values = np.empty((m, n + 1))
    y_values[:, n] = sweep.terminal[n]
    z_coeffs = np.zeros((n + 1, n + 1, sweep.k))
    stitch = {"level": sweep.config.stitch_level}
    info = {"iterations": 0, "update_norms": [], "ratios": [], "converged": True}

    def solve_block(j_hi: int, j_lo: int, depth: int) -> None:
        entry = lam.copy()
        prev_y = np.zeros((m, n + 1))
        prev_c = np.zeros_like(z_coeffs)
        updates: list[float] = []
        for it in range(1, sweep.config.max_iter + 1):
            lam[:] = entry
            sweep.run_levels(j_hi, j_lo, lam, z_coeffs, y_values,
                             frozen_y=prev_y,
                             zeta_column=_frozen_coeff_zeta(sweep, prev_c),
                             stitch=stitch)
            info["iterations"] += 1
            upd = np.sqrt(sweep.block_norm_sq(j_hi, j_lo, y_values, prev_y, z_coeffs, prev_c))
            base = np.sqrt(sweep.block_norm_sq(j_hi, j_lo, y_values, None, z_coeffs, None))
            updates.append(upd)
            info["update_norms"].append(upd)
            if len(updates) > 1:
                info["ratios"].append(updates[-1] / max(updates[-2], 1e-300))
            prev_y[:, j_lo:j_hi + 1] = y_values[:, j_lo:j_hi + 1]
            prev_c[:, j_lo:j_hi + 1] = z_coeffs[:, j_lo:j_hi + 1]
            if upd <= sweep.config.tol * (1.0 + base):
                return
            ratios = info["ratios"]
            diverging = len(ratios) >= 2 and ratios[-1] >= 1.0 and ratios[-2] >= 1.0
            if diverging and j_hi > j_lo and depth < 8:
                lam[:] = entry
                mid = (j_hi + j_lo + 1) // 2
                solve_block(j_hi, mid, depth + 1)
                solve_block(mid - 1, j_lo, depth + 1)
                return
        info["converged"] = False

    solve_block(n - 1, 0, 0)
    return y_values, z_coeffs, stitch, info


def solve_s(
    problem: ProblemSpec,
    ensemble: PathEnsemble,
    config: SolverConfig | None = None,
    driver: Driver | None = None,
) -> SolveReport:
    """Symmetric-kernel solution: the mirrored value is the value itself.

    The default one-pass diagonal sweep resolves the diagonal coupling
    level by level; ``config.picard`` switches to the frozen-data
    iteration, which converges to the same discrete fixed point.
    """
    config = config or SolverConfig()
    sweep = _Sweep(problem, ensemble, config, driver)
    if config.picard:
        y_values, z_coeffs, stitch, info = _picard_s(sweep)
        iterations, converged = info["iterations"], info["converged"]
        update_norms, ratios = info["update_norms"], info["ratios"]
    else:
        y_values, z_coeffs, stitch = _diagonal_solve(sweep)
        iterations, converged, update_norms, ratios = 1, True, [], []
    return SolveReport(
        mode="s-solution",
        y=_adapted(sweep, y_values),
        z=SymmetricSurface(_upper_kernel(sweep, z_coeffs)),
        iterations=iterations,
        converged=converged,
        update_norms=update_norms,
        contraction_ratios=ratios,
        stitch_level=stitch.get("level"),
        psi_stitch=stitch.get("values"),
    )


def extend_symmetric(z_upper: SurfaceField) -> SymmetricSurface:
    """Complete an upper-triangle kernel by exact mirroring."""
    return SymmetricSurface(z_upper)


def _martingale_coeffs(
    sweep: _Sweep, y_values: np.ndarray, out: np.ndarray | None = None
) -> np.ndarray:
    """Lower-triangle tables: row i at node j < i regresses Y_i * dW_j / dt.

    The fitted conditional expectation is subtracted first, as in the
    sweep: same projection, far less regressand variance.
    """
    coeffs = out if out is not None else np.zeros((sweep.n + 1, sweep.n + 1, sweep.k))
    for j in range(sweep.n):
        design = sweep.designs[j]
        scale = sweep.driver.increments[:, j] / sweep.dt
        rows = y_values[:, j + 1:].T
        ce_fit = design.evaluate(design.fit(rows))
        coeffs[j + 1:, j] = design.fit((rows - ce_fit) * scale)
    return coeffs


def extend_martingale(
    y: AdaptedField,
    ensemble: PathEnsemble,
    basis: BasisSpec | None = None,
    driver: Driver | None = None,
) -> CoeffSurface:
    """Fill the strict lower triangle with representation integrands.

    Entry (i, j), i > j, estimates the integrand at t_j of the
    stochastic-integral representation of Y(t_i); it is a function of
    node-j data by construction.
    """
    config = SolverConfig(basis=basis or BasisSpec())
    problem = ProblemSpec(
        grid=y.grid,
        generator=Generator(lambda env: np.float64(0.0), ()),
        terminal=Terminal.constant(0.0),
    )
    sweep = _Sweep(problem, ensemble, config, driver)
    coeffs = _martingale_coeffs(sweep, y.values)
    return CoeffSurface(sweep.grid, sweep.driver.state, _readonly(coeffs), region="lower")


def martingale_reconstruction_error(
    y: AdaptedField, z_lower: SurfaceField, ensemble: PathEnsemble
) -> np.ndarray:
    """Per-node L2 defect of Y_i against mean + sum_{j<i} Z[i][j] dW_j."""
    n = ensemble.grid.steps
    out = np.zeros(n + 1)
    for i in range(n + 1):
        recon = np.full(ensemble.n_paths, float(np.mean(y.at(i))))
        for j in range(i):
            recon = recon + z_lower.at(i, j) * ensemble.increments[:, j]
        out[i] = float(np.sqrt(np.mean((y.at(i) - recon) ** 2)))
    return out


def solve_m(
    problem: ProblemSpec,
    ensemble: PathEnsemble,
    config: SolverConfig | None = None,
    driver: Driver | None = None,
) -> SolveReport:
    """Martingale-extended solution.

    When the generator never reads the mirrored kernel this is the
    diagonal sweep (same code path as :func:`solve_s`, so the upper
    triangles agree bit for bit) plus a lower-triangle fill from the
    representation of Y.  Otherwise the mirrored values feed back into
    the sweep and the pair is iterated to its fixed point.
    """
    config = config or SolverConfig()
    sweep = _Sweep(problem, ensemble, config, driver)
    if not problem.uses_zeta:
        y_values, z_coeffs, stitch = _diagonal_solve(sweep)
        mart = _martingale_coeffs(sweep, y_values)
        iterations, converged = 1, True
        update_norms: list[float] = []
        ratios: list[float] = []
    else:
        stitch = {"level": config.stitch_level}
        y_values = np.zeros((sweep.m, sweep.n + 1))
        z_coeffs = np.zeros((sweep.n + 1, sweep.n + 1, sweep.k))
        mart = np.zeros_like(z_coeffs)
        prev_y = y_values.copy()
        prev_c = z_coeffs.copy()
        update_norms, ratios = [], []
        converged = False
        iterations = 0
        for it in range(1, config.max_iter + 1):
            iterations = it
            y_values, z_coeffs, stitch = _diagonal_solve(
                sweep, zeta_column=_frozen_martingale_zeta(sweep, mart)
            )
            upd = np.sqrt(sweep.block_norm_sq(sweep.n - 1, 0, y_values, prev_y, z_coeffs, prev_c))
            base = np.sqrt(sweep.block_norm_sq(sweep.n - 1, 0, y_values, None, z_coeffs, None))
            update_norms.append(upd)
            if it > 1:
                ratios.append(upd / max(update_norms[-2], 1e-300))
            mart = _martingale_coeffs(sweep, y_values, out=mart)
            prev_y, prev_c = y_values, z_coeffs
            if upd <= config.tol * (1.0 + base):
                converged = True
                break
        else:
            iterations = config.max_iter
        mart = _martingale_coeffs(sweep, y_values)

    upper = _upper_kernel(sweep, z_coeffs)
    lower = CoeffSurface(sweep.grid, sweep.driver.state, _readonly(mart), region="lower")
    return SolveReport(
        mode="m-solution",
        y=_adapted(sweep, y_values),
        z=CompositeSurface(upper, lower, extension="martingale"),
        iterations=iterations,
        converged=converged,
        update_norms=update_norms,
        contraction_ratios=ratios,
        stitch_level=stitch.get("level"),
        psi_stitch=stitch.get("values"),
    )


def solve_adapted(
    problem: ProblemSpec,
    ensemble: PathEnsemble,
    config: SolverConfig | None = None,
    driver: Driver | None = None,
) -> SolveReport:
    """Adapted solution of the mirror-free equation.

    The generator must not read the mirrored kernel; identifying the
    mirrored slot with the kernel itself reduces the problem to the
    symmetric sweep, whose Y this shares exactly.  Only the upper
    triangle is returned: nothing below the diagonal is defined here.
    """
    if problem.uses_zeta:
        raise ValueError("the mirror-free form takes a generator without zeta")
    config = config or SolverConfig()
    sweep = _Sweep(problem, ensemble, config, driver)
    y_values, z_coeffs, stitch = _diagonal_solve(sweep)
    return SolveReport(
        mode="adapted",
        y=_adapted(sweep, y_values),
        z=_upper_kernel(sweep, z_coeffs),
        iterations=1,
        converged=True,
        stitch_level=stitch.get("level"),
        psi_stitch=stitch.get("values"),
    )


@dataclass(frozen=True)
class ResidualReport:
    """Pathwise defect of fields plugged back into the discrete equation."""

    form: str
    per_node: np.ndarray
    aggregate: float
    max_node: float


def residual(
    problem: ProblemSpec,
    y: AdaptedField,
    z: SurfaceField,
    ensemble: PathEnsemble,
    form: str = "row",
) -> ResidualReport:
    """Per-outer-node L2 residual of (Y, Z) in the discrete equation.

    ``form`` selects which kernel orientation drives the stochastic
    sum: "row" reads the row Z(t_i, .), the mirrored "column" form
    reads the column Z(., t_i).  The generator arguments are identical
    in both, so for an exactly symmetric kernel the two residuals agree
    bit for bit.
    """
    if form not in ("row", "column"):
        raise ValueError(f"unknown residual form {form!r}")
    grid = problem.grid
    n = grid.steps
    w = ensemble.values
    terminal = problem.terminal.eval_all(grid, w)
    g = problem.generator
    per_node = np.zeros(n + 1)
    dt = grid.dt
    for i in range(n + 1):
        width = n - i
        r = y.at(i) - terminal[i]
        if width:
            z_row = np.stack([z.at(i, j) for j in range(i, n)])
            z_col = None
            if "zeta" in g.needs or form == "column":
                z_col = np.stack([z.at(j, i) for j in range(i, n)])
            env = {
                "t": grid.nodes[i],
                "s": grid.nodes[i:n, None],
                "T": grid.horizon,
                "T1": grid.start,
            }
            if "y" in g.needs:
                env["y"] = y.values[:, i:n].T
            if "z" in g.needs:
                env["z"] = z_row
            if "zeta" in g.needs:
                env["zeta"] = z_col
            if "w" in g.needs:
                env["w"] = w[:, i:n].T
            if "wt" in g.needs:
                env["wt"] = w[:, i]
            if "wT" in g.needs:
                env["wT"] = w[:, -1]
            gv = np.asarray(g(env), dtype=np.float64)
            if gv.ndim == 2:
                gsum = gv.sum(axis=0) * dt
            else:
                gsum = gv * (width * dt)
            diffusion = z_row if form == "row" else z_col
            ito = np.einsum("jp,pj->p", diffusion, ensemble.increments[:, i:n])
            r = r - gsum + ito
        per_node[i] = float(np.sqrt(np.mean(r**2)))
    aggregate = float(np.sqrt(np.sum(per_node[:n] ** 2) * dt))
    return ResidualReport(
        form=form, per_node=per_node, aggregate=aggregate,
        max_node=float(per_node.max()),
    )
