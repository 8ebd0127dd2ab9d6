"""Reference problems with closed-form solutions, and error metrics.

Each case packages a problem whose solution is known pathwise as an
explicit function of the driving path, which makes exact error
measurement possible at any grid resolution.  The kernels come in the
two completions the solver distinguishes: the symmetric one and the
martingale-representation one, which differ only below the diagonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .ensemble import PathEnsemble, sample_ensemble
from .fields import AdaptedField, FuncSurface, SurfaceField
from .grid import TimeGrid, build_grid
from .norms import y_l2
from .solver import Generator, ProblemSpec, SolveReport, SolverConfig, Terminal, solve_m, solve_s


@dataclass(frozen=True)
class ReferenceFields:
    """Exact fields evaluated on one ensemble."""

    y: AdaptedField
    z_s: SurfaceField
    z_m: SurfaceField | None
    z_mirror: SurfaceField | None = None


@dataclass(frozen=True)
class ReferenceCase:
    """One solvable-in-closed-form problem on a fixed interval."""

    id: str
    start: float
    horizon: float
    generator_src: str
    terminal_src: str
    note: str
    build_fields: Callable[["ReferenceCase", PathEnsemble], ReferenceFields]

    def grid(self, steps: int) -> TimeGrid:
        return build_grid(horizon=self.horizon, steps=steps, start=self.start)

    def problem(self, grid: TimeGrid) -> ProblemSpec:
        if grid.nodes[0] != self.start or grid.horizon != self.horizon:
            raise ValueError(
                f"case {self.id!r} lives on [{self.start}, {self.horizon}], "
                f"got [{grid.nodes[0]}, {grid.horizon}]"
            )
        return ProblemSpec(
            grid=grid,
            generator=Generator.from_expression(self.generator_src),
            terminal=Terminal.from_expression(self.terminal_src),
            linear=True,
        )


def _const_surface(ens: PathEnsemble, fn: Callable[[float, float], float]) -> FuncSurface:
    nodes = ens.grid.nodes
    return FuncSurface(
        ens.grid, ens.n_paths,
        lambda i, j: np.full(ens.n_paths, fn(nodes[i], nodes[j])),
        region="full",
    )


def _product_fields(case: ReferenceCase, ens: PathEnsemble) -> ReferenceFields:
    nodes = ens.grid.nodes
    y = AdaptedField(grid=ens.grid, values=nodes[None, :] ** 2 * ens.values)
    z_s = _const_surface(ens, lambda t, s: t * s)
    z_m = _const_surface(ens, lambda t, s: t * s if t <= s else t * t)
    return ReferenceFields(y=y, z_s=z_s, z_m=z_m)


def _mirror_fields(case: ReferenceCase, ens: PathEnsemble) -> ReferenceFields:
    base = _product_fields(case, ens)
    # counterpart of the equation whose stochastic sum reads the column:
    # above the diagonal the roles of the two completions swap
    z_mirror = _const_surface(ens, lambda t, s: s * s if t <= s else t * s)
    return ReferenceFields(y=base.y, z_s=base.z_s, z_m=base.z_m, z_mirror=z_mirror)


def _shifted_fields(case: ReferenceCase, ens: PathEnsemble) -> ReferenceFields:
    nodes = ens.grid.nodes
    y = AdaptedField(grid=ens.grid, values=(nodes[None, :] + 1.0) ** 2 * ens.values)
    z_s = _const_surface(ens, lambda t, s: (t + 1.0) * (s + 1.0))
    z_m = _const_surface(
        ens, lambda t, s: (t + 1.0) * (s + 1.0) if t <= s else (t + 1.0) ** 2
    )
    return ReferenceFields(y=y, z_s=z_s, z_m=z_m)


def _zero_fields(case: ReferenceCase, ens: PathEnsemble) -> ReferenceFields:
    y = AdaptedField(grid=ens.grid, values=np.zeros_like(ens.values))
    zero = _const_surface(ens, lambda t, s: 0.0)
    return ReferenceFields(y=y, z_s=zero, z_m=zero)


def _squared_driver_fields(case: ReferenceCase, ens: PathEnsemble) -> ReferenceFields:
    nodes = ens.grid.nodes
    w = ens.values
    y = AdaptedField(grid=ens.grid, values=nodes[None, :] * w**2)

    def z_s(i: int, j: int) -> np.ndarray:
        if i <= j:
            return 2.0 * nodes[i] * w[:, j]
        return 2.0 * nodes[j] * w[:, i]

    def z_m(i: int, j: int) -> np.ndarray:
        return 2.0 * nodes[i] * w[:, j]

    return ReferenceFields(
        y=y,
        z_s=FuncSurface(ens.grid, ens.n_paths, z_s, region="full"),
        z_m=FuncSurface(ens.grid, ens.n_paths, z_m, region="full"),
    )


CASES: dict[str, ReferenceCase] = {
    case.id: case
    for case in (
        ReferenceCase(
            id="product-linear",
            start=0.5,
            horizon=1.0,
            generator_src="-t*y/s^2",
            terminal_src="t*T*wT",
            note="Y(t) = t^2 W(t); symmetric kernel t*s; martingale fill t^2 below "
                 "the diagonal.  Needs a positive start point.",
            build_fields=_product_fields,
        ),
        ReferenceCase(
            id="shifted-product",
            start=0.0,
            horizon=1.0,
            generator_src="-(t+1)*y/(s+1)^2",
            terminal_src="wT*(T+1)*(t+1)",
            note="Y(t) = (t+1)^2 W(t); symmetric kernel (t+1)(s+1); martingale "
                 "fill (t+1)^2 below the diagonal.",
            build_fields=_shifted_fields,
        ),
        ReferenceCase(
            id="mirror-pair",
            start=0.5,
            horizon=1.0,
            generator_src="-t*y/s^2",
            terminal_src="t*T*wT",
            note="The product-linear problem next to its column-read twin: both "
                 "share the symmetric solution, but the two martingale "
                 "completions disagree everywhere off the diagonal.",
            build_fields=_mirror_fields,
        ),
        ReferenceCase(
            id="zero",
            start=0.0,
            horizon=1.0,
            generator_src="0",
            terminal_src="0",
            note="Everything vanishes; the solver must reproduce exact zeros.",
            build_fields=_zero_fields,
        ),
        ReferenceCase(
            id="squared-driver",
            start=0.0,
            horizon=1.0,
            generator_src="-t",
            terminal_src="t*wT^2",
            note="Y(t) = t W(t)^2 with kernel 2 t W(s) above the diagonal.  The "
                 "drift rate is -t, proportional to the outer time; a "
                 "t-independent rate would not reproduce these fields exactly.",
            build_fields=_squared_driver_fields,
        ),
    )
}


def get_case(case_id: str) -> ReferenceCase:
    try:
        return CASES[case_id]
    except KeyError:
        raise KeyError(
            f"unknown reference case {case_id!r}; available: {sorted(CASES)}"
        ) from None


def reference_fields(case: ReferenceCase | str, ensemble: PathEnsemble) -> ReferenceFields:
    """Exact (Y, Z_S, Z_M) fields of a case on the given ensemble."""
    if isinstance(case, str):
        case = get_case(case)
    grid = ensemble.grid
    if grid.nodes[0] != case.start or grid.horizon != case.horizon:
        raise ValueError(
            f"ensemble interval [{grid.nodes[0]}, {grid.horizon}] does not match "
            f"case {case.id!r} on [{case.start}, {case.horizon}]"
        )
    return case.build_fields(case, ensemble)


# ---------------------------------------------------------------------------
# error metrics


@dataclass(frozen=True)
class ErrorReport:
    """Region-wise relative L2 distances between two (Y, Z) pairs.

    Denominators are the reference norms; when a reference norm falls
    below 1e-12 the plain absolute distance is reported instead.  A
    None entry means the region is undefined for one of the fields.
    """

    case: str
    steps: int
    n_paths: int
    y_error: float
    z_upper_error: float | None
    z_lower_error: float | None
    z_diag_error: float | None


def _relative(err_sq: float, ref_sq: float) -> float:
    err, ref = math.sqrt(err_sq), math.sqrt(ref_sq)
    return err / ref if ref > 1e-12 else err


def _region_error(
    z_num: SurfaceField, z_ref: SurfaceField, cells, dt2: float
) -> float:
    err_sq = ref_sq = 0.0
    for i, j in cells:
        dv = z_num.at(i, j) - z_ref.at(i, j)
        err_sq += float(np.mean(dv**2)) * dt2
        ref_sq += float(np.mean(z_ref.at(i, j) ** 2)) * dt2
    return _relative(err_sq, ref_sq)


def field_errors(
    y_num: AdaptedField,
    z_num: SurfaceField | None,
    y_ref: AdaptedField,
    z_ref: SurfaceField | None,
    case: str = "",
) -> ErrorReport:
    """Relative errors for Y and for Z split by triangle and diagonal."""
    grid = y_ref.grid
    if y_num.values.shape != y_ref.values.shape:
        raise ValueError("field shapes disagree")
    n = grid.steps
    dt2 = grid.dt**2
    diff = AdaptedField(grid=grid, values=y_num.values - y_ref.values)
    y_err = _relative(y_l2(diff), y_l2(y_ref))

    z_upper = z_lower = z_diag = None
    if z_num is not None and z_ref is not None:
        z_upper = _region_error(
            z_num, z_ref, ((i, j) for i in range(n) for j in range(i, n)), dt2
        )
        z_diag = _region_error(z_num, z_ref, ((i, i) for i in range(n)), dt2)
        covers_lower = z_num.region in ("full", "lower") and z_ref.region in ("full", "lower")
        if covers_lower:
            z_lower = _region_error(
                z_num, z_ref, ((i, j) for i in range(1, n) for j in range(i)), dt2
            )
    return ErrorReport(
        case=case,
        steps=n,
        n_paths=y_ref.n_paths,
        y_error=y_err,
        z_upper_error=z_upper,
        z_lower_error=z_lower,
        z_diag_error=z_diag,
    )


def error_metrics(
    numeric: SolveReport, reference: ReferenceFields, case: str = ""
) -> ErrorReport:
    """Errors of a solver report against the matching reference fields.

    The martingale completion is compared for an m-mode report, the
    symmetric one otherwise; an upper-triangle-only report is compared
    above the diagonal alone.
    """
    z_ref = reference.z_m if numeric.mode == "m-solution" else reference.z_s
    return field_errors(numeric.y, numeric.z, reference.y, z_ref, case=case)


# ---------------------------------------------------------------------------
# convergence studies


@dataclass(frozen=True)
class ConvergenceTable:
    """Per-level errors plus observed orders between consecutive levels."""

    case: str
    levels: list[tuple[int, int]]
    reports: list[ErrorReport]
    y_orders: list[float]
    z_orders: list[float]


def convergence_study(
    case: ReferenceCase | str,
    levels: list[tuple[int, int]],
    config: SolverConfig | None = None,
    seed: int = 1,
    mode: str = "s",
) -> ConvergenceTable:
    """Solve one case across (steps, paths) levels and tabulate errors.

    Levels must come sorted by step count; order estimates use the step
    ratio between consecutive levels and the Y-error (respectively the
    upper-triangle Z-error).
    """
    if isinstance(case, str):
        case = get_case(case)
    if any(levels[k][0] >= levels[k + 1][0] for k in range(len(levels) - 1)):
        raise ValueError("levels must be sorted by increasing step count")
    if mode not in ("s", "m"):
        raise ValueError(f"unknown mode {mode!r}")
    solve = solve_s if mode == "s" else solve_m
    config = config or SolverConfig()
    reports = []
    for steps, n_paths in levels:
        grid = case.grid(steps)
        problem = case.problem(grid)
        ensemble = sample_ensemble(grid, n_paths=n_paths, seed=seed)
        report = solve(problem, ensemble, config)
        reports.append(error_metrics(report, reference_fields(case, ensemble), case=case.id))

    def orders(errors: list[float | None]) -> list[float]:
        out = []
        for k in range(len(errors) - 1):
            a, b = errors[k], errors[k + 1]
            ratio = levels[k + 1][0] / levels[k][0]
            if a is None or b is None or a <= 0.0 or b <= 0.0:
                out.append(float("nan"))
            else:
                out.append(math.log(a / b) / math.log(ratio))
        return out

    return ConvergenceTable(
        case=case.id,
        levels=list(levels),
        reports=reports,
        y_orders=orders([r.y_error for r in reports]),
        z_orders=orders([r.z_upper_error for r in reports]),
    )
