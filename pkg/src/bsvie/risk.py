"""Dynamic coherent risk of a terminal position, with axiom checks.

The risk of a position psi at node t_i is the Y-component of a
symmetric-kernel backward system with free term -psi, an aggregator
f(t, s, y) under the integral, and deterministic rates multiplying the
kernel and its mirror.  Two routes compute it: fold the rate terms into
the generator, or remove them by tilting the driver and reweighting
paths.  Both read the same physical ensemble, so their gap is scheme
error, not sampling noise.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .ensemble import PathEnsemble
from .expr import Node as ExprNode, eval_expr, format_expr, free_variables, parse
from .fields import AdaptedField
from .girsanov import DriftSpec, SelftestReport, girsanov_selftest, tilt
from .grid import TimeGrid
from .solver import Generator, ProblemSpec, SolveReport, SolverConfig, Terminal, solve_s

_RATE_NAMES = frozenset(("s", "T", "T1"))
_AGG_NAMES = frozenset(("t", "s", "y", "T", "T1"))

ROUTES = ("direct", "girsanov")


class RiskSetupError(ValueError):
    """Ill-posed risk setup or mismatched comparison runs."""


def _deterministic_ast(src: str | float | ExprNode, what: str) -> ExprNode:
    if isinstance(src, (int, float)):
        return parse(repr(float(src)))
    ast = parse(src) if isinstance(src, str) else src
    stray = free_variables(ast) - _RATE_NAMES
    if stray:
        raise RiskSetupError(f"{what} must be deterministic in the inner time, got {sorted(stray)}")
    return ast


@dataclass(frozen=True)
class Aggregator:
    """Running cost f(t, s, y) under the outer integral.

    The two rate presets keep the letter-free surface: ``linear`` is
    rate(s) * y and the coherent workhorse; ``absolute`` is
    rate(s) * |y|, sub-additive and positively homogeneous but not
    additive, which is what the axiom checks need to exercise.
    """

    kind: str = "zero"
    rate: str | float = 0.0
    expr: str | None = None

    @classmethod
    def zero(cls) -> "Aggregator":
        return cls("zero")

    @classmethod
    def linear(cls, rate: str | float) -> "Aggregator":
        return cls("linear", rate=rate)

    @classmethod
    def absolute(cls, rate: str | float) -> "Aggregator":
        return cls("absolute", rate=rate)

    @classmethod
    def expression(cls, src: str) -> "Aggregator":
        ast = parse(src)
        stray = free_variables(ast) - _AGG_NAMES
        if stray:
            raise RiskSetupError(
                f"aggregator may read {sorted(_AGG_NAMES)} only, got {sorted(stray)}"
            )
        return cls("expr", expr=format_expr(ast))

    def __post_init__(self) -> None:
        if self.kind not in ("zero", "linear", "absolute", "expr"):
            raise RiskSetupError(f"unknown aggregator kind {self.kind!r}")
        if self.kind == "expr" and self.expr is None:
            raise RiskSetupError("expression aggregator needs a source")

    @property
    def is_linear(self) -> bool:
        return self.kind in ("zero", "linear")

    @property
    def is_homogeneous(self) -> bool:
        """Positively homogeneous in y, so scaling commutes with solving."""
        return self.kind in ("zero", "linear", "absolute")

    @property
    def needs(self) -> frozenset:
        if self.kind == "zero":
            return frozenset()
        if self.kind == "expr":
            return free_variables(parse(self.expr))
        return frozenset(("s", "y"))

    def rate_values(self, grid: TimeGrid) -> np.ndarray:
        """Rate at every node; preset kinds only."""
        if self.kind not in ("linear", "absolute"):
            raise RiskSetupError(f"aggregator kind {self.kind!r} has no rate")
        env = {"s": grid.nodes, "T": grid.horizon, "T1": grid.start}
        out = np.broadcast_to(
            np.asarray(eval_expr(_deterministic_ast(self.rate, "aggregator rate"), env),
                       dtype=np.float64),
            (len(grid),),
        )
        return np.array(out)

    def _fn(self):
        if self.kind == "zero":
            return lambda env: np.float64(0.0)
        if self.kind == "expr":
            ast = parse(self.expr)
            return lambda env: eval_expr(ast, env)
        ast = _deterministic_ast(self.rate, "aggregator rate")
        if self.kind == "linear":
            return lambda env: eval_expr(ast, env) * env["y"]
        return lambda env: eval_expr(ast, env) * np.abs(env["y"])

    def describe(self) -> str:
        if self.kind == "zero":
            return "0"
        if self.kind == "expr":
            return self.expr
        rate = self.rate if isinstance(self.rate, str) else repr(float(self.rate))
        return f"{rate} * y" if self.kind == "linear" else f"{rate} * |y|"


def position_terminal(position: str | float | Terminal) -> Terminal:
    """Accept a constant, an expression in (t, wt, wT), or a Terminal."""
    if isinstance(position, Terminal):
        return position
    if isinstance(position, (int, float)):
        return Terminal.constant(float(position))
    return Terminal.from_expression(position)


@dataclass(frozen=True)
class RiskSpec:
    """Position, aggregator, kernel rates, and the evaluation route."""

    position: str | float | Terminal
    aggregator: Aggregator = Aggregator.zero()
    drift: DriftSpec = DriftSpec()
    route: str = "direct"

    def __post_init__(self) -> None:
        if self.route not in ROUTES:
            raise RiskSetupError(f"route must be one of {ROUTES}, got {self.route!r}")

    def terminal(self) -> Terminal:
        psi = position_terminal(self.position)
        label = psi.source or "psi"
        return Terminal(lambda grid, w: -psi.eval_all(grid, w), source=f"-({label})")


def _direct_generator(spec: RiskSpec) -> Generator:
    f_fn = spec.aggregator._fn()
    r1 = _deterministic_ast(spec.drift.r1, "rate r1")
    r2 = _deterministic_ast(spec.drift.r2, "rate r2")

    def fn(env: dict) -> np.ndarray:
        # the symmetric solver identifies the mirrored kernel with the
        # kernel, so both rates act on z
        rate = eval_expr(r1, env) + eval_expr(r2, env)
        return f_fn(env) + rate * env["z"]

    needs = spec.aggregator.needs | {"s", "z"}
    return Generator(fn, needs, source=f"{spec.aggregator.describe()} + (r1(s)+r2(s))*z")


def _plain_generator(spec: RiskSpec) -> Generator:
    return Generator(spec.aggregator._fn(), spec.aggregator.needs,
                     source=spec.aggregator.describe())


def _solve(spec: RiskSpec, ensemble: PathEnsemble, config: SolverConfig | None,
           route: str) -> SolveReport:
    if route not in ROUTES:
        raise RiskSetupError(f"route must be one of {ROUTES}, got {route!r}")
    if route == "direct":
        problem = ProblemSpec(
            grid=ensemble.grid,
            generator=_direct_generator(spec),
            terminal=spec.terminal(),
            linear=spec.aggregator.is_linear,
        )
        return solve_s(problem, ensemble, config)
    # rates enter the equation with a plus sign, so absorbing them into
    # the driver means shifting it the other way: the drift-free form
    # lives on W - int(r), which is the tilt by the negated rate
    tilted = tilt(ensemble, spec.drift.negated())
    problem = ProblemSpec(
        grid=ensemble.grid,
        generator=_plain_generator(spec),
        terminal=spec.terminal(),
        linear=spec.aggregator.is_linear,
    )
    # the free term stays on the physical paths; only the regression
    # state, increments and weights move to the tilted driver
    return solve_s(problem, ensemble, config, driver=tilted.driver())


def rho(spec: RiskSpec, ensemble: PathEnsemble, config: SolverConfig | None = None,
        route: str | None = None) -> AdaptedField:
    """Risk field rho(t_i) per path, positive for adverse positions."""
    return _solve(spec, ensemble, config, route or spec.route).y


def rho_report(spec: RiskSpec, ensemble: PathEnsemble, config: SolverConfig | None = None,
               route: str | None = None) -> SolveReport:
    """Like :func:`rho` but with the full solver report."""
    return _solve(spec, ensemble, config, route or spec.route)


@dataclass(frozen=True)
class RouteReport:
    """Same risk computed both ways on one ensemble."""

    direct: AdaptedField
    tilted: AdaptedField
    selftest: SelftestReport
    max_gap: float
    relative_gap: float


def _sup_node_l2(values: np.ndarray) -> float:
    return float(np.sqrt(np.mean(values**2, axis=0)).max())


def route_agreement(spec: RiskSpec, ensemble: PathEnsemble,
                    config: SolverConfig | None = None) -> RouteReport:
    """Direct and tilted routes on common paths; gap in sup-node L2."""
    direct = rho(spec, ensemble, config, route="direct")
    tilted_field = rho(spec, ensemble, config, route="girsanov")
    selftest = girsanov_selftest(tilt(ensemble, spec.drift.negated()))
    diff = tilted_field.values - direct.values
    scale = max(_sup_node_l2(direct.values), 1e-12)
    return RouteReport(
        direct=direct,
        tilted=tilted_field,
        selftest=selftest,
        max_gap=_sup_node_l2(diff),
        relative_gap=_sup_node_l2(diff) / scale,
    )


def discount_factor(rate: str | float, grid: TimeGrid) -> np.ndarray:
    """exp of the tail integral of the rate, per node; trapezoid tail.

    Closed-form response of the linear-aggregator risk to a unit
    position shift; exact for constant rates.
    """
    env = {"s": grid.nodes, "T": grid.horizon, "T1": grid.start}
    vals = np.broadcast_to(
        np.asarray(eval_expr(_deterministic_ast(rate, "rate"), env), dtype=np.float64),
        (len(grid),),
    )
    tail = np.zeros(len(grid))
    steps = 0.5 * grid.dt * (vals[:-1] + vals[1:])
    tail[:-1] = np.cumsum(steps[::-1])[::-1]
    return np.exp(tail)


def constant_position_reference(value: float, rate: str | float, grid: TimeGrid) -> np.ndarray:
    """Deterministic risk of a constant position under the linear preset."""
    return -float(value) * discount_factor(rate, grid)


# -- axioms ----------------------------------------------------------------


@dataclass(frozen=True)
class AxiomCheck:
    axiom: str
    max_violation: float
    tolerance: float
    passed: bool
    sample_size: int
    detail: str = ""
    quantiles: dict | None = None


@dataclass(frozen=True)
class AxiomReport:
    """One row per axiom: worst violation, tolerance, verdict."""

    checks: tuple
    steps: int
    n_paths: int
    route: str
    rho: AdaptedField

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, axiom: str) -> AxiomCheck:
        for c in self.checks:
            if c.axiom == axiom:
                return c
        raise KeyError(f"no check named {axiom!r}; have {[c.axiom for c in self.checks]}")


def _shifted_position(psi: Terminal, c: float) -> Terminal:
    return Terminal(lambda grid, w: psi.eval_all(grid, w) + c,
                    source=f"({psi.source}) + {c!r}")


def _scaled_position(psi: Terminal, lam: float) -> Terminal:
    return Terminal(lambda grid, w: lam * psi.eval_all(grid, w),
                    source=f"{lam!r} * ({psi.source})")


def _summed_position(a: Terminal, b: Terminal) -> Terminal:
    return Terminal(lambda grid, w: a.eval_all(grid, w) + b.eval_all(grid, w),
                    source=f"({a.source}) + ({b.source})")


def _edited_before(psi: Terminal, node: int) -> Terminal:
    def fn(grid: TimeGrid, w: np.ndarray) -> np.ndarray:
        out = psi.eval_all(grid, w)
        out[:node] = 2.0 * out[:node] + 3.0
        return out

    return Terminal(fn, source=f"({psi.source}) edited below node {node}")


def require_common_paths(a: PathEnsemble, b: PathEnsemble) -> None:
    """Axiom and route comparisons are only meaningful on shared paths."""
    if a is b:
        return
    if a.seed != b.seed or a.n_paths != b.n_paths or a.grid != b.grid:
        raise RiskSetupError(
            "compared runs must share seed, path count and grid; got "
            f"(seed {a.seed}, M {a.n_paths}) vs (seed {b.seed}, M {b.n_paths})"
        )


def _positive_part_stats(defect: np.ndarray, scale: float) -> tuple[float, dict]:
    viol = np.maximum(defect, 0.0) / scale
    qs = {"q50": float(np.quantile(viol, 0.5)), "q90": float(np.quantile(viol, 0.9)),
          "q99": float(np.quantile(viol, 0.99)), "max": float(viol.max())}
    return qs["max"], qs


def check_axioms(
    spec: RiskSpec,
    ensemble: PathEnsemble,
    config: SolverConfig | None = None,
    *,
    shift: float = 1.0,
    scale: float = 2.0,
    companion: str | float | Terminal = 0.5,
    node: int | None = None,
    ensemble_b: PathEnsemble | None = None,
    monotonicity_tolerance: float = 0.02,
    subadditivity_tolerance: float = 0.02,
    exact_tolerance: float = 1e-10,
    factor_tolerance: float = 1e-3,
) -> AxiomReport:
    """Re-solve under perturbed positions on common paths and measure
    each coherence axiom's defect.

    Translation and its discount factor are only checked for the linear
    aggregator; homogeneity needs a positively homogeneous one.  All
    runs share ``ensemble`` (a second ensemble, if given, must match its
    seed, path count and grid).
    """
    if ensemble_b is not None:
        require_common_paths(ensemble, ensemble_b)
    grid = ensemble.grid
    n = grid.steps
    psi = position_terminal(spec.position)
    base = _solve(spec, ensemble, config, spec.route)
    rho0 = base.y
    norm = max(_sup_node_l2(rho0.values), 1e-12)
    m = ensemble.n_paths
    checks: list[AxiomCheck] = []

    def run(position: Terminal) -> AdaptedField:
        return _solve(replace(spec, position=position), ensemble, config, spec.route).y

    # past independence: the sweep reads the free term row by row and
    # never below the current node, so editing early rows must leave
    # later rows bitwise intact
    i0 = n // 2 if node is None else int(node)
    if not 0 < i0 <= n:
        raise RiskSetupError(f"edit node must lie in (0, {n}], got {i0}")
    edited = run(_edited_before(psi, i0))
    tail_gap = float(np.abs(edited.values[:, i0:] - rho0.values[:, i0:]).max())
    head_changed = bool(np.any(edited.values[:, :i0] != rho0.values[:, :i0]))
    checks.append(AxiomCheck(
        axiom="past-independence",
        max_violation=tail_gap,
        tolerance=0.0,
        passed=(tail_gap == 0.0) and head_changed,
        sample_size=m * (n + 1 - i0),
        detail=f"edited below node {i0}; earlier rows changed: {head_changed}",
    ))

    # monotonicity: a larger position cannot carry more risk
    bigger = run(_shifted_position(psi, abs(shift)))
    mono_defect = bigger.values - rho0.values
    mono_max, mono_q = _positive_part_stats(mono_defect, norm)
    checks.append(AxiomCheck(
        axiom="monotonicity",
        max_violation=mono_max,
        tolerance=monotonicity_tolerance,
        passed=mono_max <= monotonicity_tolerance,
        sample_size=mono_defect.size,
        detail=f"position shift +{abs(shift)!r}, violations relative to sup-node L2",
        quantiles=mono_q,
    ))

    if spec.aggregator.is_linear:
        # translation: the response to a constant shift is the solver's
        # own unit response, exactly, by linearity of every sweep step
        unit = run(Terminal.constant(-1.0))
        shifted = run(_shifted_position(psi, shift))
        defect = shifted.values - rho0.values + shift * unit.values
        trans_max = float(np.abs(defect).max())
        checks.append(AxiomCheck(
            axiom="translation",
            max_violation=trans_max,
            tolerance=exact_tolerance,
            passed=trans_max <= exact_tolerance,
            sample_size=defect.size,
            detail=f"shift {shift!r} against the unit response, common paths",
        ))
        if spec.aggregator.kind == "linear":
            factor = discount_factor(spec.aggregator.rate, grid)
            gap = np.abs(unit.values.mean(axis=0) - factor) / factor
            factor_max = float(gap.max())
            checks.append(AxiomCheck(
                axiom="translation-factor",
                max_violation=factor_max,
                tolerance=factor_tolerance,
                passed=factor_max <= factor_tolerance,
                sample_size=n + 1,
                detail="unit response against the tail-integral discount factor",
            ))

    if spec.aggregator.is_homogeneous:
        lam = float(scale)
        if lam <= 0:
            raise RiskSetupError("homogeneity scale must be positive")
        scaled = run(_scaled_position(psi, lam))
        homo = float(np.abs(scaled.values - lam * rho0.values).max())
        checks.append(AxiomCheck(
            axiom="homogeneity",
            max_violation=homo,
            tolerance=exact_tolerance,
            passed=homo <= exact_tolerance,
            sample_size=scaled.values.size,
            detail=f"scale {lam!r}",
        ))

    # sub-additivity: risk of the sum at most the sum of risks
    other = position_terminal(companion)
    rho_other = run(other)
    rho_sum = run(_summed_position(psi, other))
    sub_defect = rho_sum.values - rho0.values - rho_other.values
    sub_max, sub_q = _positive_part_stats(sub_defect, norm)
    detail = "companion position " + (other.source or "?")
    if spec.aggregator.is_linear:
        detail += f"; linear, equality defect {float(np.abs(sub_defect).max()):.3e}"
    checks.append(AxiomCheck(
        axiom="sub-additivity",
        max_violation=sub_max,
        tolerance=subadditivity_tolerance,
        passed=sub_max <= subadditivity_tolerance,
        sample_size=sub_defect.size,
        detail=detail,
        quantiles=sub_q,
    ))

    return AxiomReport(
        checks=tuple(checks),
        steps=n,
        n_paths=m,
        route=spec.route,
        rho=rho0,
    )
