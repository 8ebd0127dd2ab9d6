"""Deterministic-drift measure change over a path ensemble.

Shifting the driver by a deterministic drift and reweighting paths with
the exponential density lets the same regression machinery estimate
conditional expectations under the shifted measure.  The ensemble is
never resampled: both computation routes share the physical paths, so
route comparisons see regression error, not fresh Monte-Carlo noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ensemble import PathEnsemble
from .expr import Node as ExprNode, eval_expr, format_expr, free_variables, parse
from .grid import TimeGrid
from .solver import Driver

_RATE_NAMES = frozenset(("s", "T", "T1"))


class DriftError(ValueError):
    """Inadmissible drift: non-finite rate or diverging quadrature."""


def _rate_ast(src: str | float | ExprNode) -> ExprNode:
    if isinstance(src, (int, float)):
        return parse(repr(float(src)))
    ast = parse(src) if isinstance(src, str) else src
    stray = free_variables(ast) - _RATE_NAMES
    if stray:
        raise DriftError(
            f"drift rates are deterministic functions of the inner time; "
            f"got free names {sorted(stray)}"
        )
    return ast


@dataclass(frozen=True)
class DriftSpec:
    """Pair of deterministic rates; the tilt uses their sum."""

    r1: str | float = 0.0
    r2: str | float = 0.0

    def rate_values(self, grid: TimeGrid) -> np.ndarray:
        """Combined rate r1 + r2 at every grid node."""
        env = {"s": grid.nodes, "T": grid.horizon, "T1": grid.start}
        total = np.zeros(len(grid))
        for src in (self.r1, self.r2):
            total = total + np.broadcast_to(
                np.asarray(eval_expr(_rate_ast(src), env), dtype=np.float64), total.shape
            )
        if not np.all(np.isfinite(total)):
            bad = int(np.argwhere(~np.isfinite(total))[0][0])
            raise DriftError(f"drift rate is non-finite at node {bad}")
        return total

    def negated(self) -> "DriftSpec":
        def neg(src: str | float) -> str | float:
            if isinstance(src, (int, float)):
                return -float(src)
            return f"-({src})"

        return DriftSpec(r1=neg(self.r1), r2=neg(self.r2))

    def describe(self) -> str:
        return f"r1={format_expr(_rate_ast(self.r1))}, r2={format_expr(_rate_ast(self.r2))}"


def _trapezoid_cumulative(values: np.ndarray, dt: float) -> np.ndarray:
    out = np.zeros_like(values)
    out[1:] = np.cumsum(0.5 * dt * (values[:-1] + values[1:]))
    return out


@dataclass(frozen=True)
class TiltedEnsemble:
    """Physical paths plus the shifted driver and its likelihood weights.

    ``base`` keeps the sampled Brownian paths; ``tilted_values`` adds the
    cumulative drift integral, node by node, and is a Brownian motion
    under the reweighted empirical measure.  Weights are positive with
    sample mean near one.
    """

    base: PathEnsemble
    node_rates: np.ndarray
    drift_integral: np.ndarray
    tilted_values: np.ndarray
    tilted_increments: np.ndarray
    weights: np.ndarray

    @property
    def grid(self) -> TimeGrid:
        return self.base.grid

    @property
    def n_paths(self) -> int:
        return self.base.n_paths

    def driver(self) -> Driver:
        """Sweep driver: regress on the shifted paths under the weights."""
        return Driver(
            state=self.tilted_values,
            increments=self.tilted_increments,
            weights=self.weights,
        )


def tilt(ensemble: PathEnsemble | TiltedEnsemble, drift: DriftSpec) -> TiltedEnsemble:
    """Shift the driver by the drift's cumulative integral and reweight.

    Tilting an already tilted ensemble composes at the rate level, so a
    tilt by r followed by a tilt by -r reproduces the original arrays
    exactly, not merely up to rounding.
    """
    if isinstance(ensemble, TiltedEnsemble):
        base = ensemble.base
        rates = ensemble.node_rates + drift.rate_values(base.grid)
    else:
        base = ensemble
        rates = drift.rate_values(base.grid)
    grid = base.grid
    dt = grid.dt
    integral = _trapezoid_cumulative(rates, dt)
    square_integral = float(_trapezoid_cumulative(rates**2, dt)[-1])
    if not np.isfinite(square_integral):
        raise DriftError("squared-rate quadrature diverges")
    tilted_values = base.values + integral[None, :]
    tilted_increments = base.increments + np.diff(integral)[None, :]
    # density against the sampling measure: under it the shifted paths
    # regain Brownian moments; the stochastic integral is left-point
    log_weights = -base.increments @ rates[:-1] - 0.5 * square_integral
    weights = np.exp(log_weights)
    if not np.all(np.isfinite(weights)) or not np.all(weights > 0.0):
        raise DriftError("likelihood weights degenerate; drift too large for the horizon")
    for a in (tilted_values, tilted_increments, weights, integral, rates):
        a.flags.writeable = False
    return TiltedEnsemble(
        base=base,
        node_rates=rates,
        drift_integral=integral,
        tilted_values=tilted_values,
        tilted_increments=tilted_increments,
        weights=weights,
    )


@dataclass(frozen=True)
class SelftestReport:
    """Weighted moments of the shifted increments against (0, dt)."""

    mean_scores: np.ndarray
    var_scores: np.ndarray
    weight_mean: float
    weight_mean_score: float
    threshold: float

    @property
    def max_score(self) -> float:
        return float(
            max(
                np.abs(self.mean_scores).max(),
                np.abs(self.var_scores).max(),
                abs(self.weight_mean_score),
            )
        )

    @property
    def passed(self) -> bool:
        return self.max_score <= self.threshold


def girsanov_selftest(tilted: TiltedEnsemble, threshold: float = 4.0) -> SelftestReport:
    """Score the construction: each shifted increment must have weighted
    mean 0 and weighted variance dt, and the weights must average 1.

    Scores are standardized by the weighted standard errors, so a sign
    mistake in the density shifts every mean score by about 2 r sqrt(dt
    M) and fails loudly.
    """
    w = tilted.weights
    m = tilted.n_paths
    dt = tilted.grid.dt
    w_sum = float(np.sum(w))
    incs = tilted.tilted_increments
    means = (w @ incs) / w_sum
    centered = incs - means[None, :]
    se_mean = np.sqrt((w**2) @ (centered**2)) / w_sum
    mean_scores = means / np.maximum(se_mean, 1e-300)
    variances = (w @ (centered**2)) / w_sum
    spread = (w**2) @ ((centered**2 - variances[None, :]) ** 2)
    se_var = np.sqrt(spread) / w_sum
    var_scores = (variances - dt) / np.maximum(se_var, 1e-300)
    weight_mean = w_sum / m
    se_w = float(np.std(w)) / np.sqrt(m)
    weight_mean_score = (weight_mean - 1.0) / max(se_w, 1e-300)
    return SelftestReport(
        mean_scores=mean_scores,
        var_scores=var_scores,
        weight_mean=weight_mean,
        weight_mean_score=weight_mean_score,
        threshold=threshold,
    )
