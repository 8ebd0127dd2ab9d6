import numpy as np
import pytest

from bsvie import (
    Aggregator,
    DriftSpec,
    RiskSetupError,
    RiskSpec,
    SolverConfig,
    Terminal,
    build_grid,
    check_axioms,
    constant_position_reference,
    discount_factor,
    position_terminal,
    require_common_paths,
    rho,
    rho_report,
    route_agreement,
    sample_ensemble,
)

N, M = 32, 16384


@pytest.fixture(scope="module")
def grid():
    return build_grid(1.0, N)


@pytest.fixture(scope="module")
def ensemble(grid):
    return sample_ensemble(grid, M, seed=11)


def test_aggregator_kinds():
    assert Aggregator.zero().is_linear
    assert Aggregator.linear(0.1).is_linear
    assert Aggregator.absolute(0.1).is_homogeneous
    assert not Aggregator.absolute(0.1).is_linear
    assert not Aggregator.expression("y^2").is_homogeneous
    assert "y" in Aggregator.linear(0.1).needs


def test_aggregator_rejects_stray_variables(grid):
    with pytest.raises(RiskSetupError):
        Aggregator.expression("y + z")
    with pytest.raises(RiskSetupError):
        Aggregator.linear("w").rate_values(grid)


def test_position_terminal_accepts_three_forms(grid, ensemble):
    w = ensemble.values
    from_float = position_terminal(2.0).eval_all(grid, w)
    np.testing.assert_array_equal(from_float, 2.0)
    from_str = position_terminal("0.5*wT").eval_all(grid, w)
    np.testing.assert_allclose(
        from_str,
        np.broadcast_to(0.5 * ensemble.terminal(), from_str.shape),
        rtol=1e-14,
    )
    base = Terminal.constant(7.0)
    assert position_terminal(base) is base


def test_spec_terminal_carries_the_negated_position(grid, ensemble):
    spec = RiskSpec(position="0.5*wT")
    values = spec.terminal().eval_all(grid, ensemble.values)
    np.testing.assert_allclose(
        values,
        np.broadcast_to(-0.5 * ensemble.terminal(), values.shape),
        rtol=1e-14,
    )


def test_invalid_route_rejected():
    with pytest.raises(RiskSetupError):
        RiskSpec(position=1.0, route="antithetic")
    with pytest.raises(RiskSetupError):
        rho_report(
            RiskSpec(position=1.0),
            sample_ensemble(build_grid(1.0, 4), 64, seed=1),
            route="antithetic",
        )


def test_linear_kernel_closed_form_both_routes(grid, ensemble):
    # psi = c W(T) with constant kernel rate r and no aggregator has
    # rho(t) = -c W(t) - c r (T - t)
    c, r = 0.8, 0.3
    spec = RiskSpec(position=f"{c}*wT", drift=DriftSpec(r1=r))
    exact = -c * ensemble.values - c * r * (grid.horizon - grid.nodes)
    scale = float(np.sqrt(np.mean(exact**2, axis=0)).max())
    for route in ("direct", "girsanov"):
        field = rho(spec, ensemble, route=route)
        err = float(np.sqrt(np.mean((field.values - exact) ** 2, axis=0)).max())
        assert err / scale < 0.02, route


def test_route_agreement_report(grid, ensemble):
    spec = RiskSpec(
        position="0.7*wT", aggregator=Aggregator.linear(0.1), drift=DriftSpec(r1=0.3)
    )
    report = route_agreement(spec, ensemble)
    assert report.relative_gap < 0.02
    assert report.selftest.passed
    assert report.max_gap >= 0.0


def test_constant_position_matches_ode_oracle(grid, ensemble):
    eta, c = 0.1, 1.0
    spec = RiskSpec(position=c, aggregator=Aggregator.linear(eta))
    field = rho(spec, ensemble)
    exact = constant_position_reference(c, eta, grid)
    err = np.abs(np.mean(field.values, axis=0) - exact)
    assert float(err.max()) < 5e-3 * abs(c)
    # a deterministic position keeps every path on the same value
    assert float(np.ptp(field.values, axis=0).max()) < 1e-10


def test_discount_factor_values(grid):
    factor = discount_factor(0.1, grid)
    np.testing.assert_allclose(
        factor, np.exp(0.1 * (grid.horizon - grid.nodes)), rtol=1e-12
    )
    assert constant_position_reference(2.0, 0.1, grid)[0] == pytest.approx(
        -2.0 * np.exp(0.1), rel=1e-12
    )


def test_linear_axioms_exact(grid, ensemble):
    spec = RiskSpec(position="0.7*wT", aggregator=Aggregator.linear(0.1))
    report = check_axioms(spec, ensemble, shift=1.0, scale=2.0)
    assert report.passed
    assert report.check("past-independence").max_violation == 0.0
    assert report.check("monotonicity").max_violation == 0.0
    assert report.check("translation").max_violation <= 1e-10
    assert report.check("translation-factor").max_violation <= 1e-3
    assert report.check("homogeneity").max_violation <= 1e-10
    assert report.check("sub-additivity").max_violation <= 1e-10
    assert report.route == "direct"
    assert report.steps == N


def test_absolute_aggregator_axioms(grid, ensemble):
    spec = RiskSpec(position="0.7*wT", aggregator=Aggregator.absolute(0.1))
    report = check_axioms(spec, ensemble, companion=0.5)
    names = [c.axiom for c in report.checks]
    assert "translation" not in names  # linear-only check
    assert report.check("homogeneity").max_violation <= 1e-10
    mono = report.check("monotonicity")
    sub = report.check("sub-additivity")
    assert mono.passed and mono.max_violation <= 0.02
    assert sub.passed and sub.max_violation <= 0.02
    assert sub.quantiles is not None and "q90" in sub.quantiles


def test_girsanov_route_axioms(grid, ensemble):
    spec = RiskSpec(
        position="0.7*wT",
        aggregator=Aggregator.linear(0.1),
        drift=DriftSpec(r1=0.2),
        route="girsanov",
    )
    report = check_axioms(spec, ensemble)
    assert report.route == "girsanov"
    assert report.check("translation").max_violation <= 1e-10
    assert report.check("homogeneity").max_violation <= 1e-10
    assert report.check("past-independence").max_violation == 0.0


def test_axiom_report_accessors(grid, ensemble):
    spec = RiskSpec(position="0.7*wT")
    report = check_axioms(spec, ensemble, config=SolverConfig())
    with pytest.raises(KeyError):
        report.check("convexity")
    assert report.rho.values.shape == (M, N + 1)
    assert report.n_paths == M


def test_edit_node_validation(grid, ensemble):
    spec = RiskSpec(position="0.7*wT")
    with pytest.raises(RiskSetupError):
        check_axioms(spec, ensemble, node=0)


def test_require_common_paths(grid):
    a = sample_ensemble(grid, 128, seed=1)
    b = sample_ensemble(grid, 128, seed=2)
    c = sample_ensemble(grid, 256, seed=1)
    d = sample_ensemble(build_grid(1.0, 16), 128, seed=1)
    require_common_paths(a, sample_ensemble(grid, 128, seed=1))
    for other in (b, c, d):
        with pytest.raises(ValueError):
            require_common_paths(a, other)
