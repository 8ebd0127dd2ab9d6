import numpy as np
import pytest

from bsvie import (
    Driver,
    Generator,
    ProblemSpec,
    SolverConfig,
    SolverError,
    Terminal,
    build_grid,
    extend_martingale,
    extend_symmetric,
    family_bsde_sweep,
    martingale_reconstruction_error,
    residual,
    s2_norm,
    sample_ensemble,
    solve_adapted,
    solve_m,
    solve_s,
)
from bsvie.analytic import get_case, reference_fields

M = 8192


@pytest.fixture(scope="module")
def pl_setup():
    case = get_case("product-linear")
    grid = case.grid(16)
    ensemble = sample_ensemble(grid, M, seed=3)
    return case, grid, case.problem(grid), ensemble


@pytest.fixture(scope="module")
def pl_s_report(pl_setup):
    _, _, problem, ensemble = pl_setup
    return solve_s(problem, ensemble)


def _all_cells(grid):
    n = grid.steps
    return [(i, j) for i in range(n + 1) for j in range(n + 1)]


def test_terminal_evaluation(unit_grid, unit_ensemble):
    const = Terminal.constant(3.0).eval_all(unit_grid, unit_ensemble.values)
    assert const.shape == (len(unit_grid), unit_ensemble.n_paths)
    np.testing.assert_array_equal(const, 3.0)
    psi = Terminal.from_expression("t*T*wT").eval_all(unit_grid, unit_ensemble.values)
    expected = unit_grid.nodes[:, None] * unit_grid.horizon * unit_ensemble.terminal()
    np.testing.assert_allclose(psi, expected, rtol=1e-13)


def test_terminal_rejects_inner_time_variables():
    with pytest.raises(ValueError):
        Terminal.from_expression("s + t")
    with pytest.raises(ValueError):
        Terminal.from_expression("y")


def test_generator_rejects_unknown_needs():
    with pytest.raises(ValueError):
        Generator(lambda env: 0.0, needs=("q",))


def test_family_sweep_constant_terminal(pl_setup):
    # zero generator, constant data: every row stays at the constant and
    # the kernel collapses to zero
    _, grid, _, ensemble = pl_setup
    problem = ProblemSpec(
        grid=grid,
        generator=Generator.from_expression("0"),
        terminal=Terminal.constant(5.0),
    )
    frozen = np.zeros((ensemble.n_paths, len(grid)))
    report = family_bsde_sweep(problem, ensemble, frozen)
    np.testing.assert_allclose(report.y.values, 5.0, rtol=1e-9)
    for i in range(grid.steps):
        np.testing.assert_allclose(report.z.at(i, i), 0.0, atol=1e-9)


def test_family_sweep_martingale_terminal(pl_setup):
    # zero generator, terminal W(T): rows are the martingale W itself and
    # the kernel is the constant integrand 1
    _, grid, _, ensemble = pl_setup
    problem = ProblemSpec(
        grid=grid,
        generator=Generator.from_expression("0"),
        terminal=Terminal.from_expression("wT"),
    )
    frozen = np.zeros((ensemble.n_paths, len(grid)))
    report = family_bsde_sweep(problem, ensemble, frozen, keep_lambda=True)
    err = np.sqrt(np.mean((report.y.values - ensemble.values) ** 2))
    assert err < 0.05
    mid = grid.steps // 2
    assert np.mean(report.z.at(3, mid)) == pytest.approx(1.0, abs=0.05)
    assert report.lambda_values is not None
    np.testing.assert_array_equal(
        report.lambda_values[:, grid.steps],
        np.broadcast_to(ensemble.values[:, -1], (len(grid), ensemble.n_paths)),
    )


def test_family_sweep_rejects_bad_frozen_shape(pl_setup):
    _, grid, problem, ensemble = pl_setup
    with pytest.raises(ValueError):
        family_bsde_sweep(problem, ensemble, np.zeros((3, 3)))


def test_zero_case_exact_in_all_modes():
    case = get_case("zero")
    grid = case.grid(8)
    ensemble = sample_ensemble(grid, 512, seed=1)
    problem = case.problem(grid)
    for solve in (solve_s, solve_m, solve_adapted):
        report = solve(problem, ensemble)
        assert np.all(report.y.values == 0.0)
        cells = (
            [(i, j) for i in range(9) for j in range(i, 9)]
            if report.z.region == "upper"
            else _all_cells(grid)
        )
        for i, j in cells:
            assert np.all(report.z.at(i, j) == 0.0)


def test_symmetric_kernel_mirrors_bitwise(pl_s_report):
    z = pl_s_report.z
    for i, j in ((0, 5), (2, 9), (7, 16)):
        np.testing.assert_array_equal(z.at(i, j), z.at(j, i))


def test_s_and_m_agree_above_diagonal_bitwise(pl_setup, pl_s_report):
    _, grid, problem, ensemble = pl_setup
    m_report = solve_m(problem, ensemble)
    np.testing.assert_array_equal(m_report.y.values, pl_s_report.y.values)
    n = grid.steps
    for i in range(n + 1):
        for j in range(i, n + 1):
            np.testing.assert_array_equal(m_report.z.at(i, j), pl_s_report.z.at(i, j))


def test_adapted_mode_shares_y_and_hides_lower_triangle(pl_setup, pl_s_report):
    _, _, problem, ensemble = pl_setup
    report = solve_adapted(problem, ensemble)
    np.testing.assert_array_equal(report.y.values, pl_s_report.y.values)
    assert report.z.region == "upper"
    with pytest.raises(IndexError):
        report.z.at(2, 1)


def test_adapted_mode_rejects_mirrored_reads(pl_setup):
    _, grid, _, ensemble = pl_setup
    problem = ProblemSpec(
        grid=grid,
        generator=Generator.from_expression("zeta"),
        terminal=Terminal.constant(0.0),
    )
    with pytest.raises(ValueError):
        solve_adapted(problem, ensemble)


def test_fixed_point_mode_matches_one_pass(pl_setup, pl_s_report):
    _, _, problem, ensemble = pl_setup
    picard = solve_s(problem, ensemble, SolverConfig(picard=True, tol=1e-8))
    assert picard.converged
    assert picard.iterations <= 50
    diff_y = pl_s_report.y.values - picard.y.values
    diff = s2_norm(
        pl_s_report.y.__class__(grid=pl_s_report.y.grid, values=diff_y),
        _diff_surface(pl_s_report.z, picard.z),
    )
    base = s2_norm(pl_s_report.y, pl_s_report.z)
    assert diff / base < 1e-6
    assert all(r < 1.0 for r in picard.contraction_ratios)


def _diff_surface(a, b):
    from bsvie import DenseSurface

    n = len(a.grid)
    vals = np.zeros((a.n_paths, n, n))
    for i in range(n):
        for j in range(n):
            vals[:, i, j] = a.at(i, j) - b.at(i, j)
    return DenseSurface(a.grid, vals)


def test_stitch_exposes_running_rows(pl_setup):
    _, grid, problem, ensemble = pl_setup
    level = 5
    report = solve_s(problem, ensemble, SolverConfig(stitch_level=level))
    assert report.stitch_level == level
    assert report.psi_stitch.shape == (level + 1, ensemble.n_paths)
    np.testing.assert_array_equal(report.psi_stitch[level], report.y.values[:, level])


def test_unit_weight_driver_is_the_plain_solver(pl_setup, pl_s_report):
    _, _, problem, ensemble = pl_setup
    driver = Driver(
        state=ensemble.values,
        increments=ensemble.increments,
        weights=np.ones(ensemble.n_paths),
    )
    weighted = solve_s(problem, ensemble, driver=driver)
    # not bitwise: the weighted normal equations multiply by the unit
    # weights through a separate array, which changes the BLAS kernel
    np.testing.assert_allclose(
        weighted.y.values, pl_s_report.y.values, rtol=0, atol=5e-13
    )


def test_non_finite_generator_located(pl_setup):
    _, grid, _, ensemble = pl_setup
    problem = ProblemSpec(
        grid=grid,
        generator=Generator.from_expression("log(-1 - s + s)"),
        terminal=Terminal.constant(1.0),
    )
    with pytest.raises(SolverError, match=r"\(i=\d+, j=\d+\)"):
        solve_s(problem, ensemble)


def test_second_moment_growth_tracks_reference(pl_setup, pl_s_report):
    _, grid, _, _ = pl_setup
    t = grid.nodes
    ref = t**4 * (t - grid.start)
    num = np.mean(pl_s_report.y.values**2, axis=0)
    mask = ref > 1e-12
    assert np.max(np.abs(num[mask] - ref[mask]) / ref[mask]) < 0.10


def test_mean_square_continuity_improves_with_refinement():
    case = get_case("shifted-product")
    worst = {}
    for n in (8, 16):
        grid = case.grid(n)
        ensemble = sample_ensemble(grid, M, seed=4)
        report = solve_s(case.problem(grid), ensemble)
        steps = np.diff(report.y.values, axis=1)
        worst[n] = float(np.max(np.mean(steps**2, axis=0)))
    assert worst[16] / worst[8] < 0.75


def test_residual_forms_agree_bitwise_for_symmetric_fields(pl_setup):
    case, grid, problem, ensemble = pl_setup
    ref = reference_fields(case, ensemble)
    row = residual(problem, ref.y, ref.z_s, ensemble, form="row")
    col = residual(problem, ref.y, ref.z_s, ensemble, form="column")
    np.testing.assert_array_equal(row.per_node, col.per_node)
    assert row.aggregate == col.aggregate


def test_residual_of_exact_fields_shrinks_with_steps():
    case = get_case("product-linear")
    aggregates = []
    for n in (8, 32):
        grid = case.grid(n)
        ensemble = sample_ensemble(grid, 4096, seed=7)
        ref = reference_fields(case, ensemble)
        aggregates.append(
            residual(case.problem(grid), ref.y, ref.z_s, ensemble, form="row").aggregate
        )
    assert aggregates[1] < aggregates[0]


def test_residual_rejects_unknown_form(pl_setup):
    case, _, problem, ensemble = pl_setup
    ref = reference_fields(case, ensemble)
    with pytest.raises(ValueError):
        residual(problem, ref.y, ref.z_s, ensemble, form="diagonal")


def test_martingale_extension_reconstructs_process(pl_setup, pl_s_report):
    _, grid, _, ensemble = pl_setup
    lower = extend_martingale(pl_s_report.y, ensemble)
    assert lower.region == "lower"
    defect = martingale_reconstruction_error(pl_s_report.y, lower, ensemble)
    # Y(t) = t^2 W(t) has representation integrand t^2, inside the basis;
    # the defect is pure regression noise
    scale = np.sqrt(np.mean(pl_s_report.y.values[:, -1] ** 2))
    assert np.max(defect) < 0.12 * scale


def test_symmetric_extension_wraps_upper_kernel(pl_setup):
    _, _, problem, ensemble = pl_setup
    report = solve_adapted(problem, ensemble)
    full = extend_symmetric(report.z)
    np.testing.assert_array_equal(full.at(3, 1), report.z.at(1, 3))
