import numpy as np
import pytest

from bsvie import (
    DriftError,
    DriftSpec,
    TiltedEnsemble,
    build_grid,
    girsanov_selftest,
    sample_ensemble,
    tilt,
)


@pytest.fixture(scope="module")
def ensemble():
    return sample_ensemble(build_grid(1.0, 16), 20000, seed=13)


def test_zero_drift_is_the_identity(ensemble):
    tilted = tilt(ensemble, DriftSpec())
    np.testing.assert_array_equal(tilted.tilted_values, ensemble.values)
    np.testing.assert_array_equal(tilted.tilted_increments, ensemble.increments)
    np.testing.assert_array_equal(tilted.weights, 1.0)


def test_constant_drift_shifts_values_by_time(ensemble):
    tilted = tilt(ensemble, DriftSpec(r1=1.0))
    nodes = ensemble.grid.nodes
    np.testing.assert_allclose(
        tilted.tilted_values - ensemble.values,
        np.broadcast_to(nodes, (ensemble.n_paths, len(nodes))),
        rtol=0,
        atol=1e-14,
    )
    np.testing.assert_allclose(
        tilted.tilted_increments - ensemble.increments,
        ensemble.dt,
        rtol=0,
        atol=1e-15,
    )


def test_rate_split_is_bitwise_irrelevant(ensemble):
    combined = tilt(ensemble, DriftSpec(r1=1.0))
    split = tilt(ensemble, DriftSpec(r1=0.25, r2=0.75))
    np.testing.assert_array_equal(combined.weights, split.weights)
    np.testing.assert_array_equal(combined.tilted_values, split.tilted_values)


def test_composition_with_the_negated_rate_cancels(ensemble):
    spec = DriftSpec(r1="s", r2=0.5)
    there = tilt(ensemble, spec)
    back = tilt(there, spec.negated())
    np.testing.assert_array_equal(back.tilted_values, ensemble.values)
    np.testing.assert_array_equal(back.tilted_increments, ensemble.increments)
    np.testing.assert_array_equal(back.weights, 1.0)


def test_negated_rate_values(ensemble):
    spec = DriftSpec(r1="s^2", r2=0.3)
    grid = ensemble.grid
    np.testing.assert_array_equal(
        spec.negated().rate_values(grid), -spec.rate_values(grid)
    )


def test_drift_integral_uses_trapezoid_rule(ensemble):
    tilted = tilt(ensemble, DriftSpec(r1="s"))
    nodes = ensemble.grid.nodes
    np.testing.assert_allclose(
        tilted.drift_integral, nodes**2 / 2.0, rtol=0, atol=1e-15
    )


def test_rate_expression_validation(ensemble):
    with pytest.raises(DriftError):
        DriftSpec(r1="y").rate_values(ensemble.grid)
    with pytest.raises(DriftError):
        DriftSpec(r1="1/s").rate_values(ensemble.grid)  # diverges at s = 0


def test_selftest_passes_for_correct_density(ensemble):
    report = girsanov_selftest(tilt(ensemble, DriftSpec(r1=1.0)))
    assert report.passed
    assert report.max_score <= report.threshold == 4.0
    assert report.mean_scores.shape == (ensemble.grid.steps,)
    assert abs(report.weight_mean - 1.0) < 0.05


def test_selftest_catches_flipped_density_sign(ensemble):
    good = tilt(ensemble, DriftSpec(r1=1.0))
    flipped = tilt(ensemble, DriftSpec(r1=-1.0))
    fake = TiltedEnsemble(
        base=ensemble,
        node_rates=good.node_rates,
        drift_integral=good.drift_integral,
        tilted_values=good.tilted_values,
        tilted_increments=good.tilted_increments,
        weights=flipped.weights,
    )
    report = girsanov_selftest(fake)
    assert not report.passed
    assert report.max_score > 10.0


def test_weighted_mean_of_tilted_terminal_vanishes(ensemble):
    # the whole point of the density: under the weights, the shifted
    # path is again centred
    tilted = tilt(ensemble, DriftSpec(r1=1.0))
    w = tilted.weights / np.mean(tilted.weights)
    terminal = tilted.tilted_values[:, -1]
    mean = float(np.mean(w * terminal))
    stderr = float(np.std(w * terminal) / np.sqrt(ensemble.n_paths))
    assert abs(mean) < 4.0 * stderr
    # while the unweighted mean sits a full unit away
    assert abs(float(np.mean(terminal)) - 1.0) < 4.0 * stderr * 3.0


def test_driver_carries_tilted_arrays(ensemble):
    tilted = tilt(ensemble, DriftSpec(r1=0.5))
    driver = tilted.driver()
    assert driver.state is tilted.tilted_values
    assert driver.increments is tilted.tilted_increments
    assert driver.weights is tilted.weights


def test_tilted_arrays_read_only(ensemble):
    tilted = tilt(ensemble, DriftSpec(r1=0.5))
    with pytest.raises(ValueError):
        tilted.weights[0] = 2.0
    with pytest.raises(ValueError):
        tilted.tilted_values[0, 0] = 2.0
