import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from closure_enkf import dynamics as dy
from closure_enkf.basis import bspline_basis
from closure_enkf.errors import ConfigurationError, DimensionError
from closure_enkf.grid import BoundaryCondition, SpatialGrid, grid_points
from oracles import dense_first_difference, dense_second_difference


def _zero_model(grid):
    return dy.EvolutionModel(lambda u: np.zeros_like(u), grid, BoundaryCondition.NEUMANN, {"D": 1.0})


def test_kpp_rhs_and_closure_values():
    g = SpatialGrid.uniform(1.0, 21)
    u = 1.0 + np.sin(4 * np.pi * grid_points(g)[:, 0])
    L = dense_second_difference(21, g.spacing[0], "neumann")
    np.testing.assert_allclose(dy.kpp_incomplete_rhs(u, g, 0.01), 0.01 * L @ u + u * (1 - u), atol=1e-12)
    np.testing.assert_allclose(dy.kpp_true_closure(u, 2 / 3), -0.5 * u**2, atol=1e-15)
    # the complete model is the logistic reaction with capacity K
    full = dy.complete_model(dy.kpp_model(g, 0.01), dy.kpp_closure(2 / 3))
    np.testing.assert_allclose(full(u), 0.01 * L @ u + u * (1 - u / (2 / 3)), atol=1e-12)


def test_advdiff_closure_and_boundaries():
    g = SpatialGrid.uniform(1.0, 31)
    u = dy.gaussian_peak(g)
    u[[0, -1]] = 0.0
    Dm = dense_first_difference(31, g.spacing[0], "dirichlet")
    np.testing.assert_allclose(dy.advdiff_true_closure(u, g, 0.1), -0.1 * Dm @ u, atol=1e-12)
    model = dy.complete_model(dy.advdiff_model(g, 0.01), dy.advdiff_closure(g, 0.1))
    out = model(u)
    assert out[0] == 0.0 and out[-1] == 0.0
    np.testing.assert_allclose(model.velocity, [0.1])


def test_velocity_vector():
    np.testing.assert_allclose(dy.velocity_vector(0.5, 2), [0.5 / math.sqrt(2)] * 2)
    np.testing.assert_allclose(dy.velocity_vector(0.5, 2, [1.0, 0.0]), [1.0, 0.0])
    with pytest.raises(ConfigurationError):
        dy.velocity_vector(0.5, 2, [1.0])


def test_invalid_params():
    g = SpatialGrid.uniform(1.0, 10)
    with pytest.raises(ConfigurationError):
        dy.kpp_incomplete_rhs(np.ones(10), g, 0.0)
    with pytest.raises(ConfigurationError):
        dy.kpp_true_closure(np.ones(10), 0.0)


def test_stable_time_step():
    g = SpatialGrid.uniform(1.0, 101)
    dt = dy.stable_time_step(g, 0.01)
    assert dt == pytest.approx(0.5 * 0.01**2 / 0.02)
    dt_adv = dy.stable_time_step(g, 0.01, [50.0])
    assert 50.0 * dt_adv / 0.01 <= 0.5
    dy.check_stability(dt, g, 0.01)
    with pytest.raises(ConfigurationError):
        dy.check_stability(3 * dt, g, 0.01)
    with pytest.raises(ConfigurationError):
        dy.check_stability(dt, g, 0.01, [1000.0])


@settings(max_examples=50, deadline=None)
@given(a=st.floats(0, 5), span=st.floats(0, 3), dt=st.floats(1e-3, 0.5))
def test_substep_schedule_lands_exactly(a, span, dt):
    steps = dy.substep_schedule(a, a + span, dt)
    assert math.isclose(a + steps.sum(), a + span, rel_tol=0, abs_tol=1e-12)
    assert np.all(steps > -1e-15) and np.all(steps <= dt * (1 + 1e-9))


def test_substep_rejects_backwards():
    with pytest.raises(ConfigurationError):
        dy.substep_schedule(1.0, 0.5, 0.1)


def test_solve_truth_matches_manual_euler():
    g = SpatialGrid.uniform(1.0, 21)
    model, closure = dy.kpp_model(g, 0.01), dy.kpp_closure(2 / 3)
    u0 = dy.sine_initial(g)
    dt = dy.stable_time_step(g, 0.01)
    traj = dy.solve_truth(model, closure, u0, 0.1, [0.0, 0.05, 0.1], dt=dt)
    assert traj.fields.shape == (3, 21)
    np.testing.assert_array_equal(traj.fields[0], u0)
    full = dy.complete_model(model, closure)
    u, t = u0.copy(), 0.0
    for ts, ref in zip([0.05, 0.1], traj.fields[1:]):
        for s in dy.substep_schedule(t, ts, dt):
            u = u + s * full(u)
        t = ts
        np.testing.assert_array_equal(u, ref)
    np.testing.assert_array_equal(traj.at(0.1), traj.fields[2])
    with pytest.raises(ConfigurationError):
        traj.at(0.07)


def test_solve_truth_validation():
    g = SpatialGrid.uniform(1.0, 11)
    with pytest.raises(DimensionError):
        dy.solve_truth(dy.kpp_model(g, 0.01), None, np.ones(5), 1.0, [1.0])
    with pytest.raises(ConfigurationError):
        dy.solve_truth(dy.kpp_model(g, 0.01), None, np.ones(11), 1.0, [2.0])


def test_zero_noise_step_is_deterministic_euler():
    g = SpatialGrid.uniform(1.0, 40)
    model = dy.kpp_model(g, 0.01)
    b = bspline_basis(g, 7)
    u = dy.sine_initial(g)
    z = dy.AugmentedState(u, np.zeros(7))
    dt = dy.stable_time_step(g, 0.01)
    out = dy.step_augmented(z, dt, model, b, 0.1, np.zeros(7))
    np.testing.assert_allclose(out.u, u + dt * model(u), rtol=0, atol=1e-15)
    np.testing.assert_array_equal(out.eta, 0.0)


def test_pure_coefficient_diffusion():
    g = SpatialGrid.uniform(1.0, 10)
    b = bspline_basis(g, 5)
    z = dy.AugmentedState(np.ones(10), np.arange(5.0))
    noise = np.linspace(-1, 1, 5)
    out = dy.step_augmented(z, 0.04, _zero_model(g), b, 0.0, noise)
    np.testing.assert_array_equal(out.u, 1.0)
    np.testing.assert_allclose(out.eta, np.arange(5.0) + 0.2 * noise)
    with pytest.raises(DimensionError):
        dy.step_augmented(z, 0.04, _zero_model(g), b, 0.0, np.zeros(4))


def test_closure_drift_zeroed_on_dirichlet_boundary():
    g = SpatialGrid.uniform(1.0, 30)
    model = dy.advdiff_model(g, 0.01)
    b = bspline_basis(g, 6)
    z = dy.AugmentedState(np.zeros(30), np.ones(6))
    out = dy.step_augmented(z, 1e-3, model, b, 1.0, np.zeros(6))
    assert out.u[0] == 0.0 and out.u[-1] == 0.0 and out.u[15] > 0


def test_brownian_coefficient_variance():
    # 10^4 replicates carried as a trailing batch axis
    g = SpatialGrid.uniform(1.0, 8)
    b = bspline_basis(g, 4)
    n = 10_000
    z = dy.AugmentedState(np.zeros((8, n)), np.zeros((4, n)))
    rng = np.random.default_rng(11)
    out = dy.forecast_substeps(z, 0.0, 0.7, _zero_model(g), b, 0.0, rng, dt=0.01)
    var = out.eta.var(axis=1, ddof=1)
    np.testing.assert_allclose(var, 0.7, rtol=0.05)
    np.testing.assert_allclose(out.eta.mean(axis=1), 0.0, atol=4 * math.sqrt(0.7 / n))


def test_forecast_substeps_pre_drawn_noise_shape():
    g = SpatialGrid.uniform(1.0, 8)
    b = bspline_basis(g, 4)
    z = dy.AugmentedState(np.zeros(8), np.zeros(4))
    with pytest.raises(DimensionError):
        dy.forecast_substeps(z, 0.0, 0.1, _zero_model(g), b, 1.0, np.zeros((3, 4)), dt=0.01)
    out = dy.forecast_substeps(z, 0.0, 0.1, _zero_model(g), b, 1.0, np.ones((10, 4)), dt=0.01)
    np.testing.assert_allclose(out.eta, 10 * 0.1)


def test_augmented_state_stack_split():
    z = dy.AugmentedState(np.arange(3.0), np.arange(2.0))
    s = z.stacked()
    np.testing.assert_array_equal(s, [0, 1, 2, 0, 1])
    back = dy.AugmentedState.split(s, 3)
    np.testing.assert_array_equal(back.u, z.u)
    np.testing.assert_array_equal(back.eta, z.eta)


def test_initial_conditions():
    g = SpatialGrid.uniform(1.0, 5)
    np.testing.assert_allclose(dy.sine_initial(g), np.sin(4 * np.pi * np.linspace(0, 1, 5)) + 1)
    np.testing.assert_allclose(dy.gaussian_peak(g), np.exp(-200 * (np.linspace(0, 1, 5) - 0.25) ** 2))


def test_gp_fixture_reproducible_from_seed():
    g = SpatialGrid.uniform(1.0, 50, 2)
    fixture = dy.load_gp_fixture(g)
    assert fixture.shape == (2500,) and fixture.max() == pytest.approx(1.0) and fixture.min() > 0
    regen = dy.gp_initial_condition(g, dy.GP_FIXTURE_SEED, dy.GP_FIXTURE_LENGTH)
    np.testing.assert_allclose(fixture, regen, rtol=1e-12)


def test_gp_fixture_interpolated_to_desk_grid():
    coarse = dy.load_gp_fixture(SpatialGrid.uniform(1.0, 25, 2))
    assert coarse.shape == (625,)
    fine = dy.load_gp_fixture(SpatialGrid.uniform(1.0, 50, 2)).reshape(50, 50)
    assert coarse.reshape(25, 25)[0, 0] == pytest.approx(fine[0, 0])
    assert coarse.reshape(25, 25)[-1, -1] == pytest.approx(fine[-1, -1])
    with pytest.raises(ConfigurationError):
        dy.load_gp_fixture(SpatialGrid.uniform(1.0, 25))
