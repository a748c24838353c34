# SPDX-License-Identifier: GPL-3.0+

import datetime

import mock
import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.special import gamma

from fracseir.common.chfrac import TimeGrid, build_weights
from fracseir.common.models.epidemic import (
    COMPARTMENTS, EpidemicState, RateFunctions, SeirConstants, Trajectory, constant_rate,
)
from fracseir.processor import fodesolver
from fracseir.processor.error import (
    GridMismatch, InvalidConfiguration, SeriesTooShortError, SolverError, UntrainedModelError,
)
from fracseir.processor.seirmodel import SeirModel, fit
from fracseir.processor.synthetic import generate_case_series
from tests.factories import CaseSeriesFactory, SeirModelFactory, TrainingConfigFactory


def _rates(beta=0.5, mu=0.1, alpha=0.8, population=1e4, sigma=1.0 / 3.0):
    return RateFunctions(beta=constant_rate(beta), mu=constant_rate(mu), alpha=alpha,
                         constants=SeirConstants(population, sigma))


INITIAL = EpidemicState(s=9900.0, e=50.0, i=50.0, r=0.0, i_cum=50.0)


def test_disease_free_state_is_constant():
    """Test that a population without exposed or infected stays unchanged."""
    initial = EpidemicState(s=9000.0, e=0.0, i=0.0, r=1000.0, i_cum=1000.0)
    trajectory = fodesolver.solve(initial, _rates(beta=0.0), 5, tau=0.1)
    assert len(trajectory) == 6
    for index in range(len(trajectory)):
        np.testing.assert_array_equal(trajectory.states[index], initial.as_array())


def test_conservation():
    """Test that S + E + I + R stays at N and I^c - I - R stays at its initial value."""
    trajectory = fodesolver.solve(INITIAL, _rates(alpha=0.6), 15, tau=0.1)
    states = trajectory.states
    np.testing.assert_allclose(states[:, :4].sum(axis=1) / 1e4, 1.0, rtol=0.0, atol=1e-10)
    offset = states[:, 4] - states[:, 2] - states[:, 3]
    np.testing.assert_allclose(offset / 1e4, 0.0, atol=1e-10)
    assert np.all(states >= 0)


def test_near_integer_order_matches_ode():
    """Test that an order close to 1 reproduces t u'(t) = f(u) integrated with scipy."""
    rates = _rates(alpha=0.999)
    horizon = 20
    trajectory = fodesolver.solve(INITIAL, rates, horizon, tau=0.1)

    def rhs(t, u):
        return fodesolver.seir_rhs(t, u, rates) / t

    days = 1.0 + np.arange(horizon + 1)
    oracle = solve_ivp(rhs, (1.0, days[-1]), INITIAL.as_array(), t_eval=days, rtol=1e-10,
                       atol=1e-8)
    assert oracle.success
    expected = oracle.y.T
    np.testing.assert_allclose(trajectory.times, days)
    for column in range(expected.shape[1]):
        scale = np.max(np.abs(expected[:, column]))
        error = np.max(np.abs(trajectory.states[:, column] - expected[:, column])) / scale
        assert error < 0.02


def test_zero_horizon():
    """Test that a zero horizon returns only the initial state."""
    trajectory = fodesolver.solve(INITIAL, _rates(), 0)
    assert len(trajectory) == 1
    assert trajectory.times.tolist() == [1.0]
    np.testing.assert_array_equal(trajectory.states[0], INITIAL.as_array())


def test_negative_horizon():
    """Test that a negative horizon is rejected."""
    with pytest.raises(InvalidConfiguration):
        fodesolver.solve(INITIAL, _rates(), -1)


def test_solve_invalid_tau():
    """Test that a step that does not divide a day is rejected."""
    with pytest.raises(GridMismatch):
        fodesolver.solve(INITIAL, _rates(), 3, tau=0.3)


def _trajectory(i_cum):
    states = np.zeros((len(i_cum), 5))
    states[:, 4] = i_cum
    return Trajectory(times=1.0 + np.arange(len(i_cum)), states=states)


def test_daily_new():
    """Test the differences of the cumulative infected between daily samples."""
    np.testing.assert_array_equal(fodesolver.daily_new(_trajectory([0.0, 10.0, 25.0])),
                                  [10.0, 15.0])
    np.testing.assert_array_equal(fodesolver.daily_new(_trajectory([7.0] * 4)), [0.0] * 3)
    with pytest.raises(SeriesTooShortError):
        fodesolver.daily_new(_trajectory([3.0]))


def test_daily_new_telescopes():
    """Test that the daily new cases add up to the growth of I^c and R."""
    trajectory = fodesolver.solve(INITIAL, _rates(), 10, tau=0.5)
    i_cum = trajectory.column('i_cum')
    assert fodesolver.daily_new(trajectory).sum() == pytest.approx(i_cum[-1] - i_cum[0])
    removed = trajectory.column('r')
    assert fodesolver.daily_new(trajectory, 'r').sum() == pytest.approx(removed[-1]
                                                                        - removed[0])
    assert np.all(fodesolver.daily_new(trajectory) > 0)


def test_step_matches_solve():
    """Test that repeated single steps reproduce solve() on the same grid."""
    rates = _rates(alpha=0.7)
    trajectory = fodesolver.solve(INITIAL, rates, 2, tau=0.5)
    table = build_weights(TimeGrid(1.0 + np.arange(5) / 2.0), rates.alpha)
    history = [INITIAL]
    for k in range(1, 5):
        history.append(fodesolver.step(history, table, rates, k))
    assert history[2].t == 2.0
    np.testing.assert_allclose(history[2].as_array(), trajectory.states[1], rtol=1e-14)
    np.testing.assert_allclose(history[4].as_array(), trajectory.states[2], rtol=1e-14)


def test_step_grid_mismatch():
    """Test that an invalid index, a short history or another order is rejected."""
    rates = _rates(alpha=0.7)
    table = build_weights(TimeGrid(1.0 + np.arange(5) / 2.0), 0.7)
    with pytest.raises(GridMismatch):
        fodesolver.step([INITIAL], table, rates, 0)
    with pytest.raises(GridMismatch):
        fodesolver.step([INITIAL], table, rates, 3)
    with pytest.raises(GridMismatch):
        fodesolver.step([INITIAL], build_weights(table.grid, 0.5), rates, 1)


@mock.patch('fracseir.processor.fodesolver.log')
def test_step_falls_back_to_newton(mock_log):
    """Test that a stiff step that defeats the fixed-point iteration is solved by Newton."""
    rates = _rates(beta=20.0, mu=20.0, alpha=0.5, sigma=20.0)
    table = build_weights(TimeGrid([1.0, 2.0]), rates.alpha)
    state = fodesolver.step([INITIAL], table, rates, 1)
    mock_log.warning.assert_called_once()
    u = state.as_array()
    implicit = table.rows[1][0] * (u - INITIAL.as_array())
    np.testing.assert_allclose(implicit, gamma(1.5) * fodesolver.seir_rhs(2.0, u, rates),
                               rtol=1e-9, atol=1e-6)
    assert np.all(u >= 0)


def test_negative_compartment_fails():
    """Test that a component falling below zero aborts the solve with its step."""
    rates = _rates(beta=0.0, mu=-5.0)
    initial = EpidemicState(s=9900.0, e=0.0, i=100.0, r=0.0, i_cum=100.0)
    with pytest.raises(SolverError) as e:
        fodesolver.solve(initial, rates, 1, tau=0.1)
    assert e.value.step == 1
    assert 'r dropped' in str(e.value)


def _forecast_inputs(n_days=5, start_date=datetime.date(2022, 3, 5)):
    data = CaseSeriesFactory.build(n_days, start_date=start_date)
    outputs = {'i': data.current_infected[-1] / 1e6, 'r': data.cum_removed[-1] / 1e6,
               'i_cum': data.cum_infected[-1] / 1e6}
    model = SeirModelFactory.constant(n_days=n_days, outputs=outputs, start_date=start_date)
    return model, data


def test_forecast_requires_trained_model():
    """Test that an untrained model cannot forecast."""
    model = SeirModelFactory.build(n_days=5)
    with pytest.raises(UntrainedModelError):
        fodesolver.forecast(model, CaseSeriesFactory.build(5), 7)


def test_forecast_bundle():
    """Test the shape, dates, origin and band rates of a forecast."""
    model, data = _forecast_inputs()
    bundle = fodesolver.forecast(model, data, 7)
    assert len(bundle.central) == 8
    assert bundle.horizon_days.tolist() == [6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]
    assert bundle.dates[0] == datetime.date(2022, 3, 10)
    assert bundle.dates[-1] == datetime.date(2022, 3, 16)
    for band in ('central', 'upper', 'lower'):
        assert len(bundle.new_infected[band]) == 7
    assert bundle.beta['central'] == pytest.approx(0.3)
    assert bundle.beta['upper'] == pytest.approx(0.39)
    assert bundle.beta['lower'] == pytest.approx(0.21)
    assert bundle.mu == pytest.approx(0.05)
    assert bundle.alpha == model.alpha
    origin = bundle.central.state(0)
    assert origin.i == data.current_infected[-1]
    assert origin.i_cum == data.cum_infected[-1]
    assert origin.r == data.cum_removed[-1]
    assert origin.s == pytest.approx(0.99e6)


def test_forecast_band_ordering():
    """Test that a higher transmission rate forecasts more new infections."""
    model, data = _forecast_inputs()
    bundle = fodesolver.forecast(model, data, 7)
    upper, central, lower = (bundle.new_infected[b] for b in ('upper', 'central', 'lower'))
    assert np.all(upper >= central)
    assert np.all(central >= lower)
    assert upper.sum() > central.sum() > lower.sum()


def test_forecast_without_uncertainty():
    """Test that a zero band width makes the three forecasts identical."""
    model, data = _forecast_inputs()
    bundle = fodesolver.forecast(model, data, 4, uncertainty=0.0)
    assert np.array_equal(bundle.upper.states, bundle.central.states)
    assert np.array_equal(bundle.lower.states, bundle.central.states)
    assert np.array_equal(bundle.new_infected['upper'], bundle.new_infected['central'])


def test_forecast_undated():
    """Test that an undated series gives an undated forecast."""
    model, data = _forecast_inputs(start_date=None)
    bundle = fodesolver.forecast(model, data, 3)
    assert bundle.dates is None


@pytest.mark.parametrize('horizon, uncertainty', [(0, 0.3), (7, 1.0), (7, -0.1)])
def test_forecast_invalid_settings(horizon, uncertainty):
    """Test that an empty horizon or a band width outside [0, 1) is rejected."""
    model, data = _forecast_inputs()
    with pytest.raises(InvalidConfiguration):
        fodesolver.forecast(model, data, horizon, uncertainty)


def test_forecast_window_mismatch():
    """Test that data not spanning the model's window is rejected."""
    model, _ = _forecast_inputs()
    with pytest.raises(GridMismatch):
        fodesolver.forecast(model, CaseSeriesFactory.build(6), 7)


def test_solver_self_convergence():
    """Test that halving tau shrinks the change of the daily states at first order."""
    rates = _rates(alpha=0.8)
    states = [fodesolver.solve(INITIAL, rates, 10, tau=tau).states
              for tau in (0.5, 0.25, 0.125)]
    coarse = np.max(np.abs(states[0] - states[1]))
    fine = np.max(np.abs(states[1] - states[2]))
    assert 0 < fine < coarse
    assert np.log2(coarse / fine) >= 0.9


@pytest.mark.parametrize('beta, mu, alpha', [(0.25, 0.05, 0.8), (1.5, 0.5, 0.5)])
def test_non_negative_over_thirty_days(beta, mu, alpha):
    """Test that no compartment drops below zero over a 30-day horizon."""
    population = 1e6
    initial = EpidemicState(s=population - 3000.0, e=2000.0, i=1000.0, r=0.0, i_cum=1000.0)
    rates = _rates(beta=beta, mu=mu, alpha=alpha, population=population)
    trajectory = fodesolver.solve(initial, rates, 30, tau=0.1)
    assert len(trajectory) == 31
    assert np.all(trajectory.states >= -1e-8 * population)


def test_fixed_point_overflow_switches_to_newton():
    """Test that an overflowing fixed-point iteration hands over to Newton at once."""
    rates = _rates(beta=1e6, mu=0.0, alpha=0.5, sigma=20.0)
    table = build_weights(TimeGrid([1.0, 2.0]), rates.alpha)
    newton = mock.patch.object(fodesolver, '_newton', return_value=INITIAL.as_array())
    with mock.patch.object(fodesolver, 'seir_rhs', wraps=fodesolver.seir_rhs) as mock_rhs:
        with newton as mock_newton, np.errstate(all='ignore'):
            state = fodesolver.step([INITIAL], table, rates, 1)
    mock_newton.assert_called_once()
    assert mock_rhs.call_count < 20
    np.testing.assert_array_equal(state.as_array(), INITIAL.as_array())


def test_forecast_conserves_population():
    """Test that S + E + I + R stays at the origin's total when networks miss the data."""
    data = CaseSeriesFactory.build(5)
    model = SeirModelFactory.constant(n_days=5)
    bundle = fodesolver.forecast(model, data, 10, uncertainty=0.0)
    totals = bundle.central.states[:, :4].sum(axis=1)
    np.testing.assert_allclose(totals, totals[0], rtol=0.0, atol=1e-8 * 1e6)
    assert bundle.central.state(0).i == data.current_infected[-1]


def test_forecast_ignores_network_offsets():
    """Test that only the networks' increments enter the forecast memory."""
    model, data = _forecast_inputs()
    matched = fodesolver.forecast(model, data, 7)
    shifted = SeirModelFactory.constant(n_days=5, start_date=datetime.date(2022, 3, 5))
    bundle = fodesolver.forecast(shifted, data, 7)
    for band in ('central', 'upper', 'lower'):
        np.testing.assert_allclose(bundle.band(band).states, matched.band(band).states,
                                   rtol=1e-12, atol=1e-6)


def test_forecast_history():
    """Test that the memory rows share one total and end at the data."""
    model = SeirModelFactory.build(n_days=5, trained=True)
    data = CaseSeriesFactory.build(5)
    values = model.evaluate(model.mesh.grid.points)
    history = fodesolver.forecast_history(values, data, 1e6)
    assert history.shape == (len(model.mesh.grid), 5)
    np.testing.assert_allclose(history[:, :4].sum(axis=1), history[-1, :4].sum(), rtol=1e-12)
    assert history[-1, 2] == data.current_infected[-1]
    assert history[-1, 4] == data.cum_infected[-1]
    np.testing.assert_allclose(np.diff(history[:, 1]), np.diff(values['e']) * 1e6, rtol=1e-9,
                               atol=1e-6)
    np.testing.assert_allclose(np.diff(history[:, 2]), np.diff(values['i']) * 1e6, rtol=1e-9,
                               atol=1e-6)


def test_forecast_follows_generating_trajectory():
    """Test that networks on the true trajectory forecast it inside ordered bands."""
    population = 1e6
    data, _ = generate_case_series(n_days=30, tau=1.0)
    _, truth = generate_case_series(n_days=37, tau=1.0)
    model = SeirModelFactory.constant(n_days=30, tau=1.0, alpha=0.8,
                                      start_date=data.start_date)
    values = {name: truth.column(name)[:30] / population for name in COMPARTMENTS}
    values.update(beta=np.full(30, 0.25), mu=np.full(30, 0.05))
    with mock.patch.object(SeirModel, 'evaluate', return_value=values):
        bundle = fodesolver.forecast(model, data, 7)
    observed = fodesolver.daily_new(truth)[29:]
    np.testing.assert_allclose(bundle.new_infected['central'], observed, rtol=1e-6)
    upper, central, lower = (bundle.new_infected[b] for b in ('upper', 'central', 'lower'))
    assert np.all(upper > central)
    assert np.all(central > lower)
    assert np.all((lower <= observed) & (observed <= upper))
    np.testing.assert_allclose(bundle.central.states[:, :4].sum(axis=1), population,
                               rtol=1e-10)


@pytest.mark.slow
def test_forecast_of_fitted_synthetic_regime():
    """Test that the forecast of a full synthetic fit holds the truth inside its bands."""
    data, _ = generate_case_series(n_days=30)
    _, truth = generate_case_series(n_days=37)
    config = TrainingConfigFactory.build(tau=0.1, iterations=50000,
                                         compartment_layers=(20,) * 5, rate_layers=(5,),
                                         log_every=5000)
    model = fit(data, config).model
    bundle = fodesolver.forecast(model, data, 7)
    observed = fodesolver.daily_new(truth)[29:]
    upper, central, lower = (bundle.new_infected[b] for b in ('upper', 'central', 'lower'))
    assert np.all(upper >= central)
    assert np.all(central >= lower)
    assert np.all((lower <= observed) & (observed <= upper))
