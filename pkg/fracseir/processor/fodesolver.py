# SPDX-License-Identifier: GPL-3.0+
"""Forward integration of the fractional SEIR system and the banded forecast."""

import datetime

import numpy as np

from fracseir.common.chfrac import TimeGrid, build_weights
from fracseir.common.models.epidemic import (
    BANDS, COMPARTMENTS, EpidemicState, ForecastBundle, RateFunctions, Trajectory, constant_rate,
)
from fracseir.processor.error import (
    GridMismatch, InvalidConfiguration, SeriesTooShortError, SolverError, UntrainedModelError,
)
from fracseir.processor.logging import log

# Components below -NEGATIVITY_TOLERANCE * N fail the run
NEGATIVITY_TOLERANCE = 1e-8


def seir_rhs(t, u, rates):
    """
    Evaluate the right-hand side of the SEIR system in persons per unit of fractional time.

    :param float t: the day
    :param numpy.ndarray u: the state ``[S, E, I, R, I^c]``
    :param RateFunctions rates: the rates and constants
    :rtype: numpy.ndarray
    """
    s, e, i, _, _ = u
    sigma = rates.constants.sigma
    infection = rates.beta(t) * s * i / rates.constants.population
    removal = rates.mu(t) * i
    return np.array([
        -infection,
        infection - sigma * e,
        sigma * e - removal,
        removal,
        sigma * e,
    ])


def seir_jacobian(t, u, rates):
    """
    Return the Jacobian of ``seir_rhs`` with respect to the state.

    :rtype: numpy.ndarray
    """
    s, _, i, _, _ = u
    sigma = rates.constants.sigma
    b = rates.beta(t) / rates.constants.population
    mu = rates.mu(t)
    return np.array([
        [-b * i, 0.0, -b * s, 0.0, 0.0],
        [b * i, -sigma, b * s, 0.0, 0.0],
        [0.0, sigma, -mu, 0.0, 0.0],
        [0.0, 0.0, mu, 0.0, 0.0],
        [0.0, sigma, 0.0, 0.0, 0.0],
    ])


def _as_matrix(history):
    rows = [h.as_array() if isinstance(h, EpidemicState) else np.asarray(h, dtype=float)
            for h in history]
    return np.array(rows, dtype=float).reshape(len(rows), len(COMPARTMENTS))


def _advance(u, table, rates, k, max_iterations=100, tol=1e-12):
    """Solve for ``u[k]`` given ``u[0..k-1]``; returns the new state without storing it."""
    weights = table.rows[k]
    c_kk = weights[-1]
    memory = weights[:-1] @ np.diff(u[:k], axis=0) if k > 1 else np.zeros(len(COMPARTMENTS))
    gamma_2ma = 1.0 / table.gamma_factor
    t = table.grid.points[k]
    previous = u[k - 1]
    scale = rates.constants.population

    current = previous.copy()
    converged = False
    for _ in range(max_iterations):
        updated = previous + (gamma_2ma * seir_rhs(t, current, rates) - memory) / c_kk
        change = np.max(np.abs(updated - current)) / scale
        if not np.isfinite(change):
            break
        current = updated
        if change <= tol:
            converged = True
            break
    if not converged:
        log.warning(f'Fixed-point iteration did not converge at step {k}, falling back to '
                    'Newton iteration')
        current = _newton(previous, memory, c_kk, gamma_2ma, t, rates, k, max_iterations, tol)

    if not np.all(np.isfinite(current)):
        raise SolverError(k, 'the state is not finite')
    negative = np.flatnonzero(current < -NEGATIVITY_TOLERANCE * scale)
    if negative.size:
        name = COMPARTMENTS[negative[0]]
        raise SolverError(k, f'{name} dropped to {current[negative[0]]:.6g}')
    return current


def _newton(previous, memory, c_kk, gamma_2ma, t, rates, k, max_iterations, tol):
    identity = np.eye(len(COMPARTMENTS))
    current = previous.copy()
    scale = rates.constants.population
    for _ in range(max_iterations):
        residual = c_kk * (current - previous) + memory - gamma_2ma * seir_rhs(t, current, rates)
        jacobian = c_kk * identity - gamma_2ma * seir_jacobian(t, current, rates)
        try:
            correction = np.linalg.solve(jacobian, residual)
        except np.linalg.LinAlgError as exc:
            raise SolverError(k, f'singular Newton system ({exc})')
        current = current - correction
        if np.max(np.abs(correction)) / scale <= tol:
            return current
    raise SolverError(k, f'no convergence after {max_iterations} Newton iterations')


def step(history, table, rates, k, max_iterations=100, tol=1e-12):
    """
    Advance the fractional system by one step of the implicit scheme.

    Solves ``(1 / Gamma(2 - alpha)) * (c_kk (u^k - u^{k-1}) + H_k) = f(t_k, u^k)`` where
    ``H_k`` collects the earlier increments. A fixed-point iteration starts from ``u^{k-1}``;
    Newton's method takes over when it does not converge.

    :param history: the states ``u^0..u^{k-1}`` as EpidemicStates or 5-vectors
    :param QuadratureTable table: the weights on the solver grid
    :param RateFunctions rates: the rates, order and constants
    :param int k: the step index, ``k >= 1``
    :param int max_iterations: the iteration limit of each of the two iterations
    :param float tol: the tolerance on the max-norm update divided by N
    :return: the state at ``t_k``
    :rtype: EpidemicState
    :raises SolverError: if neither iteration converges or a component turns negative
    :raises GridMismatch: if the history is incomplete or k is beyond the table
    """
    u = _as_matrix(history)
    if not 1 <= k <= table.steps:
        raise GridMismatch(f'Step {k} is outside 1..{table.steps}')
    if len(u) < k:
        raise GridMismatch(f'Step {k} needs {k} earlier states, got {len(u)}')
    if not np.isclose(table.alpha, rates.alpha, rtol=0.0, atol=1e-15):
        raise GridMismatch('The weight table was built for another fractional order')
    state = _advance(u[:k], table, rates, k, max_iterations, tol)
    return EpidemicState.from_array(state, t=table.grid.points[k])


def _steps_per_day(tau):
    steps = round(1.0 / tau) if tau > 0 else 0
    if steps < 1 or abs(steps * tau - 1.0) > 1e-9:
        raise GridMismatch(f'tau={tau} does not divide one day evenly')
    return steps


def solve(initial, rates, horizon_days, tau=0.1, history=None):
    """
    Integrate the fractional system for a number of days.

    Without ``history`` the solver starts at ``t = 1``, the lower terminal. With ``history``
    (the states on the grid ``1, 1 + tau, ...`` strictly before the initial state) the memory
    sum continues over those states and the initial state follows them.

    :param EpidemicState initial: the state at the start of the horizon
    :param RateFunctions rates: the rates, order and constants
    :param int horizon_days: the number of days to integrate
    :param float tau: the step, a divisor of one day
    :param history: (optional) the earlier states as an array of shape (n, 5)
    :return: the initial state followed by one state per day
    :rtype: Trajectory
    :raises SolverError: if a step fails
    """
    if horizon_days < 0:
        raise InvalidConfiguration('The horizon cannot be negative')
    steps_per_day = _steps_per_day(tau)
    earlier = np.zeros((0, len(COMPARTMENTS))) if history is None else _as_matrix(history)
    start = len(earlier)
    origin = 1.0 + start / steps_per_day
    if horizon_days == 0:
        return Trajectory(times=[origin], states=[initial.as_array()])

    total = start + horizon_days * steps_per_day
    grid = TimeGrid(1.0 + np.arange(total + 1) / steps_per_day)
    table = build_weights(grid, rates.alpha)
    u = np.empty((total + 1, len(COMPARTMENTS)))
    u[:start] = earlier
    u[start] = initial.as_array()
    for k in range(start + 1, total + 1):
        u[k] = _advance(u[:k], table, rates, k)

    samples = start + np.arange(horizon_days + 1) * steps_per_day
    return Trajectory(times=origin + np.arange(horizon_days + 1), states=u[samples])


def daily_new(trajectory, compartment='i_cum'):
    """
    Difference a cumulative compartment between consecutive daily samples.

    ``daily_new(trajectory)[j] = I^c(t_{j+1}) - I^c(t_j)``; pass ``compartment='r'`` for the
    daily new removed.

    :param Trajectory trajectory: daily samples
    :param str compartment: the compartment to difference
    :rtype: numpy.ndarray
    :raises SeriesTooShortError: if there are fewer than two samples
    """
    if len(trajectory) < 2:
        raise SeriesTooShortError('Daily differences need at least two daily samples')
    return np.diff(trajectory.column(compartment))


def forecast_history(values, data, population):
    """
    Build the states the forecast's memory runs over, ending with the forecast origin.

    The origin takes I, R and I^c from the last day of the data and S, E from the networks.
    Earlier rows follow the networks' increments: the I, R and I^c columns are shifted so
    they end at the data, and S is the complement of E, I and R to the origin's total. Every
    row then holds the same S + E + I + R, so the memory adds no population.

    :param dict values: the model's compartments on its mesh, fractions of N
    :param CaseSeries data: the preprocessed series the model was fitted on
    :param float population: N
    :return: the states in persons, one row per mesh node
    :rtype: numpy.ndarray
    """
    history = np.column_stack([values[name] * population for name in COMPARTMENTS])
    last = {'i': data.current_infected[-1], 'r': data.cum_removed[-1],
            'i_cum': data.cum_infected[-1]}
    for name, value in last.items():
        column = COMPARTMENTS.index(name)
        history[:, column] += float(value) - history[-1, column]
        history[-1, column] = float(value)
    total = history[-1, :4].sum()
    history[:, 0] = total - history[:, 1:4].sum(axis=1)
    return history


def forecast(model, data, horizon_days, uncertainty=0.30):
    """
    Forecast the epidemic from the end of the training window.

    beta and mu are frozen at their fitted values on the last training day. The forecast
    origin takes I, R and I^c from the last day of the data and S, E from the networks. The
    memory of the derivative reaches back to the start of the training window through the
    networks' increments (see ``forecast_history``). The system is solved three times, with
    beta scaled by 1, ``1 + uncertainty`` and ``1 - uncertainty``.

    :param SeirModel model: the fitted model
    :param CaseSeries data: the preprocessed series the model was fitted on
    :param int horizon_days: the number of days to forecast
    :param float uncertainty: the relative half-width of the beta band
    :return: the central, upper and lower forecasts
    :rtype: ForecastBundle
    :raises UntrainedModelError: if the model has not been fitted
    :raises GridMismatch: if the data does not span the model's window
    """
    if not model.trained:
        raise UntrainedModelError('Forecasting needs a fitted model')
    if horizon_days < 1:
        raise InvalidConfiguration('The forecast horizon must be at least one day')
    if not 0 <= uncertainty < 1:
        raise InvalidConfiguration('The uncertainty must lie in [0, 1)')
    mesh = model.mesh
    if len(data) != mesh.n_days:
        raise GridMismatch(f'The data has {len(data)} days but the model window has '
                           f'{mesh.n_days}')

    population = model.constants.population
    values = model.evaluate(mesh.grid.points)
    history = forecast_history(values, data, population)
    initial = EpidemicState.from_array(history[-1], t=float(mesh.n_days))
    beta_final = float(values['beta'][-1])
    mu_final = float(values['mu'][-1])
    rates = RateFunctions(beta=constant_rate(beta_final), mu=constant_rate(mu_final),
                          alpha=model.alpha, constants=model.constants)
    log.info(f'Forecasting {horizon_days} days with alpha={rates.alpha:.4f}, '
             f'beta={beta_final:.4g}, mu={mu_final:.4g}')

    factors = dict(zip(BANDS, (1.0, 1.0 + uncertainty, 1.0 - uncertainty)))
    trajectories = {}
    for band, factor in factors.items():
        trajectories[band] = solve(initial, rates.scaled(factor), horizon_days, mesh.tau,
                                   history=history[:-1])

    dates = None
    if data.dates:
        last = data.dates[-1]
        dates = tuple(last + datetime.timedelta(days=d) for d in range(1, horizon_days + 1))
    return ForecastBundle(
        new_infected={band: daily_new(traj) for band, traj in trajectories.items()},
        uncertainty=float(uncertainty),
        beta={band: beta_final * factor for band, factor in factors.items()},
        mu=mu_final,
        alpha=rates.alpha,
        dates=dates,
        **trajectories,
    )
