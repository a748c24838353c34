# SPDX-License-Identifier: GPL-3.0+
"""Synthetic case series generated by the forward solver with known parameters."""

import datetime

import numpy as np

from fracseir.common.models.cases import CaseSeries
from fracseir.common.models.epidemic import (
    EpidemicState, RateFunctions, SeirConstants, constant_rate,
)
from fracseir.processor.fodesolver import daily_new, solve
from fracseir.processor.logging import log

DEFAULT_START_DATE = datetime.date(2022, 3, 5)
DEFAULT_POPULATION = 1e6


def generate_case_series(alpha=0.8, beta=0.25, mu=0.05, population=DEFAULT_POPULATION,
                         n_days=30, initial_exposed=2000.0, initial_infected=1000.0,
                         start_date=DEFAULT_START_DATE, tau=0.1):
    """
    Solve the fractional system with constant rates and report it as daily counts.

    The first day reports the initial infected as new infections and no removals, so the
    series' cumulative infected, removed and current infected equal the solver's I^c, R and I
    on every day. All removals are reported as recoveries.

    :param float alpha: the fractional order in (0, 1)
    :param float beta: the constant transmission rate in 1/day
    :param float mu: the constant removal rate in 1/day
    :param float population: N
    :param int n_days: the number of reported days, at least 2
    :param float initial_exposed: E on the first day
    :param float initial_infected: I and I^c on the first day
    :param datetime.date start_date: the calendar day of the first row, None for undated
    :param float tau: the solver step
    :return: the case series and the daily trajectory that generated it
    :rtype: tuple
    """
    if n_days < 2:
        raise ValueError('A synthetic series needs at least two days')
    constants = SeirConstants(population)
    rates = RateFunctions(beta=constant_rate(beta), mu=constant_rate(mu), alpha=alpha,
                          constants=constants)
    initial = EpidemicState(
        s=population - initial_exposed - initial_infected,
        e=initial_exposed,
        i=initial_infected,
        r=0.0,
        i_cum=initial_infected,
    )
    log.debug('Generating %d synthetic days with alpha=%s beta=%s mu=%s', n_days, alpha, beta,
              mu)
    trajectory = solve(initial, rates, n_days - 1, tau)
    new_infected = np.concatenate([[initial.i_cum], daily_new(trajectory)])
    new_removed = np.concatenate([[initial.r], daily_new(trajectory, 'r')])
    dates = None
    if start_date is not None:
        dates = tuple(start_date + datetime.timedelta(days=d) for d in range(n_days))
    series = CaseSeries(dates=dates, new_infected=new_infected, new_recovered=new_removed,
                        new_dead=np.zeros(n_days))
    return series, trajectory
