# SPDX-License-Identifier: GPL-3.0+

from dataclasses import dataclass, field

import numpy as np

COMPARTMENTS = ('s', 'e', 'i', 'r', 'i_cum')
BANDS = ('central', 'upper', 'lower')


@dataclass(frozen=True)
class SeirConstants:
    """
    The fixed constants of the fractional SEIR system.

    ``population`` is the total population N in persons; ``sigma`` is the incubation rate in
    1/day (the incubation period of Omicron is about three days).
    """

    population: float
    sigma: float = 1.0 / 3.0

    def __post_init__(self):
        """
        Validate the constants.

        :raises ValueError: if N or sigma is not positive
        """
        if not self.population > 0:
            raise ValueError('The population must be positive')
        if not self.sigma > 0:
            raise ValueError('The incubation rate must be positive')


@dataclass(frozen=True)
class EpidemicState:
    """The five compartments, in persons, at day ``t``."""

    s: float
    e: float
    i: float
    r: float
    i_cum: float
    t: float = 1.0

    def as_array(self):
        """Return ``[s, e, i, r, i_cum]``."""
        return np.array([self.s, self.e, self.i, self.r, self.i_cum], dtype=float)

    @classmethod
    def from_array(cls, values, t=1.0):
        """
        Build a state from ``[s, e, i, r, i_cum]``.

        :param values: the five compartment values
        :param float t: the day
        :rtype: EpidemicState
        """
        s, e, i, r, i_cum = (float(v) for v in values)
        return cls(s=s, e=e, i=i, r=r, i_cum=i_cum, t=float(t))


def constant_rate(value):
    """
    Return a rate function frozen at ``value``.

    :param float value: the rate in 1/day
    :rtype: callable
    """
    value = float(value)

    def rate(t):
        return value

    return rate


@dataclass(frozen=True)
class RateFunctions:
    """The transmission and removal rates, the fractional order, and the constants."""

    beta: object
    mu: object
    alpha: float
    constants: SeirConstants

    def __post_init__(self):
        """
        Validate the fractional order.

        :raises ValueError: if alpha is outside (0, 1)
        """
        if not 0 < self.alpha < 1:
            raise ValueError(f'The fractional order must lie in (0, 1), got {self.alpha}')

    def scaled(self, beta_factor):
        """
        Return a copy whose transmission rate is multiplied by ``beta_factor``.

        :param float beta_factor: the multiplier
        :rtype: RateFunctions
        """
        beta = self.beta

        def scaled_beta(t):
            return beta_factor * beta(t)

        return RateFunctions(beta=scaled_beta, mu=self.mu, alpha=self.alpha,
                             constants=self.constants)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    Daily samples of the five compartments.

    ``states`` has one row per entry of ``times`` and the columns of ``COMPARTMENTS``.
    """

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        """Freeze the arrays."""
        times = np.array(self.times, dtype=float)
        states = np.array(self.states, dtype=float).reshape(len(times), len(COMPARTMENTS))
        times.setflags(write=False)
        states.setflags(write=False)
        object.__setattr__(self, 'times', times)
        object.__setattr__(self, 'states', states)

    def __len__(self):
        """Return the number of samples."""
        return len(self.times)

    def column(self, name):
        """
        Return one compartment over time.

        :param str name: one of ``COMPARTMENTS``
        :rtype: numpy.ndarray
        """
        return self.states[:, COMPARTMENTS.index(name)]

    def state(self, index):
        """
        Return the sample at ``index`` as an EpidemicState.

        :rtype: EpidemicState
        """
        return EpidemicState.from_array(self.states[index], t=self.times[index])


@dataclass(frozen=True, eq=False)
class ForecastBundle:
    """
    The central, upper and lower forecasts of one fitted model.

    Each trajectory starts with the forecast origin (the last training day) followed by one
    sample per horizon day. ``new_infected[band][d]`` is the increase of the cumulative
    infected cases from horizon day ``d`` to ``d + 1`` (the origin counts as day 0), so it
    is reported on the later of the two days, like the input data.
    """

    central: Trajectory
    upper: Trajectory
    lower: Trajectory
    new_infected: dict
    uncertainty: float
    beta: dict
    mu: float
    alpha: float
    dates: tuple = field(default=None)

    @property
    def horizon_days(self):
        """Return the days after the origin, as model times."""
        return self.central.times[1:]

    def band(self, name):
        """
        Return the trajectory of a band.

        :param str name: one of ``BANDS``
        :rtype: Trajectory
        """
        return getattr(self, name)
