# SPDX-License-Identifier: GPL-3.0+

from dataclasses import dataclass, field

import numpy as np

from fracseir.processor.error import DataError, NegativeCountError

SERIES_NAMES = ('new_infected', 'cum_infected', 'new_removed', 'removed', 'infected')


def _frozen(values):
    array = np.array(values, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class CaseSeries:
    """
    Reported daily counts with the series derived from them.

    Only the three daily-new columns are stored as given; ``new_removed``, ``cum_infected``,
    ``cum_removed`` (the current removed) and ``current_infected`` are always recomputed from
    them, with cumulative baselines of zero before the first row.
    """

    dates: tuple
    new_infected: np.ndarray
    new_recovered: np.ndarray
    new_dead: np.ndarray
    new_removed: np.ndarray = field(init=False)
    cum_infected: np.ndarray = field(init=False)
    cum_removed: np.ndarray = field(init=False)
    current_infected: np.ndarray = field(init=False)

    def __post_init__(self):
        """
        Freeze the columns, validate them and compute the derived series.

        :raises DataError: if the columns have different lengths or non-finite values
        :raises NegativeCountError: if a daily count is negative
        """
        columns = {}
        for name in ('new_infected', 'new_recovered', 'new_dead'):
            columns[name] = _frozen(getattr(self, name))
            object.__setattr__(self, name, columns[name])
        lengths = {len(c) for c in columns.values()}
        dates = tuple(self.dates) if self.dates is not None else None
        if dates is not None:
            lengths.add(len(dates))
        if len(lengths) != 1:
            raise DataError('All case-count columns must have the same length')
        for name, column in columns.items():
            if not np.all(np.isfinite(column)):
                raise DataError(f'The column "{name}" contains non-finite values')
            negative = np.flatnonzero(column < 0)
            if negative.size:
                raise NegativeCountError(
                    f'The column "{name}" is negative on day {negative[0] + 1}')
        object.__setattr__(self, 'dates', dates)
        for name, values in derive_series(
                self.new_infected, self.new_recovered, self.new_dead).items():
            object.__setattr__(self, name, values)

    def __len__(self):
        """Return the number of days."""
        return len(self.new_infected)

    @property
    def start_date(self):
        """Return the first calendar day, or None for an undated series."""
        return self.dates[0] if self.dates else None

    def head(self, n_days):
        """
        Return the first ``n_days`` days as a new series.

        :param int n_days: the number of days to keep
        :rtype: CaseSeries
        """
        return CaseSeries(
            dates=self.dates[:n_days] if self.dates is not None else None,
            new_infected=self.new_infected[:n_days],
            new_recovered=self.new_recovered[:n_days],
            new_dead=self.new_dead[:n_days],
        )

    def series(self, name):
        """
        Return one of the series the data loss consumes.

        :param str name: one of ``SERIES_NAMES``
        :rtype: numpy.ndarray
        """
        mapping = {
            'new_infected': self.new_infected,
            'cum_infected': self.cum_infected,
            'new_removed': self.new_removed,
            'removed': self.cum_removed,
            'infected': self.current_infected,
        }
        return mapping[name]


def derive_series(new_infected, new_recovered, new_dead):
    """
    Compute the derived columns from the daily-new columns.

    :param numpy.ndarray new_infected: daily new infected cases
    :param numpy.ndarray new_recovered: daily new recovered cases
    :param numpy.ndarray new_dead: daily new dead cases
    :return: the derived columns keyed by CaseSeries field name
    :rtype: dict
    """
    new_removed = np.asarray(new_recovered, dtype=float) + np.asarray(new_dead, dtype=float)
    cum_infected = np.cumsum(np.asarray(new_infected, dtype=float))
    cum_removed = np.cumsum(new_removed)
    derived = {
        'new_removed': new_removed,
        'cum_infected': cum_infected,
        'cum_removed': cum_removed,
        'current_infected': cum_infected - cum_removed,
    }
    return {name: _frozen(values) for name, values in derived.items()}
