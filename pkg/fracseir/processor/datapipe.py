# SPDX-License-Identifier: GPL-3.0+

import datetime
from dataclasses import dataclass

import numpy as np
import pandas as pd

from fracseir.common.models.cases import SERIES_NAMES, CaseSeries
from fracseir.processor.error import (
    DataError, DateGapError, MalformedRowError, NegativeCountError, SeriesTooShortError,
)
from fracseir.processor.logging import log

CSV_HEADER = ('date', 'new_infected', 'new_recovered', 'new_dead')
COUNT_COLUMNS = CSV_HEADER[1:]
AVERAGE_WINDOW = 7


def ingest(path):
    """
    Read reported daily counts from a CSV file.

    The file must be UTF-8 with the exact header ``date,new_infected,new_recovered,new_dead``,
    ISO-8601 dates and one row per contiguous calendar day.

    :param str path: the CSV file
    :return: the case series with its derived columns
    :rtype: CaseSeries
    :raises MalformedRowError: if the header or a row cannot be parsed
    :raises NegativeCountError: if a count is negative
    :raises DateGapError: if the dates are not contiguous
    """
    with open(path, 'r', encoding='utf-8') as f:
        header = f.readline().rstrip('\r\n')
    if header != ','.join(CSV_HEADER):
        raise MalformedRowError(
            f'Row 1 of "{path}": expected the header "{",".join(CSV_HEADER)}", got "{header}"')

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except pd.errors.ParserError as exc:
        raise MalformedRowError(f'"{path}" could not be parsed: {exc}')
    if frame.empty:
        raise SeriesTooShortError(f'"{path}" contains no data rows')

    dates = []
    counts = {name: [] for name in COUNT_COLUMNS}
    # Row numbers are file lines, the header being row 1
    for row_number, row in enumerate(frame.itertuples(index=False), start=2):
        try:
            dates.append(datetime.date.fromisoformat(row.date.strip()))
        except (AttributeError, ValueError):
            raise MalformedRowError(f'Row {row_number} of "{path}" has the invalid date '
                                    f'"{row.date}"')
        for name in COUNT_COLUMNS:
            raw = getattr(row, name)
            if not isinstance(raw, str) or not raw.strip():
                raise MalformedRowError(f'Row {row_number} of "{path}" is missing {name}')
            raw = raw.strip()
            try:
                value = float(raw)
            except ValueError:
                raise MalformedRowError(
                    f'Row {row_number} of "{path}" has the invalid {name} value "{raw}"')
            if not np.isfinite(value):
                raise MalformedRowError(
                    f'Row {row_number} of "{path}" has the non-finite {name} value "{raw}"')
            if value < 0:
                raise NegativeCountError(
                    f'Row {row_number} of "{path}" has the negative {name} value {raw}')
            counts[name].append(value)

    check_contiguous(dates)
    series = CaseSeries(dates=tuple(dates), **counts)
    _warn_on_negative_current(series)
    log.debug('Read %d days from %s', len(series), path)
    return series


def check_contiguous(dates):
    """
    Ensure a list of dates has exactly one entry per consecutive day.

    :param list dates: the dates in file order
    :raises DateGapError: naming the first missing or out-of-order date
    """
    one_day = datetime.timedelta(days=1)
    for previous, current in zip(dates, dates[1:]):
        if current != previous + one_day:
            if current > previous + one_day:
                raise DateGapError(f'The data skips {(previous + one_day).isoformat()}')
            raise DateGapError(
                f'The date {current.isoformat()} does not follow {previous.isoformat()}')


def _warn_on_negative_current(series):
    negative = np.flatnonzero(series.current_infected < 0)
    if negative.size:
        day = series.dates[negative[0]] if series.dates else negative[0] + 1
        log.warning(f'The current infected series is negative from {day} on; the cumulative '
                    'baselines start at zero on the first row')


def seven_day_average(series):
    """
    Replace every daily-new column by its trailing seven-day mean.

    The result starts on the seventh input day and its derived columns are recomputed from
    the averaged daily-new columns.

    :param CaseSeries series: the reported series
    :return: the averaged series, six days shorter
    :rtype: CaseSeries
    :raises SeriesTooShortError: if the series has fewer than seven days
    """
    if len(series) < AVERAGE_WINDOW:
        raise SeriesTooShortError(
            f'A {AVERAGE_WINDOW}-day average needs at least {AVERAGE_WINDOW} days, got '
            f'{len(series)}')
    n_out = len(series) - AVERAGE_WINDOW + 1
    averaged = {}
    for name in COUNT_COLUMNS:
        values = getattr(series, name)
        # Every mean sums its own window from its first day on, no running totals
        window_sums = sum(values[offset:offset + n_out] for offset in range(AVERAGE_WINDOW))
        averaged[name] = window_sums / AVERAGE_WINDOW
    dates = series.dates[AVERAGE_WINDOW - 1:] if series.dates else None
    return CaseSeries(dates=dates, **averaged)


@dataclass(frozen=True, eq=False)
class TrainingArrays:
    """
    The data series on the training nodes ``1..N_u``, divided by the population.

    ``dates[j - 1]`` is the calendar day of node j when the series is dated.
    """

    nodes: np.ndarray
    population: float
    series: dict
    dates: tuple = None

    @property
    def n_days(self):
        """Return N_u."""
        return len(self.nodes)

    def __getitem__(self, name):
        """Return a normalized series by name."""
        return self.series[name]

    def denormalize(self, name):
        """
        Return a series in persons.

        :param str name: one of ``SERIES_NAMES``
        :rtype: numpy.ndarray
        """
        return self.series[name] * self.population

    def node_date(self, node):
        """
        Return the calendar day of a node, or None for undated data.

        :param int node: the node number, starting at 1
        :rtype: datetime.date
        """
        if not self.dates:
            return None
        return self.dates[0] + datetime.timedelta(days=int(node) - 1)


def to_training_arrays(series, population):
    """
    Map a preprocessed case series onto the training nodes and normalize it by N.

    :param CaseSeries series: the preprocessed series
    :param float population: the total population N
    :return: the normalized arrays with the node to calendar mapping
    :rtype: TrainingArrays
    :raises DataError: if the population is not positive
    """
    if population is None or not population > 0:
        raise DataError(f'The population must be positive, got {population}')
    nodes = np.arange(1, len(series) + 1, dtype=float)
    normalized = {}
    for name in SERIES_NAMES:
        values = series.series(name) / float(population)
        values.setflags(write=False)
        normalized[name] = values
    return TrainingArrays(nodes=nodes, population=float(population), series=normalized,
                          dates=series.dates)
