# SPDX-License-Identifier: GPL-3.0+
"""The CSV and SVG artifacts written by the command line."""

import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from fracseir.common.models.epidemic import BANDS  # noqa: E402
from fracseir.processor.configuration import LOSS_TERMS  # noqa: E402

# Fixed so that the SVG element ids do not change between runs
plt.rcParams['svg.hashsalt'] = 'fracseir'
FLOAT_FORMAT = '%.12g'
COMPARTMENT_COLUMNS = {'s': 'S', 'e': 'E', 'i': 'I', 'r': 'R', 'i_cum': 'I_cum'}
BAND_STYLES = {'central': ('tab:blue', '-'), 'upper': ('tab:red', '--'),
               'lower': ('tab:green', '--')}


def _write_frame(frame, path):
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')


def _iso(day):
    return day.isoformat() if day is not None else ''


def write_loss_history(history, path):
    """
    Write one row per recorded training iteration.

    :param list history: the LossReports of a fit
    :param str path: the destination CSV
    """
    columns = ['iteration', 'alpha', 'total', 'mse_u', 'mse_r', *LOSS_TERMS]
    _write_frame(pd.DataFrame([report.as_row() for report in history], columns=columns), path)


def inference_frame(model, days=None):
    """
    Tabulate the inferred compartments and rates on the training days.

    :param SeirModel model: the fitted model
    :param days: (optional) the days to evaluate, the training nodes by default
    :rtype: pandas.DataFrame
    """
    days = model.mesh.data_nodes if days is None else np.asarray(days, dtype=float)
    values = model.infer(days)
    frame = pd.DataFrame({
        'day': days.astype(int),
        'date': [_iso(model.date_of(day)) for day in days],
        'S': values['s'],
        'E': values['e'],
        'beta': values['beta'],
        'mu': values['mu'],
        'I': values['i'],
        'R': values['r'],
        'I_cum': values['i_cum'],
    })
    if model.start_date is None:
        frame = frame.drop(columns='date')
    return frame


def write_inference(model, path, days=None):
    """Write ``inference_frame`` to a CSV file."""
    frame = inference_frame(model, days)
    _write_frame(frame, path)
    return frame


def write_alpha(alpha, path):
    """Write the decoded fractional order with full precision."""
    with open(path, 'w') as f:
        f.write(f'{alpha!r}\n')


def forecast_frame(bundle):
    """
    Tabulate a forecast with one row per band and horizon day.

    :param ForecastBundle bundle: the forecast
    :rtype: pandas.DataFrame
    """
    frames = []
    for band in BANDS:
        trajectory = bundle.band(band)
        frame = pd.DataFrame({
            'band': band,
            'day': trajectory.times[1:].astype(int),
        })
        if bundle.dates:
            frame['date'] = [_iso(day) for day in bundle.dates]
        for name, column in COMPARTMENT_COLUMNS.items():
            frame[column] = trajectory.column(name)[1:]
        frame['I_new'] = bundle.new_infected[band]
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def write_forecast(bundle, path):
    """Write ``forecast_frame`` to a CSV file."""
    frame = forecast_frame(bundle)
    _write_frame(frame, path)
    return frame


def write_forecast_beta(bundle, path):
    """
    Write the frozen transmission rate of every band over the horizon.

    :param ForecastBundle bundle: the forecast
    :param str path: the destination CSV
    """
    days = bundle.horizon_days.astype(int)
    frame = pd.DataFrame({'day': days})
    if bundle.dates:
        frame['date'] = [_iso(day) for day in bundle.dates]
    for band in BANDS:
        frame[band] = np.full(len(days), bundle.beta[band])
    _write_frame(frame, path)
    return frame


def write_case_series(series, path):
    """
    Write a dated case series in the input format of ``datapipe.ingest``.

    :param CaseSeries series: the series
    :param str path: the destination CSV
    :raises ValueError: if the series has no dates
    """
    if not series.dates:
        raise ValueError('Only dated case series can be written')
    frame = pd.DataFrame({
        'date': [_iso(day) for day in series.dates],
        'new_infected': series.new_infected,
        'new_recovered': series.new_recovered,
        'new_dead': series.new_dead,
    })
    _write_frame(frame, path)


def band_coverage(bundle, observed_new_infected):
    """
    Return the share of horizon days whose observed daily new infected lie inside the band.

    Days without an observation (NaN) are skipped.

    :param ForecastBundle bundle: the forecast
    :param observed_new_infected: the observed values, one per horizon day at most
    :return: the covered share, NaN when nothing was observed
    :rtype: float
    """
    observed = np.asarray(observed_new_infected, dtype=float)[:len(bundle.horizon_days)]
    bands = np.vstack([bundle.new_infected[band][:observed.size] for band in BANDS])
    known = np.isfinite(observed)
    if not known.any():
        return float('nan')
    inside = (observed >= bands.min(axis=0)) & (observed <= bands.max(axis=0))
    return float(inside[known].mean())


def _save(figure, path):
    figure.tight_layout()
    figure.savefig(path, format='svg', metadata={'Date': None})
    plt.close(figure)


def plot_fit(model, arrays, path):
    """
    Draw the fitted series over the observed ones, one panel per data series.

    :param SeirModel model: the fitted model
    :param TrainingArrays arrays: the data the model was fitted on
    :param str path: the destination SVG
    """
    days = model.mesh.data_nodes
    values = model.infer(days)
    fitted = {
        'new_infected': np.concatenate([[np.nan], np.diff(values['i_cum'])]),
        'cum_infected': values['i_cum'],
        'new_removed': np.concatenate([[np.nan], np.diff(values['r'])]),
        'removed': values['r'],
        'infected': values['i'],
    }
    titles = {
        'new_infected': 'Daily new infected',
        'cum_infected': 'Cumulative infected',
        'new_removed': 'Daily new removed',
        'removed': 'Removed',
        'infected': 'Current infected',
    }
    figure, axes = plt.subplots(1, len(fitted), figsize=(4 * len(fitted), 3.5))
    for ax, (name, series) in zip(axes, fitted.items()):
        ax.plot(days, arrays.denormalize(name), 'o', color='tab:gray', markersize=3,
                label='data')
        ax.plot(days, series, '-', color='tab:blue', label='fitted')
        ax.set_title(titles[name])
        ax.set_xlabel('day')
        ax.legend()
    _save(figure, path)


def plot_inference(model, path):
    """
    Draw the inferred S, E, beta and mu over the training window.

    :param SeirModel model: the fitted model
    :param str path: the destination SVG
    """
    days = np.linspace(1.0, float(model.mesh.n_days), 10 * model.mesh.n_days)
    values = model.infer(days)
    figure, axes = plt.subplots(1, 4, figsize=(16, 3.5))
    for ax, (name, title) in zip(axes, (('s', 'S(t)'), ('e', 'E(t)'), ('beta', 'beta(t)'),
                                        ('mu', 'mu(t)'))):
        ax.plot(days, values[name], '-', color='tab:blue')
        ax.set_title(title)
        ax.set_xlabel('day')
    figure.suptitle(f'alpha = {model.alpha:.4f}')
    _save(figure, path)


def plot_forecast(bundle, path, model=None, arrays=None, truth=None):
    """
    Draw the daily new infected of the three bands and the transmission rate band.

    :param ForecastBundle bundle: the forecast
    :param str path: the destination SVG
    :param SeirModel model: (optional) the fitted model, to draw beta(t) on the window
    :param TrainingArrays arrays: (optional) the training data, drawn before the horizon
    :param truth: (optional) the observed daily new infected over the horizon
    """
    days = bundle.horizon_days
    figure, (cases_ax, beta_ax) = plt.subplots(1, 2, figsize=(11, 4))
    if arrays is not None:
        cases_ax.plot(arrays.nodes, arrays.denormalize('new_infected'), 'o', color='tab:gray',
                      markersize=3, label='training data')
    for band in BANDS:
        color, style = BAND_STYLES[band]
        cases_ax.plot(days, bundle.new_infected[band], style, color=color, label=band)
        beta_ax.plot(days, np.full(len(days), bundle.beta[band]), style, color=color,
                     label=band)
    cases_ax.fill_between(days, bundle.new_infected['lower'], bundle.new_infected['upper'],
                          color='tab:blue', alpha=0.15)
    if truth is not None:
        observed = np.asarray(truth, dtype=float)[:len(days)]
        cases_ax.plot(days[:observed.size], observed, 'x', color='black', label='observed')
    if model is not None:
        window = np.linspace(1.0, float(model.mesh.n_days), 10 * model.mesh.n_days)
        beta_ax.plot(window, model.infer(window)['beta'], '-', color='tab:gray',
                     label='fitted')
    cases_ax.set_title(f'Daily new infected (beta +/- {bundle.uncertainty:.0%})')
    cases_ax.set_xlabel('day')
    cases_ax.legend()
    beta_ax.set_title('beta(t)')
    beta_ax.set_xlabel('day')
    beta_ax.legend()
    _save(figure, path)
