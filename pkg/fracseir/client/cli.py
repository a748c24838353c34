# SPDX-License-Identifier: GPL-3.0+

import argparse
import datetime
import json
import os
import sys

import numpy as np

from fracseir.client import reporting
from fracseir.client.error import UsageError
from fracseir.client.logging import log
from fracseir.common.chfrac import LogPower, measured_order
from fracseir.processor import datapipe, fodesolver, synthetic
from fracseir.processor.configuration import TrainingConfig, config
from fracseir.processor.error import (
    DataError, GridMismatch, InvalidConfiguration, SchemaVersionMismatch, SolverError,
    TrainingDivergence, UntrainedModelError,
)
from fracseir.processor.seirmodel import SeirModel, fit

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3

VALIDATION_ORDERS = (0.25, 0.5, 0.75)
# An observed order this far below 3 - alpha fails the validation
VALIDATION_SLACK = 0.2
DEMO_TRAINING_DAYS = 30


class ArgumentParser(argparse.ArgumentParser):
    """An argument parser that reports invalid command lines as a UsageError."""

    def error(self, message):
        """Raise a UsageError instead of exiting."""
        raise UsageError(message)


def _output_dir(args):
    out = args.out or config.output_dir
    os.makedirs(out, exist_ok=True)
    return out


def _require_file(path, flag):
    if not path:
        raise UsageError(f'{flag} is required')
    if not os.path.isfile(path):
        raise UsageError(f'The file "{path}" passed to {flag} does not exist')
    return path


def _training_config(args):
    settings = {}
    if args.config:
        settings = TrainingConfig.from_file(_require_file(args.config, '--config')).to_dict()
    if args.population is not None:
        settings['population'] = args.population
    if 'population' not in settings:
        raise UsageError('The population must be given through --config or --population')
    return TrainingConfig.from_dict(settings).with_overrides(
        seed=args.seed, iterations=args.iterations)


def _load_series(path, average=True):
    series = datapipe.ingest(_require_file(path, '--data'))
    if average:
        series = datapipe.seven_day_average(series)
    return series


def _load_model(path):
    try:
        return SeirModel.load(_require_file(path, '--model'))
    except json.JSONDecodeError as error:
        raise UsageError(f'The model file "{path}" is not valid JSON: {error}')
    except SchemaVersionMismatch:
        raise
    except (KeyError, TypeError, ValueError) as error:
        raise UsageError(f'The model file "{path}" does not hold a fracseir model: {error}')


def cmd_validate(args):
    """
    Measure the convergence order of the derivative scheme on ``(log t)^3``.

    :return: the exit code, non-zero when an order falls short of ``3 - alpha - 0.2``
    :rtype: int
    """
    test_fn = LogPower(3.0)
    failed = False
    for alpha in VALIDATION_ORDERS:
        observed = measured_order(alpha, test_fn, refinements=4)
        expected = 3.0 - alpha
        passed = observed >= expected - VALIDATION_SLACK
        failed = failed or not passed
        print(f'alpha={alpha:.2f} observed={observed:.4f} expected={expected:.2f} '
              f'{"PASS" if passed else "FAIL"}')
    return EXIT_NUMERICAL if failed else EXIT_OK


def _fit_and_report(series, training_config, out):
    result = fit(series, training_config)
    model = result.model
    model.save(os.path.join(out, 'model.json'))
    reporting.write_loss_history(result.history, os.path.join(out, 'loss_history.csv'))
    arrays = datapipe.to_training_arrays(series, training_config.population)
    reporting.plot_fit(model, arrays, os.path.join(out, 'fit.svg'))
    initial = result.history[0].total
    print(f'alpha={model.alpha!r} loss={result.final.total:.6e} '
          f'(initial {initial:.6e})')
    return model, arrays


def cmd_fit(args):
    """Fit a model to a case-count file and write the model, the loss history and plots."""
    training_config = _training_config(args)
    series = _load_series(args.data, average=not args.no_average)
    _fit_and_report(series, training_config, _output_dir(args))
    return EXIT_OK


def _infer_and_report(model, out):
    reporting.write_inference(model, os.path.join(out, 'inference.csv'))
    reporting.write_alpha(model.alpha, os.path.join(out, 'alpha.txt'))
    reporting.plot_inference(model, os.path.join(out, 'inference.svg'))
    print(f'alpha={model.alpha!r}')


def cmd_infer(args):
    """Write the inferred S, E, beta, mu and alpha of a fitted model."""
    model = _load_model(args.model)
    if not model.trained:
        raise UntrainedModelError(f'The model "{args.model}" has not been fitted')
    _infer_and_report(model, _output_dir(args))
    return EXIT_OK


def _truth_new_infected(series, horizon, truth):
    """Return the observed daily new infected on each horizon day, NaN where unreported."""
    by_date = dict(zip(truth.dates, truth.new_infected))
    last = series.dates[-1]
    return np.array([by_date.get(last + datetime.timedelta(days=d), np.nan)
                     for d in range(1, horizon + 1)], dtype=float)


def _forecast_and_report(model, series, horizon, uncertainty, out, truth=None):
    bundle = fodesolver.forecast(model, series, horizon, uncertainty)
    reporting.write_forecast(bundle, os.path.join(out, 'forecast.csv'))
    reporting.write_forecast_beta(bundle, os.path.join(out, 'forecast_beta.csv'))
    arrays = datapipe.to_training_arrays(series, model.constants.population)
    reporting.plot_forecast(bundle, os.path.join(out, 'forecast.svg'), model=model,
                            arrays=arrays, truth=truth)
    if truth is not None:
        coverage = reporting.band_coverage(bundle, truth)
        print(f'{coverage:.0%} of the observed horizon days lie inside the forecast band')
    return bundle


def cmd_forecast(args):
    """Forecast from the end of the training window with the beta uncertainty band."""
    if args.horizon < 1:
        raise UsageError('--horizon must be at least 1')
    if not 0 <= args.uncertainty < 1:
        raise UsageError('--uncertainty must lie in [0, 1)')
    model = _load_model(args.model)
    series = _load_series(args.data, average=not args.no_average)
    out = _output_dir(args)
    observed = None
    if args.truth:
        # Averaging drops the first six truth rows, so the file may start before the horizon
        truth = datapipe.ingest(_require_file(args.truth, '--truth'))
        if not args.no_average:
            truth = datapipe.seven_day_average(truth)
        observed = _truth_new_infected(series, args.horizon, truth)
        log.debug('%d of %d horizon days have observations', np.isfinite(observed).sum(),
                  args.horizon)
    _forecast_and_report(model, series, args.horizon, args.uncertainty, out, truth=observed)
    return EXIT_OK


def cmd_synthesize(args):
    """Write a synthetic case-count file generated with known parameters."""
    if not 0 < args.alpha < 1:
        raise UsageError('--alpha must lie in (0, 1)')
    if not (args.beta >= 0 and args.mu >= 0):
        raise UsageError('--beta and --mu cannot be negative')
    if args.days < 2:
        raise UsageError('--days must be at least 2')
    if not args.population > 0:
        raise UsageError('--population must be positive')
    series, _ = synthetic.generate_case_series(
        alpha=args.alpha, beta=args.beta, mu=args.mu, population=args.population,
        n_days=args.days)
    out = _output_dir(args)
    path = os.path.join(out, 'synthetic_cases.csv')
    reporting.write_case_series(series, path)
    print(f'Wrote {len(series)} days to {path}')
    return EXIT_OK


def cmd_demo(args):
    """
    Run the whole pipeline on the synthetic regime.

    The regime is generated for the training window plus the horizon; the training window is
    fitted without averaging and the remaining days are the forecast's ground truth.

    :return: the exit code
    :rtype: int
    """
    if args.horizon < 1:
        raise UsageError('--horizon must be at least 1')
    out = _output_dir(args)
    if args.population is None and not args.config:
        args.population = synthetic.DEFAULT_POPULATION
    training_config = _training_config(args)
    full, _ = synthetic.generate_case_series(population=training_config.population,
                                             n_days=DEMO_TRAINING_DAYS + args.horizon)
    reporting.write_case_series(full, os.path.join(out, 'synthetic_cases.csv'))
    window = full.head(DEMO_TRAINING_DAYS)
    model, _ = _fit_and_report(window, training_config, out)
    _infer_and_report(model, out)
    _forecast_and_report(model, window, args.horizon, args.uncertainty, out,
                         truth=full.new_infected[DEMO_TRAINING_DAYS:])
    return EXIT_OK


def build_parser():
    """
    Build the command-line parser with one subcommand per operation.

    :rtype: ArgumentParser
    """
    parser = ArgumentParser(
        prog='fracseir',
        description='Calibrate a fractional SEIR model from daily case counts and forecast it')
    subparsers = parser.add_subparsers(dest='command', metavar='command')
    subparsers.required = True

    def add(name, handler, help_text):
        subparser = subparsers.add_parser(name, help=help_text, description=help_text)
        subparser.set_defaults(handler=handler)
        subparser.add_argument('--out', type=str,
                               help=f'The output directory (default: {config.output_dir})')
        return subparser

    add('validate', cmd_validate, 'Measure the convergence order of the derivative scheme')

    def add_training(subparser):
        subparser.add_argument('--config', type=str, help='The training configuration JSON')
        subparser.add_argument('--population', type=float,
                               help='The total population, overriding the configuration')
        subparser.add_argument('--seed', type=int, help='Override the random seed')
        subparser.add_argument('--iterations', type=int,
                               help='Override the number of training iterations')

    def add_data(subparser):
        subparser.add_argument('--data', type=str, help='The daily case-count CSV')
        subparser.add_argument('--no-average', action='store_true',
                               help='Train on the raw counts instead of the 7-day average')

    def add_forecast(subparser):
        subparser.add_argument('--horizon', type=int, default=7,
                               help='The number of days to forecast (default: 7)')
        subparser.add_argument('--uncertainty', type=float, default=0.30,
                               help='The relative half-width of the beta band (default: 0.3)')

    fit_parser = add('fit', cmd_fit, 'Fit the model to a case-count file')
    add_data(fit_parser)
    add_training(fit_parser)

    infer_parser = add('infer', cmd_infer, 'Report the inferred dynamics of a fitted model')
    infer_parser.add_argument('--model', type=str, help='The fitted model JSON')

    forecast_parser = add('forecast', cmd_forecast, 'Forecast with a fitted model')
    forecast_parser.add_argument('--model', type=str, help='The fitted model JSON')
    add_data(forecast_parser)
    add_forecast(forecast_parser)
    forecast_parser.add_argument('--truth', type=str,
                                 help='A case-count CSV covering the forecast horizon')

    demo_parser = add('demo', cmd_demo, 'Fit, infer and forecast the synthetic regime')
    add_training(demo_parser)
    add_forecast(demo_parser)

    synthesize_parser = add('synthesize', cmd_synthesize,
                            'Write a case-count file generated with known parameters')
    synthesize_parser.add_argument('--alpha', type=float, default=0.8)
    synthesize_parser.add_argument('--beta', type=float, default=0.25)
    synthesize_parser.add_argument('--mu', type=float, default=0.05)
    synthesize_parser.add_argument('--days', type=int, default=30)
    synthesize_parser.add_argument('--population', type=float,
                                   default=synthetic.DEFAULT_POPULATION)
    return parser


def main(argv=None):
    """
    Run a fracseir command.

    :param list argv: (optional) the arguments, ``sys.argv[1:]`` by default
    :return: 0 on success, 1 on a usage error, 2 on a data error, 3 on a numerical failure
    :rtype: int
    """
    try:
        args = build_parser().parse_args(argv)
        return args.handler(args)
    except (UsageError, InvalidConfiguration, SchemaVersionMismatch,
            UntrainedModelError) as error:
        print(f'error: {error}', file=sys.stderr)
        return EXIT_USAGE
    except (DataError, GridMismatch) as error:
        print(f'data error: {error}', file=sys.stderr)
        return EXIT_DATA
    except (TrainingDivergence, SolverError) as error:
        print(f'numerical failure: {error}', file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as error:
        # Arguments are validated up front, so the rest come from the computation, e.g. a
        # fitted order that reached 1
        print(f'numerical failure: {error}', file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == '__main__':
    sys.exit(main())
