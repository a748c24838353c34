# SPDX-License-Identifier: GPL-3.0+

import datetime
import json

import mock
import pandas as pd
import pytest

from fracseir.client import cli, reporting
from fracseir.processor.configuration import LOSS_TERMS
from fracseir.processor.datapipe import ingest
from fracseir.processor.error import SolverError, TrainingDivergence
from fracseir.processor.seirmodel import FitResult, LossReport, SeirModel
from tests.factories import CaseSeriesFactory, SeirModelFactory

START = datetime.date(2022, 3, 5)


@pytest.fixture
def config_file(tmp_path):
    """Return a configuration that trains in a fraction of a second."""
    path = tmp_path / 'config.json'
    path.write_text(json.dumps({
        'population': 1e6,
        'tau': 0.5,
        'iterations': 3,
        'compartment_layers': [4],
        'rate_layers': [3],
    }))
    return str(path)


def _cases(tmp_path, n_days=6, name='cases.csv', start_date=START):
    path = str(tmp_path / name)
    reporting.write_case_series(CaseSeriesFactory.build(n_days, start_date=start_date), path)
    return path


def _fitted_model(tmp_path, n_days=5, trained=True):
    data = CaseSeriesFactory.build(n_days, start_date=START)
    outputs = {'i': data.current_infected[-1] / 1e6, 'r': data.cum_removed[-1] / 1e6,
               'i_cum': data.cum_infected[-1] / 1e6}
    model = SeirModelFactory.constant(n_days=n_days, outputs=outputs, start_date=START,
                                      trained=trained)
    path = str(tmp_path / 'model.json')
    model.save(path)
    return path


def test_validate(capsys):
    """Test that the scheme validation passes for every tested order."""
    assert cli.main(['validate']) == cli.EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3
    assert lines[0].startswith('alpha=0.25 ')
    assert all(line.endswith('PASS') for line in lines)


@mock.patch('fracseir.client.cli.measured_order', return_value=1.0)
def test_validate_failure(mock_order, capsys):
    """Test that an order below the threshold exits with a numerical failure."""
    assert cli.main(['validate']) == cli.EXIT_NUMERICAL
    assert 'FAIL' in capsys.readouterr().out
    assert mock_order.call_count == 3


def test_fit_without_data(tmp_path, config_file):
    """Test that a missing --data is a usage error."""
    assert cli.main(['fit', '--config', config_file, '--out', str(tmp_path)]) == cli.EXIT_USAGE
    path = str(tmp_path / 'missing.csv')
    rv = cli.main(['fit', '--config', config_file, '--data', path, '--out', str(tmp_path)])
    assert rv == cli.EXIT_USAGE


def test_fit_without_population(tmp_path):
    """Test that fitting needs a population."""
    rv = cli.main(['fit', '--data', _cases(tmp_path), '--no-average', '--out', str(tmp_path)])
    assert rv == cli.EXIT_USAGE


def test_fit_date_gap(tmp_path, config_file, capsys):
    """Test that a gap in the dates is a data error."""
    path = tmp_path / 'cases.csv'
    path.write_text('date,new_infected,new_recovered,new_dead\n'
                    '2022-03-05,10,0,0\n2022-03-07,10,0,0\n')
    rv = cli.main(['fit', '--config', config_file, '--data', str(path), '--out',
                   str(tmp_path)])
    assert rv == cli.EXIT_DATA
    assert '2022-03-06' in capsys.readouterr().err


def test_fit_too_short_for_average(tmp_path, config_file):
    """Test that fewer than seven days cannot be averaged."""
    rv = cli.main(['fit', '--config', config_file, '--data', _cases(tmp_path, 5), '--out',
                   str(tmp_path)])
    assert rv == cli.EXIT_DATA


def test_fit(tmp_path, config_file, capsys):
    """Test that fit writes the model, the loss history and the plot."""
    out = tmp_path / 'out'
    rv = cli.main(['fit', '--config', config_file, '--data', _cases(tmp_path, 12), '--out',
                   str(out)])
    assert rv == cli.EXIT_OK
    model = SeirModel.load(str(out / 'model.json'))
    assert model.trained
    assert model.mesh.n_days == 6
    assert model.start_date == datetime.date(2022, 3, 11)
    history = pd.read_csv(str(out / 'loss_history.csv'))
    assert len(history) == 4
    assert history['iteration'].tolist() == [0, 1, 2, 3]
    assert (out / 'fit.svg').exists()
    assert capsys.readouterr().out.startswith('alpha=')


def test_fit_is_reproducible(tmp_path, config_file):
    """Test that two fits with the same seed write identical models and plots."""
    data = _cases(tmp_path, 6)
    outputs = []
    for name in ('first', 'second'):
        out = tmp_path / name
        cli.main(['fit', '--config', config_file, '--data', data, '--no-average', '--out',
                  str(out)])
        outputs.append(((out / 'model.json').read_bytes(), (out / 'fit.svg').read_bytes()))
    assert outputs[0] == outputs[1]


def test_fit_overrides(tmp_path, config_file):
    """Test that --seed and --iterations override the configuration file."""
    out = tmp_path / 'out'
    cli.main(['fit', '--config', config_file, '--data', _cases(tmp_path, 6), '--no-average',
              '--iterations', '1', '--seed', '3', '--out', str(out)])
    assert len(pd.read_csv(str(out / 'loss_history.csv'))) == 2


@mock.patch('fracseir.client.cli.fit')
def test_fit_divergence(mock_fit, tmp_path, config_file, capsys):
    """Test that a diverging loss is a numerical failure."""
    mock_fit.side_effect = TrainingDivergence(5, 'residual_s', float('nan'))
    rv = cli.main(['fit', '--config', config_file, '--data', _cases(tmp_path, 6),
                   '--no-average', '--out', str(tmp_path)])
    assert rv == cli.EXIT_NUMERICAL
    assert 'residual_s' in capsys.readouterr().err


def test_infer(tmp_path, capsys):
    """Test that infer writes the inferred series and alpha."""
    out = tmp_path / 'out'
    model_path = _fitted_model(tmp_path)
    assert cli.main(['infer', '--model', model_path, '--out', str(out)]) == cli.EXIT_OK
    frame = pd.read_csv(str(out / 'inference.csv'))
    assert list(frame.columns) == ['day', 'date', 'S', 'E', 'beta', 'mu', 'I', 'R', 'I_cum']
    assert frame['day'].tolist() == [1, 2, 3, 4, 5]
    assert frame['date'].iloc[0] == '2022-03-05'
    assert frame['beta'].iloc[0] == pytest.approx(0.3)
    alpha = SeirModel.load(model_path).alpha
    assert (out / 'alpha.txt').read_text() == f'{alpha!r}\n'
    assert (out / 'inference.svg').exists()
    assert repr(alpha) in capsys.readouterr().out


def test_infer_untrained(tmp_path):
    """Test that an unfitted model is a usage error."""
    model_path = _fitted_model(tmp_path, trained=False)
    assert cli.main(['infer', '--model', model_path, '--out', str(tmp_path)]) == cli.EXIT_USAGE


def test_infer_schema_mismatch(tmp_path):
    """Test that a model file with another schema version is a usage error."""
    path = tmp_path / 'model.json'
    data = SeirModelFactory.build(trained=True).to_dict()
    data['schema_version'] = 99
    path.write_text(json.dumps(data))
    assert cli.main(['infer', '--model', str(path), '--out', str(tmp_path)]) == cli.EXIT_USAGE


def test_infer_invalid_json(tmp_path):
    """Test that a model file that is not JSON is a usage error."""
    path = tmp_path / 'model.json'
    path.write_text('{"schema_version": ')
    assert cli.main(['infer', '--model', str(path), '--out', str(tmp_path)]) == cli.EXIT_USAGE


def test_forecast(tmp_path):
    """Test that forecast writes 21 rows, the beta band and the plot."""
    out = tmp_path / 'out'
    rv = cli.main(['forecast', '--model', _fitted_model(tmp_path), '--data',
                   _cases(tmp_path, 5), '--no-average', '--out', str(out)])
    assert rv == cli.EXIT_OK
    frame = pd.read_csv(str(out / 'forecast.csv'))
    assert len(frame) == 21
    assert list(frame.columns) == ['band', 'day', 'date', 'S', 'E', 'I', 'R', 'I_cum', 'I_new']
    assert frame['band'].value_counts().to_dict() == {'central': 7, 'upper': 7, 'lower': 7}
    assert frame['date'].iloc[0] == '2022-03-10'
    beta = pd.read_csv(str(out / 'forecast_beta.csv'))
    assert len(beta) == 7
    assert beta['upper'].iloc[0] == pytest.approx(1.3 * beta['central'].iloc[0])
    assert (out / 'forecast.svg').exists()


def test_forecast_with_truth(tmp_path, capsys):
    """Test that observed horizon days are compared with the forecast band."""
    truth = _cases(tmp_path, 12, name='truth.csv')
    rv = cli.main(['forecast', '--model', _fitted_model(tmp_path), '--data',
                   _cases(tmp_path, 5), '--no-average', '--truth', truth, '--out',
                   str(tmp_path / 'out')])
    assert rv == cli.EXIT_OK
    assert 'of the observed horizon days lie inside the forecast band' in (
        capsys.readouterr().out)


@pytest.mark.parametrize('flags', [['--horizon', '0'], ['--uncertainty', '1.5']])
def test_forecast_invalid_flags(tmp_path, flags):
    """Test that an empty horizon or an invalid band width is a usage error."""
    rv = cli.main(['forecast', '--model', _fitted_model(tmp_path), '--data',
                   _cases(tmp_path, 5), '--no-average', '--out', str(tmp_path), *flags])
    assert rv == cli.EXIT_USAGE


def test_forecast_window_mismatch(tmp_path):
    """Test that data not spanning the model's window is a data error."""
    rv = cli.main(['forecast', '--model', _fitted_model(tmp_path), '--data',
                   _cases(tmp_path, 6), '--no-average', '--out', str(tmp_path)])
    assert rv == cli.EXIT_DATA


@mock.patch('fracseir.client.cli.fodesolver.forecast')
def test_forecast_solver_failure(mock_forecast, tmp_path):
    """Test that a failing solver step is a numerical failure."""
    mock_forecast.side_effect = SolverError(4, 'r dropped to -1')
    rv = cli.main(['forecast', '--model', _fitted_model(tmp_path), '--data',
                   _cases(tmp_path, 5), '--no-average', '--out', str(tmp_path)])
    assert rv == cli.EXIT_NUMERICAL


def test_synthesize(tmp_path):
    """Test that synthesize writes a file the ingestion accepts."""
    rv = cli.main(['synthesize', '--days', '8', '--out', str(tmp_path)])
    assert rv == cli.EXIT_OK
    series = ingest(str(tmp_path / 'synthetic_cases.csv'))
    assert len(series) == 8
    assert series.start_date == datetime.date(2022, 3, 5)
    assert series.new_infected[0] == 1000.0


@pytest.mark.parametrize('flags', [
    ['--alpha', '1.5'],
    ['--alpha', '1'],
    ['--alpha', '0'],
    ['--beta', '-0.1'],
    ['--days', '1'],
    ['--population', '0'],
])
def test_synthesize_invalid_flags(tmp_path, flags, capsys):
    """Test that parameters the solver cannot use are usage errors."""
    rv = cli.main(['synthesize', '--out', str(tmp_path), *flags])
    assert rv == cli.EXIT_USAGE
    assert 'error: ' in capsys.readouterr().err
    assert not (tmp_path / 'synthetic_cases.csv').exists()


@mock.patch('fracseir.processor.seirmodel.build_weights')
def test_fit_order_out_of_range(mock_weights, tmp_path, config_file, capsys):
    """Test that a fitted order leaving (0, 1) is a numerical failure."""
    mock_weights.side_effect = ValueError('The fractional order must lie in (0, 1), got 1.0')
    rv = cli.main(['fit', '--config', config_file, '--data', _cases(tmp_path, 6),
                   '--no-average', '--out', str(tmp_path)])
    assert rv == cli.EXIT_NUMERICAL
    assert 'got 1.0' in capsys.readouterr().err


def test_infer_invalid_model(tmp_path):
    """Test that a model file with invalid constants is a usage error."""
    path = tmp_path / 'model.json'
    data = SeirModelFactory.build(trained=True).to_dict()
    data['constants']['population'] = -1.0
    path.write_text(json.dumps(data))
    assert cli.main(['infer', '--model', str(path), '--out', str(tmp_path)]) == cli.EXIT_USAGE
    del data['window']
    path.write_text(json.dumps(data))
    assert cli.main(['infer', '--model', str(path), '--out', str(tmp_path)]) == cli.EXIT_USAGE


@pytest.mark.parametrize('argv', [[], ['calibrate'], ['fit', '--unknown']])
def test_invalid_command_line(argv):
    """Test that an invalid command line is a usage error."""
    assert cli.main(argv) == cli.EXIT_USAGE


def _constant_fit(series, training_config):
    population = training_config.population
    outputs = {'i': series.current_infected[-1] / population,
               'r': series.cum_removed[-1] / population,
               'i_cum': series.cum_infected[-1] / population}
    model = SeirModelFactory.constant(n_days=len(series), tau=training_config.tau,
                                      population=population, outputs=outputs,
                                      start_date=series.start_date)
    report = LossReport.from_terms({name: 0.0 for name in LOSS_TERMS}, 0, model.alpha)
    return FitResult(model=model, history=[report])


@mock.patch('fracseir.client.cli.fit', side_effect=_constant_fit)
def test_demo(mock_fit, tmp_path, config_file, capsys):
    """Test that the demo fits, infers and forecasts the synthetic regime."""
    out = tmp_path / 'out'
    rv = cli.main(['demo', '--config', config_file, '--horizon', '3', '--out', str(out)])
    assert rv == cli.EXIT_OK
    for name in ('synthetic_cases.csv', 'model.json', 'loss_history.csv', 'fit.svg',
                 'inference.csv', 'alpha.txt', 'inference.svg', 'forecast.csv',
                 'forecast_beta.csv', 'forecast.svg'):
        assert (out / name).exists()
    assert len(ingest(str(out / 'synthetic_cases.csv'))) == cli.DEMO_TRAINING_DAYS + 3
    window = mock_fit.call_args[0][0]
    assert len(window) == cli.DEMO_TRAINING_DAYS
    assert window.start_date == datetime.date(2022, 3, 5)
    assert len(pd.read_csv(str(out / 'forecast.csv'))) == 9
    assert 'lie inside the forecast band' in capsys.readouterr().out
