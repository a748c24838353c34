# SPDX-License-Identifier: GPL-3.0+

import os

import matplotlib
import pytest

os.environ.setdefault('FRACSEIR_TESTING', 'true')
matplotlib.use('Agg')


def pytest_addoption(parser):
    """Add the --runslow option."""
    parser.addoption('--runslow', action='store_true', default=False,
                     help='run the long training tests')


def pytest_collection_modifyitems(config, items):
    """Skip the tests marked as slow unless --runslow is given."""
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow to run')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def run_before_tests():
    """Pytest fixture that closes the figures a test left open."""
    yield
    import matplotlib.pyplot as plt
    plt.close('all')
