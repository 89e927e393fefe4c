"""
Shared fixtures for the wasscause test suite
"""

import pytest

from wasscause import create_app
from wasscause.models import LevelGrid
from wasscause.services.simulation import dgp_sample


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run slow acceptance tests')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def app():
    return create_app('testing')


@pytest.fixture
def grid():
    return LevelGrid(51)


@pytest.fixture(scope='session')
def dgp():
    """A moderate linear-scenario draw shared by the estimator tests"""
    return dgp_sample(400, 201, 'linear', seed=123, grid=LevelGrid(51))
