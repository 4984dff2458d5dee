import numpy as np
import pytest

from urbanecho.scene import GeoLocation, Scene
from urbanecho.synthetic import synthetic_scene


def box(x0, y0, x1, y1):
    return ((x0, y0), (x1, y0), (x1, y1), (x0, y1))


@pytest.fixture
def empty_scene():
    return Scene()


@pytest.fixture
def north_block():
    """One 50 m wide building 40 m north of the source."""
    return Scene(buildings=(box(-25.0, 40.0, 25.0, 60.0),), origin=GeoLocation(52.52, 13.405, "berlin"))


@pytest.fixture
def two_blocks():
    return Scene(buildings=(box(-25.0, 40.0, 25.0, 60.0), box(60.0, -80.0, 90.0, -20.0)))


@pytest.fixture(scope="session")
def city():
    return synthetic_scene(11, n_buildings=25)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results):
        terminalreporter.write_line(results[key])
