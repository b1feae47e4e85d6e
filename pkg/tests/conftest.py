import numpy as np
import pytest

from kinoplan.robotmodel import PlanarArmModel, default_model


def two_link(gravity=(0.0, 0.0), lengths=(1.0, 1.0)):
    l = np.asarray(lengths, float)
    return PlanarArmModel(l, np.ones(2), l / 2, l**2 / 12, np.ones(2), np.ones(2), np.ones(2),
                          gravity=gravity)


@pytest.fixture
def arm():
    return default_model()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(k, passed, detail)``."""
    def record(k, passed, detail):
        _ACCEPTANCE[k] = (bool(passed), detail)
        print(f"criterion {k}: {'PASS' if passed else 'FAIL'} ({detail})")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} ({detail})")
