import numpy as np
import pytest

from curvlab.surface import generate, uniformize


@pytest.fixture(scope="session")
def oct6():
    return uniformize(generate("regular-octagon-genus2", 6), tol=1e-11)


@pytest.fixture(scope="session")
def oct12():
    return uniformize(generate("regular-octagon-genus2", 12), tol=1e-11)


@pytest.fixture(scope="session")
def oct25():
    return uniformize(generate("regular-octagon-genus2", 25), tol=1e-11)


@pytest.fixture(scope="session")
def torus():
    return generate("flat-torus", 6)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, collected by tests/test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line("criterion %2d: %s  %s" % (n, "PASS" if ok else "FAIL", detail))
