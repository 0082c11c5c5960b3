import numpy as np
import pytest

from sdecgmca.sphere import alm_norm


def rel_err(a, b):
    """Relative error of ``a`` against the reference ``b`` (harmonic norm)."""
    return alm_norm(np.asarray(a) - np.asarray(b)) / alm_norm(b)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for num in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[num])
