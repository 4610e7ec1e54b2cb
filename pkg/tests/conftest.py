import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "invop", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("invop")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rel_err(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    den = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / den)


def real_mtf(rng, shape, dims=None):
    """Transfer function of a random real kernel (conjugate symmetric)."""
    from invop.tensor import dft

    return dft(rng.standard_normal(shape), dims)


def pytest_terminal_summary(terminalreporter):
    import _report

    if _report.LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_report.LINES):
            terminalreporter.write_line(_report.LINES[k])
