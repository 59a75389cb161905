import numpy as np
import pytest

from odsdem.synth import DgpConfig, gen_instance

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _ACCEPTANCE[report.nodeid.split("::")[-1]] = report.outcome
    elif report.when == "setup" and report.outcome != "passed" and "test_acceptance.py" in report.nodeid:
        _ACCEPTANCE[report.nodeid.split("::")[-1]] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        status = "PASS" if _ACCEPTANCE[name] == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def instance():
    return gen_instance(DgpConfig())


@pytest.fixture(scope="session")
def null_instance():
    return gen_instance(DgpConfig(lam=0.0))


def random_weights(rng, n, extent=None, d_c=120.0):
    """Cutoff weights on uniform random planar points (isolated units kept)."""
    import warnings

    from odsdem.weights import Centroids, build_weights

    extent = extent or 60.0 * np.sqrt(n)
    c = Centroids(tuple(range(n)), rng.uniform(0, extent, (n, 2)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return build_weights(c, d_c)
