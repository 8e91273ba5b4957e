import numpy as np
import pytest


def random_spd(rng: np.random.Generator, d: int, cond: float = 100.0) -> np.ndarray:
    """Random SPD matrix with eigenvalues log-spaced over ``cond``."""
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    vals = np.logspace(0, np.log10(cond), d) * rng.uniform(0.1, 10)
    return (q * vals) @ q.T


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


_CRITERIA: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, text): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    num, text = marker.args
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        _CRITERIA[num] = ("PASS" if rep.passed else "FAIL", text)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA, key=int):
        status, text = _CRITERIA[num]
        terminalreporter.write_line(f"AC{num} {status}: {text}")
