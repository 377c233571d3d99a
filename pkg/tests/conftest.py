import numpy as np
import pytest


def dft(x, n):
    """Direct O(N^2) DFT of ``x`` zero padded to ``n`` points."""
    buf = np.zeros(n, dtype=complex)
    buf[: len(x)] = x
    k = np.arange(n)
    # integer phase index keeps the angles exact
    phase = (np.outer(k, k) % n) * (-2j * np.pi / n)
    return np.exp(phase) @ buf


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# -- acceptance summary -------------------------------------------------------------------------
# Tests named ``test_criterion_<n>_...`` in test_acceptance.py report one line each
# at the end of the session.

_CRITERIA = {}
_DETAILS = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1].split("[")[0]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    if report.failed:
        _CRITERIA[name] = "FAIL"
    elif report.when == "call":
        _CRITERIA.setdefault(name, "PASS" if report.passed else "SKIP")
    for key, value in report.user_properties if report.when == "call" else ():
        if key == "detail":
            _DETAILS.setdefault(name, []).append(str(value))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    key = lambda n: int(n.split("_")[2])
    for name in sorted(_CRITERIA, key=key):
        label = " ".join(name.split("_")[3:])
        detail = "; ".join(_DETAILS.get(name, []))
        line = f"criterion {key(name):2d} {_CRITERIA[name]:4s} {label}"
        terminalreporter.write_line(f"{line}  ({detail})" if detail else line)
