import importlib

import pytest

from halobench import _kernels_py, kernels

BACKENDS = {"python": _kernels_py}
try:
    BACKENDS["cython"] = importlib.import_module("halobench._kernels")
except ImportError:  # extension not built; fallback alone is exercised
    pass


@pytest.fixture(params=sorted(BACKENDS))
def backend(request, monkeypatch):
    """Route meshdata through one kernel backend for the duration of a test."""
    mod = BACKENDS[request.param]
    monkeypatch.setattr(kernels, "pack_range", mod.pack_range)
    monkeypatch.setattr(kernels, "unpack_range", mod.unpack_range)
    return request.param


_acceptance = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    crit = next((k for k in report.keywords if k.startswith("criterion_")), None)
    if crit is None:
        return
    prev = _acceptance.get(crit, True)
    _acceptance[crit] = prev and report.passed


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_acceptance, key=lambda c: int(c.split("_")[1])):
        terminalreporter.write_line(f"{crit}: {'PASS' if _acceptance[crit] else 'FAIL'}")


def pytest_configure(config):
    for i in range(1, 8):
        config.addinivalue_line("markers", f"criterion_{i}: acceptance criterion {i}")
