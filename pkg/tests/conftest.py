import numpy as np
import pytest

from polarfield.core import LightRig
from polarfield.io import read_manifest, write_synthetic_capture
from polarfield.synth import mixed_material

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and not report.passed):
        ok, _, _ = _RESULTS.get(number, (True, title, ""))
        crash = getattr(report.longrepr, "reprcrash", None)
        detail = "" if report.passed else (crash.message.splitlines()[0] if crash else str(report.longrepr)[:120])
        _RESULTS[number] = (ok and report.passed, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        ok, title, detail = _RESULTS[number]
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  ({detail[:120]})"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_capture(tmp_path_factory):
    """8x9 mixed-material capture on disk with 120 spiral lights."""
    out = tmp_path_factory.mktemp("capture")
    mat = mixed_material(8, 9, seed=5)
    write_synthetic_capture(out, mat, LightRig.spiral(120), seed=5)
    return out / "manifest.json", mat


@pytest.fixture
def manifest(small_capture):
    return read_manifest(small_capture[0])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
