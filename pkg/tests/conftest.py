import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from dfsurrogate.ingest import build_sequence, window_stream  # noqa: E402
from dfsurrogate.synth import default_spec, generate  # noqa: E402

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def synth_trace():
    return generate(default_spec(seed=0))


@pytest.fixture(scope="session")
def synth_sequence(synth_trace):
    t = synth_trace
    return build_sequence(t.topology, t.snapshots, t.iterations, t.placement, "MILC")


@pytest.fixture(scope="session")
def synth_samples(synth_sequence):
    return window_stream(synth_sequence, 8, 2)


# one PASS/FAIL line per acceptance criterion in the terminal summary
_acceptance: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.failed):
        status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _acceptance[number] = (status, title)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        status, title = _acceptance[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {title}")
