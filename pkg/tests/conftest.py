import warnings

import pytest

from uqvsim.index import build_index
from uqvsim.lm import background_model
from uqvsim.synthetic import generate_collection


@pytest.fixture(scope="session")
def synth():
    return generate_collection()


@pytest.fixture(scope="session")
def synth_index(synth):
    return build_index(synth.docs)


@pytest.fixture(scope="session")
def synth_background(synth_index):
    return background_model(synth_index)


@pytest.fixture
def no_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        yield


_ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        _ACCEPTANCE[number] = (status, title)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        status, title = _ACCEPTANCE[number]
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {title}")
