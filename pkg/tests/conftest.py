from __future__ import annotations

import pytest

from care_rag import build_index, configure_scripted
from care_rag.config import BackendSettings, RunConfig
from care_rag.retrieval import LocalRetriever

import golden

_acceptance: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    marker = getattr(report, "acceptance_label", None)
    if marker is None:
        return
    if report.when == "call" or report.outcome != "passed":
        # A setup/teardown failure overrides a passing call.
        prev = _acceptance.get(report.nodeid)
        if prev is None or prev[1] == "PASS":
            _acceptance[report.nodeid] = (marker, "PASS" if report.passed else "FAIL")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("acceptance")
    if m is not None:
        rep.acceptance_label = m.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for label, status in sorted(_acceptance.values()):
        terminalreporter.write_line(f"{status}  {label}")


@pytest.fixture
def settings():
    return BackendSettings(kind="scripted", transcript="unused.json")


@pytest.fixture
def base_config(settings):
    return RunConfig(backend=settings, concurrency=1)


@pytest.fixture
def golden_backend():
    return configure_scripted(golden.golden_rules())


@pytest.fixture
def golden_retriever():
    return LocalRetriever(build_index(golden.golden_corpus()))
