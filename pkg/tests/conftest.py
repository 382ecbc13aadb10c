from pathlib import Path

import pytest

from vehsec.attackgraph import build_superposed_graph
from vehsec.model import load_variants
from vehsec.vulndb import VulnStore, annotate_variants

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"
TRIO_FILES = [FIXTURES / f"trio_{v}.sutm" for v in ("I", "II", "III")]

_criteria: dict = {}


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def trio_variants():
    return load_variants(TRIO_FILES)


@pytest.fixture(scope="session")
def trio_store():
    return VulnStore.load([FIXTURES / "trio_feed.txt"])


@pytest.fixture(scope="session")
def trio_graph(trio_variants, trio_store):
    return build_superposed_graph(trio_variants, annotate_variants(trio_variants, trio_store), "t")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    crit = getattr(report, "criterion", None)
    if crit is not None:
        _criteria.setdefault(crit, []).append(report.passed)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        rep.criterion = marker.args


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for (num, title), results in sorted(_criteria.items()):
        status = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"criterion {num}: {status}  {title}")
