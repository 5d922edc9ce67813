import pytest

from sql2tool import bundled
from sql2tool.cli import build_artifacts

_ACCEPTANCE_RESULTS: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(number, description): acceptance criterion test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker and report.when == "call":
        number, description = marker.args
        _ACCEPTANCE_RESULTS[number] = (
            "PASS" if report.passed else "FAIL", description)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for number in sorted(_ACCEPTANCE_RESULTS):
        status, description = _ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"[{status}] criterion {number}: {description}")


@pytest.fixture(scope="session")
def db_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("db")
    bundled.create_databases(root)
    return root


@pytest.fixture(scope="session")
def corpus():
    return bundled.load_corpus()


@pytest.fixture(scope="session")
def build(corpus, db_root, tmp_path_factory):
    work = tmp_path_factory.mktemp("build_work")
    return build_artifacts(corpus, db_root, workdir=work)


def by_query_fragment(rows, fragment):
    matches = [row for row in rows if fragment in row["query"]]
    assert matches, f"no dataset row matches {fragment!r}"
    return matches[0]
