import pytest

from dpkm.cli import bundled_lung_csv, ingest_csv

# criterion number -> (passed, detail); filled by test_acceptance.py
CRITERIA: dict = {}


@pytest.fixture(scope="session")
def lung():
    data, _ = ingest_csv(bundled_lung_csv())
    return data


@pytest.fixture(scope="session")
def criteria_log():
    return CRITERIA


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        passed, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
