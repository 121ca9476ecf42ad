import pytest

from snvspin.fitting import run_staged_pipeline
from snvspin.synthetic import reference_suite


@pytest.fixture(scope="session")
def suite():
    return reference_suite()


@pytest.fixture(scope="session")
def pipeline_result(suite):
    return run_staged_pipeline(suite)


@pytest.fixture(scope="session")
def bundled():
    from pathlib import Path

    import snvspin

    return Path(snvspin.__file__).parent / "data" / "synthetic"


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record and print one PASS/FAIL line per acceptance criterion."""

    def record(number, title, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number} ({title}): {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
