import pytest

from lfratio.numcore import make_rng


@pytest.fixture
def rng():
    return make_rng(20240601)




def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def record(request):
    """Log one PASS/FAIL line for an acceptance criterion (echoed in the terminal summary)."""

    def _record(number, title, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} | {detail}"
        request.config.acceptance_lines.append(line)
        print(line)
        return passed

    return _record
