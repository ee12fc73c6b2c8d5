import pytest

# acceptance criteria append (number, title, passed, detail) here
CRITERIA = []


@pytest.fixture
def criterion():
    def record(number, title, passed, detail=""):
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        CRITERIA.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(CRITERIA, key=lambda c: c[0]):
        terminalreporter.write_line(line)

