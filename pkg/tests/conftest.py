import pytest

from mobilefbe.ciphers import XtsStandIn, register_adiantum

# criterion id -> (passed, detail); filled by test_acceptance, printed at the end of the run
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture(autouse=True, scope="session")
def adiantum_standin():
    previous = register_adiantum(XtsStandIn())
    yield
    register_adiantum(previous)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {cid}: {detail}")
