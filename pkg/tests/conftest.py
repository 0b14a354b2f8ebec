import numpy as np
import pytest

from hlwnet.env import build_topology


@pytest.fixture(scope="session")
def topo():
    return build_topology()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion id -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"C{cid} {'PASS' if ok else 'FAIL'}: {detail}")
