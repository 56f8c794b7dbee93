import numpy as np
import pytest

from cesp.problems import TOY_CRITICAL_POINTS, toy_problem

SQ2 = np.sqrt(2.0)
Z0 = np.array(TOY_CRITICAL_POINTS["z0"])
Z1 = np.array(TOY_CRITICAL_POINTS["z1"])
Z2 = np.array(TOY_CRITICAL_POINTS["z2"])


@pytest.fixture
def toy():
    return toy_problem()


@pytest.fixture
def toy_rho1():
    return toy_problem(rho_x=1.0, rho_y=1.0)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if not test_acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, (ok, detail) in sorted(test_acceptance.RESULTS.items()):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")
