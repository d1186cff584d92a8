import numpy as np
import pytest

from covsteer.sysdata import GaussianMoments, double_integrator
from covsteer.steer import SteeringSpec

ACCEPTANCE_LINES = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> str:
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'} {title}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def di_system():
    return double_integrator(1.0, 0.1)


@pytest.fixture
def di_spec():
    init = GaussianMoments([30.0, 1.0], np.diag([1.0, 0.5]))
    term = GaussianMoments([-10.0, 0.0], 0.5 * np.eye(2))
    return SteeringSpec.constant(10, 0.1 * np.eye(2), np.eye(1), init, term)


def rand_pd(rng, n, lo=0.5, hi=1.5):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return q @ np.diag(rng.uniform(lo, hi, n)) @ q.T
