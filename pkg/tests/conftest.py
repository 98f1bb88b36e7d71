import numpy as np
import pytest

from kfstab.model import FiniteMarkovChannel, MeasurementAlphabet, SystemModel
from kfstab.schedule import alternating_sensors

ALPHA1, ALPHA2 = 1.3, 1.1


@pytest.fixture
def two_sensor():
    """Factory for the alternating two-sensor system with i.i.d. loss."""
    def make(lam=0.25, alpha1=ALPHA1, alpha2=ALPHA2):
        return alternating_sensors(alpha1, alpha2, lam)
    return make


def parity_system(q=0.5):
    """A = diag(2, -2) seen through C = [1 1]: blind whenever all received samples share a parity."""
    alphabet = MeasurementAlphabet([([[0, 0]], [[1]]), ([[1, 1]], [[1]])], ("lost", "sum"))
    return SystemModel(np.diag([2.0, -2.0]), q * np.eye(2), alphabet)


def two_state_channel(a=0.4, b=0.3):
    """State 0 loses the packet, state 1 delivers it."""
    k = np.array([[1 - a, a], [b, 1 - b]])
    return FiniteMarkovChannel((k,), np.array([0, 1]))


def scalar_system(a=1.5, q=1.0, r=1.0):
    alphabet = MeasurementAlphabet([([[0]], [[r]]), ([[1]], [[r]])], ("lost", "received"))
    return SystemModel([[a]], [[q]], alphabet)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
