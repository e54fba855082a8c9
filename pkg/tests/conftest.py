"""Shared helpers and the acceptance summary printed at the end of the session."""

import numpy as np
import pytest

from palmsim.measure import MarkField, MeasureWindow, WeightedSample

ACCEPTANCE_LINES = {}


def make_sample(atoms=None, masses=None, density=None, dim=1, window=8, grid=1, weight=1.0, marks=None):
    if atoms is not None:
        atoms = np.asarray(atoms, float).reshape(-1, dim)
    measure = MeasureWindow(dim, window, atoms, masses, density, grid)
    field = MarkField(dim, window, grid, marks)
    return WeightedSample(field, measure, weight)


def record_acceptance(number, passed, detail):
    ACCEPTANCE_LINES[number] = f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
