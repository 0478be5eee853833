import numpy as np
import pytest
from scipy.integrate import quad

from bingham_control import SolverConfig, solve_flow
from bingham_control.problems import channel_problem

_SOLVES = {}


def channel_solve(g=0.0, G=1.0, eps=1e-6, ny=64, **kw):
    """Session-wide cache of channel solves (simple-shear parameters, mu = 1, h = 1)."""
    key = (g, G, eps, ny, tuple(sorted(kw.items())))
    if key not in _SOLVES:
        problem = channel_problem(g=g, G=G, eps=eps, ny=ny)
        _SOLVES[key] = (problem, solve_flow(problem, SolverConfig(**kw)))
    return _SOLVES[key]


def shear_profile_quadrature(g, mu, G, h, y):
    """Independent channel oracle: integrate the shear rate from the wall.

    Force balance gives the shear stress ``tau(y) = -G y``; the Bingham law
    yields ``|du/dy| = (|tau| - g)/mu`` where ``|tau| > g`` and 0 otherwise.
    """
    def rate(s):
        return max(G * s - g, 0.0) / mu
    return quad(rate, abs(y), h, points=[min(g / G, h)])[0]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail):
    """Store one acceptance line for the terminal summary and return ``passed``."""
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
