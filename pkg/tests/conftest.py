import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from nlwave.nash_moser import Problem, SolverParams, run  # noqa: E402
from nlwave.spectral import FourierField, NonlinearitySpec, TimeFunction  # noqa: E402

settings.register_profile("ci", max_examples=40, deadline=None, derandomize=True)
settings.load_profile("ci")

ACCEPTANCE_RESULTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


def random_field(rng, J, L, scale=1.0, decay=0.0):
    c = rng.standard_normal((2 * J + 1, 2 * L + 1)) + 1j * rng.standard_normal((2 * J + 1, 2 * L + 1))
    if decay:
        j = np.arange(-J, J + 1)[:, None]
        l = np.arange(-L, L + 1)[None, :]
        c = c * np.exp(-decay * (np.abs(j) + np.abs(l)))
    return FourierField(scale * c).symmetrized()


def random_w(rng, J, L, scale=1.0, decay=0.0):
    c = random_field(rng, J, L, scale, decay).coeffs.copy()
    c[J] = 0
    return FourierField(c)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def test_problem():
    a = TimeFunction.from_trig([("const", 1.0), ("cos", 1, 0.3)])
    f = NonlinearitySpec.from_terms([{"power": 0, "t": ["cos", 1], "x": ["cos", 1]}, {"power": 2}])
    return Problem(a=a, f=f, eps=1e-3, omega=1.37)


@pytest.fixture(scope="session")
def test_solution(test_problem):
    return run(test_problem, SolverParams())
