import numpy as np
import pytest

from g2hf.params import as_params, init_uniform
from g2hf.rng import Rng
from g2hf.tensor import Tensor


@pytest.fixture
def rng():
    return Rng(1234)


def seeded(shapes, seed, bias_bound=0.1):
    """Random weights for ``shapes`` plus their Params view."""
    w = init_uniform(shapes, Rng(seed), bias_bound=bias_bound)
    return w, as_params(w)[0]


def zeros(shapes):
    w = {k: np.zeros(s) for k, s in shapes.items()}
    return w, as_params(w)[0]


def T(a):
    return Tensor(np.asarray(a, dtype=np.float64))


# One line per acceptance criterion, filled in by test_acceptance.py and
# echoed in the terminal summary so a plain ``pytest`` run shows the verdicts.
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
