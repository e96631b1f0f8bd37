import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ngqmle.likelihoods import InnovationDistribution
from ngqmle.volatility import GarchOrder, GarchParams, simulate

TRUE = GarchParams(0.5, [0.35], [0.3])


@pytest.fixture(scope="session")
def true_params():
    return TRUE


@pytest.fixture(scope="session")
def order11():
    return GarchOrder(1, 1)


@pytest.fixture(scope="session")
def t5_path():
    return simulate(TRUE, InnovationDistribution("student_t", 5.0), 3000, seed=20240601)


@pytest.fixture(scope="session")
def gauss_path():
    return simulate(TRUE, InnovationDistribution("gaussian"), 3000, seed=7)


def random_params(rng, p=1, q=1):
    sigma = rng.uniform(0.2, 2.0)
    a = rng.uniform(0.0, 0.6, p) / sigma**2 * rng.uniform(0.2, 1.0)
    b = rng.dirichlet(np.ones(q)) * rng.uniform(0.0, 0.9) if q else np.zeros(0)
    return GarchParams(sigma, a, b)


ACCEPTANCE: dict = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
