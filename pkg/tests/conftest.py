import numpy as np
import pytest

from absd.geometry import E_STAGGER, H_STAGGER, build_grid
from absd.materials import KerrLaw, LinearLaw, MaterialModel


def random_fields(grid, rng, scale=1.0):
    E = tuple(scale * rng.standard_normal(grid.shape(s)) for s in E_STAGGER)
    H = tuple(scale * rng.standard_normal(grid.shape(s)) for s in H_STAGGER)
    return E, H


def linear_model(eps=1.0, mu=1.0, lam=1.0):
    return MaterialModel(LinearLaw(eps), LinearLaw(mu), LinearLaw(lam))


def kerr_model(lin=2.0, nl=1.0, lam=1.0):
    return MaterialModel(KerrLaw(lin, nl), LinearLaw(1.0), LinearLaw(lam))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grid8():
    return build_grid((1.0, 1.0, 1.0), (8, 8, 8))


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1][1:])):
            terminalreporter.write_line(line)
