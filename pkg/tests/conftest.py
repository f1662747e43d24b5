import numpy as np
import pytest

from switchvi.discretization import SpatialGrid, TimeGrid, build_levy_quadrature
from switchvi.model import ProblemSpec, load_builtin_problem


@pytest.fixture(scope="session")
def grid101():
    return SpatialGrid.line(-2.0, 2.0, 101)


@pytest.fixture(scope="session")
def tgrid50():
    return TimeGrid(horizon=0.5, n_steps=50)


@pytest.fixture(scope="session")
def spec_2x2():
    return load_builtin_problem("switch_2x2_jump")


@pytest.fixture(scope="session")
def spec_two_atom():
    return load_builtin_problem("two_atom_jump")


@pytest.fixture(scope="session")
def spec_no_jump():
    return load_builtin_problem("no_jump")


@pytest.fixture(scope="session")
def quad_2x2(spec_2x2):
    return build_levy_quadrature(spec_2x2.levy)


@pytest.fixture(scope="session")
def quad_two_atom(spec_two_atom):
    return build_levy_quadrature(spec_two_atom.levy)


def make_spec(**overrides) -> ProblemSpec:
    """Single-mode jump-diffusion baseline; override fields per test."""
    base = {
        "name": "test",
        "modes": {"m1": 1, "m2": 1},
        "horizon": 0.5,
        "drift": "0.05",
        "vol": "0.2",
        "jump_amplitude": "0.8*e",
        "jump_weights": {"default": "0.5*min(abs(e), 1)"},
        "levy": {"atoms": [[0.5, 0.4], [-0.5, 0.4]]},
        "drivers": {"default": "0"},
        "lower_costs": {"default": "0.4"},
        "upper_costs": {"default": "0.4"},
        "terminal": {"default": "0"},
        "growth": {"C": 0.0, "gamma": 0.0},
    }
    base.update(overrides)
    return ProblemSpec.from_dict(base)


@pytest.fixture
def spec_factory():
    return make_spec


def assert_all_le(a: np.ndarray, b: np.ndarray, tol: float, label: str = ""):
    worst = float(np.max(a - b))
    assert worst <= tol, f"{label}: worst violation {worst:.3e} > {tol:.1e}"
