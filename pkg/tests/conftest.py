import numpy as np
import pytest

from graphon_stackelberg import config, fixtures
from graphon_stackelberg.leader import assemble_stackelberg_equilibrium


def expm(a, terms=30):
    """Matrix exponential by scaling and squaring of a Taylor series (test oracle)."""
    a = np.asarray(a, dtype=float)
    s = max(0, int(np.ceil(np.log2(max(np.abs(a).sum(axis=1).max(), 1e-16)))) + 1)
    b = a / 2 ** s
    out = np.eye(a.shape[0])
    term = np.eye(a.shape[0])
    for k in range(1, terms):
        term = term @ b / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


@pytest.fixture(scope="session")
def decoupled_spec():
    return config.build_game(fixtures.decoupled_scalar(N=200))


@pytest.fixture(scope="session")
def coupled_spec():
    return config.build_game(fixtures.generic_coupled(N=200))


@pytest.fixture(scope="session")
def noisy_spec():
    return config.build_game(fixtures.noisy_coupled(N=200))


@pytest.fixture(scope="session")
def decoupled_eq(decoupled_spec):
    return assemble_stackelberg_equilibrium(decoupled_spec)


@pytest.fixture(scope="session")
def coupled_eq(coupled_spec):
    return assemble_stackelberg_equilibrium(coupled_spec)


@pytest.fixture(scope="session")
def noisy_eq(noisy_spec):
    return assemble_stackelberg_equilibrium(noisy_spec)


@pytest.fixture(scope="session")
def deterministic_eq():
    spec = config.build_game(fixtures.deterministic_coupled(N=200))
    return assemble_stackelberg_equilibrium(spec, check=False)
