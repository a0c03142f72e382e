import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from ssmc.mechmodel import (  # noqa: E402
    ForcingSignal,
    PolynomialMap,
    SecondOrderSystem,
    build_oscillator_chain,
    chain_default_forcing,
    to_first_order,
)
from ssmc.spectral import master_subspace, solve_modes  # noqa: E402
from ssmc.ssm import compute_autonomous_ssm  # noqa: E402

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")

# 10-mass benchmark chain
CHAIN = dict(n_masses=10, m=1.0, k=1.0, c=0.1, kappa=0.5, actuator_indices=[1, 5])
CHAIN_EPS = 0.001


def make_chain(**over):
    kw = dict(CHAIN)
    kw.update(over)
    forcing = kw.pop("forcing", chain_default_forcing(kw["n_masses"], kw["actuator_indices"]))
    eps = kw.pop("epsilon", CHAIN_EPS)
    return build_oscillator_chain(forcing=forcing, epsilon=eps, **kw)


def random_stable_system(rng, n: int, q: int = 1, damping: float = 0.05) -> SecondOrderSystem:
    """Linear SPD system with Rayleigh damping; all modes underdamped."""
    X = rng.standard_normal((n, n))
    K = X @ X.T + n * np.eye(n)
    Y = rng.standard_normal((n, n))
    M = Y @ Y.T / n + np.eye(n)
    C = damping * (M + 0.01 * K)
    D = rng.standard_normal((n, q))
    return SecondOrderSystem(n, M, C, K, PolynomialMap(2 * n, n), ForcingSignal(n), D, 1.0)


@pytest.fixture(scope="session")
def chain_sys():
    return make_chain()


@pytest.fixture(scope="session")
def chain_fo(chain_sys):
    return to_first_order(chain_sys)


@pytest.fixture(scope="session")
def chain_pairs(chain_fo):
    return solve_modes(chain_fo, 10)


@pytest.fixture(scope="session")
def chain_ssm(chain_fo, chain_pairs):
    master = master_subspace(chain_pairs, [1], chain_fo.B)
    return compute_autonomous_ssm(chain_fo, master, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
