import numpy as np
import pytest

from feddag.synth import SynthConfig, gen_problem


def random_dag_weights(rng, d, density=0.4, low=0.5, high=2.0):
    """Strictly upper-triangular weights under a random permutation."""
    mask = np.triu(rng.random((d, d)) < density, k=1)
    W = mask * rng.uniform(low, high, (d, d)) * rng.choice([-1.0, 1.0], (d, d))
    perm = rng.permutation(d)
    return W[np.ix_(perm, perm)]


def brute_force_cyclic(adj):
    """Cycle search by DFS colouring, independent of the package's Kahn check."""
    adj = np.asarray(adj) != 0
    d = adj.shape[0]
    colour = [0] * d

    def visit(u):
        colour[u] = 1
        for v in np.flatnonzero(adj[u]):
            if colour[v] == 1 or (colour[v] == 0 and visit(v)):
                return True
        colour[u] = 2
        return False

    return any(colour[u] == 0 and visit(u) for u in range(d))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_problem():
    return gen_problem(SynthConfig(d=5, K=3, p_l=0.1, n_per_site=80, seed=3))


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
