import numpy as np
import pytest

from sbmvi.netio import Network


def random_network(n_nodes, rng, density=0.3, missing_fraction=0.0):
    """Erdos-Renyi graph with an optional random missing mask."""
    iu = np.triu_indices(n_nodes, 1)
    pairs = np.column_stack(iu)
    draw = rng.random(len(pairs))
    hidden = rng.random(len(pairs)) < missing_fraction
    edges = pairs[(draw < density) & ~hidden]
    return Network(n_nodes, edges, pairs[hidden])


def random_rows(n, K, rng):
    return rng.dirichlet(np.ones(K), size=n)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one acceptance verdict; the lines are repeated in the terminal summary."""
    def _report(number, title, ok, detail):
        line = f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
