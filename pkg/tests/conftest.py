import numpy as np
import pytest
from hypothesis import strategies as st

from hygene.hcore import Hypergraph, hypergraph_is_connected


@st.composite
def hypergraphs(draw, max_nodes=8, max_edges=8, min_nodes=1, connected=False, simple=False):
    """Random hypergraphs; ``simple`` drops repeated hyperedges."""
    n = draw(st.integers(min_nodes, max_nodes))
    m = draw(st.integers(0, max_edges))
    edges = [
        tuple(draw(st.sets(st.integers(0, n - 1), min_size=1, max_size=n)))
        for _ in range(m)
    ]
    if simple:
        edges = list(dict.fromkeys(tuple(sorted(e)) for e in edges))
    h = Hypergraph(n, tuple(edges))
    if connected:
        from hypothesis import assume

        assume(h.num_edges > 0 and hypergraph_is_connected(h))
    return h


def random_hypergraph(rng, max_nodes=12, max_edges=15, connected=False, min_nodes=2):
    """Uniform-ish random hypergraph; retries until connected when asked."""
    while True:
        n = int(rng.integers(min_nodes, max_nodes + 1))
        m = int(rng.integers(1, max_edges + 1))
        edges = []
        for _ in range(m):
            size = int(rng.integers(1, n + 1))
            edges.append(tuple(int(v) for v in rng.choice(n, size=size, replace=False)))
        h = Hypergraph(n, tuple(edges))
        if not connected or hypergraph_is_connected(h):
            return h


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance report ----------------------------------------------------------

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for an acceptance criterion.

    Usage: ``criterion(number, passed, detail)``; the line is kept even when
    the test fails afterwards and is printed in the terminal summary.
    """

    def record(number: int, passed: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
