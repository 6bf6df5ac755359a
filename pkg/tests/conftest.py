import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from egdl.graph import build_graph, load_fixture, random_connected_graph

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def japan():
    return load_fixture("japan47")


@pytest.fixture(scope="session")
def path3():
    return build_graph(3, [(0, 1), (1, 2)])


@st.composite
def connected_graphs(draw, max_n=20):
    n = draw(st.integers(1, max_n))
    extra = draw(st.integers(0, n))
    seed = draw(st.integers(0, 2**31 - 1))
    return random_connected_graph(n, extra, seed=seed)


def brute_laplacian(graph):
    """Entry-by-entry construction straight from the definition."""
    lap = np.zeros((graph.n, graph.n))
    for i in range(graph.n):
        for j in range(graph.n):
            if i == j:
                lap[i, j] = -sum(1 for e in graph.edges if i in e)
            elif (min(i, j), max(i, j)) in graph.edges:
                lap[i, j] = 1.0
    return lap


# ------------------------------------------------------------- acceptance report

def pytest_addoption(parser):
    parser.addoption("--japan-panel", default=None, metavar="CSV",
                     help="monthly Japan panel (47 prefectures) for the optional real-data check")


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def criterion(request):
    """``criterion(number, title, ok, detail)`` records one line for the summary;
    ``ok=None`` marks a skipped criterion."""
    def record(number, title, ok, detail=""):
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        line = f"criterion {number:>2} {status}  {title}" + (f"  [{detail}]" if detail else "")
        request.config._acceptance_lines.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
