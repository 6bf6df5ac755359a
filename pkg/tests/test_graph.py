import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from egdl.errors import Disconnected, DuplicateEdge, IndexOutOfRange, ParseError, SelfLoop
from egdl.graph import (
    apply_diffusion,
    build_graph,
    laplacian,
    load_edge_list,
    load_fixture,
    parse_edge_list,
    random_connected_graph,
    save_edge_list,
)

from conftest import brute_laplacian, connected_graphs

K3 = [(0, 1), (0, 2), (1, 2)]


def test_path_graph_is_valid(path3):
    assert path3.n == 3
    assert path3.edges == ((0, 1), (1, 2))
    assert list(path3.degrees) == [1, 2, 1]


def test_path_laplacian_by_hand(path3):
    np.testing.assert_array_equal(laplacian(path3), [[-1, 1, 0], [1, -2, 1], [0, 1, -1]])


def test_complete_graph_laplacian():
    lap = laplacian(build_graph(3, K3))
    assert np.all(np.diag(lap) == -2)
    assert np.all(lap[~np.eye(3, dtype=bool)] == 1)


def test_isolated_node_gives_zero_matrix():
    g = build_graph(1, [], allow_disconnected=True)
    np.testing.assert_array_equal(laplacian(g), [[0.0]])


def test_diffusion_on_path(path3):
    np.testing.assert_array_equal(apply_diffusion(path3, [1, 2, 3]), [1, 0, -1])


def test_green_identity_k3_by_hand():
    g = build_graph(3, K3)
    f = np.array([1.0, 0, 0])
    h = np.array([0.0, 1, 0])
    lhs = float(f @ apply_diffusion(g, h))
    both_orders = sum((f[y] - f[x]) * (h[y] - h[x])
                      for x in range(3) for y in g.neighbors(x))
    assert lhs == 1.0
    assert -0.5 * both_orders == 1.0


@pytest.mark.parametrize("edges,err", [
    ([(0, 0)], SelfLoop),
    ([(0, 1), (1, 0)], DuplicateEdge),
    ([(0, 2)], IndexOutOfRange),
])
def test_invalid_edges(edges, err):
    with pytest.raises(err):
        build_graph(2, edges)


def test_disconnected_rejected_unless_allowed():
    with pytest.raises(Disconnected):
        build_graph(4, [(0, 1), (2, 3)])
    g = build_graph(4, [(0, 1), (2, 3)], allow_disconnected=True)
    assert g.n == 4


def test_parse_minimal():
    g = parse_edge_list("2\n0 1\n")
    assert (g.n, g.edges) == (2, ((0, 1),))


def test_parse_errors_carry_line_numbers():
    with pytest.raises(ParseError, match="line 3"):
        parse_edge_list("3\n0 1\n1 x\n")
    with pytest.raises(ParseError, match="line 2"):
        parse_edge_list("3\n0 5\n")
    with pytest.raises(ParseError):
        parse_edge_list("# nothing\n")


def test_labels_and_round_trip(tmp_path):
    g = parse_edge_list("3\n# label 0 A\n# label 2 C\n0 1\n1 2  # trailing comment\n")
    assert g.node_labels == ("A", "1", "C")
    save_edge_list(g, tmp_path / "g.edges")
    assert load_edge_list(tmp_path / "g.edges") == g


@pytest.mark.parametrize("name,n", [("japan47", 47), ("china31", 31)])
def test_fixtures_are_connected(name, n):
    g = load_fixture(name)
    assert g.n == n
    lap = laplacian(g)
    np.testing.assert_array_equal(np.diag(lap), -g.degrees)
    assert np.all(lap.sum(axis=1) == 0)


def test_japan_fixture_source_node(japan):
    assert japan.label(19) == "Nagano"
    assert japan.label(0) == "Hokkaido"
    assert japan.label(46) == "Okinawa"


# ------------------------------------------------------------- properties

@given(connected_graphs())
def test_laplacian_matches_definition(g):
    lap = laplacian(g)
    np.testing.assert_array_equal(lap, brute_laplacian(g))
    np.testing.assert_array_equal(lap, lap.T)
    assert np.all(lap.sum(axis=1) == 0)


@given(connected_graphs(), st.integers(0, 2**31 - 1))
def test_diffusion_equals_matrix_product(g, seed):
    h = np.random.default_rng(seed).normal(size=g.n)
    np.testing.assert_allclose(apply_diffusion(g, h), laplacian(g) @ h, rtol=0, atol=1e-12)


@given(connected_graphs(), st.integers(0, 2**31 - 1))
def test_green_identity_and_conservation(g, seed):
    rng = np.random.default_rng(seed)
    f, h = rng.normal(size=(2, g.n))
    lhs = f @ apply_diffusion(g, h)
    rhs = -0.5 * sum((f[y] - f[x]) * (h[y] - h[x]) for x in range(g.n) for y in g.neighbors(x))
    assert abs(lhs - rhs) < 1e-12
    assert abs(apply_diffusion(g, h).sum()) < 1e-12


@given(connected_graphs(), st.floats(-1e3, 1e3))
def test_constant_field_is_stationary(g, c):
    assert np.all(apply_diffusion(g, np.full(g.n, c)) == 0)


def test_random_connected_graph_edge_budget():
    g = random_connected_graph(10, 5, seed=1)
    assert len(g.edges) == 14
