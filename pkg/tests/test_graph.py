import numpy as np
import pytest

from ftcgt.graph import (GraphError, build_graph, custom_graph, from_edgelist, laplacian,
                         metropolis_weights, second_largest_eigenvalue, to_edgelist,
                         validate_combination_matrix)


def test_path8_structure():
    g = build_graph("path", 8)
    assert g.edges == tuple((k, k + 1) for k in range(7))
    assert g.diameter() == 7


def test_hypercube8_structure():
    g = build_graph("hypercube", 8)
    assert g.K == 8 and g.n_edges == 12
    assert np.all(g.degrees() == 3)


@pytest.mark.parametrize("kind,K,msg", [("hypercube", 6, "power of two"), ("ring", 2, "K >= 3"),
                                         ("star", 4, "unknown"), ("path", 0, "positive")])
def test_build_graph_errors(kind, K, msg):
    with pytest.raises(GraphError, match=msg):
        build_graph(kind, K)


def test_custom_graph_rejects_disconnected_and_bad_edges():
    with pytest.raises(GraphError, match="disconnected"):
        custom_graph(4, [(0, 1), (2, 3)])
    with pytest.raises(GraphError, match="outside"):
        custom_graph(3, [(0, 3)])
    with pytest.raises(GraphError, match="self-loop"):
        custom_graph(3, [(0, 0), (0, 1), (1, 2)])


def test_laplacian_path2_and_hypercube():
    np.testing.assert_array_equal(laplacian(build_graph("path", 2)), [[1, -1], [-1, 1]])
    L = laplacian(build_graph("hypercube", 8))
    assert np.all(np.diag(L) == 3)
    np.testing.assert_array_equal(L.sum(axis=1), 0)


def test_path8_laplacian_spectrum_closed_form():
    ev = np.sort(np.linalg.eigvalsh(laplacian(build_graph("path", 8))))
    closed = np.sort(2 - 2 * np.cos(np.arange(8) * np.pi / 8))
    np.testing.assert_allclose(ev, closed, atol=1e-12)


def test_metropolis_small_cases():
    np.testing.assert_allclose(metropolis_weights(build_graph("path", 2)), np.full((2, 2), 0.5))
    np.testing.assert_allclose(metropolis_weights(build_graph("complete", 4)), np.full((4, 4), 0.25))


@pytest.mark.parametrize("kind,K", [("path", 8), ("ring", 7), ("hypercube", 16), ("complete", 5)])
def test_metropolis_is_valid_combination_matrix(kind, K):
    g = build_graph(kind, K)
    rep = validate_combination_matrix(metropolis_weights(g), g)
    assert rep["ok"], rep


def test_metropolis_path_lambda2():
    # Path with 8 agents gives about 0.95; with 16 agents the value is about 0.987.
    assert abs(second_largest_eigenvalue(metropolis_weights(build_graph("path", 8))) - 0.95) <= 0.01
    lam16 = second_largest_eigenvalue(metropolis_weights(build_graph("path", 16)))
    assert abs(lam16 - (1 + 2 * np.cos(np.pi / 16)) / 3) < 1e-12


def test_second_largest_eigenvalue_simple_cases():
    for K in (2, 5, 16):
        assert second_largest_eigenvalue(np.full((K, K), 1 / K)) < 1e-12
    assert second_largest_eigenvalue(np.eye(4)) == pytest.approx(1.0)
    with pytest.raises(ValueError, match="symmetric"):
        second_largest_eigenvalue(np.array([[0.5, 0.5], [0.2, 0.8]]))


def test_validate_flags_sparsity_and_rows():
    g = build_graph("path", 3)
    A = np.full((3, 3), 1 / 3)
    rep = validate_combination_matrix(A, g)
    assert not rep["sparsity_ok"] and not rep["ok"]
    B = np.eye(3) * 0.9
    assert validate_combination_matrix(B, g)["row_sum_defect"] == pytest.approx(0.1)


def test_edgelist_roundtrip():
    g = build_graph("hypercube", 8)
    h = from_edgelist(to_edgelist(g), kind="hypercube")
    assert h == g
    with pytest.raises(GraphError):
        from_edgelist("3\n0 1 2\n")
