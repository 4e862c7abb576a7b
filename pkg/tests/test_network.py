import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gasmix.network import (
    NetworkError,
    incidence,
    load_network,
    network_document,
    parse_network,
    refine,
    save_network,
)

from conftest import chain_network, data_path, pipe_network


def test_fixture_network_counts():
    net = load_network(data_path("four_node_network.yaml"))
    assert len(net.nodes) == 4 and len(net.edges) == 4 and len(net.actuators) == 2
    assert [n.id for n in net.supply_nodes] == [1]


def test_single_pipe_counts():
    net = pipe_network()
    assert len(net.nodes) == 2 and len(net.edges) == 1
    assert net.edges[0].length == pytest.approx(10_000.0)


@pytest.mark.parametrize(
    "doc, match",
    [
        ({"nodes": [{"id": 1, "kind": "supply"}, {"id": 2, "kind": "withdrawal"}],
          "edges": [{"id": 1, "from": 1, "to": 9, "length_km": 1, "diameter_m": 0.5, "friction": 0.01}]},
         "unknown"),
        ({"nodes": [{"id": 1, "kind": "supply"}, {"id": 1, "kind": "withdrawal"}],
          "edges": []}, "duplicate"),
        ({"nodes": [{"id": 1, "kind": "withdrawal"}, {"id": 2, "kind": "supply"}],
          "edges": [{"id": 1, "from": 2, "to": 1, "length_km": 1, "diameter_m": 0.5, "friction": 0.01}]},
         "after a withdrawal"),
        ({"nodes": [{"id": 1, "kind": "supply"}, {"id": 2, "kind": "withdrawal"}],
          "edges": [{"id": 1, "from": 1, "to": 2, "length_km": -1, "diameter_m": 0.5, "friction": 0.01}]},
         "positive"),
        ({"nodes": [{"id": 1, "kind": "supply"}, {"id": 2, "kind": "withdrawal"},
                    {"id": 3, "kind": "withdrawal"}, {"id": 4, "kind": "withdrawal"}],
          "edges": [{"id": 1, "from": 1, "to": 2, "length_km": 1, "diameter_m": 0.5, "friction": 0.01},
                    {"id": 2, "from": 3, "to": 4, "length_km": 1, "diameter_m": 0.5, "friction": 0.01},
                    {"id": 3, "from": 4, "to": 3, "length_km": 1, "diameter_m": 0.5, "friction": 0.01}]},
         "disconnected"),
        ({"nodes": [{"id": 1, "kind": "supply"}, {"id": 2, "kind": "withdrawal"}, {"id": 3, "kind": "withdrawal"}],
          "edges": [{"id": 1, "from": 1, "to": 2, "length_km": 1, "diameter_m": 0.5, "friction": 0.01}]},
         "no incoming edge"),
        ({"nodes": [{"id": 1, "kind": "supply"}]}, "malformed"),
    ],
)
def test_invalid_documents_rejected(doc, match):
    with pytest.raises(NetworkError, match=match):
        parse_network(doc)


def test_refine_fixture_at_10km():
    net = refine(load_network(data_path("four_node_network.yaml")), 10_000.0)
    assert len(net.edges) == 13
    assert len(net.nodes) == 13
    assert net.num_supply == 1 and net.num_withdrawal == 12
    assert all(e.length == pytest.approx(10_000.0) for e in net.edges)


def test_refine_splits_50km_pipe_into_five():
    net = refine(pipe_network(50.0), 10_000.0)
    assert len(net.edges) == 5
    assert len(net.nodes) - 2 == 4
    assert set(net.parent_edge.values()) == {1}


def test_refine_leaves_pipe_at_cap_unchanged():
    net = refine(pipe_network(10.0), 10_000.0)
    assert len(net.edges) == 1 and len(net.nodes) == 2


def test_refine_places_actuators_on_first_and_last_segment():
    net = refine(load_network(data_path("four_node_network.yaml")), 10_000.0)
    by_name = {a.name: a for a in net.actuators}
    edges = {e.id: e for e in net.edges}
    assert edges[by_name["red"].edge].source == 1
    assert edges[by_name["yellow"].edge].target == 2


@given(length=st.floats(0.5, 200.0), cap=st.floats(0.5, 50.0))
@settings(max_examples=60, deadline=None)
def test_refine_preserves_length_and_caps_segments(length, cap):
    net = refine(pipe_network(length), cap * 1e3)
    assert len(net.edges) == max(1, math.ceil(length / cap - 1e-9))
    assert net.total_length == pytest.approx(length * 1e3, rel=1e-12)
    assert max(e.length for e in net.edges) <= cap * 1e3 * (1 + 1e-9)


def test_refine_is_idempotent_at_same_cap():
    once = refine(load_network(data_path("four_node_network.yaml")), 10_000.0)
    twice = refine(once, 10_000.0)
    assert len(twice.edges) == len(once.edges)
    assert twice.parent_edge == once.parent_edge


def test_document_round_trip(tmp_path):
    net = refine(load_network(data_path("four_node_network.yaml")), 10_000.0)
    path = tmp_path / "net.yaml"
    save_network(net, path)
    back = load_network(path)
    assert network_document(back) == network_document(net)
    assert back.parent_edge == net.parent_edge


def test_chain_incidence_blocks():
    net = chain_network(4)
    inc = incidence(net)
    np.testing.assert_array_equal(inc.M_bar_w.toarray(), np.eye(4))
    expected = np.zeros((4, 4))
    expected[np.arange(1, 4), np.arange(3)] = -1.0
    np.testing.assert_array_equal(inc.M_under_w.toarray(), expected)
    np.testing.assert_array_equal((inc.M_bar_w + inc.M_under_w).toarray(), inc.M_w.toarray())


def test_single_edge_ratio_entries():
    net = pipe_network(10.0, actuators=[{"edge": 1, "position": "inlet"}])
    inc = incidence(net, [1.5])
    np.testing.assert_allclose(inc.M.toarray(), [[-1.5, 1.0]])
    net = pipe_network(10.0, actuators=[{"edge": 1, "position": "outlet"}])
    np.testing.assert_allclose(incidence(net, [1.25]).M.toarray(), [[-1.0, 1.25]])


def test_fixture_sign_structure():
    net = refine(load_network(data_path("four_node_network.yaml")), 10_000.0)
    Q = incidence(net).Q_w.toarray()
    original = {n.id for n in load_network(data_path("four_node_network.yaml")).nodes}
    for j, node in enumerate(net.withdrawal_nodes):
        col = Q[:, j]
        if node.id not in original:
            assert sorted(col[col != 0]) == [-1.0, 1.0]
    assert np.all(Q.sum(axis=1) <= 1.0)


def test_mass_matrix_is_diagonal_length_sum():
    net = refine(load_network(data_path("four_node_network.yaml")), 10_000.0)
    F = incidence(net, [1.3, 1.1]).mass_matrix().toarray()
    assert np.count_nonzero(F - np.diag(np.diag(F))) == 0
    idx = {n.id: j for j, n in enumerate(net.withdrawal_nodes)}
    expected = np.zeros(len(idx))
    for e in net.edges:
        expected[idx[e.target]] += e.length
    np.testing.assert_allclose(np.diag(F), expected)


def test_ratio_below_one_rejected():
    net = pipe_network(10.0, actuators=[{"edge": 1, "position": "inlet"}])
    with pytest.raises(ValueError):
        net.ratio_vectors([0.9])
