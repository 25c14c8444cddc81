import numpy as np
import pytest

from sonata.digraph import (
    Digraph,
    complete_digraph,
    ring_digraph,
    rotating_cycle_digraph,
    symmetric_ring_random_digraph,
)
from sonata.mixing import (
    ConsensusWeights,
    MixingMatrix,
    WeightUnderflowError,
    induced_row_matrix,
    is_valid_mixing,
    laplacian_weights,
    matrix_to_csv,
    metropolis_weights,
    push_sum_weights,
    uniform_weights,
    update_phi,
)


def undirected(count, pairs):
    edges = set()
    for a, b in pairs:
        edges.add((a, b))
        edges.add((b, a))
    return Digraph(count, frozenset(edges))


def test_push_sum_single_vertex():
    a = push_sum_weights(Digraph(1))
    assert a.entries == pytest.approx(np.array([[1.0]]))


def test_push_sum_two_vertices_one_edge():
    a = push_sum_weights(Digraph(2, frozenset({(1, 2)})))
    assert a.entries[:, 0] == pytest.approx([0.5, 0.5])
    assert a.entries[:, 1] == pytest.approx([0.0, 1.0])


def test_push_sum_columns_sum_to_one_on_random_digraphs():
    for slot in range(25):
        g = rotating_cycle_digraph(8, slot, seed=13)
        a = push_sum_weights(g)
        assert np.abs(a.entries.sum(axis=0) - 1.0).max() <= 1e-12


def test_push_sum_kappa_floor():
    g = ring_digraph(4)
    a = push_sum_weights(g)
    assert a.kappa == pytest.approx(0.5)  # every out-degree is 2
    assert is_valid_mixing(a.entries, g, 1.0 / 4)


def test_metropolis_two_vertices():
    a = metropolis_weights(undirected(2, [(1, 2)]))
    assert a.entries == pytest.approx(np.full((2, 2), 0.5))


def test_metropolis_path_hand_values():
    a = metropolis_weights(undirected(3, [(1, 2), (2, 3)])).entries
    assert a[1, 0] == pytest.approx(1 / 3)
    assert a[2, 1] == pytest.approx(1 / 3)
    assert a[0, 0] == pytest.approx(2 / 3)
    assert a[1, 1] == pytest.approx(1 / 3)
    assert a[2, 2] == pytest.approx(2 / 3)


@pytest.mark.parametrize("rule", [metropolis_weights, uniform_weights, laplacian_weights])
def test_symmetric_rules_doubly_stochastic(rule):
    for slot in range(8):
        g = symmetric_ring_random_digraph(7, slot, seed=3)
        a = rule(g).entries
        assert np.abs(a.sum(axis=0) - 1.0).max() <= 1e-12
        assert np.abs(a.sum(axis=1) - 1.0).max() <= 1e-12
        assert a.min() >= 0.0


@pytest.mark.parametrize("rule", [metropolis_weights, uniform_weights, laplacian_weights])
def test_symmetric_rules_reject_directed_graphs(rule):
    with pytest.raises(ValueError):
        rule(ring_digraph(4))


def test_validation_accepts_push_sum_by_construction():
    g = rotating_cycle_digraph(6, 2, seed=1)
    a = push_sum_weights(g)
    assert is_valid_mixing(a.entries, g, 1.0 / 6)


def test_validation_rejects_row_stochastic_only():
    g = Digraph(2, frozenset({(1, 2), (2, 1)}))
    a = np.array([[0.9, 0.1], [0.5, 0.5]])  # rows sum to 1, columns do not
    assert not is_valid_mixing(a, g)


def test_validation_rejects_zero_diagonal():
    g = Digraph(2, frozenset({(1, 2), (2, 1)}))
    a = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert not is_valid_mixing(a, g)


def test_validation_rejects_off_pattern_mass():
    g = Digraph(3, frozenset({(1, 2)}))
    a = push_sum_weights(complete_digraph(3)).entries
    assert not is_valid_mixing(a, g)


def test_validation_rejects_dimension_mismatch():
    with pytest.raises(ValueError):
        is_valid_mixing(np.eye(2), ring_digraph(3))


def test_update_phi_doubly_stochastic_fixed_point():
    a = metropolis_weights(undirected(3, [(1, 2), (2, 3)]))
    phi = ConsensusWeights(np.ones(3))
    assert update_phi(a, phi).phi == pytest.approx(np.ones(3))


def test_update_phi_direct_product():
    a = MixingMatrix(np.array([[1.0, 0.5], [0.0, 0.5]]), kappa=0.5)
    phi = ConsensusWeights(np.array([1.0, 1.0]))
    assert update_phi(a, phi).phi == pytest.approx([1.5, 0.5])


def test_update_phi_conserves_mass_on_random_instances():
    rng = np.random.default_rng(7)
    for slot in range(20):
        g = rotating_cycle_digraph(9, slot, seed=5)
        a = push_sum_weights(g)
        raw = rng.uniform(0.2, 2.0, 9)
        phi = ConsensusWeights(raw * 9 / raw.sum())
        new = update_phi(a, phi)
        assert abs(new.phi.sum() - 9) <= 1e-12 * 9


def test_phi_positivity_validated():
    with pytest.raises(ValueError):
        ConsensusWeights(np.array([1.0, -1.0]))
    with pytest.raises(ValueError):
        ConsensusWeights(np.array([0.5, 0.5]))  # sum must equal the agent count


def test_induced_row_identity_when_doubly_stochastic():
    a = metropolis_weights(undirected(3, [(1, 2), (2, 3), (1, 3)]))
    phi = ConsensusWeights(np.ones(3))
    w = induced_row_matrix(a, phi, update_phi(a, phi))
    assert w.entries == pytest.approx(a.entries)


def test_induced_row_hand_example():
    a = MixingMatrix(np.array([[1.0, 0.5], [0.0, 0.5]]), kappa=0.5)
    phi = ConsensusWeights(np.array([1.0, 1.0]))
    phi_new = update_phi(a, phi)
    w = induced_row_matrix(a, phi, phi_new).entries
    assert w == pytest.approx(np.array([[2 / 3, 1 / 3], [0.0, 1.0]]))


def test_induced_row_sums_to_one_on_random_instances():
    rng = np.random.default_rng(3)
    for slot in range(20):
        g = rotating_cycle_digraph(7, slot, seed=8)
        a = push_sum_weights(g)
        raw = rng.uniform(0.3, 1.8, 7)
        phi = ConsensusWeights(raw * 7 / raw.sum())
        w = induced_row_matrix(a, phi, update_phi(a, phi)).entries
        assert np.abs(w.sum(axis=1) - 1.0).max() <= 1e-12


def test_row_matrix_composition_fixes_consensus():
    phi = ConsensusWeights(np.ones(5))
    x = np.tile(np.array([2.5, -1.0, 0.25]), (5, 1))
    for slot in range(30):
        a = push_sum_weights(rotating_cycle_digraph(5, slot, seed=21))
        phi_new = update_phi(a, phi)
        w = induced_row_matrix(a, phi, phi_new).entries
        x = w @ x
        phi = phi_new
    assert np.abs(x - np.array([2.5, -1.0, 0.25])).max() <= 1e-12


def test_phi_mass_conserved_over_long_horizon():
    phi = ConsensusWeights(np.ones(6))
    for slot in range(2000):
        a = push_sum_weights(rotating_cycle_digraph(6, slot, seed=2))
        phi = update_phi(a, phi)
    assert abs(phi.phi.sum() - 6) <= 1e-9 * 6
    assert phi.phi.min() > 0


def test_underflow_guard():
    a = MixingMatrix(np.array([[1.0, 0.0], [0.0, 1.0]]), kappa=1.0)
    tiny = ConsensusWeights.__new__(ConsensusWeights)
    object.__setattr__(tiny, "phi", np.array([2.0 - 1e-310, 1e-310]))
    with pytest.raises(WeightUnderflowError):
        update_phi(a, tiny)


def test_matrix_csv_full_precision(tmp_path):
    a = push_sum_weights(rotating_cycle_digraph(4, 0, seed=6)).entries
    path = tmp_path / "a.csv"
    matrix_to_csv(a, path)
    rows = [[float(tok) for tok in line.split(",")] for line in path.read_text().splitlines()]
    assert np.array(rows) == pytest.approx(a, abs=0.0)
