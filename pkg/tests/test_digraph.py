import numpy as np
import pytest

from sonata.digraph import (
    Digraph,
    DigraphSequence,
    check_b_connectivity,
    complete_digraph,
    in_neighbors,
    is_strongly_connected,
    lines_to_sequence,
    load_sequence,
    out_degree,
    out_neighbors,
    ring_digraph,
    rotating_cycle_digraph,
    rotating_cycle_sequence,
    save_sequence,
    sequence_from_list,
    sequence_to_lines,
    static_sequence,
    support_matrix,
    symmetric_ring_random_digraph,
    union_graph,
)


def reachability_closure(g):
    """Independent oracle: boolean transitive closure by repeated squaring."""
    m = support_matrix(g)
    for _ in range(g.vertex_count):
        m = m | (m @ m)
    return m


def test_in_neighbors_includes_source_of_edge():
    g = Digraph(3, frozenset({(1, 2)}))
    assert in_neighbors(g, 2) == {1, 2}


def test_in_neighbors_isolated_vertex_is_self_only():
    g = Digraph(1)
    assert in_neighbors(g, 1) == {1}


def test_in_neighbors_on_cycle():
    g = ring_digraph(3)
    assert in_neighbors(g, 1) == {3, 1}


def test_in_neighbors_rejects_out_of_range():
    g = Digraph(3)
    with pytest.raises(ValueError):
        in_neighbors(g, 0)
    with pytest.raises(ValueError):
        in_neighbors(g, 4)


def test_out_degree_cycle():
    g = ring_digraph(3)
    assert out_degree(g, 1) == 2


def test_out_degree_isolated():
    g = Digraph(2)
    assert out_degree(g, 1) == 1


def test_out_degree_complete():
    g = complete_digraph(4)
    assert all(out_degree(g, i) == 4 for i in range(1, 5))


def test_out_degree_rejects_out_of_range():
    with pytest.raises(ValueError):
        out_degree(ring_digraph(3), 5)


def test_digraph_rejects_stored_self_loops_and_bad_vertices():
    with pytest.raises(ValueError):
        Digraph(3, frozenset({(2, 2)}))
    with pytest.raises(ValueError):
        Digraph(3, frozenset({(1, 4)}))


def test_b_connectivity_static_connected():
    seq = static_sequence(ring_digraph(5))
    assert check_b_connectivity(seq, 1, 5)


def test_b_connectivity_alternating_split():
    # 4-cycle with edge (1,2) only on even slots, the rest on odd slots
    even = Digraph(4, frozenset({(1, 2)}))
    odd = Digraph(4, frozenset({(2, 3), (3, 4), (4, 1)}))
    seq = DigraphSequence(4, lambda n: even if n % 2 == 0 else odd)
    assert check_b_connectivity(seq, 2, 6)
    assert not check_b_connectivity(seq, 1, 6)


def test_b_connectivity_empty_sequence_false():
    seq = static_sequence(Digraph(4))
    for window in (1, 3):
        assert not check_b_connectivity(seq, window, 2)


def test_b_connectivity_rejects_bad_window():
    seq = static_sequence(ring_digraph(3))
    with pytest.raises(ValueError):
        check_b_connectivity(seq, 0, 1)
    with pytest.raises(ValueError):
        check_b_connectivity(seq, 1, 0)


def test_b_connectivity_monotone_in_window_multiples():
    seq = rotating_cycle_sequence(6, seed=3)
    assert check_b_connectivity(seq, 1, 12)
    for mult in (2, 3, 4):
        assert check_b_connectivity(seq, mult, 12 // mult)


def test_strong_connectivity_matches_closure_oracle():
    rng = np.random.default_rng(0)
    for trial in range(40):
        count = int(rng.integers(2, 8))
        edges = set()
        for _ in range(int(rng.integers(0, 2 * count))):
            j, i = rng.integers(1, count + 1, 2)
            if j != i:
                edges.add((int(j), int(i)))
        g = Digraph(count, frozenset(edges))
        assert is_strongly_connected(g) == bool(reachability_closure(g).all())


def test_generator_every_vertex_has_two_or_three_out_neighbors():
    g = rotating_cycle_digraph(3, 0, seed=7)
    for i in range(1, 4):
        assert out_degree(g, i) in (2, 3)  # self + cycle + maybe distinct random


def test_generator_contains_a_spanning_cycle():
    for slot in range(5):
        g = rotating_cycle_digraph(7, slot, seed=1)
        assert is_strongly_connected(g)


def test_generator_union_is_connected_at_window_equal_count():
    seq = rotating_cycle_sequence(6, seed=0)
    assert check_b_connectivity(seq, 6, 1)
    assert check_b_connectivity(seq, 1, 6)


def test_generator_deterministic():
    a = rotating_cycle_digraph(9, 4, seed=11)
    b = rotating_cycle_digraph(9, 4, seed=11)
    assert a.edges == b.edges
    c = rotating_cycle_digraph(9, 5, seed=11)
    assert a.edges != c.edges or a is not c  # different slots usually differ


def test_generator_rejects_small_and_bad_extra():
    with pytest.raises(ValueError):
        rotating_cycle_digraph(2, 0, seed=0)
    with pytest.raises(ValueError):
        rotating_cycle_digraph(5, 0, seed=0, extra_edges=4)


def test_generator_extra_edge_knob():
    g = rotating_cycle_digraph(8, 0, seed=2, extra_edges=2)
    for i in range(1, 9):
        assert out_degree(g, i) >= 2  # cycle successor always present


def test_self_membership_and_degree_floor_random_graphs():
    rng = np.random.default_rng(5)
    for _ in range(20):
        g = rotating_cycle_digraph(int(rng.integers(3, 12)), int(rng.integers(0, 9)), 3)
        for i in range(1, g.vertex_count + 1):
            assert i in in_neighbors(g, i)
            assert i in out_neighbors(g, i)
            assert out_degree(g, i) >= 1


def test_symmetric_generator_is_symmetric_and_connected():
    for slot in range(4):
        g = symmetric_ring_random_digraph(7, slot, seed=9)
        assert g.is_symmetric()
        assert is_strongly_connected(g)


def test_sequence_horizon_enforced():
    seq = sequence_from_list([ring_digraph(3), complete_digraph(3)])
    assert seq[1].edges == complete_digraph(3).edges
    with pytest.raises(ValueError):
        seq[2]
    with pytest.raises(ValueError):
        seq[-1]


def test_replay_round_trip(tmp_path):
    seq = rotating_cycle_sequence(5, seed=4)
    path = tmp_path / "graphs.txt"
    save_sequence(seq, path, slots=6)
    loaded = load_sequence(path)
    assert loaded.vertex_count == 5
    assert loaded.horizon == 6
    for n in range(6):
        assert loaded[n].edges == seq[n].edges


def test_replay_text_format_shape():
    seq = static_sequence(Digraph(3, frozenset({(1, 2), (3, 1)})))
    lines = sequence_to_lines(seq, 2)
    assert lines[0] == "vertices: 3"
    assert lines[1] == "0: 1>2, 3>1"
    assert lines[2] == "1: 1>2, 3>1"


def test_replay_parses_empty_slot():
    seq = lines_to_sequence(["vertices: 2", "0:", "1: 1>2"])
    assert seq[0].edges == frozenset()
    assert seq[1].edges == {(1, 2)}


def test_replay_rejects_bad_text():
    with pytest.raises(ValueError):
        lines_to_sequence(["0: 1>2"])
    with pytest.raises(ValueError):
        lines_to_sequence(["vertices: 2", "1: 1>2"])


def test_union_graph_requires_matching_vertices():
    with pytest.raises(ValueError):
        union_graph([ring_digraph(3), ring_digraph(4)])
