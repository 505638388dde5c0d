import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import hypergraphs
from hygene.coarsen import (
    MAX_RIGHT_CLUSTER,
    align_sequence,
    coarsen_pair,
    coarsen_with_pairs,
    length_bound,
    local_variation_costs,
    sample_coarsening_sequence,
)
from hygene.datagen import gen_tree
from hygene.hcore import Hypergraph, InvalidGraphError, WeightedGraph, clique_expansion, is_connected, star_expansion


def _costs(c, k):
    return {(p.u, p.v): p.cost for p in local_variation_costs(c, k)}


def test_k3_costs_equal():
    c = WeightedGraph(3, {(0, 1): 1.0, (0, 2): 1.0, (1, 2): 1.0})
    vals = list(_costs(c, 2).values())
    assert len(vals) == 3 and np.allclose(vals, vals[0])


def test_p4_end_edges_equal_middle_differs():
    c = WeightedGraph(4, {(0, 1): 1.0, (1, 2): 1.0, (2, 3): 1.0})
    costs = _costs(c, 2)
    assert costs[(0, 1)] == pytest.approx(costs[(2, 3)], abs=1e-12)
    assert abs(costs[(1, 2)] - costs[(0, 1)]) > 1e-6


def test_two_dumbbells_have_matching_costs():
    w = {(0, 1): 1.0, (0, 2): 1.0, (1, 2): 1.0, (2, 3): 1.0}
    w.update({(u + 4, v + 4): x for (u, v), x in w.items()})
    costs = _costs(WeightedGraph(8, w), 3)
    for (u, v), x in costs.items():
        if u < 4:
            assert x == pytest.approx(costs[(u + 4, v + 4)], abs=1e-9)


def test_contraction_keeps_distinct_hyperedges():
    h = Hypergraph(3, ((0, 1), (1, 2)))
    b, _, step = coarsen_pair(star_expansion(h), clique_expansion(h), (0, 1))
    assert b.n_left == 2 and b.n_right == 2
    assert step.max_right_cluster == 1


def test_contraction_merges_equal_hyperedges():
    h = Hypergraph(3, ((0, 2), (1, 2)))
    b, _, step = coarsen_with_pairs(star_expansion(h), clique_expansion(h), [(0, 1)])
    assert b.n_left == 2 and b.n_right == 1
    assert step.right_partition == ((0, 1),)


@settings(max_examples=60, deadline=None)
@given(hypergraphs(max_nodes=8, max_edges=8, connected=True, simple=True), st.data())
def test_single_contraction_right_clusters_at_most_three(h, data):
    c = clique_expansion(h)
    pairs = c.edge_list()
    if not pairs:
        return
    u, v = data.draw(st.sampled_from(pairs))
    _, _, step = coarsen_pair(star_expansion(h), c, (u, v))
    assert step.max_right_cluster <= 3


def test_minimal_graph_has_empty_sequence():
    seq = sample_coarsening_sequence(Hypergraph(2, ((0, 1),)), rng=np.random.default_rng(0))
    assert seq.length == 1  # two left nodes merge into the single linked pair
    seq = sample_coarsening_sequence(Hypergraph(1, ((0,),)), rng=np.random.default_rng(0))
    assert seq.length == 0


def test_disconnected_input_rejected():
    with pytest.raises(InvalidGraphError):
        sample_coarsening_sequence(Hypergraph(4, ((0, 1), (2, 3))), rng=np.random.default_rng(0))


@pytest.mark.parametrize("seed", range(5))
def test_tree_sequence_properties(seed):
    rng = np.random.default_rng(seed)
    h = gen_tree(32, rng=rng)
    seq = sample_coarsening_sequence(h, rng=rng)
    last = seq.graphs[-1]
    assert (last.n_left, last.n_right, last.num_edges) == (1, 1, 1)
    assert seq.max_right_cluster <= MAX_RIGHT_CLUSTER
    assert all(is_connected(b) for b in seq.graphs)
    assert seq.length <= length_bound(32, 0.1)
    sizes = [b.n_left for b in seq.graphs]
    assert all(a > b for a, b in zip(sizes, sizes[1:]))


def test_length_bound_value():
    # eps = 1/9, log(32)/log(10/9) = 32.9 -> 33, times 2
    assert length_bound(32, 0.1) == 66
    assert length_bound(1, 0.1) == 0


@settings(max_examples=25, deadline=None)
@given(hypergraphs(max_nodes=9, max_edges=8, connected=True, simple=True), st.integers(0, 2**31))
def test_alignment_makes_copies_contiguous(h, seed):
    if h.num_nodes < 2:
        return
    seq = sample_coarsening_sequence(h, rng=np.random.default_rng(seed))
    aligned, perm_l, perm_r = align_sequence(seq)
    assert aligned.graphs[0] == seq.graphs[0].relabel(perm_l, perm_r)
    for step in aligned.steps:
        flat = [i for part in step.left_partition for i in part]
        assert flat == list(range(len(flat)))
        flat = [i for part in step.right_partition for i in part]
        assert flat == list(range(len(flat)))


def test_same_seed_same_sequence():
    h = gen_tree(16, rng=np.random.default_rng(2))
    a = sample_coarsening_sequence(h, rng=np.random.default_rng(7))
    b = sample_coarsening_sequence(h, rng=np.random.default_rng(7))
    assert a.graphs == b.graphs and a.reduction_fractions == b.reduction_fractions
