# tests/test_graph.py
from __future__ import annotations

import numpy as np
import pytest

from cimo.core.errors import FormatVersionError, GraphParseError, GuardExceeded, ValidationError
from cimo.core.graph import (
    DirectedGraph,
    ExposureSpec,
    SeedSet,
    count_simple_paths,
    enumerate_simple_paths,
    exposure_counts,
    exposure_spec_from_dict,
    format_graph,
    iter_budget_sets,
    parse_graph,
    path_constants,
    scale_probabilities,
)


# ────────────────────────────────
# parse / format
# ────────────────────────────────
def test_parse_two_edges():
    g = parse_graph("0 1 0.1\n1 2 0.2")
    assert g.n == 3
    assert g.m == 2
    assert g.epsilon == pytest.approx(0.2)


@pytest.mark.parametrize(
    "text, reason, line",
    [
        ("0 0 0.1", "self_loop", 1),
        ("0 1 1.5", "probability", 1),
        ("0 1 0.1\n0 1 0.2", "duplicate", 2),
        ("0 1", "malformed", 1),
        ("# comment\n0 1 abc", "malformed", 2),
        ("-1 2 0.5", "node_id", 1),
    ],
)
def test_parse_errors(text, reason, line):
    with pytest.raises(GraphParseError) as err:
        parse_graph(text)
    assert err.value.reason == reason
    assert err.value.line == line


def test_parse_comments_and_declared_nodes():
    g = parse_graph("# nodes: 6\n# a comment\n\n0 1 0.25\n")
    assert g.n == 6
    assert g.edges == [(0, 1, 0.25)]


def test_parse_named_nodes_builds_sidecar():
    g = parse_graph("alice bob 0.5\nbob carol 0.1")
    assert g.n == 3
    assert g.names == ("alice", "bob", "carol")
    assert [(u, v) for u, v, _ in g.edges] == [(0, 1), (1, 2)]


def test_parse_rejects_newer_major_version():
    with pytest.raises(FormatVersionError):
        parse_graph("# format_version: 9.0\n0 1 0.5")


def test_format_then_parse_keeps_isolated_nodes():
    g = DirectedGraph.from_edges(5, [(3, 1, 0.125)])
    back = parse_graph(format_graph(g))
    assert back.n == 5
    assert back.edges == g.edges


def test_graph_invariants():
    with pytest.raises(ValidationError):
        DirectedGraph.from_edges(2, [(0, 1, -0.1)])
    with pytest.raises(ValidationError):
        DirectedGraph.from_edges(2, [(0, 2, 0.1)])
    empty = DirectedGraph.from_edges(3, [])
    assert empty.m == 0
    assert empty.epsilon == 0.0


def test_scale_probabilities_clips(chain):
    doubled = scale_probabilities(chain, 3.0)
    assert np.all(doubled.p == 1.0)
    halved = scale_probabilities(chain, 0.5)
    assert halved.epsilon == pytest.approx(0.25)
    with pytest.raises(ValidationError):
        scale_probabilities(chain, 0.0)


def test_in_neighbors_and_out_degree(fork):
    assert fork.in_neighbors() == [[], [0], [0], [1, 2]]
    assert fork.out_degree().tolist() == [2, 1, 1, 0]


# ────────────────────────────────
# SeedSet / ExposureSpec
# ────────────────────────────────
def test_seed_set_budget():
    assert len(SeedSet.of([2, 0])) == 2
    with pytest.raises(ValidationError):
        SeedSet(frozenset({0, 1, 2}), 2)
    with pytest.raises(ValidationError):
        SeedSet(frozenset(), 0)
    with pytest.raises(ValidationError):
        SeedSet.of([7]).validate_for(DirectedGraph.from_edges(3, []))


def test_exposure_spec_rejects_self_source():
    with pytest.raises(ValidationError):
        ExposureSpec(((0,), ()), ((), ()))


def test_exposure_spec_overlap_is_a_warning():
    spec = ExposureSpec(((), (0,)), ((), (0,)))
    assert len(spec.warnings) == 1


def test_exposure_spec_dict_roundtrip(fork_spec):
    assert exposure_spec_from_dict(fork_spec.to_dict(), 4) == fork_spec


# ────────────────────────────────
# exposure_counts
# ────────────────────────────────
def test_exposure_counts_all_zero(fork_spec):
    kp, kn = exposure_counts(np.zeros(4, dtype=int), fork_spec)
    assert kp.tolist() == [0, 0, 0, 0]
    assert kn.tolist() == [0, 0, 0, 0]


def test_exposure_counts_all_ones_equals_set_sizes():
    spec = ExposureSpec(((1, 2), (), (), ()), ((3,), (), (), ()))
    kp, kn = exposure_counts(np.ones(4, dtype=int), spec)
    assert (kp[0], kn[0]) == (2, 1)


def test_exposure_counts_partial():
    pos = ((), (), (), (0, 1, 2), ())
    spec = ExposureSpec(pos, tuple(() for _ in range(5)))
    kp, _ = exposure_counts([1, 0, 1, 0, 0], spec)
    assert kp[3] == 2


def test_exposure_counts_batched(fork_spec):
    z = np.array([[1, 1, 1, 0], [1, 0, 0, 0]])
    kp, _ = exposure_counts(z, fork_spec)
    assert kp.tolist() == [[0, 1, 1, 2], [0, 1, 1, 0]]


# ────────────────────────────────
# simple paths
# ────────────────────────────────
def test_single_edge_path():
    g = DirectedGraph.from_edges(2, [(0, 1, 0.5)])
    assert enumerate_simple_paths(g, SeedSet.of([0]), 1) == [((0, 1),)]


def test_two_paths():
    g = DirectedGraph.from_edges(3, [(0, 1, 0.5), (0, 2, 0.5), (2, 1, 0.5)])
    paths = enumerate_simple_paths(g, SeedSet.of([0]), 1)
    assert sorted(paths) == [((0, 1),), ((0, 2), (2, 1))]


def test_target_in_seed_set_rejected():
    g = DirectedGraph.from_edges(2, [(0, 1, 0.5)])
    with pytest.raises(ValidationError):
        enumerate_simple_paths(g, SeedSet.of([0]), 0)


def test_max_len_guard(chain):
    with pytest.raises(GuardExceeded):
        enumerate_simple_paths(chain, SeedSet.of([0]), 2, max_len=1)
    assert len(enumerate_simple_paths(chain, SeedSet.of([0]), 2, max_len=2)) == 1


def test_path_cap_guard():
    # complete digraph on 5 nodes has 16 simple paths 0 -> 4
    edges = [(u, v, 0.1) for u in range(5) for v in range(5) if u != v]
    g = DirectedGraph.from_edges(5, edges)
    assert len(enumerate_simple_paths(g, SeedSet.of([0]), 4)) == 16
    with pytest.raises(GuardExceeded):
        enumerate_simple_paths(g, SeedSet.of([0]), 4, cap=10)


def test_count_simple_paths_matches_enumeration():
    edges = [(0, 1, 0.1), (0, 2, 0.1), (2, 1, 0.1), (1, 3, 0.1), (2, 3, 0.1), (3, 0, 0.1)]
    g = DirectedGraph.from_edges(4, edges)
    table = count_simple_paths(g)
    for s in range(4):
        for v in range(4):
            if v != s:
                assert table[s, v] == len(enumerate_simple_paths(g, SeedSet.of([s]), v))


# ────────────────────────────────
# path constants
# ────────────────────────────────
def test_budget_sets_lexicographic():
    assert list(iter_budget_sets(3, 1)) == [(), (0,), (1,), (2,)]
    assert list(iter_budget_sets(3, 2, exact=True)) == [(0, 1), (0, 2), (1, 2)]
    with pytest.raises(GuardExceeded):
        list(iter_budget_sets(30, 10, cap=1000))


def test_constants_empty_spec(fork):
    consts = path_constants(fork, ExposureSpec.empty(fork.n), 2)
    for arr in (consts.D_pos, consts.D_neg, consts.C_pos, consts.C_neg):
        assert not arr.any()


def test_constants_path_graph():
    g = DirectedGraph.from_edges(3, [(0, 1, 0.3), (1, 2, 0.3)])
    spec = ExposureSpec(((), (), (1,)), ((), (), ()))
    consts = path_constants(g, spec, 1)
    assert consts.D_pos[2] == 1
    assert consts.C_pos[2] == 0


def test_constants_two_sources_ordered_pairs(fork, fork_spec):
    consts = path_constants(fork, fork_spec, 1)
    assert consts.D_pos[3] == 2
    assert consts.C_pos[3] == 2
