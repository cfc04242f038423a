# tests/test_selection.py
from __future__ import annotations

import pytest

from cimo.core.errors import ValidationError
from cimo.core.graph import DirectedGraph, ExposureSpec, SeedSet
from cimo.core.selection import (
    SelectionResult,
    TraceStep,
    baseline_select,
    certify_submodular,
    check_exhaustive_feasible,
    double_greedy,
    end_to_end_check,
    exhaustive_opt,
    greedy_cim,
)

from .conftest import single_stratum


@pytest.fixture
def two_stars():
    """0 → {1, 2} and 3 → 4 with certain edges; 5 isolated."""
    return DirectedGraph.from_edges(6, [(0, 1, 1.0), (0, 2, 1.0), (3, 4, 1.0)])


@pytest.fixture
def two_stars_model():
    return single_stratum(6, 0.1, [0.0, 0.5])


# ────────────────────────────────
# greedy
# ────────────────────────────────
def test_greedy_cim_deterministic_graph(two_stars, two_stars_model):
    spec = ExposureSpec.from_in_neighbors(two_stars)
    result = greedy_cim(two_stars, spec, two_stars_model, 2, 20, 0)
    assert result.order == [0, 3]
    assert result.trace[0].value == pytest.approx(1.1)
    assert result.trace[1].value == pytest.approx(1.7)
    assert result.evaluations == 12


def test_lazy_matches_eager_with_fewer_evaluations(two_stars, two_stars_model):
    spec = ExposureSpec.from_in_neighbors(two_stars)
    eager = greedy_cim(two_stars, spec, two_stars_model, 2, 20, 0)
    lazy = greedy_cim(two_stars, spec, two_stars_model, 2, 20, 0, lazy=True)
    assert lazy.order == eager.order
    assert [s.value for s in lazy.trace] == pytest.approx([s.value for s in eager.trace])
    assert lazy.evaluations < eager.evaluations
    assert lazy.lazy_fallbacks == 0


def test_greedy_ties_go_to_smallest_id():
    g = DirectedGraph.from_edges(3, [])
    model = single_stratum(3, 0.2, [0.0])
    result = greedy_cim(g, ExposureSpec.empty(3), model, 2, 5, 0)
    assert result.order == [0, 1]


def test_fixed_seed_is_reproducible(fork, fork_spec, concave_model):
    for crn in (True, False):
        a = greedy_cim(fork, fork_spec, concave_model, 2, 200, 42, crn=crn)
        b = greedy_cim(fork, fork_spec, concave_model, 2, 200, 42, crn=crn, threads=3)
        assert a.to_dict(timings=False) == b.to_dict(timings=False)
        assert a.trace_csv(timings=False) == b.trace_csv(timings=False)


@pytest.mark.parametrize("K", [0, 5])
def test_budget_out_of_range(fork, fork_spec, concave_model, K):
    with pytest.raises(ValidationError):
        greedy_cim(fork, fork_spec, concave_model, K, 10, 0)


def test_model_size_mismatch(fork, fork_spec):
    with pytest.raises(ValidationError):
        greedy_cim(fork, fork_spec, single_stratum(3, 0.1, [0.0, 0.5]), 1, 10, 0)


# ────────────────────────────────
# baselines
# ────────────────────────────────
def test_degree_picks_star_centre(star):
    result = baseline_select("degree", star, 1)
    assert result.order == [0]
    assert result.trace[0].gain == 4.0
    assert result.evaluations == 0


def test_greedy_reach_picks_chain_head(chain):
    assert baseline_select("greedy_reach", chain, 1, R=2000, rng=1).order == [0]


def test_random_baseline_is_seeded(star):
    a = baseline_select("random", star, 3, rng=7)
    b = baseline_select("random", star, 3, rng=7)
    assert a.order == b.order
    assert len(set(a.order)) == 3


def test_unknown_baseline(star):
    with pytest.raises(ValidationError):
        baseline_select("pagerank", star, 1)


# ────────────────────────────────
# exhaustive / certificate / double greedy
# ────────────────────────────────
def test_exhaustive_lexicographic_tie_break():
    S, val = exhaustive_opt(lambda S: 1.0, 3, 2)
    assert S == frozenset({0, 1})
    assert val == 1.0


def test_exhaustive_weighted():
    w = [0.3, 0.9, 0.5, 0.1]
    S, val = exhaustive_opt(lambda S: sum(w[v] for v in S), 4, 2)
    assert S == frozenset({1, 2})
    assert val == pytest.approx(1.4)


def test_exhaustive_upto_allows_empty():
    S, val = exhaustive_opt(lambda S: -float(len(S)), 3, 2, upto=True)
    assert S == frozenset()
    assert val == 0.0


def test_certify_coverage_function():
    cover = {0: {"a", "b"}, 1: {"b", "c"}, 2: {"c"}}
    cert = certify_submodular(lambda S: float(len(set().union(*(cover[v] for v in S)))), 3, 3)
    assert cert.certified
    assert cert.violations == ()


def test_certify_flags_supermodular_and_decreasing():
    cert = certify_submodular(lambda S: float(len(S) ** 2), 3, 2)
    assert cert.monotone
    assert not cert.submodular
    assert cert.violations[0]["kind"] == "submodular"
    assert not certify_submodular(lambda S: -float(len(S)), 3, 1).monotone


def test_double_greedy_modular():
    w = [1.0, -1.0, 2.0]
    result = double_greedy(lambda S: sum(w[v] for v in S), 3)
    assert result.seeds.members == frozenset({0, 2})
    assert result.evaluations == 8


def test_exhaustive_feasibility_guard():
    assert check_exhaustive_feasible(6, 2)
    assert not check_exhaustive_feasible(40, 12, cap=1000)


# ────────────────────────────────
# end-to-end guarantee
# ────────────────────────────────
def test_end_to_end_with_correct_model(fork, fork_spec, concave_model):
    report = end_to_end_check(fork, fork_spec, concave_model, concave_model, 1, 2000, 3)
    assert report.n_sets == 5
    assert report.delta_str == pytest.approx(0.036)
    assert report.holds is True
    assert 0 < report.rho_measured <= 1
    assert report.to_dict()["rhs"] == pytest.approx(report.rhs)


def test_end_to_end_rejects_over_budget_selection(fork, fork_spec, concave_model):
    with pytest.raises(ValidationError):
        end_to_end_check(fork, fork_spec, concave_model, concave_model, 1, 50, 0, selected=[0, 1])


# ────────────────────────────────
# SelectionResult
# ────────────────────────────────
def test_trace_length_must_match_seeds():
    with pytest.raises(ValidationError):
        SelectionResult("cim", SeedSet.of([0, 1]), (TraceStep(0, 0, 1.0, 1.0, 3),), 3)


def test_serialisation_without_timings(two_stars, two_stars_model):
    spec = ExposureSpec.from_in_neighbors(two_stars)
    result = greedy_cim(two_stars, spec, two_stars_model, 1, 5, 0)
    doc = result.to_dict(timings=False)
    assert "wall_time" not in doc
    assert "ms" not in doc["trace"][0]
    assert "wall_time" in result.to_dict()
    assert result.trace_csv(timings=False).splitlines()[1].endswith(",")
