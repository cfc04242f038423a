# tests/test_diffusion.py
from __future__ import annotations

import math

import numpy as np
import pytest

from cimo.core.diffusion import (
    LiveEdgeSample,
    bernstein_radius,
    exact_law,
    live_matrix,
    mc_exposures,
    mc_reach,
    sample_live_edges,
    simulate_rounds,
    steady_state,
    steady_states,
)
from cimo.core.errors import GuardExceeded, ValidationError
from cimo.core.graph import DirectedGraph, ExposureSpec, SeedSet, count_simple_paths, exposure_counts
from cimo.core.rng import RngStream


# ────────────────────────────────
# live edges
# ────────────────────────────────
@pytest.mark.parametrize("p, expected", [(0.0, False), (1.0, True)])
def test_degenerate_probabilities(p, expected):
    g = DirectedGraph.from_edges(3, [(0, 1, p), (1, 2, p)])
    for seed in range(5):
        assert np.all(sample_live_edges(g, seed).live == expected)


def test_live_fraction():
    g = DirectedGraph.from_edges(2, [(0, 1, 0.3)])
    live = live_matrix(g, RngStream(11), 20_000)
    assert live.shape == (20_000, 1)
    assert abs(live.mean() - 0.3) < 0.01


def test_live_matrix_rows_are_stable_across_threads(fork):
    one = live_matrix(fork, RngStream(5), 600, threads=1)
    four = live_matrix(fork, RngStream(5), 600, threads=4)
    assert np.array_equal(one, four)
    assert np.array_equal(one[:10], live_matrix(fork, RngStream(5), 10))


def test_rng_stream_children_differ():
    a = RngStream(1).child("round", 0).generator().random(4)
    b = RngStream(1).child("round", 1).generator().random(4)
    assert not np.allclose(a, b)
    with pytest.raises(ValueError):
        RngStream(1).child(-1)


# ────────────────────────────────
# steady state
# ────────────────────────────────
def test_no_live_edges_keeps_only_seeds(fork):
    z = steady_state(SeedSet.of([1]), fork, LiveEdgeSample(np.zeros(fork.m, dtype=bool))).z_inf
    assert z.tolist() == [False, True, False, False]


def test_all_live_reaches_everything(fork):
    z = steady_state(SeedSet.of([0]), fork, LiveEdgeSample(np.ones(fork.m, dtype=bool))).z_inf
    assert z.all()


def test_chain_partial(chain):
    z = steady_state(SeedSet.of([0]), chain, LiveEdgeSample(np.array([True, False]))).z_inf
    assert z.astype(int).tolist() == [1, 1, 0]


def test_batched_matches_single(fork):
    live = live_matrix(fork, RngStream(3), 50)
    S = SeedSet.of([0])
    batch = steady_states(S, fork, live)
    for r in range(50):
        assert np.array_equal(batch[r], steady_state(S, fork, LiveEdgeSample(live[r])).z_inf)


def test_empty_seed_set_activates_nothing(fork):
    z = steady_states(SeedSet(frozenset(), 1), fork, np.ones((3, fork.m), dtype=bool))
    assert not z.any()


def test_larger_seed_set_dominates_under_a_shared_sample():
    gen = np.random.default_rng(4)
    n = 7
    pairs = [(u, v) for u in range(n) for v in range(n) if u != v and gen.random() < 0.35]
    g = DirectedGraph.from_edges(n, [(u, v, float(gen.uniform(0.1, 0.9))) for u, v in pairs])
    spec = ExposureSpec.from_in_neighbors(g)
    for r in range(40):
        live = sample_live_edges(g, RngStream(8).child(r))
        small = SeedSet.of(gen.choice(n, size=1, replace=False).tolist())
        extra = gen.choice([v for v in range(n) if v not in small.members], size=2, replace=False)
        big = SeedSet.of(sorted(small.members | {int(v) for v in extra}))
        z_small = steady_state(small, g, live).z_inf
        z_big = steady_state(big, g, live).z_inf
        assert np.all(z_small <= z_big)
        kp_small, _ = exposure_counts(z_small.astype(np.int64), spec)
        kp_big, _ = exposure_counts(z_big.astype(np.int64), spec)
        assert np.all(np.asarray(kp_small) <= np.asarray(kp_big))


# ────────────────────────────────
# Monte-Carlo exposures
# ────────────────────────────────
def test_sources_inside_seed_set_are_exact(fork, fork_spec):
    est = mc_exposures(SeedSet.of([1, 2]), fork, fork_spec, 200, 0)
    assert est.k_hat_pos[3] == 2
    assert est.var_pos[3] == 0


def test_zero_probabilities_give_zero_exposure():
    g = DirectedGraph.from_edges(3, [(0, 1, 0.0), (1, 2, 0.0)])
    est = mc_exposures(SeedSet.of([0]), g, ExposureSpec.from_in_neighbors(g), 100, 0)
    assert est.k_hat_pos[2] == 0
    assert est.var_pos is not None


def test_single_replicate_has_no_variance(fork, fork_spec):
    est = mc_exposures(SeedSet.of([0]), fork, fork_spec, 1, 0)
    assert est.var_pos is None
    with pytest.raises(ValidationError):
        mc_exposures(SeedSet.of([0]), fork, fork_spec, 0, 0)


def test_mc_within_bernstein_radius(fork, fork_spec):
    S = SeedSet.of([0])
    law = exact_law(S, fork, fork_spec)
    R = 20_000
    est = mc_exposures(S, fork, fork_spec, R, RngStream(2024))
    for i in range(fork.n):
        M = max(int(est.M_pos[i]), 1)
        radius = bernstein_radius(float(law.var_pos[i]), M, R, 1e-3)
        assert abs(est.k_hat_pos[i] - law.k_pos[i]) <= radius


def test_same_seed_same_estimate(fork, fork_spec):
    a = mc_exposures(SeedSet.of([0]), fork, fork_spec, 300, 9)
    b = mc_exposures(SeedSet.of([0]), fork, fork_spec, 300, 9, threads=3)
    assert np.array_equal(a.k_hat_pos, b.k_hat_pos)


def test_mc_reach_chain_certain():
    g = DirectedGraph.from_edges(3, [(0, 1, 1.0), (1, 2, 1.0)])
    assert mc_reach(SeedSet.of([0]), g, 10, 0) == 3.0


# ────────────────────────────────
# exact law
# ────────────────────────────────
def test_single_edge_marginal():
    g = DirectedGraph.from_edges(2, [(0, 1, 0.35)])
    law = exact_law(SeedSet.of([0]), g, ExposureSpec.from_in_neighbors(g))
    assert law.marginals[1] == pytest.approx(0.35)
    assert law.probs.sum() == pytest.approx(1.0)


def test_two_route_marginal():
    p1, p2, p3 = 0.2, 0.5, 0.4
    g = DirectedGraph.from_edges(3, [(0, 1, p1), (0, 2, p2), (2, 1, p3)])
    law = exact_law(SeedSet.of([0]), g, ExposureSpec.from_in_neighbors(g))
    assert law.marginals[1] == pytest.approx(1 - (1 - p1) * (1 - p2 * p3), abs=1e-12)


def test_everything_seeded(fork, fork_spec):
    law = exact_law(SeedSet.of(range(4)), fork, fork_spec)
    assert np.allclose(law.marginals, 1.0)
    assert not law.EU_pos.any()
    assert law.k_pos.tolist() == [0, 1, 1, 2]


def test_expectation_of_reach(fork, fork_spec):
    law = exact_law(SeedSet.of([0]), fork, fork_spec)
    assert law.expectation(lambda z: z.sum(axis=1)) == pytest.approx(law.marginals.sum())


def test_exact_matches_round_simulator_on_chain(chain):
    law = exact_law(SeedSet.of([0]), chain, ExposureSpec.from_in_neighbors(chain))
    gen = np.random.default_rng(0)
    hits = np.mean([simulate_rounds(SeedSet.of([0]), chain, gen)[2] for _ in range(20_000)])
    assert law.marginals[2] == pytest.approx(0.25)
    assert abs(hits - 0.25) < 0.02


def test_exact_guard_counts_reachable_edges_only():
    # 25 edges, but only one leaves the seed's component
    edges = [(0, 1, 0.5)] + [(u, u + 1, 0.5) for u in range(2, 26)]
    g = DirectedGraph.from_edges(27, edges)
    spec = ExposureSpec.from_in_neighbors(g)
    assert exact_law(SeedSet.of([0]), g, spec).marginals[1] == pytest.approx(0.5)
    with pytest.raises(GuardExceeded):
        exact_law(SeedSet.of([2]), g, spec)


def test_reachability_bounds(fork, fork_spec):
    S = SeedSet.of([0])
    law = exact_law(S, fork, fork_spec)
    eps = fork.epsilon
    counts = count_simple_paths(fork)[0]
    for v in range(1, 4):
        assert law.marginals[v] <= counts[v] * eps + 1e-12
        for w in range(1, 4):
            if w != v:
                assert law.joint[v, w] <= eps ** 2 * counts[v] * counts[w] + 1e-12


# ────────────────────────────────
# Bernstein radius
# ────────────────────────────────
def test_bernstein_zero_variance():
    assert bernstein_radius(0.0, 1.0, 100, 0.1) == pytest.approx(2 * math.log(20) / 300)
    assert bernstein_radius(0.0, 1.0, 100, 0.1) == pytest.approx(0.01997, abs=5e-6)


def test_bernstein_shrinks_with_R():
    radii = [bernstein_radius(0.5, 2.0, R, 0.05) for R in (10, 100, 1000, 10_000)]
    assert all(a > b for a, b in zip(radii, radii[1:]))


def test_bernstein_rejects_bad_delta():
    with pytest.raises(ValidationError):
        bernstein_radius(0.1, 1.0, 10, 1.0)
