"""
cimo/core/diffusion.py
======================
Independent live-edge (IC-type) diffusion:
 🎲 live-edge sampling with per-replicate sub-streams
 🌊 steady state as reachability from the seeds over live edges
 📊 Monte-Carlo expected exposures with sample variances
 🧮 exact diffusion law by enumerating every live-edge configuration
 🔁 an independently coded round-by-round simulator used as a cross-check
"""

from __future__ import annotations
import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .constants import EXACT_EDGE_GUARD, PROB_SUM_TOL
from .errors import GuardExceeded, ValidationError
from .graph import DirectedGraph, ExposureSpec, SeedSet
from .rng import RngStream, as_stream
from .utils import parallel_map

log = logging.getLogger("cimo.diffusion")

# Live-edge configurations enumerated per vectorised block in exact_law
_EXACT_BLOCK = 1 << 15
# Replicates drawn per worker task in live_matrix
_REPLICATE_CHUNK = 256


# ────────────────────────────────
# 📦 Types
# ────────────────────────────────
@dataclass(frozen=True)
class LiveEdgeSample:
    live: np.ndarray  # bool per edge, aligned with DirectedGraph edge order


@dataclass(frozen=True)
class SteadyState:
    z_inf: np.ndarray  # bool per node


@dataclass(frozen=True)
class ExposureEstimate:
    S: SeedSet
    k_hat_pos: np.ndarray
    k_hat_neg: np.ndarray
    R: int
    var_pos: np.ndarray | None  # None when R == 1
    var_neg: np.ndarray | None
    M_pos: np.ndarray
    M_neg: np.ndarray


@dataclass(frozen=True)
class ExactDiffusionLaw:
    """
    Exact law of z_∞(S), stored sparsely: one row per distinct outcome.
    Exposure moments refer to the ExposureSpec the law was built with.
    """

    S: SeedSet
    support: np.ndarray  # (u x n) bool, distinct z_∞ vectors
    probs: np.ndarray  # (u,)
    marginals: np.ndarray  # P(z_j = 1)
    joint: np.ndarray  # P(z_j = 1, z_k = 1)
    k_pos: np.ndarray
    k_neg: np.ndarray
    EU_pos: np.ndarray
    EU_neg: np.ndarray
    EU2_pos: np.ndarray  # E[(U)_2] = E[U(U-1)]
    EU2_neg: np.ndarray
    var_pos: np.ndarray  # Var(K_i^±) = Var(U_i^±)
    var_neg: np.ndarray
    seed_pos: np.ndarray  # |N_i^± ∩ S|
    seed_neg: np.ndarray

    def expectation(self, fn: Callable[[np.ndarray], np.ndarray]) -> float:
        """E[fn(z_∞)] for a function evaluated row-wise on the support."""
        return float(self.probs @ np.asarray(fn(self.support), dtype=float))


# ────────────────────────────────
# 🎲 Sampling
# ────────────────────────────────
def _generator(rng: RngStream | np.random.Generator | int) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return as_stream(rng).generator()


def sample_live_edges(g: DirectedGraph, rng: RngStream | np.random.Generator | int) -> LiveEdgeSample:
    """Each edge is live independently with probability p_e."""
    gen = _generator(rng)
    return LiveEdgeSample(gen.random(g.m) < g.p)


def live_matrix(g: DirectedGraph, rng: RngStream | int, R: int, threads: int | None = 1) -> np.ndarray:
    """(R x m) live-edge draws; row r comes from sub-stream `rng.child(r)`."""
    stream = as_stream(rng)
    chunks = [range(a, min(a + _REPLICATE_CHUNK, R)) for a in range(0, R, _REPLICATE_CHUNK)]

    def draw(rows: range) -> np.ndarray:
        block = np.empty((len(rows), g.m), dtype=bool)
        for k, r in enumerate(rows):
            block[k] = stream.child(r).generator().random(g.m) < g.p
        return block

    blocks = parallel_map(draw, chunks, threads)
    return np.concatenate(blocks, axis=0) if blocks else np.zeros((0, g.m), dtype=bool)


# ────────────────────────────────
# 🌊 Reachability
# ────────────────────────────────
def steady_state(S: SeedSet, g: DirectedGraph, live: LiveEdgeSample) -> SteadyState:
    """z_∞[v] = 1 iff v is reachable from S over live edges (BFS)."""
    S.validate_for(g)
    if len(live.live) != g.m:
        raise ValidationError("live-edge sample does not match edge count")
    out_edges = g.out_edges()
    dst = g.dst.tolist()
    z = S.indicator(g.n)
    queue = S.sorted()
    while queue:
        u = queue.pop()
        for e in out_edges[u]:
            if live.live[e] and not z[dst[e]]:
                z[dst[e]] = True
                queue.append(dst[e])
    return SteadyState(z)


def steady_states(S: SeedSet, g: DirectedGraph, live: np.ndarray) -> np.ndarray:
    """Batched reachability: one z_∞ row per row of the (R x m) live matrix."""
    live = np.asarray(live, dtype=bool)
    R = live.shape[0]
    z = np.zeros((R, g.n), dtype=bool)
    if S.members:
        z[:, S.sorted()] = True
    if g.m == 0 or R == 0 or not S.members:
        return z
    hit = np.zeros((g.m, g.n), dtype=np.float32)
    hit[np.arange(g.m), g.dst] = 1.0
    for _ in range(g.n):
        fired = (z[:, g.src] & live).astype(np.float32)
        grown = z | ((fired @ hit) > 0)
        if np.array_equal(grown, z):
            break
        z = grown
    return z


def simulate_rounds(S: SeedSet, g: DirectedGraph, rng: np.random.Generator) -> np.ndarray:
    """
    Round-by-round independent cascade: every newly active node gets exactly
    one activation attempt per outgoing edge to a still-inactive node.
    """
    out_edges = g.out_edges()
    active = S.indicator(g.n)
    frontier = S.sorted()
    while frontier:
        fresh = []
        for u in frontier:
            for e in out_edges[u]:
                w = int(g.dst[e])
                if not active[w] and rng.random() < g.p[e]:
                    active[w] = True
                    fresh.append(w)
        frontier = fresh
    return active


# ────────────────────────────────
# 📊 Monte-Carlo exposures
# ────────────────────────────────
def exposures_from_live(S: SeedSet, g: DirectedGraph, spec: ExposureSpec, live: np.ndarray) -> ExposureEstimate:
    """Exposure estimate from a given block of live-edge samples."""
    R = live.shape[0]
    if R < 1:
        raise ValidationError("need at least one replicate (R >= 1)")
    z = steady_states(S, g, live).astype(np.int64)
    mp, mn = spec.matrices()
    kp = z @ mp.T
    kn = z @ mn.T
    m_pos, m_neg = spec.sizes()
    var_pos = kp.var(axis=0, ddof=1) if R > 1 else None
    var_neg = kn.var(axis=0, ddof=1) if R > 1 else None
    return ExposureEstimate(S, kp.mean(axis=0), kn.mean(axis=0), R, var_pos, var_neg, m_pos, m_neg)


def mc_exposures(
    S: SeedSet,
    g: DirectedGraph,
    spec: ExposureSpec,
    R: int,
    rng: RngStream | int,
    threads: int | None = 1,
) -> ExposureEstimate:
    """k̂_i^± = mean of K_i^±(z_∞^{(r)}(S)) over R independent live-edge draws."""
    if R < 1:
        raise ValidationError("R must be at least 1")
    S.validate_for(g)
    return exposures_from_live(S, g, spec, live_matrix(g, rng, R, threads))


def mc_reach(S: SeedSet, g: DirectedGraph, R: int, rng: RngStream | int, live: np.ndarray | None = None) -> float:
    """Monte-Carlo E[Σ_v z_∞,v(S)]."""
    if live is None:
        live = live_matrix(g, rng, R)
    return float(steady_states(S, g, live).sum(axis=1).mean())


# ────────────────────────────────
# 🧮 Exact law
# ────────────────────────────────
def _relevant_edges(S: SeedSet, g: DirectedGraph) -> np.ndarray:
    """Edges whose tail is reachable from S in the full graph; the rest never fire."""
    full = LiveEdgeSample(np.ones(g.m, dtype=bool))
    reach = steady_state(S, g, full).z_inf
    return np.flatnonzero(reach[g.src])


def exact_law(
    S: SeedSet,
    g: DirectedGraph,
    spec: ExposureSpec,
    guard: int = EXACT_EDGE_GUARD,
) -> ExactDiffusionLaw:
    """
    Enumerate all live-edge configurations of the edges that can fire from S,
    weight each by Π p_e^{L_e}(1-p_e)^{1-L_e}, and group by resulting z_∞.
    """
    S.validate_for(g)
    rel = _relevant_edges(S, g)
    if len(rel) > guard:
        raise GuardExceeded(f"{len(rel)} edges reachable from the seeds exceed the exact-law guard ({guard})")
    m = len(rel)
    p_rel = g.p[rel]
    outcomes: dict[bytes, float] = {}
    rows: dict[bytes, np.ndarray] = {}
    total = 1 << m
    for start in range(0, total, _EXACT_BLOCK):
        codes = np.arange(start, min(start + _EXACT_BLOCK, total), dtype=np.int64)
        bits = ((codes[:, None] >> np.arange(m, dtype=np.int64)) & 1).astype(bool)
        probs = np.prod(np.where(bits, p_rel, 1.0 - p_rel), axis=1)
        keep = probs > 0
        if not keep.any():
            continue
        live = np.zeros((int(keep.sum()), g.m), dtype=bool)
        live[:, rel] = bits[keep]
        z = steady_states(S, g, live)
        packed = np.packbits(z, axis=1)
        uniq, inverse = np.unique(packed, axis=0, return_inverse=True)
        mass = np.bincount(inverse.reshape(-1), weights=probs[keep], minlength=len(uniq))
        for k, key_row in enumerate(uniq):
            key = key_row.tobytes()
            if key not in outcomes:
                outcomes[key] = 0.0
                rows[key] = np.unpackbits(key_row)[: g.n].astype(bool)
            outcomes[key] += float(mass[k])

    keys = sorted(outcomes)
    support = np.array([rows[k] for k in keys], dtype=bool).reshape(len(keys), g.n)
    probs = np.array([outcomes[k] for k in keys])
    if abs(probs.sum() - 1.0) > PROB_SUM_TOL * max(1, len(keys)):
        log.warning(f"⚠️ exact law mass sums to {probs.sum():.15f}")

    zf = support.astype(float)
    marginals = probs @ zf
    joint = (zf.T * probs) @ zf

    mp, mn = spec.matrices()
    seeds = S.sorted()
    seed_pos = mp[:, seeds].sum(axis=1) if seeds else np.zeros(g.n, dtype=np.int64)
    seed_neg = mn[:, seeds].sum(axis=1) if seeds else np.zeros(g.n, dtype=np.int64)
    mp_free, mn_free = mp.copy(), mn.copy()
    mp_free[:, seeds] = 0
    mn_free[:, seeds] = 0

    def moments(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        U = support.astype(np.int64) @ mask.T
        eu = probs @ U
        eu2 = probs @ (U * (U - 1))
        var = np.maximum(probs @ (U * U) - eu * eu, 0.0)
        return eu, eu2, var

    eu_p, eu2_p, var_p = moments(mp_free)
    eu_n, eu2_n, var_n = moments(mn_free)
    return ExactDiffusionLaw(
        S=S, support=support, probs=probs, marginals=marginals, joint=joint,
        k_pos=seed_pos + eu_p, k_neg=seed_neg + eu_n,
        EU_pos=eu_p, EU_neg=eu_n, EU2_pos=eu2_p, EU2_neg=eu2_n,
        var_pos=var_p, var_neg=var_n, seed_pos=seed_pos, seed_neg=seed_neg,
    )


# ────────────────────────────────
# 📐 Concentration
# ────────────────────────────────
def bernstein_radius(variance: float, M: float, R: int, delta: float) -> float:
    """sqrt(2·Var·log(2/δ)/R) + 2M·log(2/δ)/(3R)."""
    if not 0.0 < delta < 1.0:
        raise ValidationError(f"delta must lie in (0, 1), got {delta}")
    if variance < 0 or M <= 0 or R < 1:
        raise ValidationError("need variance >= 0, M > 0 and R >= 1")
    log_term = math.log(2.0 / delta)
    return math.sqrt(2.0 * variance * log_term / R) + 2.0 * M * log_term / (3.0 * R)
