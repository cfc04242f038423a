"""
cimo/core/selection.py
======================
Seed-set optimisation.

 🧠 greedy_cim      greedy on the plug-in objective (eager or lazy, common random numbers)
 📊 baseline_select random / degree / greedy_reach
 🔍 exhaustive_opt  brute-force oracle with lexicographic tie-breaking
 ✅ certify_submodular, end_to_end_check
 🧪 double_greedy   experimental unconstrained variant
"""

from __future__ import annotations
import heapq
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .constants import FORMAT_VERSION, LAZY_TIE_TOL, SUBSET_CAP
from .diffusion import exact_law, exposures_from_live, live_matrix, steady_states
from .errors import GuardExceeded, ValidationError
from .estimand import exact_surrogate, plugin_value, welfare_under_law
from .graph import DirectedGraph, ExposureSpec, SeedSet, iter_budget_sets
from .response import ResponseModel
from .rng import RngStream, as_stream
from .utils import parallel_map

log = logging.getLogger("cimo.selection")

Objective = Callable[[frozenset], float]


# ────────────────────────────────
# 📦 SelectionResult
# ────────────────────────────────
@dataclass(frozen=True)
class TraceStep:
    step: int
    node: int
    gain: float
    value: float
    evals: int
    ms: float = field(default=0.0, compare=False)


@dataclass(frozen=True)
class SelectionResult:
    method: str
    seeds: SeedSet
    trace: tuple[TraceStep, ...]
    evaluations: int
    wall_time: float = field(default=0.0, compare=False)
    lazy: bool = False
    crn: bool = False
    lazy_fallbacks: int = 0

    def __post_init__(self):
        if len(self.trace) != len(self.seeds):
            raise ValidationError("trace length must equal the number of selected seeds")

    @property
    def order(self) -> list[int]:
        return [s.node for s in self.trace]

    def to_dict(self, timings: bool = True) -> dict:
        """`timings=False` drops wall-clock fields so fixed-seed runs serialise byte-identically."""
        doc = {
            "format_version": FORMAT_VERSION,
            "method": self.method,
            "seeds": self.order,
            "K": self.seeds.K,
            "evaluations": self.evaluations,
            "lazy": self.lazy,
            "common_random_numbers": self.crn,
            "lazy_fallbacks": self.lazy_fallbacks,
            "trace": [
                {"step": s.step, "node": s.node, "gain": s.gain, "value": s.value, "evals": s.evals}
                for s in self.trace
            ],
        }
        if timings:
            doc["wall_time"] = self.wall_time
            for row, s in zip(doc["trace"], self.trace):
                row["ms"] = s.ms
        return doc

    def trace_csv(self, timings: bool = True) -> str:
        lines = ["step,node,gain,value,evals,ms"]
        for s in self.trace:
            ms = f"{s.ms:.3f}" if timings else ""
            lines.append(f"{s.step},{s.node},{s.gain!r},{s.value!r},{s.evals},{ms}")
        return "\n".join(lines) + "\n"


def _check_budget(n: int, K: int) -> None:
    if K < 1:
        raise ValidationError("budget K must be a positive integer")
    if K > n:
        raise ValidationError(f"budget K={K} exceeds node count n={n}")


# ────────────────────────────────
# 🧠 Greedy engine
# ────────────────────────────────
def _greedy(
    method: str,
    n: int,
    K: int,
    make_round: Callable[[int], Callable[[frozenset, int | None], float]],
    lazy: bool = False,
    threads: int | None = 1,
    crn: bool = True,
) -> SelectionResult:
    """
    K rounds; round t asks `make_round(t)` for an evaluator of S ∪ {v}
    (v=None evaluates S itself). Value of the empty set is 0.
    Ties go to the smallest node id.
    """
    start = time.perf_counter()
    chosen: list[int] = []
    trace: list[TraceStep] = []
    total_evals = 0
    fallbacks = 0
    stale: dict[int, float] = {}

    for t in range(K):
        t0 = time.perf_counter()
        evaluate = make_round(t)
        current = frozenset(chosen)
        base = 0.0
        evals = 0
        if chosen:
            base = evaluate(current, None)
            evals += 1
        remaining = [v for v in range(n) if v not in current]

        def gain_of(v: int) -> float:
            return evaluate(current, v) - base

        fresh: dict[int, float] = {}
        if lazy and stale:
            heap = [(-stale[v], v) for v in remaining]
            heapq.heapify(heap)
            violated = False
            while heap:
                neg_bound, v = heap[0]
                best = max(fresh.values()) if fresh else -math.inf
                if fresh and -neg_bound < best - LAZY_TIE_TOL:
                    break
                heapq.heappop(heap)
                fresh[v] = gain_of(v)
                evals += 1
                if fresh[v] > -neg_bound + LAZY_TIE_TOL:
                    violated = True
                    break
            if violated:
                fallbacks += 1
                log.debug(f"round {t}: marginal gain rose above its stale bound; full scan")
                rest = [v for v in remaining if v not in fresh]
                for v, g in zip(rest, parallel_map(gain_of, rest, threads)):
                    fresh[v] = g
                evals += len(rest)
        else:
            for v, g in zip(remaining, parallel_map(gain_of, remaining, threads)):
                fresh[v] = g
            evals += len(remaining)

        best_gain = max(fresh.values())
        pick = min(v for v, g in fresh.items() if g == best_gain)
        stale.update(fresh)
        stale.pop(pick, None)
        chosen.append(pick)
        total_evals += evals
        trace.append(TraceStep(t, pick, best_gain, base + best_gain, evals, (time.perf_counter() - t0) * 1000))
        log.debug(f"round {t}: node {pick} gain {best_gain:.6g}")

    return SelectionResult(
        method=method,
        seeds=SeedSet(frozenset(chosen), K),
        trace=tuple(trace),
        evaluations=total_evals,
        wall_time=time.perf_counter() - start,
        lazy=lazy,
        crn=crn,
        lazy_fallbacks=fallbacks,
    )


def _with(current: frozenset, v: int | None) -> SeedSet:
    members = current if v is None else current | {v}
    return SeedSet(members, max(1, len(members)))


def greedy_cim(
    g: DirectedGraph,
    spec: ExposureSpec,
    fitted: ResponseModel,
    K: int,
    R: int,
    rng: RngStream | int,
    lazy: bool = False,
    crn: bool = True,
    threads: int | None = 1,
    method: str = "cim",
) -> SelectionResult:
    """Greedy maximisation of F̂(S) = plug-in value at Monte-Carlo exposures."""
    _check_budget(g.n, K)
    if R < 1:
        raise ValidationError("R must be at least 1")
    if fitted.n != g.n:
        raise ValidationError(f"fitted model covers {fitted.n} nodes but the graph has {g.n}")
    stream = as_stream(rng)

    def make_round(t: int):
        shared = live_matrix(g, stream.child("round", t), R) if crn else None

        def evaluate(current: frozenset, v: int | None) -> float:
            S = _with(current, v)
            if shared is not None:
                live = shared
            else:
                key = -1 if v is None else v
                live = live_matrix(g, stream.child("round", t, "cand", key + 1), R)
            return plugin_value(S, fitted, exposures_from_live(S, g, spec, live))

        return evaluate

    return _greedy(method, g.n, K, make_round, lazy=lazy, threads=threads, crn=crn)


# ────────────────────────────────
# 📊 Baselines
# ────────────────────────────────
def _fixed_result(method: str, order: list[int], K: int, scores: list[float] | None = None) -> SelectionResult:
    trace = tuple(
        TraceStep(t, v, float("nan") if scores is None else float(scores[t]), float("nan"), 0)
        for t, v in enumerate(order)
    )
    return SelectionResult(method, SeedSet(frozenset(order), K), trace, 0)


def baseline_select(
    method: str,
    g: DirectedGraph,
    K: int,
    R: int = 1000,
    rng: RngStream | int = 0,
    threads: int | None = 1,
) -> SelectionResult:
    _check_budget(g.n, K)
    stream = as_stream(rng)
    if method == "random":
        picks = stream.child("random").generator().choice(g.n, size=K, replace=False)
        return _fixed_result("random", sorted(int(v) for v in picks), K)
    if method == "degree":
        deg = g.out_degree()
        order = sorted(range(g.n), key=lambda v: (-int(deg[v]), v))[:K]
        return _fixed_result("degree", order, K, [float(deg[v]) for v in order])
    if method == "greedy_reach":
        if R < 1:
            raise ValidationError("R must be at least 1")

        def make_round(t: int):
            live = live_matrix(g, stream.child("reach", t), R)

            def evaluate(current: frozenset, v: int | None) -> float:
                S = _with(current, v)
                return float(steady_states(S, g, live).sum(axis=1).mean())

            return evaluate

        return _greedy("greedy_reach", g.n, K, make_round, threads=threads)
    raise ValidationError(f"unknown baseline {method!r}")


# ────────────────────────────────
# 🔍 Exhaustive oracle
# ────────────────────────────────
def exhaustive_opt(
    objective: Objective,
    n: int,
    K: int,
    upto: bool = False,
    cap: int = SUBSET_CAP,
) -> tuple[frozenset, float]:
    """argmax over |S| = K (or |S| ≤ K with `upto`); the first maximiser in lexicographic order wins."""
    if K < 0 or K > n:
        raise ValidationError(f"budget K={K} outside [0, {n}]")
    best_set, best_val = None, -math.inf
    for S in iter_budget_sets(n, K, cap, exact=not upto):
        val = float(objective(frozenset(S)))
        if val > best_val:
            best_set, best_val = frozenset(S), val
    return best_set, best_val


@dataclass(frozen=True)
class SubmodularityCertificate:
    monotone: bool
    submodular: bool
    violations: tuple[dict, ...] = ()

    @property
    def certified(self) -> bool:
        return self.monotone and self.submodular


def certify_submodular(objective: Objective, n: int, K: int, tol: float = 1e-9,
                       cap: int = SUBSET_CAP) -> SubmodularityCertificate:
    """
    Exhaustive check on sets of size ≤ K:
    f(S+v) ≥ f(S) and f(S+u) + f(S+v) ≥ f(S+u+v) + f(S).
    """
    values = {frozenset(S): float(objective(frozenset(S))) for S in iter_budget_sets(n, K, cap)}
    monotone, submodular = True, True
    violations: list[dict] = []
    for S, fS in values.items():
        if len(S) + 1 > K:
            continue
        outside = [v for v in range(n) if v not in S]
        for v in outside:
            if values[S | {v}] < fS - tol:
                monotone = False
                violations.append({"kind": "monotone", "S": sorted(S), "v": v})
        if len(S) + 2 > K:
            continue
        for a, u in enumerate(outside):
            for v in outside[a + 1 :]:
                lhs = values[S | {u}] + values[S | {v}]
                rhs = values[S | {u, v}] + fS
                if lhs < rhs - tol:
                    submodular = False
                    violations.append({"kind": "submodular", "S": sorted(S), "u": u, "v": v})
    return SubmodularityCertificate(monotone, submodular, tuple(violations[:50]))


def double_greedy(objective: Objective, n: int, rng: RngStream | int | None = None) -> SelectionResult:
    """
    Experimental: unconstrained (non-monotone) double greedy over the node
    order 0..n-1; deterministic unless `rng` is given.
    """
    start = time.perf_counter()
    gen = as_stream(rng).child("double_greedy").generator() if rng is not None else None
    X: set[int] = set()
    Y: set[int] = set(range(n))
    fX, fY = float(objective(frozenset())), float(objective(frozenset(Y)))
    evals = 2
    trace: list[TraceStep] = []
    for i in range(n):
        fXi = float(objective(frozenset(X | {i})))
        fYi = float(objective(frozenset(Y - {i})))
        evals += 2
        a, b = fXi - fX, fYi - fY
        if gen is None:
            take = a >= b
        else:
            ap, bp = max(a, 0.0), max(b, 0.0)
            take = gen.random() < (1.0 if ap + bp == 0 else ap / (ap + bp))
        if take:
            X.add(i)
            fX = fXi
            trace.append(TraceStep(len(trace), i, a, fX, evals))
        else:
            Y.discard(i)
            fY = fYi
    return SelectionResult(
        "double_greedy", SeedSet(frozenset(X), max(1, len(X))), tuple(trace), evals,
        wall_time=time.perf_counter() - start,
    )


# ────────────────────────────────
# ✅ End-to-end guarantee
# ────────────────────────────────
@dataclass(frozen=True)
class EndToEndReport:
    seeds: tuple[int, ...]
    n_sets: int
    delta_est: float
    delta_str: float
    rho: float | None
    rho_measured: float | None
    F_selected: float
    F_max: float
    F_hat_selected: float
    F_hat_max: float
    holds: bool | None

    @property
    def rhs(self) -> float | None:
        if self.rho is None:
            return None
        return self.rho * self.F_max - (1 + self.rho) * (self.delta_est + self.delta_str)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "seeds": list(self.seeds),
            "n_sets": self.n_sets,
            "delta_est": self.delta_est,
            "delta_str": self.delta_str,
            "rho": self.rho,
            "rho_measured": self.rho_measured,
            "F_selected": self.F_selected,
            "F_max": self.F_max,
            "F_hat_selected": self.F_hat_selected,
            "F_hat_max": self.F_hat_max,
            "rhs": self.rhs,
            "holds": self.holds,
        }


def end_to_end_check(
    g: DirectedGraph,
    spec: ExposureSpec,
    true_model: ResponseModel,
    fitted_model: ResponseModel,
    K: int,
    R: int,
    rng: RngStream | int,
    rho: float | None = None,
    threads: int | None = 1,
    selected: Iterable[int] | None = None,
) -> EndToEndReport:
    """
    Tabulate F, F̃ (true model, exact law) and F̂ (fitted model, R samples per
    set) over every |S| ≤ K, run greedy on F̂, and test
    F(Ŝ) ≥ ρ·max F - (1+ρ)(Δ_est + Δ_str). Without `rho` the measured
    F̂(Ŝ)/max F̂ is used.
    """
    _check_budget(g.n, K)
    stream = as_stream(rng)
    sets = [frozenset(S) for S in iter_budget_sets(g.n, K)]

    def tabulate(S: frozenset) -> tuple[float, float, float]:
        seed_set = SeedSet(S, max(1, len(S)))
        law = exact_law(seed_set, g, spec)
        F = welfare_under_law(law, spec, true_model)
        F_sur = exact_surrogate(law, true_model)
        live = live_matrix(g, stream.child("table", *sorted(S)), R)
        F_hat = plugin_value(seed_set, fitted_model, exposures_from_live(seed_set, g, spec, live))
        return F, F_sur, F_hat

    table = dict(zip(sets, parallel_map(tabulate, sets, threads)))
    F = np.array([table[S][0] for S in sets])
    F_sur = np.array([table[S][1] for S in sets])
    F_hat = np.array([table[S][2] for S in sets])
    delta_est = float(np.max(np.abs(F_hat - F_sur)))
    delta_str = float(np.max(np.abs(F - F_sur)))

    if selected is None:
        chosen = greedy_cim(g, spec, fitted_model, K, R, stream.child("greedy"), threads=threads).seeds.members
    else:
        chosen = frozenset(int(v) for v in selected)
    if chosen not in table:
        raise ValidationError("selected seed set is outside the budget")
    F_sel, _, F_hat_sel = table[chosen]
    F_hat_max = float(F_hat.max())

    rho_measured = None
    if F_hat_max > 0 and F_hat_sel >= 0:
        rho_measured = float(min(F_hat_sel / F_hat_max, 1.0))
    elif F_hat_max <= 0:
        rho_measured = 1.0 if F_hat_sel >= F_hat_max else None
    used = rho if rho is not None else rho_measured
    holds = None
    if used is not None:
        rhs = used * float(F.max()) - (1 + used) * (delta_est + delta_str)
        holds = bool(F_sel >= rhs - 1e-9)
    return EndToEndReport(
        seeds=tuple(sorted(chosen)),
        n_sets=len(sets),
        delta_est=delta_est,
        delta_str=delta_str,
        rho=used,
        rho_measured=rho_measured,
        F_selected=float(F_sel),
        F_max=float(F.max()),
        F_hat_selected=float(F_hat_sel),
        F_hat_max=F_hat_max,
        holds=holds,
    )


def check_exhaustive_feasible(n: int, K: int, cap: int = SUBSET_CAP) -> bool:
    try:
        next(iter_budget_sets(n, K, cap, exact=True), None)
        return True
    except GuardExceeded:
        return False
