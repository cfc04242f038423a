# cimo/verify/suites.py
"""
Property suites over random enumeration-scale instances.

Each suite draws instance k from stream (seed, suite, k), checks the relevant
invariants exactly (enumeration) or statistically (Monte-Carlo, IPS) and
returns every violation together with a self-contained reproducer.
"""

from __future__ import annotations
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import networkx as nx
import numpy as np
from tqdm import tqdm

from cimo.core.diffusion import exact_law, exposures_from_live
from cimo.core.estimand import (
    exact_surrogate,
    ips_value,
    mc_welfare_samples,
    plugin_value,
    structural_bound,
    welfare_under_law,
)
from cimo.core.graph import (
    DirectedGraph,
    ExposureSpec,
    SeedSet,
    format_graph,
    iter_budget_sets,
    path_constants,
    scale_probabilities,
)
from cimo.core.response import (
    ResponseCurve,
    ResponseModel,
    StratumResponse,
    check_shape,
    cone_projection,
    curvature,
    fit_shape_constrained,
    interp_eval,
)
from cimo.core.rng import RngStream
from cimo.core.selection import certify_submodular, end_to_end_check, exhaustive_opt, greedy_cim
from cimo.core.synth import SynthConfig, SynthInstance, draw_model, gen_logged_data
from cimo.core.utils import parallel_map

log = logging.getLogger("cimo.verify")

TOL = 1e-9
POINT_ID_TOL = 1e-10
PROJECTION_TOL = 1e-6
# Mean squared curve error should fall like 1/N_eff
RATE_SIZES = (100, 1_000, 10_000)
RATE_SLOPE_TOL = 0.3
# Statistical suites tolerate this share of 3-standard-error misses
STAT_MISS_RATE = 0.02


# ────────────────────────────────
# 📋 Reports
# ────────────────────────────────
@dataclass
class InstanceOutcome:
    checks: int = 0
    violations: list[dict] = field(default_factory=list)
    notes: dict = field(default_factory=dict)


@dataclass
class SuiteReport:
    suite: str
    instances: int
    seed: int
    checks: int = 0
    violations: list[dict] = field(default_factory=list)
    allowed_violations: int = 0
    notes: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return len(self.violations) <= self.allowed_violations

    def to_dict(self) -> dict:
        return {
            "suite": self.suite,
            "instances": self.instances,
            "seed": self.seed,
            "checks": self.checks,
            "violations": len(self.violations),
            "allowed_violations": self.allowed_violations,
            "passed": self.passed,
            "notes": self.notes,
        }


def _reproducer(inst: SynthInstance, stream: RngStream, **extra) -> dict:
    return {
        "seed": stream.seed,
        "stream_path": list(stream.path),
        "graph": format_graph(inst.graph),
        "spec": inst.spec.to_dict(),
        "model": inst.model.to_dict(),
        **extra,
    }


# ────────────────────────────────
# 🕸️ Instances
# ────────────────────────────────
def random_instance(
    stream: RngStream,
    profile: str = "saturating",
    n_range: tuple[int, int] = (3, 8),
    m_max: int = 14,
    sources: str = "in",
    p_range: tuple[float, float] | None = None,
    deterministic: bool = False,
) -> SynthInstance:
    """
    Small random digraph (gnm), exposure spec and model.
    `sources`: "in" (N_i^+ = in-neighbours), "singleton" (at most one source)
    or "mixed" (in-neighbours split between N^+ and N^-).
    """
    gen = stream.generator()
    n = int(gen.integers(n_range[0], n_range[1] + 1))
    m = int(gen.integers(n - 1, min(m_max, n * (n - 1)) + 1))
    G = nx.gnm_random_graph(n, m, seed=stream.child("graph").int_seed(), directed=True)
    edges = sorted(G.edges())
    if deterministic:
        p = (gen.random(len(edges)) < 0.5).astype(float)
    else:
        lo, hi = p_range if p_range is not None else (0.0, float(gen.choice([0.1, 0.3, 0.6])))
        p = gen.uniform(lo, hi, size=len(edges))
    g = DirectedGraph.from_edges(n, [(u, v, float(q)) for (u, v), q in zip(edges, p)])

    pos, neg = [], []
    for nb in g.in_neighbors():
        if sources == "singleton":
            pos.append(tuple(nb[:1]))
            neg.append(())
        elif sources == "mixed" and nb:
            flags = gen.random(len(nb)) < 0.4
            pos.append(tuple(j for j, f in zip(nb, flags) if not f))
            neg.append(tuple(j for j, f in zip(nb, flags) if f))
        else:
            pos.append(tuple(nb))
            neg.append(())
    spec = ExposureSpec(tuple(pos), tuple(neg))
    kappa = float(gen.uniform(0.02, 0.2))
    model = draw_model(spec, profile, int(gen.integers(1, 3)), kappa, stream.child("model").generator())
    return SynthInstance(g, spec, model)


def _all_sets(n: int, K: int):
    return [SeedSet(frozenset(S), max(1, len(S))) for S in iter_budget_sets(n, K)]


# ────────────────────────────────
# 🧪 reduction: |F - F̃| ≤ B_str·ε², point identification, ε² scaling
# ────────────────────────────────
def _max_gap(inst: SynthInstance, K: int) -> float:
    worst = 0.0
    for S in _all_sets(inst.graph.n, K):
        law = exact_law(S, inst.graph, inst.spec)
        gap = abs(welfare_under_law(law, inst.spec, inst.model) - exact_surrogate(law, inst.model))
        worst = max(worst, gap)
    return worst


def check_reduction(k: int, stream: RngStream, inject: str | None = None) -> InstanceOutcome:
    out = InstanceOutcome()
    kind = ("curved", "linear", "singleton")[k % 3]
    profile = "linear" if kind == "linear" else ("mixed" if k % 2 else "saturating")
    sources = "singleton" if kind == "singleton" else ("mixed" if profile == "mixed" else "in")
    inst = random_instance(stream, profile=profile, sources=sources)
    K = 1 + k % 2
    B_str = structural_bound(inst.graph, inst.spec, inst.model, K)
    eps = inst.graph.epsilon
    for S in _all_sets(inst.graph.n, K):
        law = exact_law(S, inst.graph, inst.spec)
        F = welfare_under_law(law, inst.spec, inst.model)
        F_sur = exact_surrogate(law, inst.model)
        gap = abs(F - F_sur)
        out.checks += 1
        if gap > B_str * eps ** 2 + TOL:
            out.violations.append(_reproducer(inst, stream, check="structural_bound", S=S.sorted(),
                                              gap=gap, bound=B_str * eps ** 2))
        if kind != "curved":
            out.checks += 1
            if gap > POINT_ID_TOL:
                out.violations.append(_reproducer(inst, stream, check=f"point_identification_{kind}",
                                                  S=S.sorted(), gap=gap))
    return out


def check_scaling(k: int, stream: RngStream, inject: str | None = None) -> InstanceOutcome:
    """Halving ε from 0.05 should cut max_S |F - F̃| by about 4."""
    out = InstanceOutcome()
    inst = random_instance(stream, profile="saturating", p_range=(0.5, 1.0))
    g = scale_probabilities(inst.graph, 0.05 / inst.graph.epsilon) if inst.graph.m else inst.graph
    half = scale_probabilities(g, 0.5) if g.m else g
    K = 2
    a = _max_gap(SynthInstance(g, inst.spec, inst.model), K)
    b = _max_gap(SynthInstance(half, inst.spec, inst.model), K)
    if a > 1e-14 and b > 1e-14:
        ratio = a / b
        out.checks += 1
        out.notes["ratio"] = ratio
        if not 3.0 <= ratio <= 5.0:
            out.violations.append(_reproducer(inst, stream, check="epsilon_scaling", ratio=ratio))
    return out


# ────────────────────────────────
# 📏 moments: E[U] ≤ Dε, E[(U)_2] ≤ Cε², Var(K)/ε bounded
# ────────────────────────────────
def check_moments(k: int, stream: RngStream, inject: str | None = None) -> InstanceOutcome:
    out = InstanceOutcome()
    inst = random_instance(stream, sources="mixed" if k % 2 else "in")
    K = 1 + k % 2
    consts = path_constants(inst.graph, inst.spec, K)
    g = inst.graph
    for scale in (1.0, 0.5, 0.25):
        gs = scale_probabilities(g, scale) if g.m else g
        eps = gs.epsilon
        for S in _all_sets(g.n, K):
            law = exact_law(S, gs, inst.spec)
            for side, EU, EU2, var, D, C in (
                ("pos", law.EU_pos, law.EU2_pos, law.var_pos, consts.D_pos, consts.C_pos),
                ("neg", law.EU_neg, law.EU2_neg, law.var_neg, consts.D_neg, consts.C_neg),
            ):
                out.checks += 3
                bad = {
                    "first_moment": np.flatnonzero(EU > D * eps + TOL),
                    "factorial_moment": np.flatnonzero(EU2 > C * eps ** 2 + TOL),
                    "variance": np.flatnonzero(var > D * eps + C * eps ** 2 + TOL),
                }
                for check, nodes in bad.items():
                    if len(nodes):
                        out.violations.append(_reproducer(inst, stream, check=f"{check}_{side}", S=S.sorted(),
                                                          scale=scale, nodes=nodes.tolist()))
    return out


# ────────────────────────────────
# 📐 jensen: 0 ≤ f̄(t+E U) - E f(t+U) ≤ (κ/2) E[U(U-1)]
# ────────────────────────────────
def _random_curve(gen: np.random.Generator, B: int, inject: str | None) -> ResponseCurve:
    inc = np.sort(gen.uniform(0.0, 1.0, size=B))
    if inject != "concavity":
        inc = inc[::-1]
    return ResponseCurve(np.concatenate([[0.0], np.cumsum(inc)]), strict=inject != "concavity")


def check_jensen(k: int, stream: RngStream, inject: str | None = None) -> InstanceOutcome:
    out = InstanceOutcome()
    gen = stream.generator()
    B = int(gen.integers(1, 9))
    curve = _random_curve(gen, B, inject)
    f = curve.values
    kappa = curvature(curve)
    t = int(gen.integers(0, B))
    support = np.arange(0, B - t + 1)
    probs = gen.dirichlet(np.ones(len(support)))
    EU = float(probs @ support)
    EU2 = float(probs @ (support * (support - 1)))
    gap = interp_eval(curve, t + EU) - float(probs @ f[t + support])
    repro = {"seed": stream.seed, "stream_path": list(stream.path), "curve": f.tolist(), "t": t,
             "law": probs.tolist()}
    out.checks += 1
    if gap < -TOL or gap > kappa / 2 * EU2 + TOL:
        out.violations.append({**repro, "check": "jensen_gap", "gap": gap, "bound": kappa / 2 * EU2})

    # discrete Taylor bracket at (t, u)
    u = int(gen.integers(0, B - t + 1))
    slope = f[t + 1] - f[t] if t < B else 0.0
    upper = f[t] + u * slope
    lower = upper - kappa / 2 * u * (u - 1)
    out.checks += 1
    if not (lower - TOL <= f[t + u] <= upper + TOL):
        out.violations.append({**repro, "check": "discrete_taylor", "u": u})

    # interpolation is concave and nondecreasing
    x, y = gen.uniform(0, B, size=2)
    theta = float(gen.uniform())
    mid = interp_eval(curve, theta * x + (1 - theta) * y)
    out.checks += 2
    if mid < theta * interp_eval(curve, x) + (1 - theta) * interp_eval(curve, y) - TOL:
        out.violations.append({**repro, "check": "interp_concavity", "x": x, "y": y, "theta": theta})
    if interp_eval(curve, max(x, y)) < interp_eval(curve, min(x, y)) - TOL:
        out.violations.append({**repro, "check": "interp_monotone", "x": x, "y": y})
    return out


# ────────────────────────────────
# 🔧 estimation: cone projection vs brute force, nonexpansiveness, fit shape
# ────────────────────────────────
def _cone_rows(B: int) -> np.ndarray:
    """G θ ≤ 0 over θ_1..θ_B (θ_0 = 0): slope drops, then the last increment."""
    rows = []
    for t in range(1, B):
        r = np.zeros(B)
        r[t] += 1.0  # θ_{t+1}
        r[t - 1] -= 2.0
        if t >= 2:
            r[t - 2] += 1.0
        rows.append(r)
    last = np.zeros(B)
    last[B - 1] -= 1.0
    if B >= 2:
        last[B - 2] += 1.0
    rows.append(last)
    return np.array(rows)


def brute_force_projection(mu: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Exact weighted projection onto the monotone-concave cone by trying every active set."""
    B = len(mu) - 1
    if B == 0:
        return np.zeros(1)
    G = _cone_rows(B)
    target, w = mu[1:], W[1:]
    best, best_obj = None, math.inf
    for size in range(len(G) + 1):
        for active in itertools.combinations(range(len(G)), size):
            A = G[list(active)]
            kkt = np.zeros((B + len(active), B + len(active)))
            kkt[:B, :B] = np.diag(2 * w)
            kkt[:B, B:] = A.T
            kkt[B:, :B] = A
            rhs = np.concatenate([2 * w * target, np.zeros(len(active))])
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:B]
            if np.all(G @ sol <= 1e-10):
                obj = float(np.sum(w * (target - sol) ** 2))
                if obj < best_obj - 1e-15:
                    best, best_obj = sol, obj
    return np.concatenate([[0.0], best])


def estimation_rate(
    stream: RngStream,
    sizes: tuple[int, ...] = RATE_SIZES,
    reps: int = 100,
    sigma: float = 0.1,
) -> tuple[float, list[float]]:
    """
    Log-log slope of the mean squared curve error against the per-bin sample
    size N_eff. Bin means of N_eff draws around a strictly concave curve
    (B = 3) are projected onto the cone; the slope should be close to -1.
    """
    truth = 1.0 - 0.4 ** np.arange(4)
    gen = stream.generator()
    mse = []
    for N_eff in sizes:
        W = np.concatenate([[0.0], np.full(3, float(N_eff))])
        total = 0.0
        for _ in range(reps):
            mu = truth + np.concatenate([[0.0], gen.normal(0.0, sigma / math.sqrt(N_eff), size=3)])
            total += float(np.mean((cone_projection(mu, W) - truth)[1:] ** 2))
        mse.append(total / reps)
    slope = float(np.polyfit(np.log(sizes), np.log(mse), 1)[0])
    return slope, mse


def check_estimation(k: int, stream: RngStream, inject: str | None = None) -> InstanceOutcome:
    out = InstanceOutcome()
    gen = stream.generator()
    B = int(gen.integers(1, 7))
    mu = np.concatenate([[0.0], gen.normal(0.5, 0.6, size=B)])
    W = np.concatenate([[0.0], gen.uniform(0.5, 2.0, size=B)])
    proj = cone_projection(mu, W)
    oracle = brute_force_projection(mu, W)
    repro = {"seed": stream.seed, "stream_path": list(stream.path), "mu": mu.tolist(), "W": W.tolist()}
    out.checks += 2
    if np.max(np.abs(proj - oracle)) > PROJECTION_TOL:
        out.violations.append({**repro, "check": "projection_oracle", "got": proj.tolist(),
                               "expected": oracle.tolist()})
    if not check_shape(proj).valid:
        out.violations.append({**repro, "check": "projection_shape"})

    mu2 = np.concatenate([[0.0], gen.normal(0.5, 0.6, size=B)])
    proj2 = cone_projection(mu2, W)
    out.checks += 1
    lhs = math.sqrt(float(np.sum(W * (proj - proj2) ** 2)))
    rhs = math.sqrt(float(np.sum(W * (mu - mu2) ** 2)))
    if lhs > rhs + TOL:
        out.violations.append({**repro, "check": "nonexpansive", "mu2": mu2.tolist()})

    inst = random_instance(stream.child("fit"), profile="mixed" if k % 2 else "saturating",
                           sources="mixed" if k % 2 else "in", n_range=(3, 6))
    cfg = SynthConfig("path", inst.graph.n, stream.child("data").int_seed(), N=40, noise_sigma=0.2, K=1)
    data = gen_logged_data(inst, cfg).data
    fitted = fit_shape_constrained(data, strata=inst.model.strata, n=inst.graph.n)
    out.checks += 1
    if not fitted.curves_valid():
        out.violations.append(_reproducer(inst, stream, check="fit_shape"))

    if k == 0:
        slope, mse = estimation_rate(stream.child("rate"))
        out.checks += 1
        out.notes["mse_slope"] = slope
        if abs(slope + 1.0) > RATE_SLOPE_TOL:
            out.violations.append({**repro, "check": "estimation_rate", "slope": slope, "mse": mse})
    return out


# ────────────────────────────────
# ✅ end2end: F(Ŝ) ≥ ρ·max F - (1+ρ)(Δ_est + Δ_str)
# ────────────────────────────────
def _corrupt(model: ResponseModel, factor: float) -> ResponseModel:
    params = {
        r: StratumResponse(p.alpha * factor, ResponseCurve(p.f_pos.values * factor),
                           ResponseCurve(p.f_neg.values * factor))
        for r, p in model.params.items()
    }
    return ResponseModel(model.strata, params)


def check_end2end(k: int, stream: RngStream, inject: str | None = None, R: int = 200) -> InstanceOutcome:
    out = InstanceOutcome()
    inst = random_instance(stream, n_range=(3, 6), m_max=10,
                           sources="mixed" if k % 3 == 2 else "in",
                           profile="mixed" if k % 3 == 2 else "saturating")
    K = 1 + k % 2
    cfg = SynthConfig("path", inst.graph.n, stream.child("data").int_seed(), N=60, noise_sigma=0.1, K=K)
    data = gen_logged_data(inst, cfg).data
    fitted = fit_shape_constrained(data, strata=inst.model.strata, n=inst.graph.n)
    if k % 4 == 3:
        fitted = _corrupt(fitted, 3.0)
    report = end_to_end_check(inst.graph, inst.spec, inst.model, fitted, K, R, stream.child("check"))
    out.checks += 1
    out.notes = {"rho": report.rho, "delta_est": report.delta_est, "delta_str": report.delta_str}
    if report.holds is False:
        out.violations.append(_reproducer(inst, stream, check="end_to_end", report=report.to_dict()))
    return out


# ────────────────────────────────
# 🔁 oracle: exact law vs round-by-round simulator
# ────────────────────────────────
def check_oracle(k: int, stream: RngStream, inject: str | None = None, R: int = 10_000) -> InstanceOutcome:
    out = InstanceOutcome()
    inst = random_instance(stream, sources="mixed" if k % 2 else "in", profile="mixed" if k % 2 else "saturating")
    gen = stream.child("S").generator()
    K = 1 + k % 2
    S = SeedSet(frozenset(int(v) for v in gen.choice(inst.graph.n, size=K, replace=False)), K)
    F = welfare_under_law(exact_law(S, inst.graph, inst.spec), inst.spec, inst.model)
    samples = mc_welfare_samples(S, inst.graph, inst.spec, inst.model, R, stream.child("mc"), simulator="rounds")
    se = float(samples.std(ddof=1) / math.sqrt(R)) if R > 1 else 0.0
    out.checks += 1
    if abs(samples.mean() - F) > 3 * se + TOL:
        out.violations.append(_reproducer(inst, stream, check="simulator_agreement", S=S.sorted(), exact=F,
                                          mc=float(samples.mean()), stderr=se))
    return out


# ────────────────────────────────
# ⚖️ ips: mean of F̂_IPS over datasets vs exact F
# ────────────────────────────────
def check_ips(k: int, stream: RngStream, inject: str | None = None, datasets: int = 200,
              N: int = 50) -> InstanceOutcome:
    out = InstanceOutcome()
    inst = random_instance(stream, n_range=(4, 7))
    n = inst.graph.n
    gen = stream.child("sets").generator()
    candidates = list(itertools.combinations(range(n), 2))
    picks = gen.choice(len(candidates), size=4, replace=False)
    sets = tuple(tuple(candidates[int(i)]) for i in picks)
    target = SeedSet(frozenset(sets[0]), 2)
    F = welfare_under_law(exact_law(target, inst.graph, inst.spec), inst.spec, inst.model)
    estimates = []
    for d in range(datasets):
        cfg = SynthConfig("path", n, stream.child("dataset", d).int_seed(), N=N, noise_sigma=0.05,
                          policy="uniform", policy_sets=sets, K=2)
        estimates.append(ips_value(gen_logged_data(inst, cfg).data, target).estimate)
    est = np.array(estimates)
    se = float(est.std(ddof=1) / math.sqrt(datasets))
    out.checks += 1
    out.notes = {"mean": float(est.mean()), "exact": F, "stderr": se}
    if abs(est.mean() - F) > 3 * se + TOL:
        out.violations.append(_reproducer(inst, stream, check="ips_unbiased", exact=F, mean=float(est.mean()),
                                          stderr=se))
    return out


# ────────────────────────────────
# 🧠 greedy: (1-1/e) on certified instances, lazy ≡ eager
# ────────────────────────────────
def check_greedy(k: int, stream: RngStream, inject: str | None = None) -> InstanceOutcome:
    out = InstanceOutcome()
    inst = random_instance(stream, n_range=(4, 9), m_max=16, deterministic=True)
    g, spec, model = inst
    K = min(1 + k % 3, g.n)
    live = (g.p >= 1.0)[None, :]

    def value(S: frozenset) -> float:
        seed_set = SeedSet(S, max(1, len(S)))
        return plugin_value(seed_set, model, exposures_from_live(seed_set, g, spec, live))

    cert = certify_submodular(value, g.n, K)
    out.notes["certified"] = cert.certified
    if not cert.certified:
        return out
    eager = greedy_cim(g, spec, model, K, 1, stream.child("greedy"))
    lazy = greedy_cim(g, spec, model, K, 1, stream.child("greedy"), lazy=True)
    _, opt = exhaustive_opt(value, g.n, K)
    achieved = value(eager.seeds.members)
    out.checks += 3
    if achieved < (1 - 1 / math.e) * opt - TOL:
        out.violations.append(_reproducer(inst, stream, check="greedy_ratio", achieved=achieved, optimum=opt))
    if lazy.order != eager.order or any(abs(a.gain - b.gain) > TOL for a, b in zip(lazy.trace, eager.trace)):
        out.violations.append(_reproducer(inst, stream, check="lazy_equivalence", eager=eager.order,
                                          lazy=lazy.order))
    if lazy.evaluations > eager.evaluations:
        out.violations.append(_reproducer(inst, stream, check="lazy_evaluations", eager=eager.evaluations,
                                          lazy=lazy.evaluations))
    return out


# ────────────────────────────────
# 🏃 Runner
# ────────────────────────────────
@dataclass(frozen=True)
class Suite:
    check: Callable[..., InstanceOutcome]
    default_instances: int
    statistical: bool = False
    # options for `verify --full`, the acceptance-size run
    full: dict = field(default_factory=dict)


SUITES: dict[str, Suite] = {
    "reduction": Suite(check_reduction, 200),
    "scaling": Suite(check_scaling, 50),
    "moments": Suite(check_moments, 100),
    "jensen": Suite(check_jensen, 10_000),
    "estimation": Suite(check_estimation, 100),
    "end2end": Suite(check_end2end, 100),
    "oracle": Suite(check_oracle, 200, statistical=True, full={"R": 100_000}),
    "ips": Suite(check_ips, 5, statistical=True, full={"datasets": 1000}),
    "greedy": Suite(check_greedy, 100),
}


def run_suite(
    name: str,
    instances: int | None = None,
    seed: int = 0,
    inject: str | None = None,
    threads: int | None = 1,
    progress: bool = False,
    **options,
) -> SuiteReport:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}")
    suite = SUITES[name]
    M = suite.default_instances if instances is None else instances
    root = RngStream(seed).child(name)
    bar = tqdm(total=M, desc=f"verify {name}", disable=not progress)

    def one(k: int) -> InstanceOutcome:
        res = suite.check(k, root.child(k), inject, **options)
        bar.update(1)
        return res

    try:
        outcomes = parallel_map(one, list(range(M)), threads)
    finally:
        bar.close()

    report = SuiteReport(name, M, seed)
    if suite.statistical:
        report.allowed_violations = max(1, math.ceil(STAT_MISS_RATE * M))
    for k, res in enumerate(outcomes):
        report.checks += res.checks
        report.violations.extend({"instance": k, **v} for v in res.violations)
    if name == "scaling":
        qualifying = sum(o.checks for o in outcomes)
        report.allowed_violations = int(math.floor(0.1 * qualifying))
        report.notes["qualifying_instances"] = qualifying
    if name == "greedy":
        report.notes["certified_instances"] = sum(bool(o.notes.get("certified")) for o in outcomes)
    if name == "end2end":
        rhos = [o.notes["rho"] for o in outcomes if o.notes.get("rho") is not None]
        report.notes["min_rho"] = min(rhos) if rhos else None
    if name == "estimation" and outcomes:
        report.notes["mse_slope"] = outcomes[0].notes.get("mse_slope")
    log.info(f"{'✅' if report.passed else '❌'} {name}: {report.checks} checks, {len(report.violations)} violations")
    return report
