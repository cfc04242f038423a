"""
cimo/core/synth.py
==================
Synthetic instances, logged replications and experiment sweeps.

 🕸️ graph families through networkx, edge probabilities scaled by ε
 📈 shape-feasible response models (linear / concave / saturating / mixed)
 🎲 logging policies with exact propensities
 🧹 sweeps over σ, ε, K and N against an exhaustive oracle
"""

from __future__ import annotations
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, NamedTuple, Sequence

import networkx as nx
import numpy as np
import yaml
from tqdm import tqdm

from .constants import CLIP_WARN_FRACTION, EXACT_EDGE_GUARD
from .diffusion import exact_law, sample_live_edges, steady_state
from .errors import ConfigError, GuardExceeded, ValidationError
from .estimand import exact_surrogate, mc_welfare, welfare_under_law
from .graph import DirectedGraph, ExposureSpec, SeedSet, exposure_counts, iter_budget_sets
from .response import (
    LoggedDataset,
    Replication,
    ResponseCurve,
    ResponseModel,
    StratumResponse,
    fit_shape_constrained,
    prediction_error,
)
from .rng import RngStream
from .selection import baseline_select, greedy_cim
from .utils import parallel_map, read_text

log = logging.getLogger("cimo.synth")

GRAPH_KINDS = ("erdos_renyi", "barabasi_albert", "watts_strogatz", "path", "star")
PROFILES = ("linear", "concave", "saturating", "mixed")
POLICIES = ("fixed", "uniform", "degree_biased")
SWEEP_AXES = {"sigma": "noise_sigma", "epsilon_scale": "epsilon_scale", "K": "K", "N": "N"}
METHODS = ("cim", "degree", "random", "greedy_reach", "cim_unconstrained")

# Upper ends of the generated structural parts; |α| + f^+(B) stays ≤ 0.8
ALPHA_MAX = 0.2
F_POS_MAX = 0.6
F_NEG_MAX = 0.4


# ────────────────────────────────
# ⚙️ SynthConfig
# ────────────────────────────────
@dataclass(frozen=True)
class SynthConfig:
    graph_kind: str
    n: int
    master_seed: int
    er_p: float = 0.2
    ba_m: int = 2
    ws_k: int = 4
    ws_p: float = 0.1
    p_lo: float = 0.05
    p_hi: float = 0.2
    epsilon_scale: float = 1.0
    profile: str = "saturating"
    kappa: float = 0.05
    neg_fraction: float = 0.3
    strata: int = 1
    noise_sigma: float = 0.1
    N: int = 200
    policy: str = "uniform"
    policy_sets: tuple[tuple[int, ...], ...] = ()
    n_candidates: int = 4
    temperature: float = 1.0
    K: int = 2
    R: int = 200
    R_eval: int = 2000
    lam: float = 0.0
    oracle_cap: int = 5000
    methods: tuple[str, ...] = ("cim", "degree", "random", "greedy_reach")

    def __post_init__(self):
        checks = [
            ("graph_kind", self.graph_kind in GRAPH_KINDS, f"one of {GRAPH_KINDS}"),
            ("n", self.n >= 1, "at least 1"),
            ("epsilon_scale", self.epsilon_scale > 0, "positive"),
            ("p_lo", 0.0 <= self.p_lo <= self.p_hi <= 1.0, "0 <= p_lo <= p_hi <= 1"),
            ("profile", self.profile in PROFILES, f"one of {PROFILES}"),
            ("kappa", self.kappa >= 0, "nonnegative"),
            ("neg_fraction", 0.0 <= self.neg_fraction <= 1.0, "in [0, 1]"),
            ("strata", 1 <= self.strata <= self.n, "between 1 and n"),
            ("noise_sigma", self.noise_sigma >= 0, "nonnegative"),
            ("N", self.N >= 1, "at least 1"),
            ("policy", self.policy in POLICIES, f"one of {POLICIES}"),
            ("n_candidates", self.n_candidates >= 1, "at least 1"),
            ("temperature", self.temperature > 0, "positive"),
            ("K", 1 <= self.K <= self.n, "between 1 and n"),
            ("R", self.R >= 1, "at least 1"),
            ("R_eval", self.R_eval >= 1, "at least 1"),
            ("lam", self.lam >= 0, "nonnegative"),
            ("methods", all(m in METHODS for m in self.methods), f"subset of {METHODS}"),
        ]
        for name, ok, need in checks:
            if not ok:
                raise ConfigError(f"config field {name!r} must be {need}", name)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "SynthConfig":
        if not isinstance(doc, Mapping):
            raise ConfigError("config must be a key-value document")
        known = {f.name: f for f in dataclasses.fields(cls)}
        for required in ("graph_kind", "n", "master_seed"):
            if required not in doc:
                raise ConfigError(f"config is missing required field {required!r}", required)
        unknown = sorted(set(doc) - set(known))
        if unknown:
            log.warning(f"⚠️ ignoring unknown config fields: {', '.join(unknown)}")
        values: dict[str, Any] = {}
        for name, value in doc.items():
            if name not in known:
                continue
            try:
                values[name] = _coerce(name, value, known[name].default)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"config field {name!r} has an invalid value: {value!r}", name) from e
        return cls(**values)

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["policy_sets"] = [list(s) for s in self.policy_sets]
        doc["methods"] = list(self.methods)
        return doc

    def replace(self, **changes) -> "SynthConfig":
        return dataclasses.replace(self, **changes)


def _coerce(name: str, value: Any, default: Any) -> Any:
    if name in ("graph_kind", "profile", "policy"):
        return str(value)
    if name == "policy_sets":
        return tuple(tuple(int(v) for v in s) for s in value)
    if name == "methods":
        return tuple(str(m) for m in value)
    if name in ("n", "master_seed") or isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, float) and not value.is_integer():
            raise ValueError("expected an integer")
        return int(value)
    return float(value)


def load_config(path: Path) -> SynthConfig:
    try:
        doc = yaml.safe_load(read_text(Path(path)))
    except yaml.YAMLError as e:
        raise ConfigError(f"{Path(path).name}: invalid YAML ({e})") from e
    if isinstance(doc, Mapping) and "synth" in doc:
        doc = doc["synth"]
    return SynthConfig.from_dict(doc or {})


# ────────────────────────────────
# 🕸️ Instances
# ────────────────────────────────
class SynthInstance(NamedTuple):
    graph: DirectedGraph
    spec: ExposureSpec
    model: ResponseModel


def _family_edges(cfg: SynthConfig, seed: int) -> list[tuple[int, int]]:
    n = cfg.n
    try:
        if cfg.graph_kind == "erdos_renyi":
            G = nx.gnp_random_graph(n, cfg.er_p, seed=seed, directed=True)
            return sorted(G.edges())
        if cfg.graph_kind == "barabasi_albert":
            G = nx.barabasi_albert_graph(n, cfg.ba_m, seed=seed)
        elif cfg.graph_kind == "watts_strogatz":
            G = nx.watts_strogatz_graph(n, cfg.ws_k, cfg.ws_p, seed=seed)
        elif cfg.graph_kind == "path":
            return sorted(nx.path_graph(n, create_using=nx.DiGraph).edges())
        else:
            return [(0, v) for v in range(1, n)]
    except nx.NetworkXError as e:
        raise ConfigError(f"invalid {cfg.graph_kind} parameters: {e}", cfg.graph_kind) from e
    return sorted({(u, v) for a, b in G.edges() for u, v in ((a, b), (b, a))})


def _concave_start_cap(B: int, top: float, kappa: float) -> float:
    """Largest first increment c with Σ_u max(c - κu, 0) ≤ top over u < B."""
    if kappa <= 0:
        return top / B
    j = np.arange(B + 1, dtype=float)
    knots = kappa * j
    totals = kappa * j * (j + 1) / 2
    if top >= totals[-1]:
        return float(knots[-1] + (top - totals[-1]) / B)
    return float(np.interp(top, totals, knots))


def _curve(kind: str, B: int, gen: np.random.Generator, top: float, kappa: float) -> np.ndarray:
    t = np.arange(B + 1, dtype=float)
    if B == 0:
        return np.zeros(1)
    if kind == "linear":
        return gen.uniform(0.3, 1.0) * top / B * t
    if kind == "concave":
        # increments c, c-κ, c-2κ, ... floored at 0; c is capped so f(B) ≤ top,
        # which keeps κ(f) = κ exactly whenever B ≥ 2 and κ ≤ top
        cap = _concave_start_cap(B, top, kappa)
        c = max(min(gen.uniform(0.1, 0.3), cap), min(kappa, cap))
        inc = np.maximum(c - kappa * np.arange(B), 0.0)
        return np.concatenate([[0.0], np.cumsum(inc)])
    a = gen.uniform(0.5, 1.0) * top
    q = gen.uniform(0.3, 0.7)
    return a * (1.0 - q ** t)


def gen_instance(cfg: SynthConfig) -> SynthInstance:
    """Graph, exposure spec and a shape-feasible ground-truth response model from `cfg.master_seed`."""
    root = RngStream(cfg.master_seed)
    edges = _family_edges(cfg, root.child("graph").int_seed())
    p_gen = root.child("probs").generator()
    p = np.clip(p_gen.uniform(cfg.p_lo, cfg.p_hi, size=len(edges)) * cfg.epsilon_scale, 0.0, 1.0)
    g = DirectedGraph.from_edges(cfg.n, [(u, v, float(q)) for (u, v), q in zip(edges, p)])

    spec_gen = root.child("spec").generator()
    pos, neg = [], []
    for sources in g.in_neighbors():
        if cfg.profile == "mixed" and sources:
            to_neg = spec_gen.random(len(sources)) < cfg.neg_fraction
            pos.append(tuple(j for j, flag in zip(sources, to_neg) if not flag))
            neg.append(tuple(j for j, flag in zip(sources, to_neg) if flag))
        else:
            pos.append(tuple(sources))
            neg.append(())
    spec = ExposureSpec(tuple(pos), tuple(neg))

    model = draw_model(spec, cfg.profile, cfg.strata, cfg.kappa, root.child("model").generator())
    return SynthInstance(g, spec, model)


def draw_model(spec: ExposureSpec, profile: str, n_strata: int, kappa: float,
               gen: np.random.Generator) -> ResponseModel:
    """Random shape-feasible model on grids B^± = max |N_i^±| within each stratum."""
    n = spec.n
    strata = np.empty(n, dtype=np.int64)
    strata[gen.permutation(n)] = np.arange(n) % n_strata
    m_pos, m_neg = spec.sizes()
    params = {}
    for r in range(n_strata):
        members = strata == r
        B_pos = int(m_pos[members].max())
        B_neg = int(m_neg[members].max())
        kind = "saturating" if profile == "mixed" else profile
        f_pos = _curve(kind, B_pos, gen, F_POS_MAX, kappa)
        f_neg = _curve(kind, B_neg, gen, F_NEG_MAX, kappa)
        params[r] = StratumResponse(float(gen.uniform(0.0, ALPHA_MAX)), ResponseCurve(f_pos), ResponseCurve(f_neg))
    return ResponseModel(strata, params)


# ────────────────────────────────
# 🎲 Logging policies
# ────────────────────────────────
@dataclass(frozen=True)
class LoggingPolicy:
    sets: tuple[frozenset, ...]
    probs: np.ndarray

    def __post_init__(self):
        if len(set(self.sets)) != len(self.sets):
            raise ConfigError("logging policy lists the same seed set twice", "policy_sets")
        if np.any(self.probs <= 0):
            raise ConfigError("logging policy has a zero-probability support element", "policy")

    def propensity(self, S: frozenset) -> float:
        for s, q in zip(self.sets, self.probs):
            if s == S:
                return float(q)
        return 0.0

    def sample(self, gen: np.random.Generator) -> tuple[frozenset, float]:
        k = int(gen.choice(len(self.sets), p=self.probs))
        return self.sets[k], float(self.probs[k])


def _candidate_sets(cfg: SynthConfig, g: DirectedGraph) -> list[frozenset]:
    if cfg.policy_sets:
        sets = [frozenset(s) for s in cfg.policy_sets]
        for s in sets:
            if not s or any(not 0 <= v < cfg.n for v in s):
                raise ConfigError("policy_sets must list nonempty sets of valid node ids", "policy_sets")
        return sets
    if cfg.policy == "fixed":
        deg = g.out_degree()
        return [frozenset(sorted(range(cfg.n), key=lambda v: (-int(deg[v]), v))[: cfg.K])]
    gen = RngStream(cfg.master_seed).child("policy").generator()
    possible = math.comb(cfg.n, cfg.K)
    want = min(cfg.n_candidates, possible)
    found: list[frozenset] = []
    while len(found) < want:
        s = frozenset(int(v) for v in gen.choice(cfg.n, size=cfg.K, replace=False))
        if s not in found:
            found.append(s)
    return found


def make_policy(cfg: SynthConfig, g: DirectedGraph) -> LoggingPolicy:
    sets = _candidate_sets(cfg, g)
    if cfg.policy == "fixed":
        return LoggingPolicy((sets[0],), np.ones(1))
    if cfg.policy == "uniform":
        return LoggingPolicy(tuple(sets), np.full(len(sets), 1.0 / len(sets)))
    deg = g.out_degree().astype(float)
    score = np.array([deg[sorted(s)].sum() for s in sets]) / cfg.temperature
    w = np.exp(score - score.max())
    return LoggingPolicy(tuple(sets), w / w.sum())


class LoggedSample(NamedTuple):
    data: LoggedDataset
    clip_fraction: float
    policy: LoggingPolicy


def gen_logged_data(instance: SynthInstance, cfg: SynthConfig) -> LoggedSample:
    """
    N replications: draw Z from the policy (exact propensity recorded), one
    live-edge diffusion, realised exposures, Y = structural part + N(0, σ²)
    clipped to [-1, 1].
    """
    g, spec, model = instance
    policy = make_policy(cfg, g)
    root = RngStream(cfg.master_seed).child("data")
    reps = []
    clipped = 0
    nodes = np.arange(g.n, dtype=np.int64)
    for ell in range(cfg.N):
        gen = root.child(ell).generator()
        chosen, prop = policy.sample(gen)
        S = SeedSet(chosen, max(1, len(chosen)))
        z = steady_state(S, g, sample_live_edges(g, gen)).z_inf
        kp, kn = exposure_counts(z.astype(np.int64), spec)
        seeded = S.indicator(g.n)
        y = model.node_values(seeded, kp, kn)
        if cfg.noise_sigma > 0:
            y = y + gen.normal(0.0, cfg.noise_sigma, size=g.n)
        over = np.abs(y) > 1.0
        clipped += int(over.sum())
        y = np.clip(y, -1.0, 1.0)
        reps.append(Replication(chosen, 0, prop, nodes.copy(), seeded.astype(np.int64),
                                np.asarray(kp, dtype=np.int64), np.asarray(kn, dtype=np.int64), y))
    fraction = clipped / float(cfg.N * g.n) if g.n else 0.0
    if fraction > CLIP_WARN_FRACTION:
        log.warning(f"⚠️ {fraction:.1%} of outcomes were clipped to [-1, 1]")
    return LoggedSample(LoggedDataset(tuple(reps)), fraction, policy)


# ────────────────────────────────
# 🧹 Sweeps
# ────────────────────────────────
SWEEP_COLUMNS = (
    "axis", "value", "rep", "seed", "method", "seeds", "welfare", "welfare_kind",
    "oracle", "gap", "structural_gap", "fit_error", "clip_fraction", "fit_ms", "select_ms",
    "evaluations",
)


@dataclass
class SweepResult:
    axis: str
    values: tuple
    rows: list[dict] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = [",".join(SWEEP_COLUMNS)]
        for row in self.rows:
            lines.append(",".join(_csv_cell(row.get(c)) for c in SWEEP_COLUMNS))
        return "\n".join(lines) + "\n"

    def by_method(self, method: str) -> list[dict]:
        return [r for r in self.rows if r["method"] == method]


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


class _Welfare(NamedTuple):
    value: float
    kind: str
    structural_gap: float  # F̃(S) - F(S) under the true model; NaN beyond the guard


def _welfare(S: frozenset, inst: SynthInstance, cfg: SynthConfig, stream: RngStream) -> _Welfare:
    seed_set = SeedSet(S, max(1, len(S)))
    try:
        law = exact_law(seed_set, inst.graph, inst.spec, EXACT_EDGE_GUARD)
        F = welfare_under_law(law, inst.spec, inst.model)
        return _Welfare(F, "exact", exact_surrogate(law, inst.model) - F)
    except GuardExceeded:
        F = mc_welfare(seed_set, inst.graph, inst.spec, inst.model, cfg.R_eval,
                       stream.child("welfare", *sorted(S)))
        return _Welfare(F, "mc", float("nan"))


def _oracle(inst: SynthInstance, cfg: SynthConfig) -> float:
    """max over |S| = K of exact F(S), NaN when the enumeration is out of reach."""
    try:
        best = -math.inf
        for S in iter_budget_sets(cfg.n, cfg.K, cfg.oracle_cap, exact=True):
            law = exact_law(SeedSet(frozenset(S), cfg.K), inst.graph, inst.spec)
            best = max(best, welfare_under_law(law, inst.spec, inst.model))
        return best
    except GuardExceeded:
        return float("nan")


def run_cell(cfg: SynthConfig, axis: str, value, rep: int) -> list[dict]:
    """One sweep cell: generate → fit → select with every method → evaluate."""
    inst = gen_instance(cfg)
    sample = gen_logged_data(inst, cfg)
    stream = RngStream(cfg.master_seed).child("cell")
    base = {"axis": axis, "value": value, "rep": rep, "seed": cfg.master_seed,
            "clip_fraction": sample.clip_fraction}
    oracle = _oracle(inst, cfg)

    shapes = {True} | ({False} if "cim_unconstrained" in cfg.methods else set())
    fitted: dict[bool, ResponseModel | None] = {}
    fit_ms: dict[bool, float] = {}
    fit_err: dict[bool, float] = {}
    for shape in sorted(shapes, reverse=True):
        t0 = time.perf_counter()
        try:
            fitted[shape] = fit_shape_constrained(sample.data, strata=inst.model.strata, lam=cfg.lam,
                                                  shape=shape, n=cfg.n)
            fit_err[shape] = prediction_error(fitted[shape], inst.model, sample.data)
        except ValidationError as e:
            log.warning(f"⚠️ cell {axis}={value} rep {rep}: fit failed ({e})")
            fitted[shape] = None
        fit_ms[shape] = (time.perf_counter() - t0) * 1000

    rows = []
    for method in cfg.methods:
        t0 = time.perf_counter()
        shape = method != "cim_unconstrained"
        if method in ("cim", "cim_unconstrained"):
            model = fitted.get(shape)
            if model is None:
                continue
            result = greedy_cim(inst.graph, inst.spec, model, cfg.K, cfg.R, stream.child(method), method=method)
        else:
            result = baseline_select(method, inst.graph, cfg.K, cfg.R, stream.child(method))
        select_ms = (time.perf_counter() - t0) * 1000
        welfare = _welfare(result.seeds.members, inst, cfg, stream)
        learned = method.startswith("cim")
        rows.append({
            **base,
            "method": method,
            "seeds": " ".join(str(v) for v in result.seeds.sorted()),
            "welfare": welfare.value,
            "welfare_kind": welfare.kind,
            "oracle": oracle,
            "gap": oracle - welfare.value,
            "structural_gap": welfare.structural_gap,
            "fit_error": fit_err.get(shape, float("nan")) if learned else float("nan"),
            "fit_ms": fit_ms.get(shape, 0.0) if learned else 0.0,
            "select_ms": select_ms,
            "evaluations": result.evaluations,
        })
    return rows


def sweep(
    axis: str,
    values: Sequence,
    base: SynthConfig,
    repetitions: int = 3,
    threads: int | None = None,
    progress: bool = False,
) -> SweepResult:
    """Every (value, repetition) cell gets its own seed from (master_seed, axis, value, rep)."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {sorted(SWEEP_AXES)}", "axis")
    if not values:
        raise ConfigError("sweep needs at least one value", "values")
    if repetitions < 1:
        raise ConfigError("repetitions must be at least 1", "repetitions")
    field_name = SWEEP_AXES[axis]
    default = {f.name: f.default for f in dataclasses.fields(SynthConfig)}[field_name]
    cells = []
    for raw in values:
        try:
            value = _coerce(field_name, raw, default)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"sweep value {raw!r} invalid for {axis}", field_name) from e
        for rep in range(repetitions):
            seed = RngStream(base.master_seed).child("sweep", axis, repr(value), rep).int_seed()
            cfg = base.replace(**{field_name: value, "master_seed": seed})
            cells.append((cfg, value, rep))

    bar = tqdm(total=len(cells), desc=f"Sweep {axis}", disable=not progress)

    def run(cell):
        cfg, value, rep = cell
        rows = run_cell(cfg, axis, value, rep)
        bar.update(1)
        return rows

    try:
        results = parallel_map(run, cells, threads)
    finally:
        bar.close()
    out = SweepResult(axis, tuple(values))
    for rows in results:
        out.rows.extend(rows)
    return out
