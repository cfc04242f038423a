"""
cimo/core/graph.py
==================
Directed graph with per-edge activation probabilities, exposure source sets,
exposure counting and simple-path enumeration.

Path counts feed the moment-bound constants D_i^± and C_i^± that the
verification suites compare exact diffusion moments against.
"""

from __future__ import annotations
import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import comb

from .constants import FORMAT_VERSION, PATH_COUNT_CAP, SUBSET_CAP
from .errors import ConfigError, GraphParseError, GuardExceeded, ValidationError
from .utils import check_format_version

log = logging.getLogger("cimo.graph")


# ────────────────────────────────
# 🕸️ DirectedGraph
# ────────────────────────────────
@dataclass(frozen=True)
class DirectedGraph:
    """Nodes 0..n-1 and directed edges (src, dst, p). Immutable after construction."""

    n: int
    src: np.ndarray
    dst: np.ndarray
    p: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        src = np.asarray(self.src, dtype=np.int64).reshape(-1)
        dst = np.asarray(self.dst, dtype=np.int64).reshape(-1)
        p = np.asarray(self.p, dtype=float).reshape(-1)
        if not (len(src) == len(dst) == len(p)):
            raise ValidationError("src, dst and p must have equal length")
        if self.n < 0:
            raise ValidationError("node count must be nonnegative")
        if len(src) and (src.min() < 0 or dst.min() < 0 or src.max() >= self.n or dst.max() >= self.n):
            raise ValidationError("edge endpoint out of range")
        if np.any(src == dst):
            raise ValidationError("self-loops are not allowed")
        if np.any(~np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
            raise ValidationError("edge probabilities must lie in [0, 1]")
        if len(set(zip(src.tolist(), dst.tolist()))) != len(src):
            raise ValidationError("duplicate (src, dst) edge")
        if self.names is not None and len(self.names) != self.n:
            raise ValidationError("names sidecar must have one entry per node")
        for arr in (src, dst, p):
            arr.setflags(write=False)
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)
        object.__setattr__(self, "p", p)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int, float]], names=None) -> "DirectedGraph":
        edges = list(edges)
        if not edges:
            return cls(n, np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0), names)
        s, d, p = zip(*edges)
        return cls(n, np.array(s), np.array(d), np.array(p, dtype=float), names)

    @property
    def m(self) -> int:
        return len(self.src)

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        return list(zip(self.src.tolist(), self.dst.tolist(), self.p.tolist()))

    @property
    def epsilon(self) -> float:
        """Largest edge probability (0 for an edgeless graph)."""
        return float(self.p.max()) if self.m else 0.0

    def out_degree(self) -> np.ndarray:
        return np.bincount(self.src, minlength=self.n)

    def out_edges(self) -> list[list[int]]:
        """Per node, indices of its outgoing edges in edge order."""
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for e, u in enumerate(self.src.tolist()):
            adj[u].append(e)
        return adj

    def in_neighbors(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in range(self.n)]
        for u, v in zip(self.src.tolist(), self.dst.tolist()):
            nbrs[v].append(u)
        return [sorted(x) for x in nbrs]


def scale_probabilities(g: DirectedGraph, factor: float) -> DirectedGraph:
    """Multiply every p_e by `factor` (clipped to [0, 1])."""
    if factor <= 0:
        raise ValidationError("epsilon scale must be positive")
    return DirectedGraph(g.n, g.src, g.dst, np.clip(g.p * factor, 0.0, 1.0), g.names)


# ────────────────────────────────
# 📄 Edge-list text format
# ────────────────────────────────
def parse_graph(text: str) -> DirectedGraph:
    """
    Parse an edge list: one `src dst p` per line, `#` comments.
    A `# nodes: N` comment declares isolated trailing nodes; a
    `# format_version: X.Y` comment is checked against ours.
    Non-integer labels are mapped to dense ids in order of first appearance.
    """
    rows: list[tuple[int, str, str, float]] = []
    declared_n = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line.lstrip("#").strip()
            key, _, val = body.partition(":")
            key = key.strip().lower()
            if key == "nodes":
                try:
                    declared_n = int(val.strip())
                except ValueError:
                    raise GraphParseError(lineno, "malformed", "bad node count")
            elif key == "format_version":
                check_format_version({"format_version": val.strip()}, "edge list")
            continue
        parts = line.split()
        if len(parts) != 3:
            raise GraphParseError(lineno, "malformed", f"expected 'src dst p', got {line!r}")
        a, b, ptxt = parts
        try:
            p = float(ptxt)
        except ValueError:
            raise GraphParseError(lineno, "malformed", f"bad probability {ptxt!r}")
        if not (0.0 <= p <= 1.0):
            raise GraphParseError(lineno, "probability", f"p={ptxt} outside [0, 1]")
        if a == b:
            raise GraphParseError(lineno, "self_loop", f"{a} -> {b}")
        rows.append((lineno, a, b, p))

    labels = [tok for _, a, b, _ in rows for tok in (a, b)]
    numeric = all(tok.lstrip("-").isdigit() for tok in labels)
    names: tuple[str, ...] | None = None
    if numeric:
        ids = {tok: int(tok) for tok in labels}
        for lineno, a, b, _ in rows:
            if ids[a] < 0 or ids[b] < 0:
                raise GraphParseError(lineno, "node_id", "negative node id")
        n = max([declared_n] + [v + 1 for v in ids.values()])
    else:
        order: dict[str, int] = {}
        for tok in labels:
            order.setdefault(tok, len(order))
        ids = order
        names = tuple(order)
        n = len(order)

    seen: set[tuple[int, int]] = set()
    edges = []
    for lineno, a, b, p in rows:
        key = (ids[a], ids[b])
        if key[0] == key[1]:
            raise GraphParseError(lineno, "self_loop", f"{a} -> {b}")
        if key in seen:
            raise GraphParseError(lineno, "duplicate", f"{a} -> {b}")
        seen.add(key)
        edges.append((key[0], key[1], p))
    return DirectedGraph.from_edges(n, edges, names)


def format_graph(g: DirectedGraph) -> str:
    lines = [f"# format_version: {FORMAT_VERSION}", f"# nodes: {g.n}"]
    lines += [f"{u} {v} {p!r}" for u, v, p in g.edges]
    return "\n".join(lines) + "\n"


# ────────────────────────────────
# 🎯 SeedSet
# ────────────────────────────────
@dataclass(frozen=True)
class SeedSet:
    members: frozenset[int]
    K: int

    def __post_init__(self):
        object.__setattr__(self, "members", frozenset(int(v) for v in self.members))
        if self.K < 1:
            raise ValidationError("budget K must be a positive integer")
        if len(self.members) > self.K:
            raise ValidationError(f"seed set of size {len(self.members)} exceeds budget {self.K}")

    @classmethod
    def of(cls, members: Iterable[int], K: int | None = None) -> "SeedSet":
        members = frozenset(int(v) for v in members)
        return cls(members, K if K is not None else max(1, len(members)))

    def validate_for(self, g: DirectedGraph) -> None:
        bad = [v for v in self.members if not 0 <= v < g.n]
        if bad:
            raise ValidationError(f"seed ids {sorted(bad)} not in graph with n={g.n}")

    def indicator(self, n: int) -> np.ndarray:
        z = np.zeros(n, dtype=bool)
        if self.members:
            z[list(self.members)] = True
        return z

    def sorted(self) -> list[int]:
        return sorted(self.members)

    def __contains__(self, v) -> bool:
        return v in self.members

    def __len__(self) -> int:
        return len(self.members)


# ────────────────────────────────
# 📡 ExposureSpec
# ────────────────────────────────
@dataclass(frozen=True)
class ExposureSpec:
    """Per-node positive / negative source sets N_i^+ and N_i^-."""

    pos: tuple[tuple[int, ...], ...]
    neg: tuple[tuple[int, ...], ...]
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        pos = tuple(tuple(sorted(set(int(j) for j in s))) for s in self.pos)
        neg = tuple(tuple(sorted(set(int(j) for j in s))) for s in self.neg)
        if len(pos) != len(neg):
            raise ValidationError("pos and neg must cover the same nodes")
        n = len(pos)
        warnings = []
        for i in range(n):
            for side, sources in (("pos", pos[i]), ("neg", neg[i])):
                if i in sources:
                    raise ValidationError(f"node {i} is in its own {side} source set")
                if any(j < 0 or j >= n for j in sources):
                    raise ValidationError(f"node {i}: {side} source id out of range")
            overlap = set(pos[i]) & set(neg[i])
            if overlap:
                warnings.append(f"node {i}: {sorted(overlap)} in both positive and negative sources")
        for w in warnings:
            log.warning(f"⚠️ {w}")
        object.__setattr__(self, "pos", pos)
        object.__setattr__(self, "neg", neg)
        object.__setattr__(self, "warnings", tuple(warnings))

    @property
    def n(self) -> int:
        return len(self.pos)

    @classmethod
    def empty(cls, n: int) -> "ExposureSpec":
        return cls(tuple(() for _ in range(n)), tuple(() for _ in range(n)))

    @classmethod
    def from_in_neighbors(cls, g: DirectedGraph) -> "ExposureSpec":
        return cls(tuple(tuple(x) for x in g.in_neighbors()), tuple(() for _ in range(g.n)))

    def matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """Row i of each (n x n) 0/1 matrix is the indicator of N_i^+ / N_i^-."""
        mp = np.zeros((self.n, self.n), dtype=np.int64)
        mn = np.zeros((self.n, self.n), dtype=np.int64)
        for i in range(self.n):
            if self.pos[i]:
                mp[i, list(self.pos[i])] = 1
            if self.neg[i]:
                mn[i, list(self.neg[i])] = 1
        return mp, mn

    def sizes(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([len(s) for s in self.pos], dtype=np.int64),
                np.array([len(s) for s in self.neg], dtype=np.int64))

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "pos": {str(i): list(s) for i, s in enumerate(self.pos) if s},
            "neg": {str(i): list(s) for i, s in enumerate(self.neg) if s},
        }


def exposure_spec_from_dict(doc: Mapping, n: int) -> ExposureSpec:
    """JSON `{ "pos": {"<i>": [ids]}, "neg": {...} }`; missing nodes get empty sets."""
    check_format_version(dict(doc), "exposure spec")
    pos: list[list[int]] = [[] for _ in range(n)]
    neg: list[list[int]] = [[] for _ in range(n)]
    for side, target in (("pos", pos), ("neg", neg)):
        for key, ids in (doc.get(side) or {}).items():
            try:
                i = int(key)
            except ValueError:
                raise ConfigError(f"exposure spec: node key {key!r} is not an integer", side)
            if not 0 <= i < n:
                raise ConfigError(f"exposure spec: node {i} outside graph with n={n}", side)
            target[i] = [int(j) for j in ids]
    return ExposureSpec(tuple(map(tuple, pos)), tuple(map(tuple, neg)))


# ────────────────────────────────
# 🔢 Exposure counts
# ────────────────────────────────
def exposure_counts(z: Sequence[int] | np.ndarray, spec: ExposureSpec) -> tuple[np.ndarray, np.ndarray]:
    """
    K_i^+(z) = Σ_{j∈N_i^+} z_j and K_i^-(z) likewise.
    `z` may also be a (batch x n) matrix; counts then come back per row.
    """
    z = np.asarray(z)
    if z.shape[-1] != spec.n:
        raise ValidationError(f"activation vector has length {z.shape[-1]}, expected {spec.n}")
    mp, mn = spec.matrices()
    zi = z.astype(np.int64)
    return zi @ mp.T, zi @ mn.T


# ────────────────────────────────
# 🧵 Simple paths
# ────────────────────────────────
def _reaches(g: DirectedGraph, target: int) -> np.ndarray:
    """Nodes from which `target` is reachable in the full graph."""
    preds: list[list[int]] = [[] for _ in range(g.n)]
    for u, v in zip(g.src.tolist(), g.dst.tolist()):
        preds[v].append(u)
    seen = np.zeros(g.n, dtype=bool)
    seen[target] = True
    stack = [target]
    while stack:
        v = stack.pop()
        for u in preds[v]:
            if not seen[u]:
                seen[u] = True
                stack.append(u)
    return seen


def enumerate_simple_paths(
    g: DirectedGraph,
    S: SeedSet,
    v: int,
    max_len: int | None = None,
    cap: int = PATH_COUNT_CAP,
) -> list[tuple[tuple[int, int], ...]]:
    """
    Every simple path (as a tuple of (u, w) edges) from any seed to `v`.
    Paths may pass through other seeds. Raises GuardExceeded when the path
    count passes `cap`, or when `max_len` cuts off a continuation that could
    still reach `v`.
    """
    if v in S:
        raise ValidationError(f"target node {v} is a seed")
    if not 0 <= v < g.n:
        raise ValidationError(f"target node {v} not in graph")
    limit = g.n - 1 if max_len is None else max_len
    out_edges = g.out_edges()
    dst = g.dst.tolist()
    useful = _reaches(g, v)
    paths: list[tuple[tuple[int, int], ...]] = []

    for s in S.sorted():
        if not useful[s]:
            continue
        on_path = {s}
        trail: list[tuple[int, int]] = []

        def walk(u: int) -> None:
            for e in out_edges[u]:
                w = dst[e]
                if w in on_path or not useful[w]:
                    continue
                if len(trail) >= limit:
                    raise GuardExceeded(f"paths to node {v} longer than max_len={limit} exist")
                trail.append((u, w))
                if w == v:
                    paths.append(tuple(trail))
                    if len(paths) > cap:
                        raise GuardExceeded(f"more than {cap} simple paths to node {v}")
                else:
                    on_path.add(w)
                    walk(w)
                    on_path.discard(w)
                trail.pop()

        walk(s)
    return paths


def count_simple_paths(g: DirectedGraph, max_len: int | None = None, cap: int = PATH_COUNT_CAP) -> np.ndarray:
    """P[s, j] = number of simple paths s -> j (j != s), over all sources s."""
    limit = g.n - 1 if max_len is None else max_len
    out_edges = g.out_edges()
    dst = g.dst.tolist()
    table = np.zeros((g.n, g.n), dtype=np.int64)
    total = 0

    for s in range(g.n):
        row = table[s]
        on_path = [False] * g.n
        on_path[s] = True
        # iterative DFS: (node, depth, next-edge cursor)
        stack = [(s, 0, 0)]
        while stack:
            u, depth, cursor = stack.pop()
            edges = out_edges[u]
            while cursor < len(edges):
                w = dst[edges[cursor]]
                cursor += 1
                if on_path[w]:
                    continue
                if depth >= limit:
                    raise GuardExceeded(f"simple paths longer than max_len={limit} exist")
                row[w] += 1
                total += 1
                if total > cap:
                    raise GuardExceeded(f"more than {cap} simple paths in graph")
                stack.append((u, depth, cursor))
                on_path[w] = True
                stack.append((w, depth + 1, 0))
                break
            else:
                on_path[u] = False
    return table


# ────────────────────────────────
# 📏 Path constants D_i^±, C_i^±
# ────────────────────────────────
@dataclass(frozen=True)
class PathConstants:
    K: int
    D_pos: np.ndarray
    D_neg: np.ndarray
    C_pos: np.ndarray
    C_neg: np.ndarray


def iter_budget_sets(n: int, K: int, cap: int = SUBSET_CAP, exact: bool = False):
    """All S ⊆ V with |S| ≤ K (or == K), lexicographic within each size."""
    sizes = [K] if exact else range(0, K + 1)
    total = sum(int(comb(n, k, exact=True)) for k in sizes)
    if total > cap:
        raise GuardExceeded(f"{total} seed sets to enumerate (cap {cap})")
    for k in sizes:
        yield from itertools.combinations(range(n), k)


def path_constants(
    g: DirectedGraph,
    spec: ExposureSpec,
    K: int,
    cap: int = SUBSET_CAP,
    path_cap: int = PATH_COUNT_CAP,
) -> PathConstants:
    """
    D_i^±(G,K) = max_{S∈S_K} Σ_{j∈N_i^±∖S} A_j(S)
    C_i^±(G,K) = max_{S∈S_K} Σ_{j≠k∈N_i^±∖S} A_j(S) A_k(S)
    with A_j(S) the number of simple paths from any seed to j.
    """
    if spec.n != g.n:
        raise ValidationError("exposure spec and graph disagree on node count")
    K = min(K, g.n)
    table = count_simple_paths(g, cap=path_cap)
    sets = list(iter_budget_sets(g.n, K, cap))
    A = np.zeros((len(sets), g.n), dtype=np.int64)
    for row, S in enumerate(sets):
        if S:
            idx = list(S)
            A[row] = table[idx].sum(axis=0)
            A[row, idx] = 0
    mp, mn = spec.matrices()

    def consts(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        first = A @ mask.T
        second = (A * A) @ mask.T
        return first.max(axis=0), (first * first - second).max(axis=0)

    d_pos, c_pos = consts(mp)
    d_neg, c_neg = consts(mn)
    return PathConstants(K, d_pos, d_neg, c_pos, c_neg)
