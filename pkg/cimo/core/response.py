"""
cimo/core/response.py
=====================
Exposure–response curves and Stage-I estimation.

 📈 ResponseCurve: f(0..B) on the integer grid, nondecreasing, discretely concave
 🧮 piecewise-linear interpolation, curvature κ, shape verdicts
 🗂️ LoggedDataset: replicated diffusion experiments (JSON Lines)
 🔧 shape-constrained weighted least squares by block-coordinate descent,
    each curve block solved as a weighted cone projection
"""

from __future__ import annotations
import json
import logging
import threading
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import lsq_linear, minimize, nnls

from .constants import (
    FIT_MAX_ITER,
    FIT_TOL,
    FORMAT_VERSION,
    MIN_EFFECTIVE_SAMPLES,
    SHAPE_TOL,
)
from .errors import ConfigError, PositivityError, ValidationError
from .graph import ExposureSpec, SeedSet
from .utils import check_format_version, parallel_map

log = logging.getLogger("cimo.response")


# ────────────────────────────────
# 📐 Shape checks
# ────────────────────────────────
@dataclass(frozen=True)
class ShapeViolation:
    kind: str  # origin | decrease | convexity | nonfinite
    index: int
    magnitude: float

    def describe(self) -> str:
        if self.kind == "origin":
            return f"f(0) = {self.magnitude:g}, expected 0"
        if self.kind == "decrease":
            return f"negative increment at t={self.index} ({self.magnitude:g})"
        if self.kind == "convexity":
            return f"slope increases at t={self.index} (by {self.magnitude:g})"
        return f"non-finite value at t={self.index}"


@dataclass(frozen=True)
class ShapeVerdict:
    violations: tuple[ShapeViolation, ...]

    @property
    def valid(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.valid


def check_shape(values: Sequence[float], tol: float = SHAPE_TOL) -> ShapeVerdict:
    """List every violated constraint: f(0)=0, Δf(t) ≥ 0, Δf(t) ≤ Δf(t-1)."""
    v = np.asarray(values, dtype=float)
    found: list[ShapeViolation] = []
    bad = np.flatnonzero(~np.isfinite(v))
    if len(bad):
        return ShapeVerdict(tuple(ShapeViolation("nonfinite", int(t), float("nan")) for t in bad))
    if len(v) == 0:
        return ShapeVerdict((ShapeViolation("origin", 0, float("nan")),))
    if abs(v[0]) > tol:
        found.append(ShapeViolation("origin", 0, float(v[0])))
    inc = np.diff(v)
    for t in np.flatnonzero(inc < -tol):
        found.append(ShapeViolation("decrease", int(t), float(inc[t])))
    rise = inc[1:] - inc[:-1]
    for t in np.flatnonzero(rise > tol):
        found.append(ShapeViolation("convexity", int(t) + 1, float(rise[t])))
    return ShapeVerdict(tuple(found))


# ────────────────────────────────
# 📈 ResponseCurve
# ────────────────────────────────
@dataclass(frozen=True)
class ResponseCurve:
    values: np.ndarray
    strict: bool = field(default=True, compare=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if len(v) == 0:
            v = np.zeros(1)
        if self.strict:
            verdict = check_shape(v)
            if not verdict.valid:
                raise ValidationError(
                    "response curve violates shape constraints: "
                    + "; ".join(x.describe() for x in verdict.violations)
                )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def B(self) -> int:
        return len(self.values) - 1

    @classmethod
    def zero(cls, B: int = 0) -> "ResponseCurve":
        return cls(np.zeros(B + 1))

    def extended(self, B: int) -> "ResponseCurve":
        """Flat extension to a larger grid."""
        if B <= self.B:
            return self
        pad = np.full(B - self.B, self.values[-1])
        return ResponseCurve(np.concatenate([self.values, pad]), strict=self.strict)


_clamp_lock = threading.Lock()
_clamp_count = 0


def interp_clamp_count() -> int:
    """How many evaluation points fell beyond a curve's grid since start-up."""
    return _clamp_count


def _values(curve: ResponseCurve | Sequence[float]) -> np.ndarray:
    return curve.values if isinstance(curve, ResponseCurve) else np.asarray(curve, dtype=float)


def interp_eval(curve: ResponseCurve | Sequence[float], x):
    """
    \\bar f(m + θ) = (1-θ) f(m) + θ f(m+1); points beyond B clamp to f(B).
    Accepts a scalar or an array of points.
    """
    global _clamp_count
    v = _values(curve)
    xs = np.asarray(x, dtype=float)
    if np.any(xs < 0) or np.any(~np.isfinite(xs)):
        raise ValidationError("interpolation point must be a finite nonnegative real")
    B = len(v) - 1
    over = int(np.count_nonzero(xs > B))
    if over:
        with _clamp_lock:
            first = _clamp_count == 0
            _clamp_count += over
        if first:
            log.warning(f"⚠️ exposure beyond curve grid (B={B}); clamping to f(B)")
    out = np.interp(xs, np.arange(B + 1, dtype=float), v)
    return float(out) if np.ndim(out) == 0 else out


def curvature(curve: ResponseCurve | Sequence[float]) -> float:
    """κ(f) = max_t (Δf(t-1) - Δf(t)); 0 for affine curves and for B < 2."""
    v = _values(curve)
    inc = np.diff(v)
    if len(inc) < 2:
        return 0.0
    return float(max(np.max(inc[:-1] - inc[1:]), 0.0))


def lipschitz(curve: ResponseCurve | Sequence[float]) -> float:
    """Largest slope of the interpolated curve (Δf(0) for a concave curve)."""
    inc = np.diff(_values(curve))
    return float(max(inc.max(), 0.0)) if len(inc) else 0.0


# ────────────────────────────────
# 🧱 ResponseModel
# ────────────────────────────────
@dataclass(frozen=True)
class StratumResponse:
    alpha: float
    f_pos: ResponseCurve
    f_neg: ResponseCurve


@dataclass(frozen=True)
class ResponseModel:
    strata: np.ndarray  # node -> stratum id
    params: Mapping[int, StratumResponse]
    diagnostics: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        strata = np.asarray(self.strata, dtype=np.int64).reshape(-1)
        missing = sorted(set(strata.tolist()) - set(self.params))
        if missing:
            raise ValidationError(f"strata {missing} have no response parameters")
        strata.setflags(write=False)
        object.__setattr__(self, "strata", strata)
        object.__setattr__(self, "params", dict(sorted(self.params.items())))

    @property
    def n(self) -> int:
        return len(self.strata)

    def node_alpha(self) -> np.ndarray:
        return np.array([self.params[r].alpha for r in self.strata.tolist()])

    def groups(self) -> list[tuple[int, np.ndarray]]:
        return [(r, np.flatnonzero(self.strata == r)) for r in self.params]

    def node_values(self, seeded: np.ndarray, k_pos: np.ndarray, k_neg: np.ndarray) -> np.ndarray:
        """
        Per-node α_r·𝕀(i∈S) + \\bar f^+(k_i^+) - \\bar f^-(k_i^-).
        `k_pos` / `k_neg` may be (n,) or (batch x n); output has the same shape.
        """
        k_pos = np.asarray(k_pos, dtype=float)
        k_neg = np.asarray(k_neg, dtype=float)
        if k_pos.shape[-1] != self.n or k_neg.shape[-1] != self.n:
            raise ValidationError(f"model covers {self.n} nodes, exposures cover {k_pos.shape[-1]}")
        out = np.zeros(np.broadcast_shapes(k_pos.shape, k_neg.shape))
        for r, idx in self.groups():
            par = self.params[r]
            out[..., idx] = (
                interp_eval(par.f_pos, k_pos[..., idx]) - interp_eval(par.f_neg, k_neg[..., idx])
            )
        return out + self.node_alpha() * np.asarray(seeded, dtype=float)

    def row_means(self, i: np.ndarray, z: np.ndarray, kp: np.ndarray, kn: np.ndarray) -> np.ndarray:
        """Structural mean of flattened (node, seeded, k⁺, k⁻) rows."""
        i = np.asarray(i, dtype=np.int64)
        if len(i) and (i.min() < 0 or i.max() >= self.n):
            raise ValidationError(f"row node id outside the model's {self.n} nodes")
        out = np.zeros(len(i))
        row_strata = self.strata[i]
        for r, par in self.params.items():
            m = row_strata == r
            if not m.any():
                continue
            out[m] = (par.alpha * np.asarray(z, dtype=float)[m]
                      + interp_eval(par.f_pos, np.asarray(kp, dtype=float)[m])
                      - interp_eval(par.f_neg, np.asarray(kn, dtype=float)[m]))
        return out

    def curves_valid(self) -> bool:
        return all(check_shape(p.f_pos.values).valid and check_shape(p.f_neg.values).valid
                   for p in self.params.values())

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "strata": {str(i): int(r) for i, r in enumerate(self.strata.tolist())},
            "params": {
                str(r): {
                    "alpha": float(p.alpha),
                    "f_pos": [float(x) for x in p.f_pos.values],
                    "f_neg": [float(x) for x in p.f_neg.values],
                }
                for r, p in self.params.items()
            },
        }


def model_from_dict(doc: Mapping, strict: bool = True) -> ResponseModel:
    check_format_version(dict(doc), "response model")
    try:
        raw_strata = doc["strata"]
        raw_params = doc["params"]
    except KeyError as e:
        raise ConfigError(f"response model: missing field {e.args[0]!r}", e.args[0]) from e
    try:
        n = len(raw_strata)
        strata = np.zeros(n, dtype=np.int64)
        for key, r in raw_strata.items():
            strata[int(key)] = int(r)
        params = {
            int(r): StratumResponse(
                float(p.get("alpha", 0.0)),
                ResponseCurve(p.get("f_pos", [0.0]), strict=strict),
                ResponseCurve(p.get("f_neg", [0.0]), strict=strict),
            )
            for r, p in raw_params.items()
        }
    except (AttributeError, IndexError, TypeError, ValueError) as e:
        raise ConfigError(f"response model: malformed strata or params ({e})", "strata") from e
    return ResponseModel(strata, params)


# ────────────────────────────────
# 🗂️ LoggedDataset
# ────────────────────────────────
@dataclass(frozen=True)
class Replication:
    seed_set: frozenset[int]
    context: int
    propensity: float | None
    i: np.ndarray
    z: np.ndarray
    kp: np.ndarray
    kn: np.ndarray
    y: np.ndarray

    @property
    def welfare(self) -> float:
        return float(self.y.sum())


@dataclass(frozen=True)
class LoggedDataset:
    replications: tuple[Replication, ...]

    def __post_init__(self):
        for ell, rep in enumerate(self.replications):
            if rep.propensity is not None and not (0.0 < rep.propensity <= 1.0):
                raise ValidationError(f"replication {ell}: propensity {rep.propensity} outside (0, 1]")
            finite = np.isfinite(rep.y)
            if np.any(np.abs(rep.y[finite]) > 1.0):
                raise ValidationError(f"replication {ell}: outcomes must satisfy |Y| <= 1")
            if np.any(rep.kp < 0) or np.any(rep.kn < 0):
                raise ValidationError(f"replication {ell}: negative exposure count")
        object.__setattr__(self, "replications", tuple(self.replications))

    def __len__(self) -> int:
        return len(self.replications)

    def validate_against(self, spec: ExposureSpec) -> None:
        m_pos, m_neg = spec.sizes()
        for ell, rep in enumerate(self.replications):
            if np.any(rep.i >= spec.n):
                raise ValidationError(f"replication {ell}: node id outside exposure spec")
            if np.any(rep.kp > m_pos[rep.i]) or np.any(rep.kn > m_neg[rep.i]):
                raise ValidationError(f"replication {ell}: exposure count exceeds |N_i^±|")

    def rows(self) -> dict[str, np.ndarray]:
        """All (replication, node) rows flattened into columns."""
        reps = self.replications
        if not reps:
            empty = np.zeros(0, dtype=np.int64)
            return {"rep": empty, "i": empty, "z": empty, "kp": empty, "kn": empty, "y": np.zeros(0)}
        return {
            "rep": np.concatenate([np.full(len(r.i), ell) for ell, r in enumerate(reps)]),
            "i": np.concatenate([r.i for r in reps]),
            "z": np.concatenate([r.z for r in reps]),
            "kp": np.concatenate([r.kp for r in reps]),
            "kn": np.concatenate([r.kn for r in reps]),
            "y": np.concatenate([r.y for r in reps]),
        }

    def subset(self, keep: Iterable[int]) -> "LoggedDataset":
        return LoggedDataset(tuple(self.replications[k] for k in keep))


def _replication_from_doc(doc: Mapping, lineno: int) -> Replication:
    try:
        rows = doc["rows"]
        seeds = frozenset(int(v) for v in doc["seed"])
    except KeyError as e:
        raise ConfigError(f"dataset line {lineno}: missing field {e.args[0]!r}", e.args[0]) from e
    prop = doc.get("propensity")
    return Replication(
        seed_set=seeds,
        context=int(doc.get("context", 0)),
        propensity=None if prop is None else float(prop),
        i=np.array([int(r["i"]) for r in rows], dtype=np.int64),
        z=np.array([int(r["z"]) for r in rows], dtype=np.int64),
        kp=np.array([int(r.get("kp", 0)) for r in rows], dtype=np.int64),
        kn=np.array([int(r.get("kn", 0)) for r in rows], dtype=np.int64),
        y=np.array([float(r["y"]) for r in rows], dtype=float),
    )


def parse_dataset(text: str) -> LoggedDataset:
    """JSON Lines, one replication per line; an optional header line carries format_version."""
    reps = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as e:
            raise ConfigError(f"dataset line {lineno}: invalid JSON ({e})") from e
        if "rows" not in doc and "format_version" in doc:
            check_format_version(doc, "dataset")
            continue
        reps.append(_replication_from_doc(doc, lineno))
    return LoggedDataset(tuple(reps))


def format_dataset(data: LoggedDataset) -> str:
    lines = [json.dumps({"format_version": FORMAT_VERSION, "kind": "logged_dataset"}, sort_keys=True)]
    for rep in data.replications:
        doc = {
            "seed": sorted(rep.seed_set),
            "context": rep.context,
            "propensity": rep.propensity,
            "rows": [
                {"i": int(i), "z": int(z), "kp": int(kp), "kn": int(kn), "y": float(y)}
                for i, z, kp, kn, y in zip(rep.i, rep.z, rep.kp, rep.kn, rep.y)
            ],
        }
        lines.append(json.dumps(doc, sort_keys=True))
    return "\n".join(lines) + "\n"


# ────────────────────────────────
# ⚖️ IPS weights
# ────────────────────────────────
def ips_weights(data: LoggedDataset, target: SeedSet, w_max: float | None = None) -> np.ndarray:
    """W_ℓ(S) = 𝕀(Z_ℓ = S) / π_ℓ(S | X_ℓ), optionally truncated at w_max."""
    w = np.zeros(len(data))
    for ell, rep in enumerate(data.replications):
        if rep.seed_set != target.members:
            continue
        if rep.propensity is None or rep.propensity <= 0:
            raise PositivityError(f"replication {ell} matches the target but has no positive propensity")
        w[ell] = 1.0 / rep.propensity
    if w_max is not None:
        w = np.minimum(w, w_max)
    if not np.any(w > 0):
        log.warning("⚠️ no logged replication matches the target seed set; effective sample size is 0")
    return w


def effective_sample_size(w: np.ndarray) -> float:
    """(Σw)² / Σw²; 0 for an all-zero weight vector."""
    w = np.asarray(w, dtype=float)
    s2 = float(np.sum(w * w))
    return float(np.sum(w) ** 2 / s2) if s2 > 0 else 0.0


@dataclass(frozen=True)
class IpsWeighting:
    target: SeedSet
    w_max: float | None = None


# ────────────────────────────────
# 🔺 Cone projection
# ────────────────────────────────
def _design(B: int) -> np.ndarray:
    """θ_t = Σ_u e_u·min(t, u+1) for t=1..B; e ≥ 0 spans the monotone-concave cone."""
    t = np.arange(1, B + 1)[:, None]
    u = np.arange(B)[None, :]
    return np.minimum(t, u + 1).astype(float)


def _nnls_optimal(M: np.ndarray, b: np.ndarray, e: np.ndarray, tol: float = 1e-8) -> bool:
    """KKT for min ‖Me - b‖² over e ≥ 0: feasible, gradient ≥ 0, e ⟂ gradient."""
    grad = M.T @ (M @ e - b)
    scale = tol * (1.0 + float(np.abs(M.T @ b).max(initial=0.0)))
    return bool(np.all(e >= -scale) and np.all(grad >= -scale) and np.all(np.abs(e * grad) <= scale))


def _nonnegative_lsq(M: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        e, _ = nnls(M, b, maxiter=50 * M.shape[1] + 100)
        if _nnls_optimal(M, b, e):
            return e
    except RuntimeError:
        pass
    log.debug("nnls stopped at a non-optimal point; re-solving with BVLS")
    res = lsq_linear(M, b, bounds=(0.0, np.inf), method="bvls", tol=1e-12)
    return np.maximum(res.x, 0.0)


def cone_projection(mu: Sequence[float], weights: Sequence[float], lam: float = 0.0) -> np.ndarray:
    """
    argmin_θ Σ_{t≥1} W_t (μ_t - θ_t)² + lam·θ_B  over  θ_0 = 0,
    0 ≤ θ_{t+1}-θ_t ≤ θ_t-θ_{t-1}. Index 0 of `mu` / `weights` is ignored.
    Levels above the last weighted bin are extended flat.
    """
    mu = np.asarray(mu, dtype=float)
    W = np.asarray(weights, dtype=float)
    B = len(mu) - 1
    theta = np.zeros(B + 1)
    observed = np.flatnonzero(W[1:] > 0) + 1
    if B == 0 or len(observed) == 0:
        return theta
    top = int(observed.max())
    A = _design(top)
    sw = np.sqrt(W[1 : top + 1])
    e = _nonnegative_lsq(sw[:, None] * A, sw * mu[1 : top + 1])
    if lam > 0:
        tv = np.arange(1, top + 1, dtype=float)  # θ_top = Σ_u (u+1)·e_u
        AtW = A.T * W[1 : top + 1]
        H = AtW @ A
        b = AtW @ mu[1 : top + 1]

        def obj(x):
            return float(x @ H @ x - 2 * b @ x + lam * tv @ x)

        def grad(x):
            return 2 * (H @ x - b) + lam * tv

        res = minimize(obj, e, jac=grad, method="L-BFGS-B", bounds=[(0.0, None)] * top,
                       options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 10_000})
        e = np.maximum(res.x, 0.0)
    theta[1 : top + 1] = A @ e
    theta[top + 1 :] = theta[top]
    return theta


def _bin_means(k: np.ndarray, w: np.ndarray, r: np.ndarray, B: int) -> tuple[np.ndarray, np.ndarray]:
    W = np.bincount(k, weights=w, minlength=B + 1)
    S = np.bincount(k, weights=w * r, minlength=B + 1)
    mu = np.divide(S, W, out=np.zeros_like(S), where=W > 0)
    return mu, W


def _unconstrained_curve(mu: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Ablation: raw bin means, gaps interpolated, flat above the last observed bin."""
    B = len(mu) - 1
    obs = np.flatnonzero(W > 0)
    obs = obs[obs > 0]
    theta = np.zeros(B + 1)
    if len(obs):
        xs = np.concatenate([[0], obs])
        ys = np.concatenate([[0.0], mu[obs]])
        theta = np.interp(np.arange(B + 1), xs, ys)
    return theta


# ────────────────────────────────
# 🔧 Stage I fit
# ────────────────────────────────
@dataclass
class _StratumRows:
    z: np.ndarray
    kp: np.ndarray
    kn: np.ndarray
    y: np.ndarray
    w: np.ndarray
    B_pos: int
    B_neg: int
    clamped: int


def _increments_to_e(theta: np.ndarray) -> np.ndarray:
    d = np.diff(theta)
    return d - np.concatenate([d[1:], [0.0]])


def _objective(rows: _StratumRows, alpha, tp, tn, lam) -> float:
    resid = rows.y - alpha * rows.z - tp[rows.kp] + tn[rows.kn]
    return float(np.sum(rows.w * resid * resid) / len(rows.y) + lam * (tp[-1] + tn[-1]))


def _alpha_collinear(rows: _StratumRows) -> bool:
    """True when the seed indicator lies in the span of the exposure-level indicators."""
    cols = [(rows.kp >= t).astype(float) for t in range(1, rows.B_pos + 1)]
    cols += [(rows.kn >= t).astype(float) for t in range(1, rows.B_neg + 1)]
    if not cols:
        return False
    sw = np.sqrt(rows.w)
    others = np.column_stack(cols) * sw[:, None]
    full = np.column_stack([rows.z * sw, others])
    return np.linalg.matrix_rank(full) == np.linalg.matrix_rank(others)


def _polish(rows: _StratumRows, alpha, tp, tn, pinned: bool):
    """Joint least squares on the active face found by coordinate descent."""
    ep, en = _increments_to_e(tp), _increments_to_e(tn)
    scale = max(1.0, float(np.max(np.abs(np.concatenate([ep, en, [0.0]])))))
    sp = np.flatnonzero(ep > 1e-10 * scale)
    sn = np.flatnonzero(en > 1e-10 * scale)
    cols, names = [], []
    if not pinned:
        cols.append(rows.z.astype(float))
        names.append(("a", 0))
    for u in sp:
        cols.append(np.minimum(rows.kp, u + 1).astype(float))
        names.append(("p", u))
    for u in sn:
        cols.append(-np.minimum(rows.kn, u + 1).astype(float))
        names.append(("n", u))
    if not cols:
        return None
    target = rows.y - (alpha * rows.z if pinned else 0.0)
    sw = np.sqrt(rows.w)
    X = np.column_stack(cols) * sw[:, None]
    coef, *_ = np.linalg.lstsq(X, target * sw, rcond=None)
    new_alpha = alpha
    new_ep, new_en = np.zeros_like(ep), np.zeros_like(en)
    for (kind, u), c in zip(names, coef):
        if kind == "a":
            new_alpha = float(c)
        elif kind == "p":
            new_ep[u] = c
        else:
            new_en[u] = c
    if np.any(new_ep < -1e-12) or np.any(new_en < -1e-12):
        return None
    new_ep, new_en = np.maximum(new_ep, 0), np.maximum(new_en, 0)
    tp_new = np.concatenate([[0.0], _design(len(ep)) @ new_ep]) if len(ep) else tp
    tn_new = np.concatenate([[0.0], _design(len(en)) @ new_en]) if len(en) else tn
    return new_alpha, tp_new, tn_new


def _fit_stratum(rows: _StratumRows, lam: float, shape: bool, tol: float, max_iter: int):
    n_r = len(rows.y)
    alpha = 0.0
    wz = float(np.sum(rows.w * rows.z))
    if wz == 0:
        log.warning("⚠️ no seeded rows carry weight; α set to 0")
        pinned = True
    elif _alpha_collinear(rows):
        log.warning("⚠️ seed indicator is collinear with exposures; pinning α to the least-norm solution")
        pinned = True
        X = np.column_stack(
            [rows.z]
            + [(rows.kp >= t).astype(float) for t in range(1, rows.B_pos + 1)]
            + [(rows.kn >= t).astype(float) for t in range(1, rows.B_neg + 1)]
        )
        sw = np.sqrt(rows.w)
        coef, *_ = np.linalg.lstsq(X * sw[:, None], rows.y * sw, rcond=None)
        alpha = float(coef[0])
    else:
        pinned = False
    tp = np.zeros(rows.B_pos + 1)
    tn = np.zeros(rows.B_neg + 1)

    def curve_block(k, resid, B):
        mu, W = _bin_means(k, rows.w, resid, B)
        return cone_projection(mu, W, lam * n_r) if shape else _unconstrained_curve(mu, W)

    prev = _objective(rows, alpha, tp, tn, lam)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        if not pinned:
            r = rows.y - tp[rows.kp] + tn[rows.kn]
            alpha = float(np.sum(rows.w * rows.z * r) / wz)
        if rows.B_pos > 0:
            tp = curve_block(rows.kp, rows.y - alpha * rows.z + tn[rows.kn], rows.B_pos)
        if rows.B_neg > 0:
            tn = curve_block(rows.kn, -(rows.y - alpha * rows.z - tp[rows.kp]), rows.B_neg)
        cur = _objective(rows, alpha, tp, tn, lam)
        if abs(prev - cur) <= tol * max(abs(prev), 1e-12):
            prev = cur
            break
        prev = cur

    if shape and lam == 0:
        polished = _polish(rows, alpha, tp, tn, pinned)
        if polished is not None:
            cand = _objective(rows, *polished, lam)
            if cand <= prev + 1e-15:
                alpha, tp, tn = polished
                prev = cand
    return alpha, tp, tn, prev, iterations, pinned


def fit_shape_constrained(
    data: LoggedDataset,
    strata: Sequence[int] | Mapping[int, int] | None = None,
    B_pos: int | Mapping[int, int] | None = None,
    B_neg: int | Mapping[int, int] | None = None,
    lam: float = 0.0,
    weighting: str | IpsWeighting = "uniform",
    shape: bool = True,
    tol: float = FIT_TOL,
    max_iter: int = FIT_MAX_ITER,
    n: int | None = None,
    threads: int | None = 1,
) -> ResponseModel:
    """
    Weighted least squares over (α_r, f_r^+, f_r^-) per stratum subject to
    f(0)=0 and monotone-concave increments; `shape=False` drops the cone
    constraints (ablation). Strata are fitted independently.
    """
    if lam < 0:
        raise ValidationError("TV penalty weight must be nonnegative")
    cols = data.rows()
    if np.any(~np.isfinite(cols["y"])):
        raise ValidationError("non-finite outcome in logged data")
    n = n if n is not None else (int(cols["i"].max()) + 1 if len(cols["i"]) else 0)
    if strata is None:
        strata_arr = np.zeros(n, dtype=np.int64)
    elif isinstance(strata, Mapping):
        strata_arr = np.zeros(n, dtype=np.int64)
        for i, r in strata.items():
            if not 0 <= int(i) < n:
                raise ValidationError(f"strata map names node {i}, outside 0..{n - 1}")
            strata_arr[int(i)] = int(r)
    else:
        strata_arr = np.asarray(strata, dtype=np.int64)
    if len(strata_arr) < n:
        raise ValidationError("strata map does not cover every node")

    if isinstance(weighting, IpsWeighting):
        w_rep = ips_weights(data, weighting.target, weighting.w_max)
        w_rows = w_rep[cols["rep"]] if len(cols["rep"]) else np.zeros(0)
    elif weighting == "uniform":
        w_rows = np.ones(len(cols["y"]))
    else:
        raise ConfigError(f"unknown weighting {weighting!r}", "weighting")

    row_stratum = strata_arr[cols["i"]] if len(cols["i"]) else np.zeros(0, dtype=np.int64)

    def grid(spec, r, observed):
        if spec is None:
            return observed
        return int(spec[r]) if isinstance(spec, Mapping) else int(spec)

    jobs = []
    for r in sorted(set(strata_arr.tolist())):
        sel = (row_stratum == r) & (w_rows > 0)
        if not np.any(sel):
            raise ValidationError(f"stratum {r} has no (weighted) observations")
        kp, kn = cols["kp"][sel], cols["kn"][sel]
        bp = grid(B_pos, r, int(kp.max()))
        bn = grid(B_neg, r, int(kn.max()))
        clamped = int(np.count_nonzero(kp > bp) + np.count_nonzero(kn > bn))
        if clamped:
            log.warning(f"⚠️ stratum {r}: {clamped} exposure counts above the grid were clamped")
        jobs.append((r, _StratumRows(
            z=cols["z"][sel].astype(float), kp=np.minimum(kp, bp), kn=np.minimum(kn, bn),
            y=cols["y"][sel], w=w_rows[sel], B_pos=bp, B_neg=bn, clamped=clamped,
        )))

    def run(job):
        r, rows = job
        return r, rows, _fit_stratum(rows, lam, shape, tol, max_iter)

    params: dict[int, StratumResponse] = {}
    diagnostics: dict[str, dict] = {}
    for r, rows, (alpha, tp, tn, obj, iters, pinned) in parallel_map(run, jobs, threads):
        params[r] = StratumResponse(alpha, ResponseCurve(tp, strict=shape), ResponseCurve(tn, strict=shape))
        n_eff_pos = _bin_ess(rows.kp, rows.w, rows.B_pos)
        n_eff_neg = _bin_ess(rows.kn, rows.w, rows.B_neg)
        populated = [x for x in n_eff_pos + n_eff_neg if x > 0]
        if populated and min(populated) < MIN_EFFECTIVE_SAMPLES:
            log.warning(f"⚠️ stratum {r}: smallest per-bin effective sample size is {min(populated):.1f}")
        diagnostics[str(r)] = {
            "objective": obj,
            "iterations": iters,
            "alpha_pinned": pinned,
            "clamped": rows.clamped,
            "n_eff_pos": n_eff_pos,
            "n_eff_neg": n_eff_neg,
        }
    return ResponseModel(strata_arr[:n], params, diagnostics)


def _bin_ess(k: np.ndarray, w: np.ndarray, B: int) -> list[float]:
    s1 = np.bincount(k, weights=w, minlength=B + 1)
    s2 = np.bincount(k, weights=w * w, minlength=B + 1)
    return [float(a * a / b) if b > 0 else 0.0 for a, b in zip(s1, s2)]


def fit_objective(model: ResponseModel, data: LoggedDataset, lam: float = 0.0,
                  weights: np.ndarray | None = None) -> float:
    """Σ_r of the per-stratum objective at `model` (for comparing candidates)."""
    cols = data.rows()
    w = np.ones(len(cols["y"])) if weights is None else np.asarray(weights)[cols["rep"]]
    total = 0.0
    row_stratum = model.strata[cols["i"]]
    for r, par in model.params.items():
        sel = (row_stratum == r) & (w > 0)
        if not np.any(sel):
            continue
        resid = (cols["y"][sel] - par.alpha * cols["z"][sel]
                 - interp_eval(par.f_pos, cols["kp"][sel]) + interp_eval(par.f_neg, cols["kn"][sel]))
        total += float(np.sum(w[sel] * resid ** 2) / np.count_nonzero(sel))
        total += lam * (par.f_pos.values[-1] + par.f_neg.values[-1])
    return total


def prediction_error(fitted: ResponseModel, truth: ResponseModel, data: LoggedDataset) -> float:
    """In-sample mean squared gap between fitted and true structural means over every logged row."""
    cols = data.rows()
    if len(cols["y"]) == 0:
        return 0.0
    args = (cols["i"], cols["z"], cols["kp"], cols["kn"])
    diff = fitted.row_means(*args) - truth.row_means(*args)
    return float(np.mean(diff * diff))
