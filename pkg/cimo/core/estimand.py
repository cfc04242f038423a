"""
cimo/core/estimand.py
=====================
Welfare values for a fixed seed set:

 🎯 F(S)       exact steady-state welfare (enumeration-scale graphs)
 🪞 F̃(S)       exposure surrogate
 🔌 F̂(S)       plug-in estimate from a fitted model and Monte-Carlo exposures
 ⚖️ F̂_IPS(S)   seed-set IPS from logged replications
 📏 B_str·ε²   structural identification width, and the reporting error budget
"""

from __future__ import annotations
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np

from .constants import ERROR_BUDGET_DELTA, FORMAT_VERSION, JACKKNIFE_GROUPS
from .diffusion import (
    ExactDiffusionLaw,
    ExposureEstimate,
    bernstein_radius,
    exact_law,
    live_matrix,
    mc_exposures,
    simulate_rounds,
    steady_states,
)
from .errors import GuardExceeded, PositivityError, ValidationError
from .graph import DirectedGraph, ExposureSpec, SeedSet, count_simple_paths, path_constants
from .response import (
    LoggedDataset,
    ResponseModel,
    curvature,
    fit_shape_constrained,
    ips_weights,
    lipschitz,
)
from .rng import RngStream, as_stream

log = logging.getLogger("cimo.estimand")


# ────────────────────────────────
# 🪞 Surrogate and plug-in
# ────────────────────────────────
def _check_nodes(model: ResponseModel, n: int) -> None:
    if model.n != n:
        raise ValidationError(f"response model covers {model.n} nodes but the instance has {n}")


def surrogate_value(S: SeedSet, model: ResponseModel, k_pos, k_neg) -> float:
    """Σ_i α_r(i)·𝕀(i∈S) + \\bar f^+(k_i^+) - \\bar f^-(k_i^-)."""
    k_pos = np.asarray(k_pos, dtype=float)
    k_neg = np.asarray(k_neg, dtype=float)
    _check_nodes(model, len(k_pos))
    if len(k_neg) != len(k_pos):
        raise ValidationError("positive and negative exposures differ in length")
    if not (np.all(np.isfinite(k_pos)) and np.all(np.isfinite(k_neg))):
        raise ValidationError("expected exposures must be finite")
    return float(model.node_values(S.indicator(model.n), k_pos, k_neg).sum())


def plugin_value(S: SeedSet, fitted: ResponseModel, est: ExposureEstimate) -> float:
    if est.S.members != S.members:
        raise ValidationError("exposure estimate was produced for a different seed set")
    return surrogate_value(S, fitted, est.k_hat_pos, est.k_hat_neg)


# ────────────────────────────────
# 🎯 True welfare
# ────────────────────────────────
def welfare_under_law(law: ExactDiffusionLaw, spec: ExposureSpec, model: ResponseModel) -> float:
    """E[Σ_i Y_i(z_∞)] with integer exposure counts on every support row."""
    _check_nodes(model, spec.n)
    mp, mn = spec.matrices()
    z = law.support.astype(np.int64)
    per_row = model.node_values(law.S.indicator(spec.n), z @ mp.T, z @ mn.T).sum(axis=1)
    return float(law.probs @ per_row)


def true_welfare(S: SeedSet, g: DirectedGraph, spec: ExposureSpec, model: ResponseModel,
                 law: ExactDiffusionLaw | None = None) -> float:
    if law is None:
        law = exact_law(S, g, spec)
    return welfare_under_law(law, spec, model)


def exact_surrogate(law: ExactDiffusionLaw, model: ResponseModel) -> float:
    """F̃(S) at the exact expected exposures."""
    return surrogate_value(law.S, model, law.k_pos, law.k_neg)


def mc_welfare_samples(
    S: SeedSet,
    g: DirectedGraph,
    spec: ExposureSpec,
    model: ResponseModel,
    R: int,
    rng: RngStream | int,
    simulator: str = "live",
    threads: int | None = 1,
) -> np.ndarray:
    """Per-replicate Σ_i Y_i(z_∞) under live-edge draws or the round-by-round simulator."""
    if R < 1:
        raise ValidationError("R must be at least 1")
    S.validate_for(g)
    _check_nodes(model, g.n)
    stream = as_stream(rng)
    if simulator == "live":
        z = steady_states(S, g, live_matrix(g, stream, R, threads))
    elif simulator == "rounds":
        z = np.array([simulate_rounds(S, g, stream.child(r).generator()) for r in range(R)])
    else:
        raise ValidationError(f"unknown simulator {simulator!r}")
    mp, mn = spec.matrices()
    z = z.astype(np.int64)
    return model.node_values(S.indicator(g.n), z @ mp.T, z @ mn.T).sum(axis=1)


def mc_welfare(S: SeedSet, g: DirectedGraph, spec: ExposureSpec, model: ResponseModel, R: int,
               rng: RngStream | int, simulator: str = "live", threads: int | None = 1) -> float:
    """Monte-Carlo F(S) for graphs beyond the enumeration guard."""
    return float(mc_welfare_samples(S, g, spec, model, R, rng, simulator, threads).mean())


# ────────────────────────────────
# ⚖️ IPS
# ────────────────────────────────
class IpsEstimate(NamedTuple):
    estimate: float
    stderr: float
    n_matched: int
    zero_match: bool = False  # no logged replication used the target set


def ips_value(data: LoggedDataset, S: SeedSet, self_normalized: bool = False,
              w_max: float | None = None) -> IpsEstimate:
    """(1/N) Σ_ℓ W_ℓ(S)·Σ_i Y_iℓ, stderr = sample std / √N."""
    if len(data) == 0:
        log.warning("⚠️ empty logged dataset; IPS estimate set to 0")
        return IpsEstimate(0.0, 0.0, 0, zero_match=True)
    w = ips_weights(data, S, w_max)
    matched = int(np.count_nonzero(w > 0))
    if matched == 0:
        return IpsEstimate(0.0, 0.0, 0, zero_match=True)
    y = np.array([rep.welfare for rep in data.replications])
    N = len(y)
    if self_normalized:
        est = float(np.sum(w * y) / np.sum(w))
        se = float(math.sqrt(np.sum(w * w * (y - est) ** 2)) / np.sum(w))
        return IpsEstimate(est, se, matched)
    terms = w * y
    se = float(terms.std(ddof=1) / math.sqrt(N)) if N > 1 else 0.0
    return IpsEstimate(float(terms.mean()), se, matched)


def ips_weight_second_moment(data: LoggedDataset, S: SeedSet) -> float:
    """Empirical E[W²]; reported as a proxy for the IPS variance term."""
    if len(data) == 0:
        return 0.0
    w = ips_weights(data, S)
    return float(np.mean(w * w))


# ────────────────────────────────
# 📏 Structural bound
# ────────────────────────────────
def _node_curvatures(model: ResponseModel) -> tuple[np.ndarray, np.ndarray]:
    kp = {r: curvature(p.f_pos) for r, p in model.params.items()}
    kn = {r: curvature(p.f_neg) for r, p in model.params.items()}
    return (np.array([kp[r] for r in model.strata.tolist()]),
            np.array([kn[r] for r in model.strata.tolist()]))


def bound_from_constants(model: ResponseModel, C_pos: np.ndarray, C_neg: np.ndarray) -> float:
    """½ Σ_i (κ_i^+ C_i^+ + κ_i^- C_i^-)."""
    kp, kn = _node_curvatures(model)
    return 0.5 * float(kp @ np.asarray(C_pos, dtype=float) + kn @ np.asarray(C_neg, dtype=float))


def structural_bound(g: DirectedGraph, spec: ExposureSpec, model: ResponseModel, K: int) -> float:
    _check_nodes(model, g.n)
    consts = path_constants(g, spec, K)
    return bound_from_constants(model, consts.C_pos, consts.C_neg)


def structural_bound_at(g: DirectedGraph, spec: ExposureSpec, model: ResponseModel, S: SeedSet) -> float:
    """Same width with the path constants of S alone (no maximisation over budget sets)."""
    _check_nodes(model, g.n)
    table = count_simple_paths(g)
    seeds = S.sorted()
    A = table[seeds].sum(axis=0) if seeds else np.zeros(g.n, dtype=np.int64)
    A[seeds] = 0
    mp, mn = spec.matrices()
    c_pos = (mp @ A) ** 2 - mp @ (A * A)
    c_neg = (mn @ A) ** 2 - mn @ (A * A)
    return bound_from_constants(model, c_pos, c_neg)


# ────────────────────────────────
# 📋 WelfareReport
# ────────────────────────────────
_CSV_FIELDS = (
    "seeds", "F_exact", "F_surrogate", "F_plugin", "F_ips", "F_ips_stderr",
    "lo", "hi", "B_str", "epsilon", "structural", "simulation", "response_estimation",
)


@dataclass(frozen=True)
class WelfareReport:
    S: SeedSet
    F_surrogate: float
    F_plugin: float
    B_str: float
    epsilon: float
    F_exact: float | None = None
    F_ips: float | None = None
    F_ips_stderr: float | None = None
    ips_matched: int | None = None
    ips_weight_second_moment: float | None = None
    error_budget: Mapping[str, float | None] = field(default_factory=dict)
    epsilon_override: bool = False
    B_str_scope: str = "budget"
    R: int = 0

    @property
    def interval(self) -> tuple[float, float]:
        half = self.B_str * self.epsilon ** 2
        return self.F_surrogate - half, self.F_surrogate + half

    @property
    def exact_in_interval(self) -> bool | None:
        if self.F_exact is None:
            return None
        lo, hi = self.interval
        return lo - 1e-9 <= self.F_exact <= hi + 1e-9

    def to_dict(self) -> dict:
        lo, hi = self.interval
        return {
            "format_version": FORMAT_VERSION,
            "seeds": self.S.sorted(),
            "K": self.S.K,
            "R": self.R,
            "F_exact": self.F_exact,
            "F_surrogate": self.F_surrogate,
            "F_plugin": self.F_plugin,
            "F_ips": self.F_ips,
            "F_ips_stderr": self.F_ips_stderr,
            "ips_matched": self.ips_matched,
            "ips_weight_second_moment": self.ips_weight_second_moment,
            "ips_variance_note": "weight second moment is a proxy, not a certified variance",
            "interval": [lo, hi],
            "exact_in_interval": self.exact_in_interval,
            "B_str": self.B_str,
            "B_str_scope": self.B_str_scope,
            "epsilon": self.epsilon,
            "epsilon_override": self.epsilon_override,
            "error_budget": dict(self.error_budget),
            "error_budget_note": "reporting convention, not a certified bound",
        }

    @staticmethod
    def csv_header() -> str:
        return ",".join(_CSV_FIELDS)

    def csv_row(self) -> str:
        lo, hi = self.interval
        eb = self.error_budget
        vals = [
            " ".join(str(v) for v in self.S.sorted()), self.F_exact, self.F_surrogate, self.F_plugin,
            self.F_ips, self.F_ips_stderr, lo, hi, self.B_str, self.epsilon,
            eb.get("structural"), eb.get("simulation"), eb.get("response_estimation"),
        ]
        return ",".join("" if v is None else (repr(float(v)) if not isinstance(v, str) else v) for v in vals)


def simulation_term(model: ResponseModel, est: ExposureEstimate, delta: float = ERROR_BUDGET_DELTA) -> float:
    """Σ_i L_i^±·(Bernstein radius of k̂_i^±); Var defaults to M²/4 when R = 1."""
    total = 0.0
    for r, idx in model.groups():
        par = model.params[r]
        for L, var, M in (
            (lipschitz(par.f_pos), est.var_pos, est.M_pos),
            (lipschitz(par.f_neg), est.var_neg, est.M_neg),
        ):
            if L == 0:
                continue
            for i in idx:
                if M[i] == 0:
                    continue
                v = float(var[i]) if var is not None else float(M[i]) ** 2 / 4.0
                total += L * bernstein_radius(v, float(M[i]), est.R, delta)
    return total


def jackknife_spread(
    S: SeedSet,
    data: LoggedDataset,
    est: ExposureEstimate,
    fit_options: Mapping | None = None,
    groups: int = JACKKNIFE_GROUPS,
) -> float | None:
    """Grouped delete-one jackknife standard error of the plug-in value."""
    G = min(groups, len(data))
    if G < 2:
        return None
    options = dict(fit_options or {})
    folds = np.array_split(np.arange(len(data)), G)
    values = []
    for k in range(G):
        keep = np.concatenate([f for j, f in enumerate(folds) if j != k])
        refit = fit_shape_constrained(data.subset(keep.tolist()), **options)
        values.append(plugin_value(S, refit, est))
    values = np.array(values)
    return float(math.sqrt((G - 1) / G * np.sum((values - values.mean()) ** 2)))


def evaluate(
    S: SeedSet,
    g: DirectedGraph,
    spec: ExposureSpec,
    model: ResponseModel,
    R: int,
    rng: RngStream | int,
    true_model: ResponseModel | None = None,
    data: LoggedDataset | None = None,
    epsilon: float | None = None,
    fit_options: Mapping | None = None,
    delta: float = ERROR_BUDGET_DELTA,
    threads: int | None = 1,
) -> WelfareReport:
    """
    Assemble a WelfareReport. The interval is centred on F̃ under the true
    model when one is given (else the fitted one) at exact exposures when the
    exact law is within the guard, Monte-Carlo exposures otherwise.
    """
    S.validate_for(g)
    _check_nodes(model, g.n)
    stream = as_stream(rng)
    est = mc_exposures(S, g, spec, R, stream.child("exposures"), threads)
    F_plugin = plugin_value(S, model, est)
    reference = true_model or model

    law = None
    try:
        law = exact_law(S, g, spec)
    except GuardExceeded as e:
        log.info(f"ℹ️ exact law skipped: {e}")
    if law is not None:
        F_surrogate = exact_surrogate(law, reference)
        F_exact = welfare_under_law(law, spec, true_model) if true_model is not None else None
    else:
        F_surrogate = surrogate_value(S, reference, est.k_hat_pos, est.k_hat_neg)
        F_exact = None

    scope = "budget"
    try:
        B_str = structural_bound(g, spec, reference, max(len(S), 1))
    except GuardExceeded as e:
        log.warning(f"⚠️ budget-wide path constants skipped ({e}); using the constants of S")
        B_str = structural_bound_at(g, spec, reference, S)
        scope = "seed_set"
    eps = float(epsilon) if epsilon is not None else g.epsilon

    if true_model is not None:
        response_term = abs(F_plugin - plugin_value(S, true_model, est))
    elif data is not None:
        response_term = jackknife_spread(S, data, est, fit_options)
    else:
        response_term = None

    F_ips = F_ips_se = matched = w2 = None
    if data is not None and len(data):
        try:
            ips = ips_value(data, S)
            F_ips, F_ips_se, matched = ips.estimate, ips.stderr, ips.n_matched
            w2 = ips_weight_second_moment(data, S)
        except PositivityError as e:
            log.warning(f"⚠️ IPS estimate skipped: {e}")

    return WelfareReport(
        S=S,
        F_surrogate=F_surrogate,
        F_plugin=F_plugin,
        B_str=B_str,
        epsilon=eps,
        F_exact=F_exact,
        F_ips=F_ips,
        F_ips_stderr=F_ips_se,
        ips_matched=matched,
        ips_weight_second_moment=w2,
        error_budget={
            "structural": B_str * eps ** 2,
            "simulation": simulation_term(model, est, delta),
            "response_estimation": response_term,
        },
        epsilon_override=epsilon is not None,
        B_str_scope=scope,
        R=R,
    )


__all__ = [
    "IpsEstimate", "WelfareReport", "bound_from_constants", "evaluate",
    "exact_surrogate", "ips_value", "ips_weight_second_moment", "jackknife_spread", "mc_welfare",
    "mc_welfare_samples", "plugin_value", "simulation_term", "structural_bound", "structural_bound_at", "surrogate_value",
    "true_welfare", "welfare_under_law",
]
