# tests/test_response.py
from __future__ import annotations

import itertools

import numpy as np
import pytest

from cimo.core.errors import ConfigError, PositivityError, ValidationError
from cimo.core.graph import ExposureSpec, SeedSet
from cimo.core.response import (
    IpsWeighting,
    LoggedDataset,
    Replication,
    ResponseCurve,
    check_shape,
    cone_projection,
    curvature,
    effective_sample_size,
    fit_objective,
    fit_shape_constrained,
    format_dataset,
    interp_clamp_count,
    interp_eval,
    ips_weights,
    lipschitz,
    model_from_dict,
    parse_dataset,
)
from cimo.verify.suites import brute_force_projection

from .conftest import single_stratum


def replication(z, kp, kn, y, seeds=(0,), propensity=None, nodes=None) -> Replication:
    z = np.asarray(z, dtype=np.int64)
    return Replication(
        seed_set=frozenset(seeds),
        context=0,
        propensity=propensity,
        i=np.arange(len(z), dtype=np.int64) if nodes is None else np.asarray(nodes, dtype=np.int64),
        z=z,
        kp=np.asarray(kp, dtype=np.int64),
        kn=np.asarray(kn, dtype=np.int64),
        y=np.asarray(y, dtype=float),
    )


def binned(values_by_bin: dict[int, list[float]]) -> LoggedDataset:
    """Unseeded rows, f^- absent: one row per listed outcome at exposure `bin`."""
    kp, y = [], []
    for b, ys in values_by_bin.items():
        kp += [b] * len(ys)
        y += ys
    n = len(y)
    return LoggedDataset((replication(np.zeros(n), kp, np.zeros(n), y, seeds=()),))


# ────────────────────────────────
# curves
# ────────────────────────────────
@pytest.mark.parametrize("x, expected", [(0.5, 0.5), (2.0, 1.5), (1.25, 1.125), (0.0, 0.0)])
def test_interp_eval(x, expected):
    assert interp_eval([0.0, 1.0, 1.5], x) == pytest.approx(expected)


def test_interp_eval_vectorised_and_clamped():
    before = interp_clamp_count()
    out = interp_eval(ResponseCurve([0.0, 1.0, 1.5]), np.array([0.5, 7.0]))
    assert out.tolist() == pytest.approx([0.5, 1.5])
    assert interp_clamp_count() == before + 1


def test_interp_eval_rejects_negative():
    with pytest.raises(ValidationError):
        interp_eval([0.0, 1.0], -0.5)


@pytest.mark.parametrize(
    "values, kappa",
    [([0, 2, 4, 6], 0.0), ([0, 2, 3, 3.5], 1.0), ([0, 1, 1], 1.0), ([0, 3], 0.0), ([0], 0.0)],
)
def test_curvature(values, kappa):
    assert curvature(values) == pytest.approx(kappa)


def test_lipschitz():
    assert lipschitz([0, 2, 3, 3.5]) == 2.0
    assert lipschitz([0]) == 0.0


def test_check_shape_valid():
    assert check_shape([0, 1, 1.5]).valid


def test_check_shape_convexity():
    verdict = check_shape([0, 1, 3])
    assert [(v.kind, v.index) for v in verdict.violations] == [("convexity", 1)]


def test_check_shape_decrease():
    verdict = check_shape([0, -1, -1])
    assert ("decrease", 0) in [(v.kind, v.index) for v in verdict.violations]


def test_check_shape_origin_and_nonfinite():
    assert check_shape([0.5, 1.0]).violations[0].kind == "origin"
    assert check_shape([0.0, float("nan")]).violations[0].kind == "nonfinite"


def test_strict_curve_rejects_bad_shape():
    with pytest.raises(ValidationError):
        ResponseCurve([0, 1, 3])
    loose = ResponseCurve([0, 1, 3], strict=False)
    assert loose.B == 2


def test_curve_extension_is_flat():
    assert ResponseCurve([0, 1, 1.5]).extended(4).values.tolist() == [0, 1, 1.5, 1.5, 1.5]


# ────────────────────────────────
# model
# ────────────────────────────────
def test_node_values_adds_direct_effect():
    model = single_stratum(3, 0.25, [0.0, 0.5, 0.75], [0.0, 0.1])
    out = model.node_values(np.array([1, 0, 0]), np.array([0, 1, 1.5]), np.array([0, 1, 0]))
    assert out.tolist() == pytest.approx([0.25, 0.4, 0.625])


def test_model_dict_roundtrip(concave_model):
    back = model_from_dict(concave_model.to_dict())
    assert back.strata.tolist() == concave_model.strata.tolist()
    assert back.params[0].f_pos.values.tolist() == [0.0, 0.5, 0.7]


def test_model_requires_every_stratum():
    with pytest.raises(ValidationError):
        model_from_dict({"strata": {"0": 0, "1": 1}, "params": {"0": {"alpha": 0, "f_pos": [0]}}})


@pytest.mark.parametrize(
    "doc",
    [
        {"strata": {"x": 0}, "params": {"0": {"alpha": 0, "f_pos": [0]}}},
        {"strata": {"0": "a"}, "params": {"0": {"alpha": 0, "f_pos": [0]}}},
        {"strata": {"5": 0}, "params": {"0": {"alpha": 0, "f_pos": [0]}}},
        {"strata": {"0": 0}, "params": [0]},
    ],
)
def test_malformed_model_is_a_config_error(doc):
    with pytest.raises(ConfigError):
        model_from_dict(doc)


# ────────────────────────────────
# dataset
# ────────────────────────────────
def test_dataset_text_roundtrip():
    data = LoggedDataset((replication([1, 0], [0, 1], [0, 0], [0.2, -0.4], propensity=0.5),))
    back = parse_dataset(format_dataset(data))
    assert len(back) == 1
    rep = back.replications[0]
    assert rep.propensity == 0.5
    assert rep.y.tolist() == [0.2, -0.4]


@pytest.mark.parametrize(
    "kwargs",
    [{"y": [1.5]}, {"propensity": 0.0}, {"kp": [-1]}],
)
def test_dataset_validation(kwargs):
    base = {"z": [0], "kp": [0], "kn": [0], "y": [0.1], "propensity": None}
    base.update(kwargs)
    with pytest.raises(ValidationError):
        LoggedDataset((replication(**base),))


def test_dataset_exposures_checked_against_spec():
    spec = ExposureSpec(((), (0,)), ((), ()))
    data = LoggedDataset((replication([0, 0], [0, 2], [0, 0], [0, 0]),))
    with pytest.raises(ValidationError):
        data.validate_against(spec)


def test_parse_dataset_missing_field():
    with pytest.raises(ConfigError):
        parse_dataset('{"rows": []}')


# ────────────────────────────────
# IPS weights
# ────────────────────────────────
def test_on_policy_weights_are_one():
    data = LoggedDataset(tuple(replication([1], [0], [0], [0.1], seeds=(0,), propensity=1.0) for _ in range(3)))
    assert ips_weights(data, SeedSet.of([0])).tolist() == [1.0, 1.0, 1.0]


def test_uniform_over_four_sets():
    data = LoggedDataset((
        replication([1], [0], [0], [0.1], seeds=(0,), propensity=0.25),
        replication([0], [0], [0], [0.1], seeds=(1,), propensity=0.25),
    ))
    assert ips_weights(data, SeedSet.of([0])).tolist() == [4.0, 0.0]
    assert ips_weights(data, SeedSet.of([0]), w_max=2.0).tolist() == [2.0, 0.0]


def test_unmatched_target_gives_zero_weights():
    data = LoggedDataset((replication([1], [0], [0], [0.1], seeds=(0,), propensity=0.5),))
    w = ips_weights(data, SeedSet.of([3]))
    assert not w.any()
    assert effective_sample_size(w) == 0.0


def test_missing_propensity_on_match():
    data = LoggedDataset((replication([1], [0], [0], [0.1], seeds=(0,), propensity=None),))
    with pytest.raises(PositivityError):
        ips_weights(data, SeedSet.of([0]))


def test_effective_sample_size():
    assert effective_sample_size(np.array([1.0, 1.0, 1.0, 1.0])) == pytest.approx(4.0)
    assert effective_sample_size(np.array([4.0, 0.0, 0.0])) == pytest.approx(1.0)


# ────────────────────────────────
# cone projection
# ────────────────────────────────
def test_projection_identity_on_feasible():
    out = cone_projection([0.0, 1.0, 1.8], [0.0, 1.0, 1.0])
    assert out.tolist() == pytest.approx([0.0, 1.0, 1.8], abs=1e-10)


def test_projection_equal_weights():
    out = cone_projection([0.0, 1.0, 2.5], [0.0, 1.0, 1.0])
    assert out.tolist() == pytest.approx([0.0, 1.2, 2.4], abs=1e-9)


def test_projection_weighted_bins():
    out = cone_projection([0.0, 1.0, 2.5], [0.0, 2.0, 1.0])
    assert out.tolist() == pytest.approx([0.0, 7 / 6, 7 / 3], abs=1e-9)


def test_projection_negative_means_clip_to_zero():
    out = cone_projection([0.0, -0.5, -0.2], [0.0, 1.0, 1.0])
    assert out.tolist() == pytest.approx([0.0, 0.0, 0.0], abs=1e-12)


def test_projection_extends_flat_past_last_observed_bin():
    out = cone_projection([0.0, 0.6, 0.0, 0.0], [0.0, 3.0, 0.0, 0.0])
    assert out.tolist() == pytest.approx([0.0, 0.6, 0.6, 0.6], abs=1e-10)


def test_projection_tv_penalty_shrinks_top():
    free = cone_projection([0.0, 0.5, 0.8], [0.0, 1.0, 1.0])
    penalised = cone_projection([0.0, 0.5, 0.8], [0.0, 1.0, 1.0], lam=0.2)
    assert check_shape(penalised).valid
    assert penalised[-1] < free[-1]


def test_projection_is_always_shape_feasible():
    gen = np.random.default_rng(7)
    for _ in range(50):
        B = int(gen.integers(1, 8))
        mu = np.concatenate([[0.0], gen.normal(0, 1, size=B)])
        W = np.concatenate([[0.0], gen.uniform(0.1, 3.0, size=B)])
        assert check_shape(cone_projection(mu, W)).valid


def test_projection_pools_decreasing_pair():
    mu, W = [0.0, 0.44222, 0.30522], [0.0, 1.7845, 1.4150]
    pooled = (1.7845 * 0.44222 + 1.4150 * 0.30522) / (1.7845 + 1.4150)
    out = cone_projection(mu, W)
    assert out.tolist() == pytest.approx([0.0, pooled, pooled], abs=1e-6)
    assert pooled == pytest.approx(0.3816, abs=1e-4)


def test_projection_matches_exhaustive_active_sets():
    gen = np.random.default_rng(19)
    for _ in range(150):
        B = int(gen.integers(1, 5))
        mu = np.concatenate([[0.0], gen.uniform(-0.2, 1.0, size=B)])
        W = np.concatenate([[0.0], gen.uniform(0.05, 3.0, size=B)])
        out = cone_projection(mu, W)
        best = brute_force_projection(mu, W)
        fit = float(np.sum(W[1:] * (mu[1:] - out[1:]) ** 2))
        exact = float(np.sum(W[1:] * (mu[1:] - best[1:]) ** 2))
        assert fit <= exact + 1e-9


# ────────────────────────────────
# Stage I fit
# ────────────────────────────────
def test_fit_passes_through_feasible_bin_means():
    data = binned({0: [0.0, 0.0], 1: [0.4, 0.6], 2: [0.8, 1.0]})
    fitted = fit_shape_constrained(data, B_neg=0)
    assert fitted.params[0].alpha == 0.0
    assert fitted.params[0].f_pos.values.tolist() == pytest.approx([0.0, 0.5, 0.9], abs=1e-8)


def test_fit_projects_convex_bin_means():
    data = binned({0: [0.0], 1: [0.4], 2: [1.0]})
    fitted = fit_shape_constrained(data, B_neg=0)
    assert fitted.params[0].f_pos.values.tolist() == pytest.approx([0.0, 0.48, 0.96], abs=1e-8)
    assert fitted.diagnostics["0"]["alpha_pinned"] is True


def test_ablation_keeps_raw_means():
    data = binned({0: [0.0], 1: [0.4], 2: [1.0]})
    fitted = fit_shape_constrained(data, B_neg=0, shape=False)
    assert fitted.params[0].f_pos.values.tolist() == pytest.approx([0.0, 0.4, 1.0])
    assert not fitted.curves_valid()


def test_fit_recovers_noiseless_model():
    alpha, f_pos, f_neg = 0.1, np.array([0.0, 0.3, 0.5, 0.6]), np.array([0.0, 0.2, 0.3])
    grid = list(itertools.product([0, 1], range(4), range(3)))
    z = np.array([g[0] for g in grid])
    kp = np.array([g[1] for g in grid])
    kn = np.array([g[2] for g in grid])
    y = alpha * z + f_pos[kp] - f_neg[kn]
    seeds = tuple(int(i) for i in np.flatnonzero(z))
    data = LoggedDataset((replication(z, kp, kn, y, seeds=seeds),))
    fitted = fit_shape_constrained(data)
    par = fitted.params[0]
    assert par.alpha == pytest.approx(alpha, abs=1e-6)
    assert np.max(np.abs(par.f_pos.values - f_pos)) < 1e-6
    assert np.max(np.abs(par.f_neg.values - f_neg)) < 1e-6
    assert fit_objective(fitted, data) < 1e-10


def test_fit_per_stratum():
    # nodes 0,1 in stratum 0 (steep), nodes 2,3 in stratum 1 (flat)
    reps = []
    for k in range(3):
        y = [0.3 * k, 0.3 * k, 0.1 * k, 0.1 * k]
        reps.append(replication(np.zeros(4), [k] * 4, np.zeros(4), y, seeds=()))
    fitted = fit_shape_constrained(LoggedDataset(tuple(reps)), strata=[0, 0, 1, 1], B_neg=0)
    assert fitted.params[0].f_pos.values.tolist() == pytest.approx([0.0, 0.3, 0.6], abs=1e-8)
    assert fitted.params[1].f_pos.values.tolist() == pytest.approx([0.0, 0.1, 0.2], abs=1e-8)


def test_fit_clamps_exposures_above_grid():
    data = binned({0: [0.0], 1: [0.5], 2: [0.5], 3: [0.5]})
    fitted = fit_shape_constrained(data, B_pos=2, B_neg=0)
    assert fitted.params[0].f_pos.B == 2
    assert fitted.diagnostics["0"]["clamped"] == 1


def test_ips_weighted_fit_uses_matched_replications_only():
    good = replication([0, 0], [1, 2], [0, 0], [0.5, 0.8], seeds=(5,), propensity=0.5, nodes=[0, 1])
    other = replication([0, 0], [1, 2], [0, 0], [-0.9, -0.9], seeds=(6,), propensity=0.5, nodes=[0, 1])
    fitted = fit_shape_constrained(
        LoggedDataset((good, other)), B_neg=0, weighting=IpsWeighting(SeedSet.of([5])), n=2,
    )
    assert fitted.params[0].f_pos.values.tolist() == pytest.approx([0.0, 0.5, 0.8], abs=1e-8)


def test_fit_argument_errors():
    data = binned({0: [0.0], 1: [0.5]})
    with pytest.raises(ValidationError):
        fit_shape_constrained(data, lam=-1.0)
    with pytest.raises(ConfigError):
        fit_shape_constrained(data, weighting="softmax")
    with pytest.raises(PositivityError):
        fit_shape_constrained(data, weighting=IpsWeighting(SeedSet.of([])))
