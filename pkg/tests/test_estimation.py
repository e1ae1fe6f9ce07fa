import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from factordta.copulas import CopulaFamily
from factordta.estimation import (
    FitConfig,
    _BatchObjective,
    _gradient,
    fit,
    fit_grid,
    from_unconstrained,
    to_unconstrained,
)
from factordta.likelihood import Dataset, ModelSpec, ParamSet, StudyRecord, neg_log_lik
from factordta.margins import MarginKind
from factordta.quadrature import gauss_legendre_01
from factordta.simulation import SimDesign, replicate_rng, simulate_dataset

BVN = CopulaFamily.BVN
FRANK = CopulaFamily.FRANK
CLN0 = CopulaFamily.CLAYTON0
CLN270 = CopulaFamily.CLAYTON270

TRUTH = ParamSet(
    pi1=(0.68, 0.675),
    pi0=(0.83, 0.96),
    delta1=(0.72, 0.69),
    delta0=(1.03, 0.79),
    tau=(0.72, 0.83, -0.21, -0.27),
)
SPEC_CLN = ModelSpec(2, MarginKind.NORMAL_LOGIT, (CLN0, CLN0, CLN270, CLN270))
SPEC_BVN = ModelSpec(2, MarginKind.NORMAL_LOGIT, (BVN, BVN, BVN, BVN))
SPEC_MIX = ModelSpec(2, MarginKind.NORMAL_LOGIT, (FRANK, BVN, CLN270, FRANK))
SPEC_BETA = ModelSpec(2, MarginKind.BETA_IDENTITY, (CLN0, CLN0, CLN270, CLN270))

BETA_TRUTH = ParamSet(
    pi1=(0.68, 0.675),
    pi0=(0.83, 0.96),
    delta1=(0.06, 0.05),
    delta0=(0.04, 0.03),
    tau=(0.72, 0.83, -0.21, -0.27),
)


def _dataset(seed, N=80, spec=SPEC_CLN, truth=TRUTH):
    design = SimDesign(N=N, spec=spec, truth=truth, replicates=1, seed=seed)
    return simulate_dataset(design, replicate_rng(seed, 0))


# --- parameter transforms ----------------------------------------------------

def test_transform_round_trip_normal_margins():
    x = to_unconstrained(TRUTH, SPEC_CLN)
    assert x.shape == (12,)
    back = from_unconstrained(x, SPEC_CLN)
    for a, b in zip(
        back.pi1 + back.pi0 + back.delta1 + back.delta0 + back.tau,
        TRUTH.pi1 + TRUTH.pi0 + TRUTH.delta1 + TRUTH.delta0 + TRUTH.tau,
    ):
        assert a == pytest.approx(b, rel=1e-12)


def test_transform_round_trip_beta_margins():
    x = to_unconstrained(BETA_TRUTH, SPEC_BETA)
    back = from_unconstrained(x, SPEC_BETA)
    for a, b in zip(back.delta1 + back.delta0, BETA_TRUTH.delta1 + BETA_TRUTH.delta0):
        assert a == pytest.approx(b, rel=1e-12)


def test_transform_round_trip_mixed_families():
    params = ParamSet(
        TRUTH.pi1, TRUTH.pi0, TRUTH.delta1, TRUTH.delta0, (0.5, -0.4, -0.3, 0.0)
    )
    back = from_unconstrained(to_unconstrained(params, SPEC_MIX), SPEC_MIX)
    # Frank passes tau = 0 through the optimizer but evaluation nudges it
    # off the independence puncture
    assert back.tau[0] == pytest.approx(0.5, rel=1e-12)
    assert back.tau[1] == pytest.approx(-0.4, rel=1e-12)
    assert back.tau[2] == pytest.approx(-0.3, rel=1e-12)
    assert abs(back.tau[3]) <= 1e-6


def test_decode_clips_extreme_coordinates():
    # an optimizer iterate far out on the unconstrained scale must still
    # decode to a valid (constructible) ParamSet
    x = to_unconstrained(TRUTH, SPEC_BVN)
    x[0] = 200.0    # logit(pi1_1) -> pi ~ 1
    x[3] = -200.0   # logit(pi0_2) -> pi ~ 0
    x[4] = 80.0     # log(delta1_1) huge
    x[8] = 500.0    # atanh(tau_1) -> tau ~ 1
    back = from_unconstrained(x, SPEC_BVN)
    assert 0.0 < back.pi1[0] < 1.0 and back.pi1[0] > 0.999999
    assert 0.0 < back.pi0[1] < 1.0 and back.pi0[1] < 1e-6
    assert np.isfinite(back.delta1[0])
    assert abs(back.tau[0]) <= 0.999


def test_transform_rejects_beta_delta_above_one():
    with pytest.raises(ValueError, match="delta"):
        to_unconstrained(TRUTH, SPEC_BETA)  # delta0[0] = 1.03


def test_transform_rejects_tau_sign_mismatch():
    bad = ParamSet(TRUTH.pi1, TRUTH.pi0, TRUTH.delta1, TRUTH.delta0,
                   (0.72, 0.83, 0.21, -0.27))
    with pytest.raises(ValueError, match="rotation sign"):
        to_unconstrained(bad, SPEC_CLN)


def test_transform_rejects_wrong_t():
    spec3 = ModelSpec(3, MarginKind.NORMAL_LOGIT, (BVN,) * 6)
    with pytest.raises(ValueError, match="T="):
        to_unconstrained(TRUTH, spec3)


@settings(max_examples=40, deadline=None)
@given(
    pi=st.lists(st.floats(0.01, 0.99), min_size=4, max_size=4),
    delta=st.lists(st.floats(0.05, 5.0), min_size=4, max_size=4),
    tau=st.lists(st.floats(-0.95, 0.95), min_size=4, max_size=4),
)
def test_transform_round_trip_property(pi, delta, tau):
    params = ParamSet(
        pi1=tuple(pi[:2]), pi0=tuple(pi[2:]),
        delta1=tuple(delta[:2]), delta0=tuple(delta[2:]),
        tau=tuple(tau),
    )
    back = from_unconstrained(to_unconstrained(params, SPEC_BVN), SPEC_BVN)
    for a, b in zip(back.tau, params.tau):
        assert a == pytest.approx(b, rel=1e-9, abs=1e-7)
    for a, b in zip(back.pi1 + back.pi0, params.pi1 + params.pi0):
        assert a == pytest.approx(b, rel=1e-9)


# --- batched objective vs the reference likelihood ---------------------------

def test_batch_objective_matches_reference_nll():
    data = _dataset(5, N=12)
    rule = gauss_legendre_01(15)
    obj = _BatchObjective(data, SPEC_CLN, rule)
    rng = np.random.default_rng(8)
    x0 = to_unconstrained(TRUTH, SPEC_CLN)
    X = x0 + 0.2 * rng.standard_normal((6, x0.size))
    vals = obj(X)
    for row, v in zip(X, vals):
        params = from_unconstrained(row, SPEC_CLN)
        ref = neg_log_lik(data, SPEC_CLN, params, rule, rule)
        assert v == pytest.approx(ref, rel=1e-12)


def test_batch_objective_matches_reference_beta_margins():
    data = _dataset(6, N=10, spec=SPEC_BETA, truth=BETA_TRUTH)
    rule = gauss_legendre_01(12)
    obj = _BatchObjective(data, SPEC_BETA, rule)
    x0 = to_unconstrained(BETA_TRUTH, SPEC_BETA)
    ref = neg_log_lik(data, SPEC_BETA, BETA_TRUTH, rule, rule)
    assert obj(x0[None, :])[0] == pytest.approx(ref, rel=1e-12)


def test_gradient_matches_manual_central_difference():
    data = _dataset(7, N=10)
    rule = gauss_legendre_01(10)
    obj = _BatchObjective(data, SPEC_CLN, rule)
    x0 = to_unconstrained(TRUTH, SPEC_CLN)
    g, f0 = _gradient(obj, x0, 1e-5)
    assert f0 == pytest.approx(obj(x0[None, :])[0], rel=1e-14)
    for i in (0, 5, 9, 11):
        h = 1e-5 * max(1.0, abs(x0[i]))
        e = np.zeros_like(x0)
        e[i] = h
        manual = (obj((x0 + e)[None, :])[0] - obj((x0 - e)[None, :])[0]) / (2 * h)
        assert g[i] == pytest.approx(manual, rel=1e-10, abs=1e-12)


# --- fitting ----------------------------------------------------------------

def test_fit_recovers_generating_truth():
    data = _dataset(23)
    res = fit(data, SPEC_CLN, FitConfig(nq=15))
    assert res.converged
    assert res.hessian_pd
    assert not res.tau_cap_hit
    e = res.estimates
    # one replicate of N=80 studies: sampling noise dominates, bounds are
    # a few SDs wide
    for a, b in zip(e.pi1 + e.pi0, TRUTH.pi1 + TRUTH.pi0):
        assert abs(a - b) < 0.05
    for a, b in zip(e.delta1 + e.delta0, TRUTH.delta1 + TRUTH.delta0):
        assert abs(a - b) < 0.25
    for a, b in zip(e.tau, TRUTH.tau):
        assert abs(a - b) < 0.25
    se = res.std_errors
    for v in se.pi1 + se.pi0 + se.delta1 + se.delta0 + se.tau:
        assert np.isfinite(v) and v > 0.0
    # estimated uncertainty should be in the plausible range for N=80
    assert 0.005 < se.pi1[0] < 0.06


def test_fit_cold_and_warm_reach_same_optimum():
    # this fixture's likelihood is unimodal: both starts land on one point
    data = _dataset(4242)
    cold = fit(data, SPEC_CLN, FitConfig(nq=15, compute_se=False))
    warm = fit(data, SPEC_CLN, FitConfig(nq=15, start=TRUTH, compute_se=False))
    assert cold.converged and warm.converged
    assert cold.loglik == pytest.approx(warm.loglik, abs=1e-6)
    for a, b in zip(cold.estimates.tau, warm.estimates.tau):
        assert a == pytest.approx(b, abs=1e-4)


def test_fit_stops_at_stationary_points():
    # seed 23 has two nearby local optima; with tight tolerances each
    # start must still end at a stationary point with a near-zero gradient
    data = _dataset(23)
    cfg = dict(nq=12, compute_se=False, obj_tol=1e-13, grad_tol=1e-6, max_iter=800)
    cold = fit(data, SPEC_CLN, FitConfig(**cfg))
    warm = fit(data, SPEC_CLN, FitConfig(**cfg, start=TRUTH))
    assert cold.converged and warm.converged
    assert cold.grad_norm < 1e-4
    assert warm.grad_norm < 1e-4
    assert cold.loglik == pytest.approx(warm.loglik, abs=0.1)


def test_fit_loglik_matches_reference_at_estimate():
    data = _dataset(23, N=30)
    res = fit(data, SPEC_CLN, FitConfig(nq=12, compute_se=False))
    rule = gauss_legendre_01(12)
    assert -res.loglik == pytest.approx(
        neg_log_lik(data, SPEC_CLN, res.estimates, rule, rule), rel=1e-12
    )


def test_fit_skips_hessian_when_disabled():
    data = _dataset(31, N=20)
    res = fit(data, SPEC_CLN, FitConfig(nq=10, compute_se=False, start=TRUTH))
    assert res.std_errors is None
    assert res.hessian is None
    assert not res.hessian_pd


def test_fit_iteration_limit_reported():
    data = _dataset(31, N=20)
    res = fit(data, SPEC_CLN, FitConfig(nq=10, max_iter=2, compute_se=False))
    assert not res.converged
    assert res.message == "iteration limit reached"
    assert res.iterations == 2


def test_fit_requires_dataset_type():
    with pytest.raises(TypeError):
        fit([StudyRecord((5,), 10, (6,), 12)], SPEC_CLN)


def test_fit_requires_two_studies():
    data = Dataset((StudyRecord((5, 5), 10, (6, 6), 12),))
    with pytest.raises(ValueError, match="at least 2"):
        fit(data, SPEC_CLN)


def test_fit_requires_matching_t():
    data = _dataset(31, N=5)
    spec3 = ModelSpec(3, MarginKind.NORMAL_LOGIT, (BVN,) * 6)
    with pytest.raises(ValueError, match="T="):
        fit(data, spec3)


# --- model scans -------------------------------------------------------------

def test_fit_grid_orders_by_loglik_and_keeps_failures():
    data = _dataset(23, N=40)
    spec3 = ModelSpec(3, MarginKind.NORMAL_LOGIT, (BVN,) * 6)  # cannot fit T=2 data
    cfg = FitConfig(nq=10, compute_se=False)
    results = fit_grid(data, [SPEC_BVN, spec3, SPEC_CLN], cfg)
    assert len(results) == 3
    logliks = [r.loglik for r in results]
    assert logliks == sorted(logliks, reverse=True)
    failed = results[-1]
    assert failed.spec == spec3
    assert failed.loglik == float("-inf")
    assert not failed.converged
    assert failed.message.startswith("fit failed:")
    assert failed.estimates is None
    # both valid specs produced real fits
    for r in results[:2]:
        assert r.converged and np.isfinite(r.loglik)


def test_fit_grid_preserves_input_order_on_exact_ties():
    data = _dataset(29, N=15)
    cfg = FitConfig(nq=8, compute_se=False)
    results = fit_grid(data, [SPEC_CLN, SPEC_CLN], cfg)
    assert results[0].loglik == results[1].loglik
