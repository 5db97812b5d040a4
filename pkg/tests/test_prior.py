import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from effect_fusion.design import CovariateSpec
from effect_fusion.prior import (HyperParams, IndicatorState, build_structure_matrix,
                                 concentration_check, conditional_delta_probability,
                                 indicator_prior_is_uniform, indicator_prior_table,
                                 log_prior_odds_null_vs_full, log_prior_odds_numeric,
                                 marginal_fusion_probability_curve, normal_band_mass,
                                 normal_band_outside_mass,
                                 partial_moments, restricted_covariance, simulate_prior,
                                 structure_matrix_via_restriction)


def spec_of(c, scale="nominal"):
    return CovariateSpec("x", tuple(str(k) for k in range(c + 1)), scale)


def quad_form_oracle(spec, delta, r, beta):
    """Sum of kappa-weighted squared differences over fusable pairs, beta_0 = 0."""
    b = np.concatenate([[0.0], beta])
    total = 0.0
    for (k, j), bit in zip(spec.pairs, delta):
        total += (bit + r * (1 - bit)) * (b[k] - b[j]) ** 2
    return total


def test_worked_matrix_baseline_pair_in_spike():
    spec = spec_of(3)
    delta = IndicatorState.from_pairs(spec, {(1, 0): 0})
    S = build_structure_matrix(spec, delta, 10000)
    np.testing.assert_array_equal(S.Q, [[10002, -1, -1], [-1, 3, -1], [-1, -1, 3]])
    assert S.gamma == 1.5


def test_worked_matrix_pair_31_in_spike():
    spec = spec_of(3)
    delta = IndicatorState.from_pairs(spec, {(3, 1): 0})
    S = build_structure_matrix(spec, delta, 10000)
    np.testing.assert_array_equal(S.Q, [[10002, -1, -10000], [-1, 3, -1], [-10000, -1, 10002]])


def test_all_slab_nominal_and_selection_cases():
    Q = build_structure_matrix(spec_of(3), np.ones(6), 55.0).Q
    np.testing.assert_array_equal(Q, [[3, -1, -1], [-1, 3, -1], [-1, -1, 3]])
    S = build_structure_matrix(spec_of(3, "selection"), np.array([1, 0, 1]), 100)
    np.testing.assert_array_equal(S.Q, np.diag([1.0, 100.0, 1.0]))
    assert S.gamma == 1.0


def test_ordinal_tridiagonal():
    delta = np.array([1, 0, 1])
    Q = build_structure_matrix(spec_of(3, "ordinal"), delta, 50).Q
    k10, k21, k32 = 1, 50, 1
    expected = [[k10 + k21, -k21, 0], [-k21, k21 + k32, -k32], [0, -k32, k32]]
    np.testing.assert_array_equal(Q, expected)


def test_indicator_state_keys_and_frozen():
    spec = CovariateSpec("x", ("a", "b", "c"), "ordinal", frozen_pairs=((2, 1),))
    state = IndicatorState.ones(spec)
    assert state[(2, 1)] == 1 and state.d == 2
    with pytest.raises(ValueError):
        IndicatorState.from_pairs(spec, {(2, 1): 0})
    with pytest.raises(KeyError):
        state[(2, 0)]


def test_disconnected_pattern_rejected():
    from effect_fusion.design import FusionPattern
    spec = CovariateSpec("x", ("0", "1", "2", "3"), "nominal",
                         fusion_pattern=FusionPattern(3, ((1, 0), (3, 2))))
    with pytest.raises(ValueError, match="singular structure"):
        build_structure_matrix(spec, np.ones(2), 100)


def test_restriction_route_small_case():
    Q = structure_matrix_via_restriction(spec_of(2), np.ones(3), 10).Q
    # kappa_0 = I plus U'U with U = (1, -1)
    np.testing.assert_array_equal(Q, [[2, -1], [-1, 2]])


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6), st.sampled_from([10.0, 1e4]), st.integers(0, 2**32 - 1))
def test_restriction_route_matches(c, r, seed):
    spec = spec_of(c)
    delta = np.random.default_rng(seed).integers(0, 2, spec.fusion_pattern.d)
    direct = build_structure_matrix(spec, delta, r).Q
    via = structure_matrix_via_restriction(spec, delta, r).Q
    np.testing.assert_allclose(via, direct, rtol=1e-12, atol=0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_conditional_covariance_route(c, seed):
    # Conditioning the independent difference prior on the restrictions gives Q^{-1}.
    spec = spec_of(c)
    delta = np.random.default_rng(seed).integers(0, 2, spec.fusion_pattern.d)
    Q = build_structure_matrix(spec, delta, 30.0).Q
    np.testing.assert_allclose(restricted_covariance(spec, delta, 30.0) @ Q, np.eye(c), atol=1e-8)


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 6), st.sampled_from(["nominal", "ordinal", "selection"]),
       st.floats(1.5, 1e5), st.integers(0, 2**32 - 1))
def test_quadratic_form_identity_and_pd(c, scale, r, seed):
    spec = spec_of(c, scale)
    rng = np.random.default_rng(seed)
    delta = rng.integers(0, 2, spec.fusion_pattern.d)
    Q = build_structure_matrix(spec, delta, r).Q
    beta = rng.normal(size=c)
    np.testing.assert_allclose(beta @ Q @ beta, quad_form_oracle(spec, delta, r, beta), rtol=1e-10)
    np.linalg.cholesky(Q)
    off = Q[~np.eye(c, dtype=bool)]
    assert set(np.unique(off)) <= {0.0, -1.0, -r}


def test_partial_moments_all_slab():
    S = build_structure_matrix(spec_of(3), np.ones(6), 1e4)
    prec, corr = partial_moments(S, 1.0)
    np.testing.assert_allclose(prec, 2.0)
    off = corr[~np.eye(3, dtype=bool)]
    np.testing.assert_allclose(off, 1 / 3)


def test_partial_precision_range():
    r, tau2 = 1e4, 0.7
    spec = spec_of(3)
    # all pairs involving level 1 in the spike
    delta = IndicatorState.from_pairs(spec, {(1, 0): 0, (2, 1): 0, (3, 1): 0}).delta
    prec, _ = partial_moments(build_structure_matrix(spec, delta, r), tau2)
    assert prec[0] == pytest.approx(r * 2 / tau2, rel=1e-12)
    prec, _ = partial_moments(build_structure_matrix(spec, np.ones(6), r), tau2)
    assert prec[0] == pytest.approx(2 / tau2, rel=1e-12)


def test_prior_odds_closed_form_matches_determinants():
    assert log_prior_odds_null_vs_full(1, 123.0) == 0.0
    for c in range(1, 7):
        for r in (1e2, 2e4):
            assert log_prior_odds_numeric(c, r) == pytest.approx(
                log_prior_odds_null_vs_full(c, r), abs=1e-9)


def test_prior_odds_exponent_from_determinants():
    # |Q(1)| = (c+1)^(c-1) for the all-slab nominal matrix; |Q(0)| = r^c |Q(1)|.
    c, r = 3, 1e4
    d = c * (c + 1) // 2
    logdet1 = (c - 1) * np.log(c + 1)
    logdet0 = c * np.log(r) + logdet1
    oracle = 0.5 * logdet1 - 0.5 * logdet0 + 0.5 * d * np.log(r)
    assert log_prior_odds_null_vs_full(c, r) == pytest.approx(oracle, abs=1e-12)
    assert oracle == pytest.approx(1.5 * np.log(r))


@pytest.mark.parametrize("scale,c,r,tol", [("ordinal", 4, 2e4, 1e-9), ("selection", 5, 200, 1e-12),
                                           ("ordinal", 10, 2e4, 1e-9)])
def test_uniform_indicator_prior(scale, c, r, tol):
    check = indicator_prior_is_uniform(spec_of(c, scale), r)
    assert check.spread < tol
    assert check.n_configs == 2**c


def test_uniformity_rejects_nominal():
    with pytest.raises(ValueError, match="uniformity holds only for restricted patterns"):
        indicator_prior_is_uniform(spec_of(3))


def test_conditional_delta_probability():
    assert conditional_delta_probability(0.0, 1.0, 1.5, 1e4) == pytest.approx(1 / 101, rel=1e-14)
    assert conditional_delta_probability(10.0, 1.0, 1.5, 2e4) == pytest.approx(1.0, abs=1e-12)
    theta, tau2, gamma, r = 0.05, 1.0, 1.5, 20000
    slab = stats.norm.pdf(theta, scale=np.sqrt(gamma * tau2))
    spike = stats.norm.pdf(theta, scale=np.sqrt(gamma * tau2 / r))
    assert conditional_delta_probability(theta, tau2, gamma, r) == pytest.approx(
        slab / (slab + spike), rel=1e-12)


def test_conditional_delta_probability_extremes_are_finite():
    vals = conditional_delta_probability(np.array([0.0, 1e-3, 1.0, 1e6]), 1e-4, 1.0, 1e6)
    assert np.all(np.isfinite(vals)) and np.all((vals >= 0) & (vals <= 1))
    assert vals[-1] == 1.0


def _curve_oracle(theta, g0, G0, r):
    """Integrate the normal spike and slab densities over tau^2 ~ IG(g0, G0)."""
    def mix(var_scale):
        f = lambda t2: (stats.norm.pdf(theta, scale=np.sqrt(t2 * var_scale))
                        * stats.invgamma.pdf(t2, g0, scale=G0))
        mode = G0 / (g0 + 1)
        return (integrate.quad(f, 0, mode, limit=400)[0]
                + integrate.quad(f, mode, np.inf, limit=400)[0])
    spike, slab = mix(1.0 / r), mix(1.0)
    return spike / (spike + slab)


def test_fusion_curve_against_numeric_integration():
    for theta in (0.02, 0.1, 0.3):
        got = marginal_fusion_probability_curve([theta], 5, 2, 2e3)[0]
        assert got == pytest.approx(_curve_oracle(theta, 5, 2, 2e3), rel=1e-6)


def test_fusion_curve_shape():
    r = 2e4
    assert marginal_fusion_probability_curve([0.0], 5, 2, r)[0] == pytest.approx(
        np.sqrt(r) / (1 + np.sqrt(r)), rel=1e-12)
    grid = np.linspace(0, 2, 201)
    p = marginal_fusion_probability_curve(grid, 5, 2, r)
    assert np.all(np.diff(p) <= 1e-15)
    sym = marginal_fusion_probability_curve(-grid, 5, 2, r)
    np.testing.assert_allclose(sym, p)
    at_half = [marginal_fusion_probability_curve([0.5], 5, 2, rr)[0] for rr in (2e3, 2e4, 2e5)]
    assert at_half[0] > at_half[1] > at_half[2]


def test_joint_prior_factorizes_over_pairs():
    spec, r, tau2 = spec_of(2), 50.0, 0.8
    gamma = spec.gamma
    rng = np.random.default_rng(3)
    configs, _ = indicator_prior_table(spec, r)
    ratios = []
    for _ in range(100):
        beta = rng.normal(size=2)
        b = np.concatenate([[0.0], beta])
        for delta in configs:
            Q = build_structure_matrix(spec, delta, r).Q
            log_full = (-np.log(gamma * tau2) - beta @ Q @ beta / (2 * gamma * tau2)
                        + 0.5 * np.log(r) * np.sum(1 - delta))
            log_prod = 0.0
            for (k, j), bit in zip(spec.pairs, delta):
                kap = bit + r * (1 - bit)
                log_prod += 0.5 * np.log(r) * (1 - bit) - (b[k] - b[j]) ** 2 * kap / (2 * gamma * tau2)
            ratios.append(log_full - log_prod)
    # constant log ratio <=> the joint is the product of per-pair terms
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-10, atol=1e-9)


def _swap_matrix(c):
    A = np.eye(c)
    A[:-1, -1] = -1.0
    A[-1, -1] = -1.0
    return A


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 6), st.floats(2.0, 1e4), st.integers(0, 2**32 - 1))
def test_baseline_invariance(c, r, seed):
    spec = spec_of(c)
    delta = np.random.default_rng(seed).integers(0, 2, spec.fusion_pattern.d)
    Q = build_structure_matrix(spec, delta, r).Q
    A = _swap_matrix(c)
    Ainv = np.linalg.inv(A)
    Q_swapped = Ainv.T @ Q @ Ainv
    # new level k is old level k for 0 < k < c; new c is old 0; new baseline is old c
    old_of = {0: c, c: 0, **{k: k for k in range(1, c)}}
    old_bits = dict(zip(spec.pairs, delta))
    relabeled = [old_bits[tuple(sorted((old_of[k], old_of[j]), reverse=True))] for k, j in spec.pairs]
    direct = build_structure_matrix(spec, np.array(relabeled), r).Q
    np.testing.assert_allclose(Q_swapped, direct, rtol=1e-10, atol=1e-10 * r)


def test_indicator_table_limits():
    configs, probs = indicator_prior_table(spec_of(3), 1e4)
    assert configs.shape == (64, 6) and probs.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError, match="enumeration infeasible"):
        indicator_prior_table(spec_of(6), 1e4)


def test_indicator_table_null_vs_full_odds():
    spec = spec_of(3)
    configs, probs = indicator_prior_table(spec, 1e4)
    null = probs[np.all(configs == 0, axis=1)][0]
    full = probs[np.all(configs == 1, axis=1)][0]
    assert np.log(null / full) == pytest.approx(log_prior_odds_numeric(3, 1e4), abs=1e-9)


@pytest.mark.parametrize("scale", ["ordinal", "selection"])
def test_simulated_restricted_indicators_are_fair_coins(scale):
    n = 20000
    draws = simulate_prior(spec_of(4, scale), HyperParams(r=1e4, G0=20), n, seed=1)
    se = np.sqrt(0.25 / n)
    assert np.all(np.abs(draws.delta.mean(axis=0) - 0.5) < 4 * se)


def test_simulated_nominal_config_frequencies_match_enumeration():
    spec, n = spec_of(3), 40000
    configs, probs = indicator_prior_table(spec, 1e4)
    draws = simulate_prior(spec, HyperParams(r=1e4, G0=2), n, seed=2)
    null_freq = np.mean(np.all(draws.delta == 0, axis=1))
    p = probs[np.all(configs == 0, axis=1)][0]
    assert abs(null_freq - p) < 4 * np.sqrt(p * (1 - p) / n)


def test_simulated_beta_covariance_given_delta():
    spec, hp = spec_of(2), HyperParams(r=10.0, g0=5, G0=2)
    draws = simulate_prior(spec, hp, 60000, seed=4)
    full = np.all(draws.delta == 1, axis=1)
    b = draws.beta[full] / np.sqrt(spec.gamma * draws.tau2[full])[:, None]
    cov = np.linalg.inv(build_structure_matrix(spec, np.ones(3), hp.r).Q)
    np.testing.assert_allclose(np.cov(b.T), cov, atol=6 * np.sqrt(2 / full.sum()) * cov.max())


def test_normal_band_mass_against_simulation():
    rng = np.random.default_rng(5)
    b = rng.normal(size=(1_000_000, 2)) * [0.3, 0.5]
    exact = normal_band_mass(0.3, 0.5)
    emp = np.mean((np.abs(b[:, 0]) < 0.05) | (np.abs(b[:, 1]) < 0.05) | (np.abs(b[:, 0] - b[:, 1]) < 0.05))
    assert abs(emp - exact) < 4 * np.sqrt(exact * (1 - exact) / len(b))


def test_normal_band_outside_mass_keeps_tiny_tails():
    from scipy import stats
    # with sd1 = sd2 the three bands' complement is bounded above by P(|b1| > w) P(|b2| > w)
    sd = 0.008
    tail = normal_band_outside_mass(sd, sd)
    assert 0.0 < tail < (2 * stats.norm.sf(0.05, scale=sd)) ** 2
    assert normal_band_outside_mass(0.3, 0.5) == pytest.approx(1 - normal_band_mass(0.3, 0.5), rel=1e-9)


@pytest.mark.parametrize("r", [1e3, 1e4])
def test_prior_scatter_concentrates(r):
    draws = simulate_prior(spec_of(3), HyperParams(r=r, g0=5, G0=2), 20000, seed=0)
    mass, reference, passes = concentration_check(draws.beta)
    assert passes and mass > reference


def test_simulate_prior_deterministic():
    a = simulate_prior(spec_of(3), HyperParams(r=1e3, G0=2), 500, seed=9)
    b = simulate_prior(spec_of(3), HyperParams(r=1e3, G0=2), 500, seed=9)
    np.testing.assert_array_equal(a.beta, b.beta)


def test_hyperparams_validation_and_defaults():
    assert HyperParams.default_for("nominal").G0 == 2.0
    assert HyperParams.default_for("ordinal").G0 == 20.0
    with pytest.raises(ValueError):
        HyperParams(r=1.0)
    with pytest.raises(ValueError):
        HyperParams(G0=0.0)
    with pytest.raises(ValueError):
        HyperParams(G0_lambda=-1.0)
