import math
from fractions import Fraction
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from inertial_langevin import harness as H
from inertial_langevin import samplers as S
from inertial_langevin import theory as T


def test_friction_polynomial_examples():
    assert T.friction_polynomial(1.5) == pytest.approx(0.25, abs=1e-15)
    assert T.friction_polynomial(1.0) == pytest.approx(-1.0, abs=1e-15)


def test_friction_roots_bracket_positive_region():
    lo, hi = T.friction_roots()
    assert lo == pytest.approx(1.3154, abs=5e-4)
    assert hi == pytest.approx(1.7627, abs=5e-4)
    inside = np.linspace(lo + 1e-4, hi - 1e-4, 50)
    assert np.all(T.friction_polynomial(inside) > 0)
    assert T.friction_polynomial(lo - 1e-3) < 0 < T.friction_polynomial(lo + 1e-3)


def _max_step_exact(eps):
    # rational arithmetic for rational eps
    e = Fraction(eps)
    terms = [
        Fraction(1, 8),
        1 / (1 + e),
        2 / e - 1,
        (-2 * e**4 + 4 * e**3 + 2 * e**2 - 5 * e) / (-(e**5) + 2 * e**4 + 3 * e**3 - 3 * e - 2),
    ]
    return float(min(terms))


@pytest.mark.parametrize("eps", [Fraction(3, 2), Fraction(4, 3), Fraction(7, 4)])
def test_max_step_against_rational_evaluation(eps):
    val = T.max_step(float(eps))
    assert val == pytest.approx(_max_step_exact(eps), rel=1e-13)
    assert 0 < val <= 1 / 8


def test_max_step_frozen_values():
    assert T.max_step(1.5) == pytest.approx(0.060914, abs=1e-6)
    assert T.max_step(4 / 3) == pytest.approx(0.015345268542199295, rel=1e-12)
    assert T.max_step(7 / 4) == pytest.approx(0.0048946770387203915, rel=1e-12)


@given(st.floats(1.11, 1.99))
def test_max_step_never_exceeds_one_eighth(eps):
    assert T.max_step(eps) <= 1 / 8


def test_max_step_domain_errors():
    for eps in (0.5, 1.0, 2.0):
        with pytest.raises(T.DomainError):
            T.max_step(eps)
    # the rational bound's denominator is negative just above eps = 1
    with pytest.raises(T.DomainError):
        T.step_bounds(1.05)


def test_weighted_norm():
    g = T.WeightedNorm.for_friction(1.5)
    np.testing.assert_allclose(g.eigenvalues, [1 - 1 / 1.5, 1 + 1 / 1.5])
    assert g.condition == pytest.approx(5.0)
    assert T.g_condition(1.5) == pytest.approx(5.0)
    x, v = np.array([1.0, 2.0]), np.array([-1.0, 0.5])
    assert g.sq(x, v) == pytest.approx(np.sum(x * x + 2 * x * v / 1.5 + v * v))
    with pytest.raises(T.DomainError):
        T.WeightedNorm(a=0.1, b=0.5)
    with pytest.raises(T.DomainError):
        T.g_condition(1.0)


# --------------------------------------------------------------------------
# continuous-time conditions


def test_continuous_check_examples():
    rep = T.continuous_contraction_check(1.5, 1.0, 1024)
    assert rep.passed
    # at theta*h = 1 the determinant equals the polynomial over eps^2
    assert rep.determinant[-1] == pytest.approx(0.25 / 2.25, rel=1e-12)
    assert rep.decay_factor >= rep.target_factor
    assert not T.continuous_contraction_check(1.2, 1.0, 64).passed
    with pytest.raises(T.DomainError):
        T.continuous_contraction_check(1.0, 1.0, 64)


@given(st.floats(1.0, 2.0), st.floats(1.0, 100.0), st.floats(0.0, 1.0))
def test_continuous_tiles_match_matrix(eps, kappa, frac):
    th = 1 / kappa + frac * (1 - 1 / kappa)
    G = np.array([[1, 1 / eps], [1 / eps, 1]])
    A = np.array([[0.0, 1.0], [-th, -eps]])
    M = -(A.T @ G + G @ A)
    tiles = M - G / kappa
    pa, pb, pc = T.continuous_tiles(eps, kappa, th)
    np.testing.assert_allclose([pa, pb, pc], [tiles[0, 0], tiles[0, 1], tiles[1, 1]], atol=1e-12)


# --------------------------------------------------------------------------
# discrete-time conditions


@given(st.floats(0.0, 0.3), st.floats(1.0, 2.0, exclude_min=True), st.floats(1.0, 300.0), st.floats(0.0, 1.0))
def test_discrete_tiles_match_matrix(dt, eps, kappa, frac):
    th = 1 / kappa + frac * (1 - 1 / kappa)
    G = T.WeightedNorm.for_friction(eps).matrix
    Pm = T.difference_map(dt, eps, th)
    Hm = (1 - dt / kappa) * G - Pm.T @ G @ Pm
    pa, pb, pc = T.discrete_tiles(dt, eps, kappa, th)
    np.testing.assert_allclose([pa, pb, pc], [Hm[0, 0], Hm[0, 1], Hm[1, 1]], atol=1e-12)


def test_difference_map_is_shifted_ila():
    # ILA with the gradient at X + dt V, read in the (X^k, V^{k+1}) pairing
    dt, eps, th = 0.05, 1.5, 0.6
    Pm, _ = T.linear_step_map("ila_shifted", dt, eps, 1.0, th)
    z = np.array([0.3, -0.8])
    x_next = z[0] + dt * z[1]
    v_next = (1 - eps * dt) * z[1] - dt * th * x_next
    np.testing.assert_allclose(Pm @ z, [x_next, v_next], rtol=1e-14)


@pytest.mark.parametrize("kappa", [1.0, 10.0, 200.0])
def test_discrete_check_at_recommended_settings(kappa):
    rep = T.discrete_contraction_check(S.SamplerConfig(0.05, 1.5, 1.0), kappa, 1024)
    assert rep.passed
    assert rep.decay_factor <= 1 - 0.05 / kappa
    assert rep.iterated_factor <= rep.decay_factor * (1 + 1e-12)


def test_discrete_check_zero_step_is_identity():
    rep = T.discrete_contraction_check(SimpleNamespace(dt=0.0, friction=1.5), 1.0, 64)
    np.testing.assert_allclose(rep.tile_a, 0, atol=1e-15)
    np.testing.assert_allclose(rep.determinant, 0, atol=1e-15)
    assert not rep.passed
    assert rep.decay_factor == pytest.approx(1.0, abs=1e-14)


def test_iterated_factor_approaches_exact_factor():
    rep = T.discrete_contraction_check(S.SamplerConfig(0.05, 1.5, 1.0), 10.0, 256, n_random=256, n_iter=60)
    assert rep.decay_factor - 1e-4 <= rep.iterated_factor <= rep.decay_factor * (1 + 1e-12)


@given(st.floats(4 / 3, 7 / 4), st.floats(0.01, 1.0), st.floats(1.0, 500.0))
def test_decay_factor_within_rate_for_valid_configs(eps, frac, kappa):
    dt = frac * T.max_step(eps)
    rep = T.discrete_contraction_check(S.SamplerConfig(dt, eps, 1.0), kappa, 128, n_random=8, n_iter=4)
    assert rep.passed
    assert rep.decay_factor <= 1 - dt / kappa


def test_printed_bound_is_sufficient_not_sharp():
    # the exact supremum of the tile check lies above the printed bound
    for eps in (4 / 3, 1.5, 7 / 4):
        sup = T.exact_step_supremum(eps, 1.0, 1024)
        assert sup >= T.max_step(eps)
    assert T.exact_step_supremum(1.5, 1.0, 1024) == pytest.approx(0.2693, abs=1e-3)


def test_contraction_constants_put_ila_fastest():
    ila = T.contraction_rate("ila", 0.05, 10)
    assert ila == pytest.approx(0.995)
    for s in ("em", "ses", "oba", "baoab"):
        assert T.contraction_rate(s, 0.05, 10) > ila
    assert T.contraction_rate("em", 0.05, 10) == pytest.approx(1 - 0.05 / 40)


# --------------------------------------------------------------------------
# stationary laws


def test_lyapunov_trivial_cases():
    Q = np.array([[2.0, 0.3], [0.3, 1.0]])
    np.testing.assert_allclose(T.lyapunov_stationary(np.zeros((2, 2)), Q), Q)
    for method in ("direct", "fixed_point"):
        assert T.lyapunov_stationary([[0.6]], [[0.5]], method=method)[0, 0] == pytest.approx(0.5 / (1 - 0.36), rel=1e-14)


def test_lyapunov_divergence():
    with pytest.raises(T.DivergenceError):
        T.lyapunov_stationary(np.array([[1.0, 0.1], [0.0, 0.5]]), np.eye(2))


@given(st.integers(0, 10_000))
def test_lyapunov_methods_agree(seed):
    rng = np.random.default_rng(seed)
    Pm = rng.standard_normal((2, 2))
    rad = np.abs(np.linalg.eigvals(Pm)).max()
    assume(rad > 1e-3)
    Pm *= rng.uniform(0.05, 0.95) / rad
    B = rng.standard_normal((2, 2))
    Q = B @ B.T
    a = T.lyapunov_stationary(Pm, Q, "direct")
    b = T.lyapunov_stationary(Pm, Q, "fixed_point")
    np.testing.assert_allclose(a, b, atol=1e-12 * max(1.0, np.abs(a).max()))
    np.testing.assert_allclose(a, Pm @ a @ Pm.T + Q, atol=1e-10 * max(1.0, np.abs(a).max()))


def test_ila_stationary_covariance_converges_to_target():
    S_ = T.stationary_covariance("ila", 1e-3, 1.5, 1.0, 1.0)
    np.testing.assert_allclose(np.diag(S_), [1.0, 1.0], rtol=0.05)
    assert abs(S_[0, 1]) < 0.05


def test_shifted_and_stored_ila_pairings_share_position_law():
    a = T.stationary_covariance("ila", 0.05, 1.5, 1.0, 1.0)
    b = T.stationary_covariance("ila_shifted", 0.05, 1.5, 1.0, 1.0)
    assert a[0, 0] == pytest.approx(b[0, 0], rel=1e-12)
    assert a[1, 1] == pytest.approx(b[1, 1], rel=1e-12)


def test_baoab_position_marginal_is_exact_on_quadratics():
    S_ = T.stationary_covariance("baoab", 0.05, 2.1, 1.0, 1.0)
    assert S_[0, 0] == pytest.approx(1.0, rel=1e-12)


def test_bias_decreases_with_step():
    dts = [0.04, 0.02, 0.01, 0.005]
    b = [T.quadratic_bias(dt, 1.5) for dt in dts]
    assert all(x > y for x, y in zip(b, b[1:]))
    assert all(x <= 0.6 * dt for x, dt in zip(b, dts))


# --------------------------------------------------------------------------
# bias constants


def test_rho_with_zero_moments():
    eps, th, dt, d = 1.5, 0.01, 0.05, 3
    bb = T.bias_constants(eps, th, dt, d, 10.0)
    assert bb.rho_k == pytest.approx(d * eps * th * 2 * dt / 3 + eps * th * (1 + eps**2), rel=1e-14)


def test_rho_small_step_limit():
    eps, L = 1.5, 50.0
    lim = T.bias_constants(eps, 1 / L, 1e-12, 2, 10.0).rho_k
    assert lim == pytest.approx(eps / L * (1 + eps**2), rel=1e-9)


def test_rho_formula_with_moments():
    eps, th, dt, d, ev, ex = 1.6, 0.2, 0.03, 4, 2.5, 7.0
    want = ((1 + eps**2 + eps**4) * ev + (2 + eps**2) * ex + d * eps * th) * 2 * dt / 3 + eps * th * (1 + eps**2)
    assert T.rho_k(eps, th, dt, d, ev, ex) == pytest.approx(want, rel=1e-14)


def test_steps_to_halve_scales_inversely_with_step():
    eps, kappa = 1.5, 2.0
    scale = kappa * math.log(4 * T.g_condition(eps))
    for dt in (1e-2, 1e-3, 1e-4):
        k = T.bias_constants(eps, 0.5, dt, 1, kappa).k_of_dt
        assert k * dt / scale == pytest.approx(1.0, rel=0.05)


def test_asymptotic_constant_and_accuracy_schedule():
    eps, kappa, L = 1.5, 1.0, 4.0
    kg = (eps + 1) / (eps - 1)
    c = math.sqrt(4 / L * eps * (1 + eps**2) * kappa * math.log(4 * kg)) * (2 * math.sqrt(kg)) ** (3 * kappa)
    bb = T.bias_constants(eps, 1 / L, 0.01, 2, kappa, delta=0.1, w2_init=2.0)
    assert bb.asymptotic_constant == pytest.approx(c, rel=1e-12)
    assert bb.dt_of_delta == pytest.approx(0.01 / (4 * c * c), rel=1e-12)
    K = 2 / math.log1p(-bb.dt_of_delta / kappa) * math.log(0.1 / (2 * math.sqrt(kg) * 2.0))
    assert bb.K_of_delta == math.ceil(K)
    assert all(v is None or v >= 0 for _, v in bb.rows())


def test_asymptotic_constant_overflows_to_inf():
    assert T.asymptotic_bias_constant(1.5, 200.0, 200.0) == math.inf


def test_bias_constant_preconditions():
    with pytest.raises(T.DomainError):
        T.bias_constants(1.0, 0.1, 0.05, 1, 2.0)
    with pytest.raises(T.DomainError):
        T.bias_constants(1.5, 0.1, 0.9, 1, 2.0)
    with pytest.raises(T.DomainError):
        T.bias_constants(1.5, 0.1, 0.05, 1, 2.0, moment_bounds=(-1.0, 0.0))


def test_warm_start_bound_grows_with_dimension():
    a = T.warm_start_moment_bound(1.5, 0.05, 2, 1.0, 10.0)
    b = T.warm_start_moment_bound(1.5, 0.05, 20, 1.0, 10.0)
    assert 0 < a < b


def test_second_moment_stays_bounded_as_step_shrinks():
    pot = H.laplace_potential()
    theta = 1 / pot.lipschitz
    maxima = {}
    for dt in (0.05, 0.025, 0.0125):
        cfg = S.SamplerConfig(dt, 1.5, theta)
        trace = H.second_moment_trace(pot, cfg, 400, int(round(100 / dt)), [3.0, 1.0], seed=3)
        maxima[dt] = trace.max()
    assert max(maxima.values()) <= 2 * maxima[0.05]
