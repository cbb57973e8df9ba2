import math

import numpy as np
import pytest

from spikedgen import channels as ch
from spikedgen import state_evolution as se
from spikedgen.priors import (LINEAR, RELU, SIGN, Wishart, gauss_prior,
                              rademacher_prior, rho_v)

GAUSS1 = gauss_prior(1.0)


def closed_linear_step(qv, qz, delta, alpha):
    """Hand-derived linear-channel map (Gauss latent, rho_z = 1)."""
    x = qv / delta
    V = 1 - qz
    qhat = alpha * x / (1 + x * V)
    qz2 = qhat / (1 + qhat)
    qv2 = qz + x * V ** 2 / (1 + x * V)
    return qv2, qz2


def closed_linear_fixed_point(delta, alpha, iters=300000):
    qv, qz = 1e-6, 1e-6
    for _ in range(iters):
        qv, qz = closed_linear_step(qv, qz, delta, alpha)
    return qv


# ---------------------------------------------------------------------------
# the SE map
# ---------------------------------------------------------------------------

def test_zero_state_is_fixed(odd_act):
    st = se.OverlapState(0.0, 0.0, 0.0)
    new = se.se_step_wigner(st, 1.5, 2.0, odd_act, GAUSS1)
    assert new.q_v == 0.0 and new.q_z == 0.0 and new.q_hat_z == 0.0


def test_step_matches_closed_linear_map():
    st = se.OverlapState(0.3, 0.2, 0.0)
    new = se.se_step_wigner(st, 2.0, 2.0, LINEAR, GAUSS1)
    qv2, qz2 = closed_linear_step(0.3, 0.2, 2.0, 2.0)
    assert new.q_v == pytest.approx(qv2, abs=1e-12)
    assert new.q_z == pytest.approx(qz2, abs=1e-12)


def test_alpha_zero_limit_separable_gaussian():
    # q = q/(Delta + q): fixed point max(0, 1 - Delta)
    for delta in (0.5, 0.9, 1.5):
        pp = se.se_fixed_point(se.SEConfig(), delta, 0.0, LINEAR, GAUSS1)
        assert pp.q_v_star == pytest.approx(max(0.0, 1 - delta), abs=1e-7)


def test_fixed_point_limits():
    # no-information limit
    pp = se.se_fixed_point(se.SEConfig(), 500.0, 2.0, LINEAR, GAUSS1)
    assert pp.q_v_star <= 1e-8
    assert pp.mmse_v == pytest.approx(1.0, abs=1e-8)
    # noiseless limit
    pp = se.se_fixed_point(se.SEConfig(), 0.01, 2.0, LINEAR, GAUSS1)
    assert pp.q_v_star >= 0.99


def test_fixed_point_vs_closed_form_oracle():
    for delta in (0.5, 1.0, 2.0, 2.5):
        want = closed_linear_fixed_point(delta, 2.0)
        pp = se.se_fixed_point(se.SEConfig(), delta, 2.0, LINEAR, GAUSS1)
        assert pp.q_v_star == pytest.approx(want, abs=1e-8)
        assert pp.converged
        assert pp.init_gap <= 1e-8
        assert pp.mmse_v == pytest.approx(rho_v(LINEAR, GAUSS1) - pp.q_v_star,
                                          abs=1e-12)


def test_one_step_decay_above_threshold(odd_act):
    # at Delta >> Delta_c the overlap decays from the informative side
    delta = 3.0 * se.delta_c_closed_form(2.0, odd_act)
    st = se.OverlapState(0.5 * rho_v(odd_act, GAUSS1), 0.4, 0.1)
    for _ in range(5):
        new = se.se_step_wigner(st, delta, 2.0, odd_act, GAUSS1)
        assert new.q_v <= st.q_v + 1e-12
        st = new


def test_relu_runs_from_epsilon_init():
    pp = se.se_fixed_point(se.SEConfig(), 0.6, 2.0, RELU, GAUSS1)
    assert pp.converged and 0 < pp.q_v_star < 0.5
    assert pp.init_gap <= 1e-8


def test_uniqueness_small_grid(any_act):
    rv = rho_v(any_act, GAUSS1)
    for alpha in (0.5, 2.0):
        for ratio in (0.3, 1.0, 3.0):
            pp = se.se_fixed_point(se.SEConfig(), ratio * rv ** 2, alpha,
                                   any_act, GAUSS1)
            if pp.runs["uninformative"]["converged"] and \
               pp.runs["informative"]["converged"]:
                assert pp.init_gap <= 1e-8


def test_monotone_in_delta(any_act):
    deltas = np.linspace(0.2, 4.0, 12)
    q = [se.se_fixed_point(se.SEConfig(), d, 2.0, any_act, GAUSS1).q_v_star
         for d in deltas]
    assert all(b <= a + 1e-8 for a, b in zip(q, q[1:]))


def test_trivial_point_stable_above_delta_c(odd_act):
    dc = se.delta_c_closed_form(2.0, odd_act)
    pp = se.se_fixed_point(se.SEConfig(), 1.4 * dc, 2.0, odd_act, GAUSS1)
    assert pp.q_v_star <= 1e-6


# ---------------------------------------------------------------------------
# Wishart
# ---------------------------------------------------------------------------

def test_wishart_tied_reproduces_wigner():
    pu = gauss_prior(1.0)
    st_w = se.OverlapState(0.3, 0.2, 0.1, q_u=0.3)
    st_g = se.OverlapState(0.3, 0.2, 0.1)
    for _ in range(5):
        new_w = se.se_step_wishart(st_w, 1.5, 2.0, 1.0, LINEAR, GAUSS1, pu)
        new_g = se.se_step_wigner(st_g, 1.5, 2.0, LINEAR, GAUSS1)
        assert new_w.q_v == new_g.q_v
        assert new_w.q_z == new_g.q_z
        # re-tie q_u = q_v before the next step
        st_w = se.OverlapState(new_w.q_v, new_w.q_z, new_w.q_hat_z, q_u=new_w.q_v)
        st_g = new_g


def test_wishart_no_information_limit():
    pp = se.se_fixed_point(se.SEConfig(), 200.0, 2.0, LINEAR, GAUSS1,
                           Wishart(beta=1.0))
    assert pp.q_v_star <= 1e-8 and pp.q_u_star <= 1e-8


def test_wishart_gauss_u_closed_form():
    # q_u update for Gaussian P_u: x rho_u^2 / (1 + x rho_u)
    for x in (0.3, 1.0, 4.0):
        assert ch.psi_u_grad2(gauss_prior(1.0), x) == pytest.approx(
            x / (1 + x), abs=1e-12)
        quad = _psi_u_grad2_quadrature(gauss_prior(1.0), x)
        assert ch.psi_u_grad2(gauss_prior(1.0), x) == pytest.approx(quad, abs=1e-9)


def _psi_u_grad2_quadrature(prior, x, order=150):
    # E_xi[Z_u f_u^2] by direct Gauss-Hermite over xi (Z-weighted form)
    t, w = np.polynomial.hermite.hermgauss(order)
    xi = math.sqrt(2) * t
    logz, mean, _ = ch.latent_moments(prior, math.sqrt(x) * xi, x)
    return float(np.sum(w / math.sqrt(math.pi) * np.exp(logz) * mean ** 2))


# ---------------------------------------------------------------------------
# MMSE and mutual information
# ---------------------------------------------------------------------------

def test_mmse_trivial_values():
    assert se.mmse(0.0, 1.0) == 1.0
    assert se.matrix_mmse(0.0, 1.0) == 1.0
    assert se.mmse(1.0, 1.0) == 0.0
    assert se.matrix_mmse(1.0, 1.0) == 0.0


def test_matrix_mmse_at_fixed_point():
    pp = se.se_fixed_point(se.SEConfig(), 2.0, 2.0, LINEAR, GAUSS1)
    assert se.matrix_mmse(pp.q_v_star, 1.0) == pytest.approx(
        1.0 - pp.q_v_star ** 2, abs=1e-12)


def test_mutual_information_large_delta_limit():
    i_rs, q = se.mutual_information(80.0, 2.0, LINEAR, GAUSS1)
    assert i_rs == pytest.approx(1.0 / (4 * 80.0), abs=1e-6)
    assert q <= 1e-8


def test_mutual_information_monotone_in_delta():
    deltas = [0.5, 1.0, 2.0, 3.0, 4.0]
    vals = [se.mutual_information(d, 2.0, LINEAR, GAUSS1)[0] for d in deltas]
    assert all(b <= a + 1e-10 for a, b in zip(vals, vals[1:]))


def test_immse_finite_difference():
    # d i_RS / d lambda = (rho_v^2 - q_v*^2) / 4 at lambda = 1/Delta
    for delta in (1.5, 2.5):
        lam = 1.0 / delta
        h = 1e-3
        ip, _ = se.mutual_information(1 / (lam + h), 2.0, LINEAR, GAUSS1)
        im, _ = se.mutual_information(1 / (lam - h), 2.0, LINEAR, GAUSS1)
        q = se.se_fixed_point(se.SEConfig(init="informative"), delta, 2.0,
                              LINEAR, GAUSS1).q_v_star
        assert (ip - im) / (2 * h) == pytest.approx((1 - q ** 2) / 4, abs=1e-4)


# ---------------------------------------------------------------------------
# stability Jacobian and thresholds
# ---------------------------------------------------------------------------

def test_jacobian_entries_linear():
    j = se.jacobian_at_zero(2.0, 3.0, LINEAR, GAUSS1)
    assert j[0, 0] == pytest.approx(0.5)        # (E v^2)^2 / Delta
    assert j[0, 2] == pytest.approx(1.0)        # (E vx)^2 / rho_z^2
    assert j[1, 0] == pytest.approx(1.5)        # alpha (E vx)^2 / Delta
    assert j[1, 2] == pytest.approx(0.0)        # (E x^2 - rho_z)^2 = 0
    assert j[2, 1] == pytest.approx(1.0)        # (E z^2)^2 = rho_z^2


def test_jacobian_row3_is_rho_z_squared():
    j = se.jacobian_at_zero(1.0, 1.0, LINEAR, gauss_prior(2.0))
    assert j[2, 1] == pytest.approx(4.0)


def test_jacobian_rejects_relu():
    with pytest.raises(ValueError, match="uninformative fixed point"):
        se.jacobian_at_zero(1.0, 1.0, RELU, GAUSS1)
    with pytest.raises(ValueError):
        se.delta_c(1.0, RELU, GAUSS1)


def test_spectral_radius_companion():
    m = np.array([[0.0, 2.0], [0.5, 0.0]])
    assert se.spectral_radius(m) == pytest.approx(1.0, abs=1e-12)


def test_delta_c_closed_forms_wigner():
    for alpha in (0.5, 1.0, 2.0, 5.0):
        assert se.delta_c(alpha, LINEAR, GAUSS1) == pytest.approx(
            1 + alpha, abs=1e-3)
        assert se.delta_c(alpha, SIGN, GAUSS1) == pytest.approx(
            1 + 4 * alpha / math.pi ** 2, abs=1e-3)
    # separable limit of the sign prior
    assert se.delta_c(1e-9, SIGN, GAUSS1) == pytest.approx(1.0, abs=1e-3)


def test_delta_c_closed_forms_wishart():
    for beta in (0.5, 1.0, 2.0):
        model = Wishart(beta=beta)
        assert se.delta_c(1.0, LINEAR, GAUSS1, model) == pytest.approx(
            math.sqrt(beta * 2), abs=1e-3)
        assert se.delta_c(2.0, SIGN, GAUSS1, model) == pytest.approx(
            math.sqrt(beta * (1 + 8 / math.pi ** 2)), abs=1e-3)


def test_delta_c_crossing_consistency():
    # spectral radius > 1 below the threshold, < 1 above
    dc = se.delta_c(2.0, LINEAR, GAUSS1)
    assert se.spectral_radius(se.jacobian_at_zero(dc - 0.01, 2.0, LINEAR, GAUSS1)) > 1
    assert se.spectral_radius(se.jacobian_at_zero(dc + 0.01, 2.0, LINEAR, GAUSS1)) < 1


def test_config_validation():
    with pytest.raises(ValueError):
        se.SEConfig(damping=1.0)
    with pytest.raises(ValueError):
        se.SEConfig(tol=0.0)
    with pytest.raises(ValueError):
        se.SEConfig(init="warm")
    with pytest.raises(ValueError):
        se.se_fixed_point(se.SEConfig(), -1.0, 2.0, LINEAR, GAUSS1)


def test_rademacher_latent_fixed_point():
    pp = se.se_fixed_point(se.SEConfig(), 1.0, 2.0, LINEAR, rademacher_prior())
    assert pp.converged and 0 < pp.q_v_star < 1
    # Rademacher latent carries more information than Gaussian at equal rho
    pp_g = se.se_fixed_point(se.SEConfig(), 1.0, 2.0, LINEAR, GAUSS1)
    assert pp.q_v_star >= pp_g.q_v_star - 1e-6
