"""Shooting solver tests.

The 1-D problem has the closed form

    u(x) = (p/2)^(1/(p-2)) sech^(2/(p-2))((p-2)/2 x)        (v_a = 1)

with the scaling rule u_{lam^2 v}(r) = lam^(2/(p-2)) u_v(lam r).  The first
test re-derives that formula numerically by substitution, so everything
downstream leans on a verified oracle rather than on trust.
"""

import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlsbump.errors import BracketError, ConvergenceError, DomainError
from nlsbump.radial import (RadialProfile, ShootingConfig, decay_rate,
                            eval_profile, eval_profile_deriv, ode_residual,
                            radial_integral, solve_ground_state)


def soliton_1d(r, p, v_a=1.0):
    lam = math.sqrt(v_a)
    core = (p / 2.0) ** (1.0 / (p - 2.0)) / np.cosh(
        (p - 2.0) / 2.0 * lam * np.asarray(r)) ** (2.0 / (p - 2.0))
    return lam ** (2.0 / (p - 2.0)) * core


@pytest.mark.parametrize("p,v_a", [(4.0, 1.0), (3.0, 1.0), (4.0, 2.25)])
def test_closed_form_satisfies_ode(p, v_a):
    # Substitute the sech formula into u'' = v_a u - u^(p-1) with a
    # fourth-order finite difference; the defect must be at truncation level.
    x = np.linspace(0.3, 6.0, 2001)
    h = 1e-3
    u = soliton_1d(x, p, v_a)
    upp = (-soliton_1d(x + 2 * h, p, v_a) + 16 * soliton_1d(x + h, p, v_a)
           - 30 * u + 16 * soliton_1d(x - h, p, v_a)
           - soliton_1d(x - 2 * h, p, v_a)) / (12 * h * h)
    defect = upp - (v_a * u - u ** (p - 1.0))
    assert np.max(np.abs(defect)) < 1e-8


def test_dim1_profile_matches_closed_form(get_profile):
    prof = get_profile(1.0, 4.0, 1)
    exact = soliton_1d(prof.r_nodes, 4.0)
    assert np.max(np.abs(prof.values - exact)) < 1e-6
    assert abs(prof.values[0] - math.sqrt(2.0)) < 1e-9
    # derivative table against the analytic derivative
    dex = -math.sqrt(2.0) * np.tanh(prof.r_nodes) / np.cosh(prof.r_nodes)
    assert np.max(np.abs(prof.dvalues - dex)) < 1e-6


def test_dim1_center_values_exact(get_profile):
    # (p v_a / 2)^(1/(p-2)) in one dimension
    assert abs(get_profile(1.0, 3.0, 1).values[0] - 1.5) < 1e-9
    assert abs(get_profile(4.0, 4.0, 1).values[0] - 2 * math.sqrt(2)) < 1e-8


def test_dim3_center_value_pinned():
    # Independent pinning: explicit step halved; u(0) must stabilize well
    # below 1e-6 and agree with the frozen high-resolution value.
    u0 = []
    for h in (8e-4, 4e-4):
        prof = solve_ground_state(1.0, 4.0, 3,
                                  ShootingConfig(ode_step=h, bisect_tol=1e-14))
        u0.append(prof.values[0])
    assert abs(u0[0] - u0[1]) < 1e-6
    for v in u0:
        assert abs(v - 4.33738767998) < 1e-6


def test_dim2_center_value_pinned(get_profile):
    assert abs(get_profile(1.0, 4.0, 2).values[0] - 2.20620086465) < 1e-6


def test_scaling_covariance_dim1(get_profile):
    base = get_profile(1.0, 4.0, 1)
    scaled = get_profile(4.0, 4.0, 1)
    r = np.linspace(0.0, 6.0, 301)
    lhs = eval_profile(scaled, r)
    rhs = 2.0 * eval_profile(base, 2.0 * r)
    assert np.max(np.abs(lhs - rhs)) < 1e-6


@settings(max_examples=4, deadline=None)
@given(lam=st.floats(1.2, 1.9), v_a=st.floats(0.7, 1.4))
def test_scaling_covariance_property(lam, v_a):
    p = 4.0
    base = solve_ground_state(v_a, p, 1)
    scaled = solve_ground_state(lam * lam * v_a, p, 1)
    r = np.linspace(0.0, 4.0, 41)
    lhs = eval_profile(scaled, r)
    rhs = lam ** (2.0 / (p - 2.0)) * eval_profile(base, lam * r)
    assert np.max(np.abs(lhs - rhs)) < 1e-5 * scaled.values[0]


@pytest.mark.parametrize("v_a,p,dim", [(1.0, 4.0, 1), (1.0, 4.0, 2),
                                       (1.0, 3.0, 3), (2.25, 4.0, 3)])
def test_profile_invariants(get_profile, v_a, p, dim):
    prof = get_profile(v_a, p, dim)
    assert prof.values[0] == np.max(prof.values)
    assert np.all(prof.values > 0.0)
    assert np.all(np.diff(prof.values) < 0.0)
    assert prof.dvalues[0] == 0.0
    assert prof.r_nodes[0] == 0.0
    res = np.max(np.abs(ode_residual(prof)))
    assert res <= 1e-6 * prof.values[0]
    kappa = math.sqrt(v_a)
    assert abs(prof.decay_rate - kappa) <= 0.02 * kappa


def test_residual_second_order_in_step():
    res = []
    for h in (2e-3, 1e-3, 5e-4):
        prof = solve_ground_state(1.0, 4.0, 1, ShootingConfig(ode_step=h))
        res.append(np.max(np.abs(ode_residual(prof))))
    assert 3.3 < res[0] / res[1] < 4.7
    assert 3.3 < res[1] / res[2] < 4.7


def test_decay_rate_windows(get_profile):
    prof1 = get_profile(1.0, 4.0, 1)
    rate = decay_rate(prof1, (4.0, 8.0))
    assert abs(rate - 1.0) < 1e-3
    assert prof1.decay_rate == rate
    prof3 = get_profile(1.0, 4.0, 3)
    rate3 = decay_rate(prof3, (6.0, 10.0))
    assert abs(rate3 - 1.0) < 0.02


def test_eval_tail_beyond_table(get_profile):
    prof = get_profile(1.0, 4.0, 1)
    r_m = prof.r_max
    inner = eval_profile(prof, r_m - 1e-9)
    outer = eval_profile(prof, r_m + 1e-9)
    assert abs(inner - outer) < 1e-12 + 1e-9 * prof.values[0]
    far = eval_profile(prof, np.array([r_m + 1.0, r_m + 3.0, r_m + 6.0]))
    assert np.all(far > 0.0)
    assert np.all(np.diff(far) < 0.0)
    # tail slope consistent with the fitted rate
    got = math.log(far[0] / far[1]) / 2.0
    assert abs(got - prof.decay_rate) < 1e-6


def test_eval_profile_deriv_consistent(get_profile):
    prof = get_profile(1.0, 4.0, 2)
    r = np.linspace(0.1, 12.0, 400)
    h = 1e-5
    fd = (eval_profile(prof, r + h) - eval_profile(prof, r - h)) / (2 * h)
    an = eval_profile_deriv(prof, r)
    assert np.max(np.abs(fd - an)) < 1e-6 * prof.values[0]


def test_radial_integral_against_closed_form(get_profile):
    # 1-D: integral of u^2 = 2 sech^2 over the line is 2 * 2 = 4 (v_a = 1,
    # p = 4), and integral of u^4 = 4 sech^4 is 4 * 4/3 = 16/3.
    prof = get_profile(1.0, 4.0, 1)
    m2 = radial_integral(prof, lambda u: u * u)
    m4 = radial_integral(prof, lambda u: u ** 4)
    assert abs(m2 - 4.0) < 1e-7
    assert abs(m4 - 16.0 / 3.0) < 1e-7


def test_domain_errors():
    with pytest.raises(DomainError):
        solve_ground_state(1.0, 7.0, 3)  # supercritical
    with pytest.raises(DomainError):
        solve_ground_state(1.0, 6.0, 3)  # critical, still no ground state
    with pytest.raises(DomainError):
        solve_ground_state(1.0, 4.0, 4)
    with pytest.raises(DomainError):
        solve_ground_state(-1.0, 4.0, 1)
    with pytest.raises(DomainError):
        solve_ground_state(1.0, 2.0, 1)
    with pytest.raises(DomainError):
        solve_ground_state(1.0, 4.0, 1, ShootingConfig(r_max=-3.0))


def test_bracket_errors():
    with pytest.raises(BracketError):
        solve_ground_state(1.0, 4.0, 1,
                           ShootingConfig(bracket_lo=5.0, bracket_hi=9.0))
    with pytest.raises(BracketError):
        solve_ground_state(1.0, 4.0, 1,
                           ShootingConfig(bracket_lo=0.1, bracket_hi=0.9))
    with pytest.raises(BracketError):
        solve_ground_state(1.0, 4.0, 1,
                           ShootingConfig(bracket_lo=2.0, bracket_hi=1.0))


def test_decay_window_errors(get_profile):
    prof = get_profile(1.0, 4.0, 1)
    with pytest.raises(DomainError):
        decay_rate(prof, (8.0, 50.0))
    with pytest.raises(DomainError):
        decay_rate(prof, (6.0, 6.0005))
    with pytest.raises(DomainError):
        eval_profile(prof, -0.5)
