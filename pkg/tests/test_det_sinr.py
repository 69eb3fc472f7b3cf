import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cooprzf.det_sinr import (compute_u_terms, deterministic_equivalent, gamma_bar, gamma_bar_perfect,
                              sum_rate_bar)
from cooprzf.montecarlo import ergodic_sum_rate
from cooprzf.regopt import alpha_uncorrelated
from cooprzf.rmt_core import solve_dotc, solve_fixed_point
from cooprzf.scenario import build_scenario, homogeneous_identity


def rand_scenario(seed, M=2, N=4, K=3, snr=10.0, tau2=None):
    return build_scenario({"M": M, "N": [N] * M, "K": K, "snr_db": snr, "seed": seed,
                           "correlation": {"kind": "random_exp", "r_range": [0.0, 0.9], "gain_range": [0.3, 2.0]},
                           "tau2": {"kind": "uniform_random"} if tau2 is None else tau2})


def fd(f, alpha, h=1e-5):
    return (f(alpha * (1 + h)) - f(alpha * (1 - h))) / (2 * alpha * h)


def test_perfect_csit_u1_equals_u2():
    d = deterministic_equivalent(rand_scenario(3, tau2=0.0), 0.2)
    assert np.array_equal(d.u1, d.u2)
    assert np.allclose(d.du1, d.du2, rtol=0, atol=1e-12)


def test_identity_u1():
    d = deterministic_equivalent(homogeneous_identity(2, 4, 4, 10.0), 1.0)
    assert np.allclose(d.u1, math.sqrt(2), atol=1e-10)


def test_u_simplifies_under_perfect_csit():
    d = deterministic_equivalent(homogeneous_identity(2, 8, 6, 10.0), 0.3)
    simple = (d.u1 - d.alpha * d.du1) / (1 + d.u1) ** 2
    assert np.allclose(d.uk, simple, rtol=1e-12, atol=0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_derivative_terms_match_finite_differences(seed):
    s = rand_scenario(seed)
    a = 0.25
    d = deterministic_equivalent(s, a, tol=1e-14)
    u1 = lambda x: deterministic_equivalent(s, x, tol=1e-14).u1  # noqa: E731
    u2 = lambda x: deterministic_equivalent(s, x, tol=1e-14).u2  # noqa: E731
    assert np.allclose(d.du1, -fd(u1, a), rtol=1e-6)
    assert np.allclose(d.du2, -fd(u2, a), rtol=1e-6)


@pytest.mark.parametrize("seed", [4, 5])
def test_noise_term_matches_finite_difference(seed):
    # nu_i * N_i * rho = d/dalpha [alpha tr(Psi_i)]
    s = rand_scenario(seed, M=3, N=3, K=4)
    a = 0.4
    d = deterministic_equivalent(s, a, tol=1e-14)

    def g(x):
        fp = solve_fixed_point(s, x, tol=1e-14)
        return np.array([x * np.trace(P).real for P in fp.Psi])

    ref = fd(g, a) / (np.asarray(s.N, float) * s.rho)
    assert np.allclose(d.nu_per_bs, ref, rtol=1e-6)
    assert d.nu_bar == d.nu_per_bs.max()
    assert d.binding_bs == int(np.argmax(d.nu_per_bs))


def test_pure_noise_csit_gives_zero_sinr():
    d = deterministic_equivalent(homogeneous_identity(2, 4, 3, 10.0, 1.0), 0.5)
    assert np.all(d.u2 == 0)
    assert np.all(d.gamma_bar == 0)
    assert sum_rate_bar(d) == 0.0


def test_perfect_formula_matches_general():
    s = rand_scenario(8, tau2=0.0)
    fp = solve_fixed_point(s, 0.1)
    dc = solve_dotc(s, fp)
    det = compute_u_terms(s, fp, dc)
    assert np.allclose(gamma_bar_perfect(s, fp, dc), gamma_bar(s, det), rtol=1e-12, atol=0)


def test_perfect_formula_single_cell():
    s = homogeneous_identity(1, 6, 4, 5.0)
    fp = solve_fixed_point(s, 0.3)
    dc = solve_dotc(s, fp)
    assert np.allclose(gamma_bar_perfect(s, fp, dc), deterministic_equivalent(s, 0.3).gamma_bar, rtol=1e-12)


def test_perfect_formula_rejects_imperfect_csit():
    s = homogeneous_identity(1, 4, 2, 5.0, 0.1)
    fp = solve_fixed_point(s, 0.3)
    with pytest.raises(ValueError):
        gamma_bar_perfect(s, fp, solve_dotc(s, fp))


def test_high_snr_small_alpha_approximation():
    # needs K > N so that u1 stays bounded as alpha -> 0
    s = build_scenario({"M": 2, "N": [8, 8], "K": 24, "snr_db": 60.0,
                        "correlation": {"kind": "exp", "r": 0.3}})
    fp = solve_fixed_point(s, 1e-4)
    dc = solve_dotc(s, fp)
    g = gamma_bar_perfect(s, fp, dc)
    u1 = compute_u_terms(s, fp, dc).u1
    assert np.all(np.abs(g - u1) / u1 < 0.10)


def test_sum_rate_arithmetic():
    assert sum_rate_bar(np.zeros(3)) == 0.0
    assert sum_rate_bar(np.array([1.0, math.e - 1])) == pytest.approx(math.log(2) + 1, rel=1e-15)


def test_nonpositive_denominator_raises():
    d = deterministic_equivalent(homogeneous_identity(1, 4, 2, 5.0), 0.3)
    d.uk = -d.nu_bar - np.ones_like(d.uk)
    with pytest.raises(ArithmeticError):
        gamma_bar(homogeneous_identity(1, 4, 2, 5.0), d)


def test_invariants_random():
    for seed in range(5):
        d = deterministic_equivalent(rand_scenario(seed), 0.3)
        assert np.all(d.gamma_bar >= 0) and d.nu_bar > 0
        assert np.all(d.u2 <= d.u1 + 1e-15)


def test_four_cell_point_against_monte_carlo():
    s = homogeneous_identity(4, 8, 32, 10.0, 0.1)
    a = alpha_uncorrelated(4, s.rho, 0.25, math.sqrt(0.9))
    det = deterministic_equivalent(s, a).sum_rate_nats
    mc = ergodic_sum_rate(s, a, 2000, 2024)
    assert abs(mc.mean - det) <= 0.03 * det


def test_four_cell_perfect_high_snr_against_monte_carlo():
    s = homogeneous_identity(4, 8, 32, 20.0, 0.0)
    a = 1.0 / (4 * s.rho * 0.25)
    det = deterministic_equivalent(s, a).sum_rate_nats
    mc = ergodic_sum_rate(s, a, 2000, 7)
    assert abs(mc.mean - det) <= 0.03 * det


@settings(max_examples=12, deadline=None)
@given(seed=st.integers(0, 10 ** 6), c=st.floats(0.05, 20.0))
def test_noise_term_linear_in_inverse_snr(seed, c):
    s = rand_scenario(seed)
    d1 = deterministic_equivalent(s, 0.3)
    d2 = deterministic_equivalent(s.with_rho(s.rho / c), 0.3)
    assert d2.nu_bar == pytest.approx(c * d1.nu_bar, rel=1e-12)


@settings(max_examples=12, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_user_permutation_equivariance(seed):
    s = rand_scenario(seed, K=4)
    perm = np.random.default_rng(seed).permutation(s.K)
    cfg = s.to_config()
    cfg["correlation"] = [cfg["correlation"][p] for p in perm]
    cfg["tau2"] = [cfg["tau2"][p] for p in perm]
    g = deterministic_equivalent(s, 0.2).gamma_bar
    gp = deterministic_equivalent(build_scenario(cfg), 0.2).gamma_bar
    assert np.allclose(gp, g[perm], rtol=1e-10)


@settings(max_examples=12, deadline=None)
@given(seed=st.integers(0, 10 ** 6), k=st.integers(0, 2), i=st.integers(0, 1), f=st.floats(0.0, 0.99))
def test_better_csit_never_hurts_own_sinr(seed, k, i, f):
    s = rand_scenario(seed)
    t2 = s.tau2.copy()
    t2[k, i] *= f
    g0 = deterministic_equivalent(s, 0.2).gamma_bar[k]
    g1 = deterministic_equivalent(s.with_tau2(t2), 0.2).gamma_bar[k]
    assert g1 >= g0 * (1 - 1e-12)
