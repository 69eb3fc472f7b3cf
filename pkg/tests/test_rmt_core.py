import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cooprzf.montecarlo import draw_channels, trial_seed
from cooprzf.rmt_core import (ConvergenceError, derived_traces, det_stieltjes, selector, solve_dotc,
                              solve_fixed_point, theta_gamma)
from cooprzf.scenario import build_scenario, exp_correlation, homogeneous_identity


def quad_root(alpha, M, ratio):
    # symmetric T=I reduction: alpha*M*e^2 + (alpha + K/N1 - M) e - 1 = 0
    a, b, c = alpha * M, alpha + ratio - M, -1.0
    return (-b + math.sqrt(b * b - 4 * a * c)) / (2 * a)


def damped_oracle(s, alpha, tol=1e-14, max_iter=20000):
    """Plain numpy damped Picard used as an independent reference."""
    e = np.ones((s.K, s.M))
    for _ in range(max_iter):
        new = np.empty_like(e)
        w = 1.0 / (1.0 + e.sum(axis=1))
        for i, n in enumerate(s.N):
            A = sum(w[k] * s.corr[i][k] for k in range(s.K)) / n + alpha * np.eye(n)
            P = np.linalg.inv(A)
            for k in range(s.K):
                new[k, i] = np.trace(s.corr[i][k] @ P).real / n
        nxt = 0.5 * e + 0.5 * new
        if np.max(np.abs(nxt - e)) < tol:
            return nxt
        e = nxt
    raise AssertionError("oracle did not converge")


def corr_scenario(M=2, N=4, K=3, r=0.5, snr=10.0, tau2=0.2, seed=None):
    if seed is None:
        corr = {"kind": "matrix", "data": exp_correlation(N, r, 1.0).tolist()}
    else:
        corr = {"kind": "random_exp", "r_range": [0.0, 0.9], "gain_range": [0.3, 2.0]}
    return build_scenario({"M": M, "N": [N] * M, "K": K, "snr_db": snr, "correlation": corr,
                           "tau2": tau2, "seed": seed or 0})


def test_no_users():
    s = build_scenario({"M": 1, "N": [3], "K": 0, "rho": 1.0})
    fp = solve_fixed_point(s, 0.5)
    assert fp.e.shape == (0, 1)
    assert np.allclose(fp.Psi[0], 2.0 * np.eye(3))
    Q = np.diag([1.0, 2.0, 3.0])
    assert det_stieltjes(s, Q, 0.5) == pytest.approx(np.trace(Q) / 3 / 0.5, rel=1e-14)


def test_symmetric_identity_root():
    s = homogeneous_identity(2, 4, 4, 10.0)
    fp = solve_fixed_point(s, 1.0)
    assert np.allclose(fp.e, 1 / math.sqrt(2), atol=1e-10)
    assert fp.e[0, 0] == pytest.approx(quad_root(1.0, 2, 1.0), abs=1e-10)


@pytest.mark.parametrize("alpha,M,N,K", [(0.3, 3, 5, 9), (0.01, 2, 8, 16), (2.0, 4, 3, 2)])
def test_identity_root_grid(alpha, M, N, K):
    fp = solve_fixed_point(homogeneous_identity(M, N, K, 0.0), alpha)
    assert np.allclose(fp.e, quad_root(alpha, M, K / N), rtol=1e-9)


def test_correlated_matches_damped_oracle():
    s = corr_scenario(K=4, r=0.5)
    fp = solve_fixed_point(s, 0.1)
    assert np.allclose(fp.e, damped_oracle(s, 0.1), rtol=1e-9, atol=0)


def test_heterogeneous_matches_damped_oracle():
    s = corr_scenario(M=3, N=3, K=5, seed=11)
    fp = solve_fixed_point(s, 0.05)
    assert np.allclose(fp.e, damped_oracle(s, 0.05), rtol=1e-9, atol=0)


def test_tiny_alpha_converges():
    # K = N_total makes plain Picard crawl; the solver must still converge
    s = homogeneous_identity(4, 8, 32, 10.0, 0.3)
    fp = solve_fixed_point(s, 1e-6)
    assert fp.self_consistency(s) <= 1e-8
    assert fp.e[0, 0] == pytest.approx(quad_root(1e-6, 4, 4.0), rel=1e-8)


def test_nonconvergence_raises():
    with pytest.raises(ConvergenceError):
        solve_fixed_point(homogeneous_identity(2, 4, 4, 0.0), 1e-6, max_iter=3)
    with pytest.raises(ValueError):
        solve_fixed_point(homogeneous_identity(2, 4, 4, 0.0), 0.0)


def test_solution_invariants():
    s = corr_scenario(M=2, N=5, K=4, seed=3)
    fp = solve_fixed_point(s, 0.2)
    assert np.all(fp.e >= 0)
    for P in fp.Psi:
        assert np.array_equal(P, P.conj().T)
        np.linalg.cholesky(P)
    assert fp.self_consistency(s) <= 1e-8


def test_dead_link_tolerated():
    with pytest.warns(UserWarning):
        s = homogeneous_identity(2, 4, 3, 10.0, 0.1, gains=[1.0, 0.0])
    fp = solve_fixed_point(s, 0.3)
    assert np.all(fp.e[:, 1] == 0)
    assert np.allclose(fp.Psi[1], np.eye(4) / 0.3)
    solve_dotc(s, fp)


def fd_dotc(s, alpha, h=1e-6):
    # dotc_{k,i} = -d/dalpha [1/(N_i (1 + sum_m e_{k,m}))]
    def c(a):
        e = solve_fixed_point(s, a, tol=1e-14).e
        return 1.0 / (np.asarray(s.N, float)[None, :] * (1.0 + e.sum(axis=1))[:, None])
    return -(c(alpha * (1 + h)) - c(alpha * (1 - h))) / (2 * alpha * h)


def test_dotc_scalar_case():
    s = homogeneous_identity(1, 6, 1, 0.0)
    fp = solve_fixed_point(s, 0.4, tol=1e-14)
    dc = solve_dotc(s, fp)
    # direct scalar evaluation: Psi = p I with p = 1/(1/(N d) + alpha)
    N, e = 6, fp.e[0, 0]
    d = 1 + e
    p = 1.0 / (1.0 / (N * d) + 0.4)
    theta = 1 - (N * p * p) / (N * N * d * d)
    gamma = -(1 / N) * (1 / d ** 2) * (N * p * p) / N
    assert dc.dotc[0, 0] == pytest.approx(gamma / theta, rel=1e-12)


@pytest.mark.parametrize("seed", [1, 2])
def test_dotc_matches_finite_difference(seed):
    s = corr_scenario(M=2, N=4, K=3, seed=seed)
    fp = solve_fixed_point(s, 0.3, tol=1e-14)
    dc = solve_dotc(s, fp)
    assert np.allclose(dc.dotc, fd_dotc(s, 0.3), rtol=1e-6, atol=1e-12)


def test_dotc_residual_and_symmetry():
    s = homogeneous_identity(2, 8, 8, 10.0, 0.1)
    fp = solve_fixed_point(s, 0.2)
    dc = solve_dotc(s, fp)
    Theta, Gamma = theta_gamma(s, fp)
    g = Gamma.reshape(-1, order="F")
    assert np.linalg.norm(Theta @ dc.dotc.reshape(-1, order="F") - g) <= 1e-8 * np.linalg.norm(g)
    assert np.ptp(dc.dotc) < 1e-10
    assert dc.theta_cond >= 1.0


def test_traces_real():
    s = build_scenario({"M": 1, "N": [3], "K": 2, "rho": 1.0, "correlation": {
        "kind": "matrix", "data": np.eye(3).tolist(),
        "imag": [[0, 0.2, 0], [-0.2, 0, 0.1], [0, -0.1, 0]]}})
    fp = solve_fixed_point(s, 0.5)
    tr = derived_traces(s, fp)
    assert np.all(tr.tr_T_psi > 0) and np.all(tr.tr_T_psi2 > 0) and np.all(tr.tr_psi2 > 0)


def test_stieltjes_identity_and_selector():
    s = homogeneous_identity(2, 4, 4, 0.0)
    assert det_stieltjes(s, np.eye(8), 1.0) == pytest.approx(1 / math.sqrt(2), abs=1e-10)
    fp = solve_fixed_point(s, 1.0)
    assert det_stieltjes(s, selector(s, 1), 1.0, fp) == pytest.approx(np.trace(fp.Psi[1]).real / 8, rel=1e-14)
    with pytest.raises(ValueError):
        det_stieltjes(s, np.eye(3), 1.0)


def test_stieltjes_large_alpha():
    s = corr_scenario(seed=5)
    Q = np.diag(np.linspace(0.5, 2.0, s.Ntot))
    assert det_stieltjes(s, Q, 1e6) == pytest.approx(np.trace(Q) / s.Ntot / 1e6, rel=1e-4)


def empirical_stieltjes(s, Q, alpha, draws, seed):
    vals = []
    for t in range(draws):
        Hh = draw_channels(s, trial_seed(seed, t)).Hhat
        B = Hh.conj().T @ Hh + alpha * np.eye(s.Ntot)
        vals.append(np.trace(Q @ np.linalg.inv(B)).real / s.Ntot)
    return np.array(vals)


def test_stieltjes_selector_monte_carlo():
    s = build_scenario({"M": 2, "N": [64, 64], "K": 64, "snr_db": 10.0, "tau2": 0.2,
                        "correlation": {"kind": "exp", "r": 0.4, "gain": 1.0}})
    Q = selector(s, 0)
    emp = empirical_stieltjes(s, Q, 0.5, 500, 77).mean()
    assert emp == pytest.approx(det_stieltjes(s, Q, 0.5), rel=0.01)


def test_stieltjes_error_shrinks_with_size():
    errs = []
    for n in (16, 32, 64, 128):  # total N = 32 .. 256
        s = homogeneous_identity(2, n, n, 10.0, 0.1)
        Q = np.eye(s.Ntot)
        ref = det_stieltjes(s, Q, 0.3)
        errs.append(np.abs(empirical_stieltjes(s, Q, 0.3, 200, 5) - ref).mean())
    assert all(b < a for a, b in zip(errs, errs[1:])), errs


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10 ** 6), c=st.floats(0.05, 20.0), alpha=st.floats(0.01, 5.0))
def test_joint_scaling_invariance(seed, c, alpha):
    s = corr_scenario(M=2, N=3, K=3, seed=seed)
    scaled = build_scenario({**s.to_config(), "correlation": [
        [{"kind": "matrix", "data": (c * s.corr[i][k]).tolist()} for i in range(s.M)] for k in range(s.K)]})
    e1 = solve_fixed_point(s, alpha, tol=1e-13).e
    e2 = solve_fixed_point(scaled, c * alpha, tol=1e-13).e
    assert np.allclose(e1, e2, rtol=1e-10, atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_e_nonincreasing_in_alpha(seed):
    s = corr_scenario(M=2, N=3, K=4, seed=seed)
    es = [solve_fixed_point(s, a).e for a in np.geomspace(1e-3, 10.0, 9)]
    assert all(np.all(b <= a + 1e-12) for a, b in zip(es, es[1:]))
