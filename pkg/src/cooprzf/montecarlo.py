"""Monte-Carlo ground truth for cooperative RZF with imperfect CSIT.

Every trial is a pure function of ``(scenario, alpha, trial_seed)``.  Trial
seeds come from ``SeedSequence(master_seed, spawn_key=(t,))`` so a trial's
stream does not depend on how many trials run or in which order.  Noise
power is normalized to one, so the per-antenna power budget equals ``rho``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .det_sinr import DetEquivalent, deterministic_equivalent
from .scenario import Scenario


def trial_seed(master_seed: int, trial: int, *key: int) -> int:
    """64-bit seed of trial ``trial`` (optionally under an extra spawn key)."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(*key, int(trial)))
    return int(ss.generate_state(1, np.uint64)[0])


def complex_gaussian(rng: np.random.Generator, shape, var) -> np.ndarray:
    """CN(0, var) entries; ``var`` broadcasts against ``shape``."""
    sd = np.sqrt(np.asarray(var, float) / 2.0)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * sd


@dataclass
class ChannelRealization:
    x: np.ndarray  # (K, N) rows x_k^H
    v: np.ndarray  # (K, N) rows v_k^H
    H: np.ndarray  # (K, N) rows h_k^H
    Hhat: np.ndarray  # (K, N) rows hhat_k^H
    seed: int


def draw_channels(s: Scenario, seed: int) -> ChannelRealization:
    rng = np.random.default_rng(seed)
    var = np.repeat(1.0 / np.asarray(s.N, float), s.N)[None, :]
    x = complex_gaussian(rng, (s.K, s.Ntot), var)
    v = complex_gaussian(rng, (s.K, s.Ntot), var)
    H = np.empty_like(x)
    Hhat = np.empty_like(x)
    for i in range(s.M):
        b = s.block(i)
        R = s.corr_sqrt[i]  # (K, n, n), Hermitian
        psi = s.psi[:, i][:, None]
        tau = np.sqrt(s.tau2[:, i])[:, None]
        xhat = psi * x[:, b] + tau * v[:, b]
        # row^H = (R col)^H = row R  since R is Hermitian
        H[:, b] = np.einsum("ka,kab->kb", x[:, b], R)
        Hhat[:, b] = np.einsum("ka,kab->kb", xhat, R)
    return ChannelRealization(x, v, H, Hhat, int(seed))


@dataclass
class PrecoderState:
    alpha: float
    G_unnorm: np.ndarray  # (N, K)  What Hhat^H
    Phi: np.ndarray  # (M,)
    xi2: float
    nu: float
    bs_power: np.ndarray  # (M,) tr(E_i G G^H E_i) after normalization
    What: np.ndarray | None = field(default=None, repr=False)

    @property
    def G(self) -> np.ndarray:
        return math.sqrt(self.xi2) * self.G_unnorm


def rzf_precoder(s: Scenario, ch: ChannelRealization, alpha: float, *, keep_inverse: bool = False) -> PrecoderState:
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    Hh = ch.Hhat
    A = Hh.conj().T @ Hh + alpha * np.eye(s.Ntot)
    try:
        c = sla.cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("Hhat^H Hhat + alpha I is singular") from exc
    Gu = sla.cho_solve(c, Hh.conj().T, check_finite=False)
    W = None
    if keep_inverse:
        W = sla.cho_solve(c, np.eye(s.Ntot, dtype=A.dtype), check_finite=False)
        W = 0.5 * (W + W.conj().T)
    N = s.Ntot
    Phi = np.array([np.vdot(Gu[s.block(i)], Gu[s.block(i)]).real / N for i in range(s.M)])
    Nf = np.asarray(s.N, float)
    P = s.rho  # sigma^2 = 1
    with np.errstate(divide="ignore"):
        xi2_i = np.where(Phi > 0, (Nf / N) * P / Phi, np.inf)
    xi2 = float(xi2_i.min())
    nu = float(np.max(N * Phi / (Nf * s.rho)))
    G = math.sqrt(xi2) * Gu
    bs_power = np.array([np.vdot(G[s.block(i)], G[s.block(i)]).real for i in range(s.M)])
    return PrecoderState(float(alpha), Gu, Phi, xi2, nu, bs_power, W)


def instant_sinr(s: Scenario, ch: ChannelRealization, ps: PrecoderState) -> np.ndarray:
    S = ch.H @ ps.G_unnorm  # S[k, l] = h_k^H What hhat_l
    p = np.abs(S) ** 2
    sig = np.diag(p).copy()
    interf = p.sum(axis=1) - sig
    return sig / (interf + ps.nu)


def instant_sinr_direct(s: Scenario, ch: ChannelRealization, ps: PrecoderState) -> np.ndarray:
    """SINR from the received-signal decomposition with the normalized precoder and unit noise."""
    G = ps.G
    out = np.empty(s.K)
    for k in range(s.K):
        hk = ch.H[k]
        sig = abs(hk @ G[:, k]) ** 2
        interf = sum(abs(hk @ G[:, l]) ** 2 for l in range(s.K) if l != k)
        out[k] = sig / (interf + 1.0)
    return out


@dataclass
class TrialResult:
    index: int
    seed: int
    sum_rate: float
    power_ratio: np.ndarray  # (M,) bs_power / (N_i P)


def run_trial(s: Scenario, alpha: float, master_seed: int, t: int) -> TrialResult:
    seed = trial_seed(master_seed, t)
    ch = draw_channels(s, seed)
    ps = rzf_precoder(s, ch, alpha)
    g = instant_sinr(s, ch, ps)
    ratio = ps.bs_power / (np.asarray(s.N, float) * s.rho)
    return TrialResult(t, seed, math.fsum(np.log1p(g)), ratio)


@dataclass
class ErgodicEstimate:
    mean: float
    stderr: float
    trials: int
    master_seed: int
    per_trial: np.ndarray = field(repr=False)
    max_power_excess: float = 0.0  # max over trials/BS of ratio - 1 (should be <= 1e-9)
    max_binding_gap: float = 0.0  # max over trials of |max_i ratio_i - 1|


def ergodic_sum_rate(s: Scenario, alpha: float, trials: int, master_seed: int = 0,
                     *, workers: int = 1) -> ErgodicEstimate:
    """Mean of the instantaneous sum-rate (nats) over independent trials."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    idx = range(trials)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(lambda t: run_trial(s, alpha, master_seed, t), idx))
    else:
        results = [run_trial(s, alpha, master_seed, t) for t in idx]
    vals = np.array([r.sum_rate for r in results])
    mean = math.fsum(vals) / trials
    if trials > 1:
        var = math.fsum((vals - mean) ** 2) / (trials - 1)
        se = math.sqrt(var / trials)
    else:
        se = float("nan")
    ratios = np.array([r.power_ratio for r in results])
    excess = float(np.max(ratios - 1.0))
    gap = float(np.max(np.abs(ratios.max(axis=1) - 1.0)))
    return ErgodicEstimate(mean, se, trials, int(master_seed), vals, excess, gap)


# ---------------------------------------------------------------------------
# term-by-term validation of the SINR limits


def bilinear_limits(U, V, Lam, Om, Dinv):
    """Deterministic limits of ``x^H U A^{-1} V x`` and ``x^H U A^{-1} V v``.

    ``A = D + (Lam x + Om v)(Lam x + Om v)^H`` with x, v of variance 1/N.
    """
    N = Dinv.shape[0]
    t = lambda X: np.trace(X) / N  # noqa: E731
    den = 1.0 + t(Lam @ Lam.conj().T @ Dinv) + t(Om @ Om.conj().T @ Dinv)
    a = t(Lam @ U @ Dinv)
    xx = t(V @ U @ Dinv) - a * t(V @ Lam.conj().T @ Dinv) / den
    xv = -a * t(V @ Om.conj().T @ Dinv) / den
    return xx, xv


def bilinear_sample(rng, U, V, Lam, Om, D):
    """One draw of the two rank-one bilinear forms minus their limits."""
    N = D.shape[0]
    x = complex_gaussian(rng, N, 1.0 / N)
    v = complex_gaussian(rng, N, 1.0 / N)
    q = Lam @ x + Om @ v
    A = D + np.outer(q, q.conj())
    Ainv_Vx = np.linalg.solve(A, V @ x)
    Ainv_Vv = np.linalg.solve(A, V @ v)
    xUA = x.conj() @ U
    lim_xx, lim_xv = bilinear_limits(U, V, Lam, Om, np.linalg.inv(D))
    return xUA @ Ainv_Vx - lim_xx, xUA @ Ainv_Vv - lim_xv


@dataclass
class TermStats:
    name: str
    mean: float
    stderr: float
    mean_abs: float
    n: int

    @property
    def z(self) -> float:
        return abs(self.mean) / self.stderr if self.stderr > 0 else (0.0 if self.mean == 0 else math.inf)


def _stats(name: str, vals) -> TermStats:
    vals = np.asarray(vals, float)
    n = len(vals)
    m = math.fsum(vals) / n
    se = math.sqrt(math.fsum((vals - m) ** 2) / (n - 1) / n) if n > 1 else float("nan")
    return TermStats(name, m, se, math.fsum(np.abs(vals)) / n, n)


@dataclass
class AppendixReport:
    alpha: float
    trials: int
    terms: dict[str, TermStats]
    max_power_excess: float = 0.0
    max_binding_gap: float = 0.0

    def __getitem__(self, key: str) -> TermStats:
        return self.terms[key]


def validate_appendix_terms(s: Scenario, alpha: float, trials: int, master_seed: int = 0,
                            *, det: DetEquivalent | None = None, user: int = 0) -> AppendixReport:
    """Empirical residuals of each SINR component against its deterministic limit.

    Per trial: noise ``nu - nu_bar``; signal ``Re(h_k^H W hhat_k) - u2/(1+u1)``;
    interference ``h_k^H W Hhat_[k]^H Hhat_[k] W h_k - u_k``; and the two
    rank-one bilinear forms with ``D = A_[k]``, ``U = V = T_k^{1/2}``,
    ``Lam = T_k^{1/2} Lambda_k``, ``Om = T_k^{1/2} Omega_k``, drawn with fresh
    variance-1/N vectors.  User-level terms use user ``user``.
    """
    det = deterministic_equivalent(s, alpha) if det is None else det
    k = user
    sig_bar = det.u2[k] / (1.0 + det.u1[k])
    T_half = np.zeros((s.Ntot, s.Ntot), dtype=complex)
    for i in range(s.M):
        b = s.block(i)
        T_half[b, b] = s.corr_sqrt[i][k]
    cs = s.csit()
    Lam = T_half * cs.lambda_diag[k][None, :]
    Om = T_half * cs.omega_diag[k][None, :]

    noise, signal, interf, l_xx, l_xv = [], [], [], [], []
    cap = np.asarray(s.N, float) * s.rho
    excess = gap = 0.0
    for t in range(trials):
        seed = trial_seed(master_seed, t)
        ch = draw_channels(s, seed)
        ps = rzf_precoder(s, ch, alpha, keep_inverse=True)
        noise.append(ps.nu - det.nu_bar)
        ratio = ps.bs_power / cap
        excess = max(excess, float(np.max(ratio - 1.0)))
        gap = max(gap, abs(float(ratio.max()) - 1.0))
        S = ch.H @ ps.G_unnorm
        signal.append(S[k, k].real - sig_bar)
        p = np.abs(S[k]) ** 2
        interf.append(p.sum() - p[k] - det.uk[k])

        others = np.delete(ch.Hhat, k, axis=0)
        D = others.conj().T @ others + alpha * np.eye(s.Ntot)
        rng = np.random.default_rng(trial_seed(master_seed, t, 1))
        rxx, rxv = bilinear_sample(rng, T_half, T_half, Lam, Om, D)
        l_xx.append(rxx.real)
        l_xv.append(rxv.real)
    terms = {
        "noise": _stats("noise", noise),
        "signal": _stats("signal", signal),
        "interference": _stats("interference", interf),
        "bilinear_xx": _stats("bilinear_xx", l_xx),
        "bilinear_xv": _stats("bilinear_xv", l_xv),
    }
    return AppendixReport(float(alpha), trials, terms, excess, gap)
