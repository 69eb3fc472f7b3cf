"""Deterministic-equivalent SINRs and sum-rate of cooperative RZF."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .rmt_core import (FP_TOL, DerivedTraces, DotCSolution, FixedPointSolution, derived_traces,
                       solve_dotc, solve_fixed_point)
from .scenario import Scenario

log = logging.getLogger(__name__)

CLAMP_TOL = 1e-12


@dataclass
class DetEquivalent:
    alpha: float
    u1: np.ndarray
    u2: np.ndarray
    du1: np.ndarray
    du2: np.ndarray
    uk: np.ndarray
    nu_bar: float
    nu_per_bs: np.ndarray
    binding_bs: int
    gamma_bar: np.ndarray | None = None
    sum_rate_nats: float | None = None
    clamped: int = 0
    traces: DerivedTraces | None = field(default=None, repr=False)


def compute_u_terms(s: Scenario, fp: FixedPointSolution, dc: DotCSolution,
                    tr: DerivedTraces | None = None) -> DetEquivalent:
    """Fill the per-user u terms and the noise term; gamma is left empty."""
    tr = derived_traces(s, fp) if tr is None else tr
    a = fp.alpha
    Nf = np.asarray(s.N, float)
    psi = s.psi

    g = tr.tr_T_psi / Nf
    u1 = g.sum(axis=1)
    u2 = (psi * g).sum(axis=1)

    # bracket[k, i] = tr(T_ki Psi_i^2) - sum_l dotc_li tr(T_ki Psi_i T_li Psi_i)
    bracket = np.empty((s.K, s.M))
    for i in range(s.M):
        bracket[:, i] = tr.tr_T_psi2[:, i] - tr.tr_T_psi_T_psi[i] @ dc.dotc[:, i]
    du1 = (bracket / Nf).sum(axis=1)
    du2 = (psi * bracket / Nf).sum(axis=1)

    a1 = u1 - a * du1
    uk = a1 - 2.0 * u2 * (u2 - a * du2) / (1.0 + u1) + u2 ** 2 * a1 / (1.0 + u1) ** 2

    nu_i = (tr.tr_psi - a * tr.tr_psi2 + a * np.einsum("ki,ki->i", dc.dotc, tr.tr_psi_T_psi)) / (Nf * s.rho)
    j = int(np.argmax(nu_i))  # first max on ties
    return DetEquivalent(a, u1, u2, du1, du2, uk, float(nu_i[j]), nu_i, j, traces=tr)


def gamma_bar(s: Scenario, det: DetEquivalent) -> np.ndarray:
    den = (1.0 + det.u1) ** 2 * (det.uk + det.nu_bar)
    if np.any(den <= 0):
        raise ArithmeticError("nonpositive SINR denominator: invalid upstream solution")
    g = det.u2 ** 2 / den
    neg = g < 0
    if np.any(g < -CLAMP_TOL):
        raise ArithmeticError(f"negative deterministic SINR {g.min():.3g}")
    det.clamped += int(neg.sum())
    return np.where(neg, 0.0, g)


def gamma_bar_perfect(s: Scenario, fp: FixedPointSolution, dc: DotCSolution,
                      det: DetEquivalent | None = None) -> np.ndarray:
    """Perfect-CSIT closed form ``u1^2 / ((u1 - alpha du1) + (1+u1)^2 nu)``."""
    if np.any(s.tau2 != 0):
        raise ValueError("perfect-CSIT formula called with nonzero tau2")
    det = compute_u_terms(s, fp, dc) if det is None else det
    a = fp.alpha
    return det.u1 ** 2 / ((det.u1 - a * det.du1) + (1.0 + det.u1) ** 2 * det.nu_bar)


def sum_rate_bar(det_or_gamma) -> float:
    """Sum of ``log(1 + gamma_bar_k)`` in nats."""
    g = det_or_gamma.gamma_bar if isinstance(det_or_gamma, DetEquivalent) else det_or_gamma
    return math.fsum(np.log1p(np.asarray(g, float)))


def deterministic_equivalent(s: Scenario, alpha: float, *, tol: float = FP_TOL) -> DetEquivalent:
    """Full pipeline: fixed point, dotc system, u terms, SINRs and sum-rate."""
    fp = solve_fixed_point(s, alpha, tol=tol)
    tr = derived_traces(s, fp)
    dc = solve_dotc(s, fp, tr)
    det = compute_u_terms(s, fp, dc, tr)
    det.gamma_bar = gamma_bar(s, det)
    det.sum_rate_nats = sum_rate_bar(det)
    return det


def det_sum_rate(s: Scenario, alpha: float, *, tol: float = FP_TOL) -> float:
    return deterministic_equivalent(s, alpha, tol=tol).sum_rate_nats
