"""Deterministic-equivalent fixed point for the RZF resolvent.

For a scenario and regularization ``alpha`` the resolvent
``(Hhat^H Hhat + alpha I)^{-1}`` is approximated by the block-diagonal matrix
``diag(Psi_1, ..., Psi_M)`` where

    Psi_i   = ( (1/N_i) sum_k T_{k,i} / (1 + sum_m e_{k,m}) + alpha I )^{-1}
    e_{k,i} = (1/N_i) tr(T_{k,i} Psi_i).

The alpha-derivative of the coupling weights, ``dotc``, solves an MK x MK
linear system built from second-order traces of the same solution.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .scenario import Scenario

log = logging.getLogger(__name__)

FP_TOL = 1e-10
FP_MAX_ITER = 500


class ConvergenceError(RuntimeError):
    pass


@dataclass
class FixedPointSolution:
    alpha: float
    e: np.ndarray  # (K, M)
    Psi: list[np.ndarray]
    iterations: int
    residual: float
    damped: bool = False

    def self_consistency(self, s: Scenario) -> float:
        """max |e_{k,i} - tr(T_{k,i} Psi_i)/N_i| / (1 + e_{k,i})."""
        if s.K == 0:
            return 0.0
        direct = _tr_T_psi(s, self.Psi) / np.asarray(s.N, float)
        return float(np.max(np.abs(self.e - direct) / (1.0 + self.e)))


def _hermitian_inverse(A: np.ndarray) -> np.ndarray:
    c = sla.cho_factor(A, lower=True, check_finite=False)
    X = sla.cho_solve(c, np.eye(A.shape[0], dtype=A.dtype), check_finite=False)
    return 0.5 * (X + np.conj(X.T))


def _psi_blocks(s: Scenario, e: np.ndarray, alpha: float) -> list[np.ndarray]:
    w = 1.0 / (1.0 + e.sum(axis=1)) if s.K else np.zeros(0)
    out = []
    for i, n in enumerate(s.N):
        A = np.tensordot(w, s.corr[i], axes=(0, 0)) / n if s.K else np.zeros((n, n))
        A = A + alpha * np.eye(n)
        out.append(_hermitian_inverse(A))
    return out


def _tr_T_psi(s: Scenario, Psi: list[np.ndarray]) -> np.ndarray:
    # tr(T Psi) = sum_ab T_ab Psi_ba
    cols = [np.einsum("kab,ba->k", s.corr[i], Psi[i]).real for i in range(s.M)]
    return np.stack(cols, axis=1) if s.K else np.zeros((0, s.M))


def _newton_jacobian(s: Scenario, e: np.ndarray, Psi: list[np.ndarray]) -> np.ndarray:
    """d/de of ``e - g(e)``; unknowns in vec order (index ``i*K + k``)."""
    K, M = s.K, s.M
    w2 = 1.0 / (1.0 + e.sum(axis=1)) ** 2
    J = np.eye(M * K)
    for i, n in enumerate(s.N):
        A = s.corr[i] @ Psi[i]
        C = np.einsum("kab,lba->kl", A, A).real * w2[None, :] / n ** 2
        # g_{k,i} depends on e_{l,m} through sum_m e_{l,m}: same block for every m
        for m in range(M):
            J[i * K:(i + 1) * K, m * K:(m + 1) * K] -= C
    return J


def solve_fixed_point(s: Scenario, alpha: float, *, tol: float = FP_TOL,
                      max_iter: int = FP_MAX_ITER, accelerate: bool = True) -> FixedPointSolution:
    """Picard iteration on ``e`` starting from all-ones.

    Damping 0.5 is switched on after two consecutive increases of the step
    residual.  When Picard stalls (observed contraction above 0.7 after 20
    sweeps, typical for tiny ``alpha`` with ``K >= N``) the remaining sweeps
    are safeguarded Newton steps.  Raises :class:`ConvergenceError` after
    ``max_iter`` sweeps.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    Nf = np.asarray(s.N, float)
    if s.K == 0:
        Psi = [np.eye(n) / alpha for n in s.N]
        return FixedPointSolution(float(alpha), np.zeros((0, s.M)), Psi, 0, 0.0)

    e = np.ones((s.K, s.M))
    damp = 1.0
    prev = np.inf
    increases = 0
    newton = False
    res = np.inf
    for it in range(1, max_iter + 1):
        Psi = _psi_blocks(s, e, alpha)
        g = _tr_T_psi(s, Psi) / Nf
        F = e - g
        res = float(np.max(np.abs(F) / (1.0 + np.abs(e))))
        if res < tol:
            # near a slope-one fixed point the step underestimates the error; finish with Newton there
            cand = _newton_step(s, e, F, Psi, alpha, Nf) if newton else None
            e = g if cand is None else cand
            Psi = _psi_blocks(s, e, alpha)
            return FixedPointSolution(float(alpha), e, Psi, it, res, damp < 1.0)
        if newton:
            cand = _newton_step(s, e, F, Psi, alpha, Nf)
            # far from the root the Jacobian can point away from it; Picard is safe there
            if cand is not None:
                e = cand
                continue
        e = damp * g + (1.0 - damp) * e if damp < 1.0 else g
        increases = increases + 1 if res > prev else 0
        if increases >= 2 and damp == 1.0:
            log.debug("fixed point oscillating at alpha=%g, enabling damping", alpha)
            damp = 0.5
        if accelerate and it >= 20 and res > 0.7 * prev:
            log.debug("Picard stalled at alpha=%g (rate %.3f), switching to Newton", alpha, res / prev)
            newton = True
        prev = res
    raise ConvergenceError(f"fixed point did not converge in {max_iter} sweeps "
                           f"(alpha={alpha:g}, residual={res:.3g})")


def _newton_step(s, e, F, Psi, alpha, Nf):
    J = _newton_jacobian(s, e, Psi)
    try:
        step = np.linalg.solve(J, -F.reshape(-1, order="F")).reshape(e.shape, order="F")
    except np.linalg.LinAlgError:
        return None
    if float(np.sum(step * -F)) <= 0:
        return None
    f0 = np.linalg.norm(F)
    t = 1.0
    for _ in range(40):
        cand = e + t * step
        if np.all(cand >= 0):
            Fc = cand - _tr_T_psi(s, _psi_blocks(s, cand, alpha)) / Nf
            if np.linalg.norm(Fc) < f0:
                return cand
        t *= 0.5
    return None


@dataclass
class DerivedTraces:
    """Trace functionals of a fixed-point solution (all real)."""

    tr_T_psi: np.ndarray  # (K, M)  tr(T_{k,i} Psi_i)
    tr_T_psi2: np.ndarray  # (K, M)  tr(T_{k,i} Psi_i^2)
    tr_T_psi_T_psi: list[np.ndarray]  # M of (K, K)  tr(T_{k,i} Psi_i T_{l,i} Psi_i)
    tr_psi: np.ndarray  # (M,)
    tr_psi2: np.ndarray  # (M,)

    @property
    def tr_psi_T_psi(self) -> np.ndarray:
        # tr(Psi T Psi) == tr(T Psi^2) by cyclicity
        return self.tr_T_psi2


def derived_traces(s: Scenario, fp: FixedPointSolution, *, imag_tol: float = 1e-10) -> DerivedTraces:
    K, M = s.K, s.M
    tp = np.zeros((K, M))
    tp2 = np.zeros((K, M))
    cross = []
    trp = np.zeros(M)
    trp2 = np.zeros(M)
    for i in range(M):
        P = fp.Psi[i]
        A = s.corr[i] @ P  # (K, n, n)
        t1 = np.trace(A, axis1=1, axis2=2)
        t2 = np.einsum("kab,ba->k", A, P)
        cc = np.einsum("kab,lba->kl", A, A)
        scale = 1.0 + np.abs(cc).max(initial=0.0)
        for name, val in (("tr(T Psi)", t1), ("tr(T Psi^2)", t2), ("tr(T Psi T Psi)", cc)):
            if val.size and np.abs(val.imag).max() > imag_tol * scale:
                raise ArithmeticError(f"{name} has imaginary residue {np.abs(val.imag).max():.3g}")
        tp[:, i] = t1.real
        tp2[:, i] = t2.real
        cross.append(cc.real)
        trp[i] = np.trace(P).real
        trp2[i] = np.vdot(P, P).real  # Psi Hermitian: tr(Psi^2) = ||Psi||_F^2
    return DerivedTraces(tp, tp2, cross, trp, trp2)


@dataclass
class DotCSolution:
    dotc: np.ndarray  # (K, M)
    theta_cond: float
    residual: float


def theta_gamma(s: Scenario, fp: FixedPointSolution, tr: DerivedTraces | None = None):
    """Assemble the MK x MK matrix and right-hand side for ``dotc``.

    Unknowns are ordered ``vec`` style (column-major over the K x M matrix):
    index ``i*K + k`` holds ``dotc[k, i]``.
    """
    tr = derived_traces(s, fp) if tr is None else tr
    K, M = s.K, s.M
    Nf = np.asarray(s.N, float)
    d2 = (1.0 + fp.e.sum(axis=1)) ** 2  # (K,)
    Theta = np.eye(M * K)
    for i in range(M):
        for j in range(M):
            # row (k, i), column (l, j)
            blk = tr.tr_T_psi_T_psi[j] / (Nf[i] * Nf[j] * d2[:, None])
            Theta[i * K:(i + 1) * K, j * K:(j + 1) * K] -= blk
    inner = (tr.tr_T_psi2 / Nf).sum(axis=1) / d2  # (K,)
    Gamma = -inner[:, None] / Nf[None, :]
    return Theta, Gamma


def solve_dotc(s: Scenario, fp: FixedPointSolution, tr: DerivedTraces | None = None,
               *, rcond_min: float = 1e-13) -> DotCSolution:
    if s.K == 0:
        return DotCSolution(np.zeros((0, s.M)), 1.0, 0.0)
    Theta, Gamma = theta_gamma(s, fp, tr)
    rhs = Gamma.reshape(-1, order="F")
    cond = float(np.linalg.cond(Theta, 1))
    if not np.isfinite(cond) or 1.0 / cond < rcond_min:
        raise np.linalg.LinAlgError(f"Theta is numerically singular (cond={cond:.3g})")
    lu = sla.lu_factor(Theta, check_finite=False)
    x = sla.lu_solve(lu, rhs, check_finite=False)
    res = float(np.linalg.norm(Theta @ x - rhs))
    return DotCSolution(x.reshape((s.K, s.M), order="F"), cond, res)


def det_stieltjes(s: Scenario, Q: np.ndarray, alpha: float, fp: FixedPointSolution | None = None) -> float:
    """Deterministic equivalent of ``(1/N) tr(Q (Hhat^H Hhat + alpha I)^{-1})``.

    Only the diagonal blocks of ``Q`` (conformal with ``s.N``) contribute.
    """
    Q = np.asarray(Q)
    if Q.shape != (s.Ntot, s.Ntot):
        raise ValueError(f"Q must be {s.Ntot} x {s.Ntot}")
    fp = solve_fixed_point(s, alpha) if fp is None else fp
    total = 0.0
    for i in range(s.M):
        b = s.block(i)
        total += np.sum(Q[b, b] * fp.Psi[i].T).real
    return float(total / s.Ntot)


def selector(s: Scenario, i: int) -> np.ndarray:
    """The diagonal 0/1 matrix picking BS ``i``'s antennas."""
    d = np.zeros(s.Ntot)
    d[s.block(i)] = 1.0
    return np.diag(d)
