"""Choosing the RZF regularization parameter from the deterministic sum-rate.

``golden_section_alpha`` works for any scenario.  For homogeneous scenarios
(equal antenna counts, one correlation matrix shared by every link, CSIT
error depending only on the BS) the optimum also solves a scalar fixed-point
equation (``prop1_alpha``), which has closed forms when ``T`` is a scaled
identity or CSIT is perfect.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .det_sinr import det_sum_rate
from .rmt_core import ConvergenceError
from .scenario import Scenario

log = logging.getLogger(__name__)

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
METHODS = ("golden_section", "prop1_fixed_point", "closed_form_uncorrelated",
           "closed_form_perfect", "closed_form_single_cell")


class HomogeneityError(ValueError):
    pass


class NonUnimodalWarning(UserWarning):
    pass


@dataclass
class AlphaResult:
    alpha_opt: float
    method: str
    objective: float | None = None
    bracket: tuple[float, float] | None = None
    iterations: int = 0
    trajectory: list[float] = field(default_factory=list, repr=False)


def default_bracket(s: Scenario) -> tuple[float, float]:
    anchor = 1.0 / (s.M * s.rho * float(np.min(s.beta)))
    return 1e-6, 10.0 * max(1.0, anchor)


def golden_section_alpha(s: Scenario, bracket: tuple[float, float] | None = None, tol: float = 1e-6,
                         *, objective=None, n_scan: int = 11, max_expand: int = 3,
                         max_iter: int = 200) -> AlphaResult:
    """Maximize the deterministic sum-rate over ``alpha``.

    An ``n_scan``-point log-spaced scan localizes the maximum (and flags a
    non-unimodal profile); golden-section search in ``log(alpha)`` then
    refines it until the bracket's relative width drops below ``tol``.
    """
    f = objective if objective is not None else (lambda a: det_sum_rate(s, a))
    lo, hi = bracket if bracket is not None else default_bracket(s)
    if not 0 < lo < hi:
        raise ValueError(f"invalid bracket {(lo, hi)}")

    evals = 0
    for expand in range(max_expand + 1):
        grid = np.geomspace(lo, hi, n_scan)
        vals = np.array([f(a) for a in grid])
        evals += n_scan
        if not np.all(np.isfinite(vals)):
            raise ArithmeticError("objective evaluation failed inside bracket")
        j = int(np.argmax(vals))
        if j < n_scan - 1 or expand == max_expand:
            break
        hi *= 10.0
    interior = (vals[1:-1] > vals[:-2]) & (vals[1:-1] > vals[2:])
    if interior.sum() > 1:
        warnings.warn("sum-rate profile is not unimodal over the scan", NonUnimodalWarning, stacklevel=2)

    a = math.log(grid[max(j - 1, 0)])
    b = math.log(grid[min(j + 1, n_scan - 1)])
    c = b - INV_PHI * (b - a)
    d = a + INV_PHI * (b - a)
    fc, fd = f(math.exp(c)), f(math.exp(d))
    evals += 2
    it = 0
    while b - a > tol and it < max_iter:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = f(math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = f(math.exp(d))
        evals += 1
        it += 1
    x = math.exp(0.5 * (a + b))
    fx = f(x)
    # a maximum at the scan boundary is returned as-is
    if vals[j] > fx:
        x, fx = float(grid[j]), float(vals[j])
    return AlphaResult(x, "golden_section", fx, (float(grid[0]), float(grid[-1])), evals)


# ---------------------------------------------------------------------------
# homogeneous scenarios


@dataclass
class HomogeneousModel:
    M: int
    N1: int
    K: int
    rho: float
    T: np.ndarray
    tau2: np.ndarray  # per BS
    eig: np.ndarray

    @property
    def beta(self) -> float:
        return self.N1 / self.K

    @property
    def psi(self) -> float:
        return float(np.mean(np.sqrt(1.0 - self.tau2)))

    def is_scaled_identity(self) -> float | None:
        g = self.T[0, 0].real
        return float(g) if np.array_equal(self.T, g * np.eye(self.N1)) else None


def homogeneous_model(s: Scenario) -> HomogeneousModel:
    if len(set(s.N)) != 1:
        raise HomogeneityError("antenna counts differ across BSs")
    if s.K == 0:
        raise HomogeneityError("no users")
    T = s.corr[0][0]
    for i in range(s.M):
        if not np.all(s.corr[i] == T[None]):
            raise HomogeneityError("correlation matrices differ across links")
    if not np.all(s.tau2 == s.tau2[0][None, :]):
        raise HomogeneityError("CSIT quality must depend on the BS only")
    return HomogeneousModel(s.M, s.N[0], s.K, s.rho, T, s.tau2[0].copy(), np.linalg.eigvalsh(T))


def is_homogeneous(s: Scenario) -> bool:
    try:
        homogeneous_model(s)
    except HomogeneityError:
        return False
    return True


@dataclass
class Prop1State:
    alpha: float
    e1: float
    e2: float
    e3: float
    e4: float
    e5: float
    psi_avg: float
    eta: float
    beta: float


def prop1_state(h: HomogeneousModel, alpha: float) -> Prop1State:
    """Trace functionals of the homogeneous fixed point, via the eigenvalues of T."""
    lam = h.eig.clip(min=0.0)
    M, beta = h.M, h.beta

    def g(e):
        c = beta * (M * e + 1.0)
        return float(np.mean(lam / (lam / c + alpha)))

    hi = float(np.mean(lam)) / alpha + 1.0
    e1 = brentq(lambda e: e - g(e), 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    p = 1.0 / (lam / (beta * (M * e1 + 1.0)) + alpha)  # eigenvalues of Psi
    e1 = float(np.mean(lam * p))
    e2 = float(np.mean(lam * p ** 2))
    e3 = float(np.mean((lam * p) ** 2))
    e4 = float(np.mean(lam * p ** 3))
    e5 = float(np.mean(lam ** 2 * p ** 3))
    eta = (e3 * e4 - e5 * e2) / (M * e2 ** 2 * e3) if e3 > 0 else 0.0
    return Prop1State(alpha, e1, e2, e3, e4, e5, h.psi, eta, beta)


def prop1_rhs(h: HomogeneousModel, st: Prop1State) -> float:
    M, rho, beta, psi = h.M, h.rho, st.beta, st.psi_avg
    e1, e2, e3, eta = st.e1, st.e2, st.e3, st.eta
    num = (1.0 + eta) * e2 + M * rho * (1.0 - psi ** 2) * e3
    den = M * beta * rho * e2 * ((1.0 + eta) * psi ** 2 + (1.0 + M * e1) ** 2 * (1.0 - psi ** 2) * eta)
    return num / den


def prop1_alpha(s: Scenario, tol: float = 1e-8, max_iter: int = 200) -> AlphaResult:
    """Iterate ``alpha <- RHS(alpha)`` from ``1/(M rho beta)``."""
    h = homogeneous_model(s)
    if np.any(h.tau2 >= 1.0):
        raise HomogeneityError("prop1 requires tau_i < 1 for every BS")
    alpha = 1.0 / (h.M * h.rho * h.beta)
    traj = [alpha]
    for it in range(1, max_iter + 1):
        new = prop1_rhs(h, prop1_state(h, alpha))
        if not (np.isfinite(new) and new > 0):
            raise ConvergenceError(f"prop1 iteration left the positive axis: {traj + [new]}")
        traj.append(new)
        if abs(new - alpha) <= tol * abs(alpha):
            method = "closed_form_single_cell" if h.M == 1 else "prop1_fixed_point"
            return AlphaResult(new, method, None, None, it, traj)
        alpha = new
    raise ConvergenceError(f"prop1 iteration did not converge in {max_iter} steps; trajectory tail {traj[-5:]}")


def alpha_uncorrelated(M: int, rho: float, beta: float, psi: float) -> float:
    """Closed-form optimum for ``T = I``: ``(1/M + rho(1 - psi^2)) / (beta rho psi^2)``."""
    if not 0 < psi <= 1:
        raise ValueError("psi must lie in (0, 1]; pure-noise CSIT has no finite optimum")
    if rho <= 0 or beta <= 0:
        raise ValueError("rho and beta must be positive")
    return (1.0 / M + rho * (1.0 - psi ** 2)) / (beta * rho * psi ** 2)


def alpha_scaled_identity(M: int, rho: float, beta: float, psi: float, gain: float) -> float:
    """Optimum for ``T = gain * I``: the uncorrelated optimum at SNR ``gain*rho``, scaled by ``gain``."""
    return gain * alpha_uncorrelated(M, gain * rho, beta, psi)


def gamma_bar_homogeneous(s: Scenario, alpha: float) -> float:
    """Closed homogeneous deterministic SINR (identical for every user)."""
    h = homogeneous_model(s)
    st = prop1_state(h, alpha)
    M, rho, beta, psi = h.M, h.rho, h.beta, h.psi
    e1, e2, e3 = st.e1, st.e2, st.e3
    q = (M * e1 + 1.0) ** 2
    num = M ** 2 * psi ** 2 * rho * e1 * (e3 + alpha * beta * e2 * q)
    den = (q * (1.0 - psi ** 2) + psi ** 2) * M * e3 * rho + q * e2
    return num / den


def optimize_alpha(s: Scenario, method: str = "auto", *, tol: float = 1e-6) -> AlphaResult:
    """Dispatch: ``golden``, ``prop1``, ``closed-form`` or ``auto``.

    ``auto`` uses a closed form when the scenario is homogeneous with a
    scaled-identity correlation, otherwise golden-section search.
    """
    if method in ("golden", "golden_section"):
        return golden_section_alpha(s, tol=tol)
    if method in ("prop1", "prop1_fixed_point"):
        r = prop1_alpha(s)
        r.objective = det_sum_rate(s, r.alpha_opt)
        return r
    if method in ("closed-form", "closed_form", "auto"):
        r = closed_form_alpha(s)
        if r is None:
            if method == "auto":
                return golden_section_alpha(s, tol=tol)
            raise HomogeneityError("no closed form applies to this scenario")
        r.objective = det_sum_rate(s, r.alpha_opt)
        return r
    raise ValueError(f"unknown method {method!r}")


def closed_form_alpha(s: Scenario) -> AlphaResult | None:
    try:
        h = homogeneous_model(s)
    except HomogeneityError:
        return None
    gain = h.is_scaled_identity()
    psi = h.psi
    if gain is None or gain <= 0 or psi <= 0:
        return None
    a = alpha_scaled_identity(h.M, h.rho, h.beta, psi, gain)
    method = "closed_form_perfect" if np.all(h.tau2 == 0) else "closed_form_uncorrelated"
    return AlphaResult(a, method)
