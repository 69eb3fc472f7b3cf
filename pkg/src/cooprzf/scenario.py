"""System model for cooperative multi-cell RZF downlink.

A :class:`Scenario` holds the cluster dimensions, the per-antenna SNR, the
spatial correlation matrix of every user/BS link (path gain folded into its
trace) and the CSIT error power of every link.  Correlation matrices are
stored per base station as ``corr[i]`` with shape ``(K, N_i, N_i)`` so that
``corr[i][k]`` is the matrix between BS ``i`` and user ``k``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence

import numpy as np

HERMITIAN_TOL = 1e-8
EIG_TOL = 1e-10


class ScenarioError(ValueError):
    """Raised when a scenario description is inconsistent or invalid."""


class DegenerateLinkWarning(UserWarning):
    """A link has zero path gain (dead link)."""


def db_to_linear(db: float) -> float:
    return float(10.0 ** (db / 10.0))


def exp_correlation(n: int, r: float, gain: float = 1.0) -> np.ndarray:
    """Exponential correlation matrix ``gain * [r^|j-l|]``.

    Parameters
    ----------
    n : int
        Number of antennas.
    r : float
        Correlation coefficient between adjacent antennas, ``0 <= r < 1``.
    gain : float
        Path gain absorbed into the matrix, ``gain > 0``.
    """
    if not 0.0 <= r < 1.0:
        raise ScenarioError(f"correlation coefficient must lie in [0, 1), got {r}")
    if gain <= 0:
        raise ScenarioError(f"path gain must be positive, got {gain}")
    idx = np.arange(n)
    dist = np.abs(idx[:, None] - idx[None, :])
    R = np.power(float(r), dist) if r > 0 else (dist == 0).astype(float)
    return gain * R


def scale_path_gain(T: np.ndarray, gain: float) -> np.ndarray:
    """Absorb a path gain into a correlation matrix."""
    if gain < 0:
        raise ScenarioError(f"path gain must be nonnegative, got {gain}")
    if gain == 0:
        warnings.warn("zero path gain: link is dead", DegenerateLinkWarning, stacklevel=2)
    return gain * np.asarray(T)


@dataclass(frozen=True)
class CsitDecomposition:
    psi: np.ndarray  # (K, M) sqrt(1 - tau^2)
    tau: np.ndarray  # (K, M)
    lambda_diag: np.ndarray  # (K, N) psi_{k,i} repeated over BS i's antennas
    omega_diag: np.ndarray  # (K, N) tau_{k,i} repeated likewise


@dataclass(frozen=True)
class Scenario:
    M: int
    N: tuple[int, ...]
    K: int
    rho: float
    corr: tuple[np.ndarray, ...]
    tau2: np.ndarray
    norm_bound: float = field(default=np.inf)

    @property
    def Ntot(self) -> int:
        return int(sum(self.N))

    @property
    def beta(self) -> np.ndarray:
        return np.asarray(self.N, dtype=float) / self.K if self.K else np.full(self.M, np.inf)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.N)])

    def block(self, i: int) -> slice:
        off = self.offsets
        return slice(int(off[i]), int(off[i + 1]))

    @property
    def snr_db(self) -> float:
        return float(10.0 * np.log10(self.rho))

    @cached_property
    def psi(self) -> np.ndarray:
        return np.sqrt(1.0 - self.tau2)

    @cached_property
    def corr_sqrt(self) -> tuple[np.ndarray, ...]:
        """Principal square roots of every ``T_{k,i}``, same layout as ``corr``."""
        out = []
        for Ti in self.corr:
            w, U = np.linalg.eigh(Ti)
            w = np.sqrt(np.clip(w, 0.0, None))
            out.append((U * w[:, None, :]) @ np.conj(np.swapaxes(U, -1, -2)))
        return tuple(out)

    def csit(self) -> CsitDecomposition:
        psi = self.psi
        tau = np.sqrt(self.tau2)
        reps = np.asarray(self.N)
        return CsitDecomposition(
            psi=psi,
            tau=tau,
            lambda_diag=np.repeat(psi, reps, axis=1),
            omega_diag=np.repeat(tau, reps, axis=1),
        )

    def with_tau2(self, tau2) -> "Scenario":
        tau2 = _broadcast_tau2(np.asarray(tau2, dtype=float), self.K, self.M)
        _check_tau2(tau2)
        return Scenario(self.M, self.N, self.K, self.rho, self.corr, _frozen(tau2), self.norm_bound)

    def with_rho(self, rho: float) -> "Scenario":
        if rho <= 0:
            raise ScenarioError("rho must be positive")
        return Scenario(self.M, self.N, self.K, float(rho), self.corr, self.tau2, self.norm_bound)

    def to_config(self) -> dict[str, Any]:
        """Serialize to a JSON-compatible config that rebuilds this scenario exactly."""
        corr = []
        for k in range(self.K):
            row = []
            for i in range(self.M):
                T = self.corr[i][k]
                spec = {"kind": "matrix", "data": T.real.tolist()}
                if np.iscomplexobj(T) and np.any(T.imag != 0):
                    spec["imag"] = T.imag.tolist()
                row.append(spec)
            corr.append(row)
        return {
            "M": self.M,
            "N": list(self.N),
            "K": self.K,
            "rho": self.rho,
            "correlation": corr,
            "tau2": self.tau2.tolist(),
        }


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


def _broadcast_tau2(t: np.ndarray, K: int, M: int) -> np.ndarray:
    if t.ndim == 0:
        return np.full((K, M), float(t))
    if t.ndim == 1:
        if t.shape[0] != M:
            raise ScenarioError(f"per-cell tau2 must have length M={M}, got {t.shape[0]}")
        return np.tile(t, (K, 1))
    if t.shape != (K, M):
        raise ScenarioError(f"tau2 must be K x M = {(K, M)}, got {t.shape}")
    return t.astype(float)


def _check_tau2(t: np.ndarray) -> None:
    if not np.all(np.isfinite(t)) or np.any(t < 0) or np.any(t > 1):
        raise ScenarioError("tau2 outside [0, 1]")


def _matrix_from_spec(spec: dict, n: int, rng: np.random.Generator, base: Path | None) -> np.ndarray:
    kind = spec.get("kind", "identity")
    if kind == "identity":
        gain = float(spec.get("gain", 1.0))
        return scale_path_gain(np.eye(n), gain)
    if kind == "exp":
        return exp_correlation(n, float(spec["r"]), float(spec.get("gain", 1.0)))
    if kind == "random_exp":
        lo, hi = spec.get("r_range", [0.0, 0.9])
        glo, ghi = spec.get("gain_range", [1.0, 1.0])
        r = rng.uniform(lo, hi)
        g = rng.uniform(glo, ghi)
        return exp_correlation(n, r, g)
    if kind == "matrix":
        if "file" in spec:
            path = Path(spec["file"])
            if base is not None and not path.is_absolute():
                path = base / path
            T = np.load(path) if path.suffix == ".npy" else np.asarray(json.loads(path.read_text()))
        else:
            T = np.asarray(spec["data"], dtype=float)
            if "imag" in spec:
                T = T + 1j * np.asarray(spec["imag"], dtype=float)
        return T
    raise ScenarioError(f"unknown correlation kind {kind!r}")


def _expand_corr_specs(spec, K: int, M: int) -> list[list[Any]]:
    """Return a K x M grid of per-link specs (or raw matrices)."""
    if isinstance(spec, dict) or isinstance(spec, np.ndarray):
        return [[spec] * M for _ in range(K)]
    if isinstance(spec, (list, tuple)):
        if len(spec) == M and all(isinstance(s, dict) for s in spec):
            return [list(spec) for _ in range(K)]
        if len(spec) == K and all(isinstance(r, (list, tuple)) and len(r) == M for r in spec):
            return [list(r) for r in spec]
    raise ScenarioError("correlation must be one spec, a list of M specs, or a K x M grid")


def build_scenario(config: dict[str, Any], *, base_dir: str | Path | None = None) -> Scenario:
    """Validate a structured scenario description and build a :class:`Scenario`.

    ``correlation`` entries may be spec dicts (``identity``, ``exp``,
    ``random_exp``, ``matrix``) or explicit numpy arrays.  ``tau2`` may be a
    scalar, a per-cell list, a K x M grid, or ``{"kind": "uniform_random"}``.
    Random kinds draw from ``numpy.random.default_rng(config["seed"])``.
    """
    try:
        M = int(config["M"])
        K = int(config["K"])
        N_raw = config["N"]
    except KeyError as exc:
        raise ScenarioError(f"missing key {exc.args[0]!r}") from None
    N = tuple(int(n) for n in (N_raw if isinstance(N_raw, (list, tuple)) else [N_raw] * M))
    if M < 1 or K < 0 or len(N) != M or any(n < 1 for n in N):
        raise ScenarioError(f"dimension mismatch: M={M}, N={N}, K={K}")

    if "rho" in config:
        rho = float(config["rho"])
    elif "snr_db" in config:
        rho = db_to_linear(float(config["snr_db"]))
    else:
        raise ScenarioError("config needs 'rho' or 'snr_db'")
    if not rho > 0:
        raise ScenarioError("rho must be positive")

    rng = np.random.default_rng(config.get("seed", 0))
    base = Path(base_dir) if base_dir is not None else None

    grid = _expand_corr_specs(config.get("correlation", {"kind": "identity"}), K, M)
    corr = [np.empty((K, n, n), dtype=complex) for n in N]
    # link-by-link so random kinds consume the stream in (k, i) order
    for k in range(K):
        for i in range(M):
            spec = grid[k][i]
            T = np.asarray(spec) if not isinstance(spec, dict) else _matrix_from_spec(spec, N[i], rng, base)
            corr[i][k] = _validated_corr(T, N[i], k, i)
    complex_any = [np.any(c.imag != 0) for c in corr]
    stacks = tuple(_frozen(c if cx else c.real.copy()) for c, cx in zip(corr, complex_any))

    tau_spec = config.get("tau2", 0.0)
    if isinstance(tau_spec, dict):
        if tau_spec.get("kind") != "uniform_random":
            raise ScenarioError(f"unknown tau2 kind {tau_spec.get('kind')!r}")
        tau2 = rng.uniform(tau_spec.get("low", 0.0), tau_spec.get("high", 1.0), size=(K, M))
    else:
        tau2 = _broadcast_tau2(np.asarray(tau_spec, dtype=float), K, M)
    _check_tau2(tau2)

    norms = [np.linalg.norm(c, ord=2, axis=(1, 2)).max() if K else 0.0 for c in stacks]
    bound = float(max(norms)) if norms else 0.0
    if not np.isfinite(bound):
        raise ScenarioError("correlation matrices must have finite spectral norm")
    return Scenario(M, N, K, rho, stacks, _frozen(tau2), bound)


def _validated_corr(T: np.ndarray, n: int, k: int, i: int) -> np.ndarray:
    T = np.asarray(T)
    if T.shape != (n, n):
        raise ScenarioError(f"T[{k},{i}] has shape {T.shape}, expected {(n, n)}")
    if not np.all(np.isfinite(T)):
        raise ScenarioError(f"T[{k},{i}] has non-finite entries")
    scale = max(1.0, float(np.abs(T).max()))
    if np.abs(T - np.conj(T.T)).max() > HERMITIAN_TOL * scale:
        raise ScenarioError(f"non-Hermitian correlation matrix T[{k},{i}]")
    T = 0.5 * (T + np.conj(T.T))
    w = np.linalg.eigvalsh(T)
    if w.min() < -EIG_TOL:
        raise ScenarioError(f"indefinite correlation matrix T[{k},{i}] (min eig {w.min():.3g})")
    if np.all(T == 0):
        warnings.warn(f"T[{k},{i}] is zero: dead link", DegenerateLinkWarning, stacklevel=3)
    return T


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    cfg = json.loads(path.read_text())
    if "scenario" in cfg:
        cfg = cfg["scenario"]
    return build_scenario(cfg, base_dir=path.parent)


def homogeneous_identity(M: int, N: int, K: int, snr_db: float, tau2=0.0, gains: Sequence[float] | None = None) -> Scenario:
    """Shortcut for ``T_{k,i} = gain_i * I`` scenarios used throughout the experiments."""
    gains = [1.0] * M if gains is None else list(gains)
    return build_scenario({
        "M": M, "N": [N] * M, "K": K, "snr_db": snr_db,
        "correlation": [{"kind": "identity", "gain": g} for g in gains],
        "tau2": tau2,
    })
