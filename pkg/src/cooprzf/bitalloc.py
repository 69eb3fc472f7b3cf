"""Feedback-bit allocation across cooperating BSs.

Each user splits a budget of ``B`` feedback bits over the ``M`` links; a link
quantized with ``b`` bits on ``N_i`` antennas gets CSIT error power
``2^(-b/(N_i-1))``.  Candidates are scored with the deterministic sum-rate at
the regularization re-optimized for that candidate.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .det_sinr import det_sum_rate
from .regopt import closed_form_alpha, golden_section_alpha
from .rmt_core import FixedPointSolution, solve_fixed_point
from .scenario import Scenario

log = logging.getLogger(__name__)

SPACES = ("full", "restricted")
ALPHA_TOL = 1e-4
MAX_JOINT = 4096


def tau2_from_bits(bits: int, n: int) -> float:
    if n < 2:
        raise ValueError(f"quantization exponent undefined for N_i={n} (need N_i >= 2)")
    if bits < 0:
        raise ValueError("bit count must be nonnegative")
    return 2.0 ** (-bits / (n - 1))


def tau2_matrix(bits: np.ndarray, N: Sequence[int]) -> np.ndarray:
    bits = np.asarray(bits)
    return np.array([[tau2_from_bits(int(b), n) for b, n in zip(row, N)] for row in bits])


# ---------------------------------------------------------------------------
# enumeration


def _compositions(B: int, M: int) -> Iterator[tuple[int, ...]]:
    if M == 1:
        yield (B,)
        return
    for first in range(B + 1):
        for rest in _compositions(B - first, M - 1):
            yield (first,) + rest


def enumerate_full(B: int, M: int) -> list[tuple[int, ...]]:
    """All ways to write ``B`` as an ordered sum of ``M`` nonnegative parts, lexicographic."""
    if B < 0 or M < 1:
        raise ValueError("need B >= 0 and M >= 1")
    return list(_compositions(B, M))


def _partitions(B: int, parts: int, cap: int) -> Iterator[tuple[int, ...]]:
    # non-increasing sequences of length `parts` with entries <= cap summing to B
    if parts == 0:
        if B == 0:
            yield ()
        return
    for first in range(min(B, cap), -1, -1):
        if first * parts < B:
            break
        for rest in _partitions(B - first, parts - 1, first):
            yield (first,) + rest


def enumerate_restricted(B: int, M: int, order: Sequence[int] | None = None) -> list[tuple[int, ...]]:
    """Allocations that are non-increasing along ``order`` (best link first).

    One candidate per partition of ``B`` into at most ``M`` parts; the output
    is sorted lexicographically.
    """
    if B < 0 or M < 1:
        raise ValueError("need B >= 0 and M >= 1")
    order = list(range(M)) if order is None else [int(j) for j in order]
    if sorted(order) != list(range(M)):
        raise ValueError(f"order {order} is not a permutation of 0..{M - 1}")
    out = []
    for p in _partitions(B, M, B):
        v = [0] * M
        for rank, j in enumerate(order):
            v[j] = p[rank]
        out.append(tuple(v))
    return sorted(out)


def count_full(B: int, M: int) -> int:
    return math.comb(B + M - 1, M - 1)


# ---------------------------------------------------------------------------
# ranking and allocations


@dataclass
class GainRanking:
    gains: np.ndarray  # (K, M) tr(T_{k,i} Psi_i)/N_i
    order: np.ndarray  # (K, M) per-user BS indices, strongest first


def rank_links(s: Scenario, fp: FixedPointSolution) -> GainRanking:
    g = fp.e.copy()  # e_{k,i} is exactly tr(T_{k,i} Psi_i)/N_i
    # stable sort on -g keeps the lower BS index first on ties
    order = np.argsort(-g, axis=1, kind="stable")
    return GainRanking(g, order)


@dataclass
class BitAllocation:
    bits: np.ndarray  # (K, M) int
    budget: int
    restricted: bool = False
    ranking: np.ndarray | None = None

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=int)
        if np.any(self.bits < 0):
            raise ValueError("negative bit count")
        if np.any(self.bits.sum(axis=1) != self.budget):
            raise ValueError("every user must spend exactly the budget")
        if self.restricted and self.ranking is not None and not all(self.follows_ranking()):
            raise ValueError("restricted allocation violates the ranking order")

    def follows_ranking(self, ranking: np.ndarray | None = None) -> list[bool]:
        r = self.ranking if ranking is None else ranking
        if r is None:
            raise ValueError("no ranking attached")
        return [bool(np.all(np.diff(row[o]) <= 0)) for row, o in zip(self.bits, r)]

    def tau2(self, N: Sequence[int]) -> np.ndarray:
        return tau2_matrix(self.bits, N)


def uniform_allocation(B: int, M: int, order: Sequence[int] | None = None) -> tuple[int, ...]:
    """Even split; leftover bits go to the top-ranked links."""
    order = list(range(M)) if order is None else list(order)
    q, r = divmod(B, M)
    v = [q] * M
    for j in order[:r]:
        v[j] += 1
    return tuple(v)


def users_symmetric(s: Scenario) -> bool:
    return all(np.array_equal(c, np.broadcast_to(c[0], c.shape)) for c in s.corr)


# ---------------------------------------------------------------------------
# search


@dataclass
class AllocationResult:
    allocation: BitAllocation
    sum_rate_nats: float
    alpha: float
    space: str
    evaluated: int
    space_size: int
    exhaustive: bool
    ranking: GainRanking
    ranking_alpha: float
    scores: list[tuple[tuple[int, ...], float]] = field(default_factory=list, repr=False)


def _alpha_for(s: Scenario, tol: float) -> float:
    cf = closed_form_alpha(s)
    if cf is not None:
        return cf.alpha_opt
    return golden_section_alpha(s, tol=tol).alpha_opt


def evaluate_allocation(s: Scenario, bits: np.ndarray, *, alpha_tol: float = ALPHA_TOL) -> tuple[float, float]:
    """Deterministic sum-rate (nats) and the alpha used, for one allocation."""
    sc = s.with_tau2(tau2_matrix(bits, s.N))
    a = _alpha_for(sc, alpha_tol)
    return det_sum_rate(sc, a), a


def _argmax(cands, evaluate, workers):
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            scored = list(ex.map(evaluate, cands))
    else:
        scored = [evaluate(c) for c in cands]
    best = 0
    for j, (r, _) in enumerate(scored):
        if r > scored[best][0]:  # strict: earliest (lexicographically smallest) wins ties
            best = j
    return best, scored


def search_allocation(s: Scenario, B: int, space: str = "restricted", *, alpha_tol: float = ALPHA_TOL,
                      ranking_alpha: float | None = None, workers: int = 1,
                      max_joint: int = MAX_JOINT) -> AllocationResult:
    """Maximize the deterministic sum-rate over per-user bit splits.

    User-symmetric scenarios search one common per-user vector.  Otherwise the
    joint product space is searched exhaustively when it has at most
    ``max_joint`` points, else by cyclic per-user coordinate ascent from the
    uniform split (reported with ``exhaustive=False``).
    """
    if space not in SPACES:
        raise ValueError(f"space must be one of {SPACES}")
    if B < 0:
        raise ValueError("budget must be nonnegative")
    if min(s.N) < 2:
        raise ValueError("every BS needs N_i >= 2 for bit allocation")
    M, K = s.M, s.K

    if ranking_alpha is None:
        even = np.array([uniform_allocation(B, M)] * K)
        ranking_alpha = _alpha_for(s.with_tau2(tau2_matrix(even, s.N)), alpha_tol)
    ranking = rank_links(s, solve_fixed_point(s, ranking_alpha))
    restricted = space == "restricted"

    def per_user(k):
        return enumerate_restricted(B, M, ranking.order[k]) if restricted else enumerate_full(B, M)

    def score(bits):
        return evaluate_allocation(s, np.asarray(bits), alpha_tol=alpha_tol)

    symmetric = users_symmetric(s)
    if symmetric:
        cands = per_user(0)
        best, scored = _argmax(cands, lambda v: score([v] * K), workers)
        bits = np.array([cands[best]] * K)
        evaluated, size, exhaustive = len(cands), len(cands), True
        table = [(c, r) for c, (r, _) in zip(cands, scored)]
        rate, alpha = scored[best]
    else:
        spaces = [per_user(k) for k in range(K)]
        size = math.prod(len(x) for x in spaces)
        if size <= max_joint:
            cands = list(itertools.product(*spaces))
            best, scored = _argmax(cands, score, workers)
            bits = np.array(cands[best])
            evaluated, exhaustive = size, True
            table = [(tuple(np.ravel(c)), r) for c, (r, _) in zip(cands, scored)]
            rate, alpha = scored[best]
        else:
            log.info("joint space has %d points, using coordinate ascent", size)
            bits, rate, alpha, evaluated = _coordinate_ascent(spaces, ranking, B, score)
            exhaustive, table = False, []

    alloc = BitAllocation(bits, B, restricted, ranking.order.copy())
    return AllocationResult(alloc, float(rate), float(alpha), space, evaluated, size, exhaustive,
                            ranking, float(ranking_alpha), table)


def _coordinate_ascent(spaces, ranking, B, score, max_rounds: int = 20):
    K = len(spaces)
    cur = [uniform_allocation(B, len(spaces[0][0]), ranking.order[k]) for k in range(K)]
    rate, alpha = score(cur)
    evaluated = 1
    for _ in range(max_rounds):
        improved = False
        for k in range(K):
            for v in spaces[k]:
                if v == cur[k]:
                    continue
                trial = cur[:k] + [v] + cur[k + 1:]
                r, a = score(trial)
                evaluated += 1
                if r > rate:
                    cur, rate, alpha, improved = trial, r, a, True
        if not improved:
            break
    return np.array(cur), rate, alpha, evaluated
