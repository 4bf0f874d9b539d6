"""Exact small-scale oracles: permanents, supports, residuals and tuple feasibility.

Everything here is exhaustive and therefore capped at tiny sizes. The point
is to have ground truth to test the larger-scale machinery against.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from .linalg_core import Permutation, as_square_matrix

__all__ = [
    "SizeCapError",
    "SupportCensus",
    "TupleCensus",
    "FeasibilityResult",
    "permanent",
    "permanent_enumerate",
    "support_matrix",
    "support_set",
    "support_census",
    "residual",
    "interior_condition",
    "candidate_space",
    "feasible_candidates",
    "tuple_feasibility",
    "worked_reduction_census",
    "RYSER_MAX",
    "ENUM_MAX",
]

RYSER_MAX = 24
ENUM_MAX = 8
BLOCK_MAX = 20
SUPPORT_TOL = 1e-10
FEAS_TOL = 1e-9

# three primes below 2**31: residue products fit in int64 and the moduli
# product (~2**93) exceeds twice the largest permanent of a 24x24 matrix with
# small integer entries we accept.
_PRIMES = (2147483647, 2147483629, 2147483587)
_CHUNK = 1 << 15


class SizeCapError(ValueError):
    """The requested exhaustive computation exceeds its size cap."""


@dataclass(frozen=True)
class SupportCensus:
    support_matrix: np.ndarray
    support_size: int
    permanent_value: int


@dataclass
class TupleCensus:
    candidate: Permutation
    total_tuples: int
    consistent_tuples: list = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.consistent_tuples)


@dataclass(frozen=True)
class FeasibilityResult:
    feasible: bool
    alpha: Optional[np.ndarray]
    dimension: int
    residual_norm: float

    @property
    def positive_dimensional(self) -> bool:
        return self.dimension > 0


def _subset_bits(start: int, stop: int, m: int) -> np.ndarray:
    codes = np.arange(start, stop, dtype=np.int64)
    return ((codes[:, None] >> np.arange(m, dtype=np.int64)) & 1).astype(np.int64)


def _ryser_float(A: np.ndarray) -> float:
    m = A.shape[0]
    total = 0.0
    for start in range(0, 1 << m, _CHUNK):
        bits = _subset_bits(start, min(start + _CHUNK, 1 << m), m)
        rowsums = bits.astype(float) @ A.T
        sign = np.where(bits.sum(axis=1) % 2 == 0, 1.0, -1.0)
        total += float(np.sum(sign * np.prod(rowsums, axis=1)))
    return total if m % 2 == 0 else -total


def _ryser_mod(A: np.ndarray, p: int) -> int:
    m = A.shape[0]
    At = (A % p).T
    total = 0
    for start in range(0, 1 << m, _CHUNK):
        bits = _subset_bits(start, min(start + _CHUNK, 1 << m), m)
        rowsums = (bits @ At) % p
        prod = np.ones(bits.shape[0], dtype=np.int64)
        for col in range(m):
            prod = (prod * rowsums[:, col]) % p
        odd = (bits.sum(axis=1) % 2).astype(bool)
        total = (total + int(prod[~odd].sum() % p) - int(prod[odd].sum() % p)) % p
    return total if m % 2 == 0 else (-total) % p


def _crt(residues: Sequence[int], moduli: Sequence[int]) -> int:
    M = math.prod(moduli)
    x = 0
    for r, p in zip(residues, moduli):
        q = M // p
        x += r * q * pow(q, -1, p)
    x %= M
    return x - M if x > M // 2 else x


def permanent(A) -> float:
    """Permanent via Ryser's inclusion-exclusion formula.

    Integer matrices are evaluated exactly (multi-modular arithmetic with a
    CRT reconstruction) and the result is returned as a Python ``int``.
    Real matrices go through float64 and return a ``float``.
    """
    A = as_square_matrix(A)
    m = A.shape[0]
    if m > RYSER_MAX:
        raise SizeCapError(f"permanent is capped at m <= {RYSER_MAX}, got {m}")
    integral = np.all(A == np.rint(A)) and np.max(np.abs(A)) < 2**20
    if integral:
        Ai = np.rint(A).astype(np.int64)
        bound = math.prod(int(s) for s in np.abs(Ai).sum(axis=1)) if m else 1
        if 2 * bound >= math.prod(_PRIMES):
            return _ryser_float(A)
        return _crt([_ryser_mod(Ai, p) for p in _PRIMES], _PRIMES)
    return _ryser_float(A)


def permanent_enumerate(A):
    """Permanent by summing over all ``m!`` permutations (m <= 8)."""
    A = as_square_matrix(A)
    m = A.shape[0]
    if m > ENUM_MAX:
        raise SizeCapError(f"enumeration is capped at m <= {ENUM_MAX}, got {m}")
    integral = bool(np.all(A == np.rint(A)))
    rows = np.arange(m)
    total = 0 if integral else 0.0
    src = np.rint(A).astype(np.int64) if integral else A
    for sigma in itertools.permutations(range(m)):
        prod = src[rows, list(sigma)].prod()
        total += int(prod) if integral else float(prod)
    return total


def support_matrix(R_prime, tol: float = SUPPORT_TOL) -> np.ndarray:
    """0/1 matrix marking entries strictly above ``tol``."""
    R = as_square_matrix(R_prime)
    return (R > tol).astype(float)


def _all_perms(m: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(m))), dtype=np.intp)


def support_set(R_prime, tol: float = SUPPORT_TOL) -> List[Permutation]:
    """Every permutation whose ones all land inside the support of ``R_prime``."""
    A = support_matrix(R_prime, tol)
    m = A.shape[0]
    if m > ENUM_MAX:
        raise SizeCapError(f"support enumeration is capped at 2n <= {ENUM_MAX}, got {m}")
    perms = _all_perms(m)
    ok = np.all(A[np.arange(m), perms] == 1.0, axis=1)
    return [Permutation(tuple(int(v) for v in row)) for row in perms[ok]]


def support_census(R_prime, tol: float = SUPPORT_TOL) -> SupportCensus:
    A = support_matrix(R_prime, tol)
    return SupportCensus(A, len(support_set(R_prime, tol)), int(permanent(A)))


def residual(D, M_candidate: Permutation, alpha_star: float) -> np.ndarray:
    """``R' = (D - alpha* M') / (1 - alpha*)``."""
    D = as_square_matrix(D)
    if M_candidate.size != D.shape[0]:
        raise ValueError("candidate size does not match D")
    if not 0.0 < alpha_star < 1.0:
        raise ValueError("alpha_star must lie in (0, 1)")
    out = D.copy()
    out[np.arange(D.shape[0]), M_candidate.as_array()] -= alpha_star
    return out / (1.0 - alpha_star)


def interior_condition(R_t, alpha_star: float) -> bool:
    """True iff every entry of ``R_t`` exceeds ``alpha* / (1 - alpha*)``."""
    R = as_square_matrix(R_t)
    return bool(np.min(R) > alpha_star / (1.0 - alpha_star))


def candidate_space(m: int, space: str = "full") -> np.ndarray:
    """Candidate permutations as an index array: all of ``S_m`` or the ``2^n`` block-diagonal ones."""
    if m % 2:
        raise ValueError("matrix size must be even")
    if space == "full":
        if m > ENUM_MAX:
            raise SizeCapError(f"full enumeration is capped at 2n <= {ENUM_MAX}, got {m}")
        return _all_perms(m)
    if space == "block":
        n = m // 2
        if n > BLOCK_MAX:
            raise SizeCapError(f"block enumeration is capped at n <= {BLOCK_MAX}, got {n}")
        codes = np.arange(1 << n, dtype=np.int64)
        # bit j of the candidate is the (n-1-j)-th binary digit of its code
        bits = ((codes[:, None] >> np.arange(n - 1, -1, -1, dtype=np.int64)) & 1).astype(np.intp)
        out = np.empty((1 << n, m), dtype=np.intp)
        out[:, 0::2] = 2 * np.arange(n) + bits
        out[:, 1::2] = 2 * np.arange(n) + 1 - bits
        return out
    raise ValueError(f"unknown search space {space!r}; expected 'full' or 'block'")


def feasible_candidates(D, alpha_star: float, tol: float = FEAS_TOL, space: str = "full") -> List[Permutation]:
    """Candidates ``M'`` whose residual has no entry below ``-tol``.

    ``alpha_star = 1`` is accepted as a limit case, where the test becomes
    ``D - M' >= -tol`` entrywise.
    """
    D = as_square_matrix(D)
    if not 0.0 < alpha_star <= 1.0:
        raise ValueError("alpha_star must lie in (0, 1]")
    m = D.shape[0]
    cands = candidate_space(m, space)
    scale = 1.0 - alpha_star if alpha_star < 1.0 else 1.0
    # only the entries hit by M' move, so check those and then the rest of D
    hit = (D[np.arange(m), cands] - alpha_star) / scale
    ok = np.all(hit >= -tol, axis=1)
    if np.min(D) / scale < -tol:
        ok &= _min_off_candidate(D, cands) / scale >= -tol
    return [Permutation(tuple(int(v) for v in row)) for row in cands[ok]]


def _min_off_candidate(D: np.ndarray, cands: np.ndarray) -> np.ndarray:
    """Smallest entry of ``D`` outside each candidate's support."""
    m = D.shape[0]
    out = np.empty(cands.shape[0])
    for idx, row in enumerate(cands):
        mask = np.ones((m, m), dtype=bool)
        mask[np.arange(m), row] = False
        out[idx] = np.min(D[mask])
    return out


def _tuple_system(sigmas: Sequence[Permutation], m: int, total: float, R: np.ndarray):
    K = len(sigmas)
    A = np.zeros((m * m + 1, K))
    rows = np.arange(m)
    for i, s in enumerate(sigmas):
        A[rows * m + s.as_array(), i] = 1.0
    A[-1, :] = 1.0
    rhs = np.empty(m * m + 1)
    rhs[:-1] = total * R.ravel()
    rhs[-1] = total
    return A, rhs


def tuple_feasibility(
    sigmas: Sequence[Permutation], R_target, alpha_star: float, tol: float = FEAS_TOL
) -> FeasibilityResult:
    """Can ``sum_i alpha_i P_{sigma_i} = (1 - alpha*) R_target`` hold with every ``alpha_i > tol``?

    Least squares decides whether the linear system is consistent. When the
    solution is unique it must be strictly positive; when the solution set is
    an affine subspace of positive dimension, a small LP checks whether that
    subspace meets the open positive orthant.
    """
    R = as_square_matrix(R_target)
    m = R.shape[0]
    if not sigmas:
        raise ValueError("need at least one permutation")
    if any(s.size != m for s in sigmas):
        raise ValueError("permutation sizes must match R_target")
    total = 1.0 - alpha_star
    A, rhs = _tuple_system(sigmas, m, total, R)
    sol, _, rank, _ = np.linalg.lstsq(A, rhs, rcond=None)
    res = float(np.linalg.norm(A @ sol - rhs))
    K = len(sigmas)
    dim = K - int(rank)
    if res > tol:
        return FeasibilityResult(False, None, dim, res)
    if dim == 0:
        ok = bool(np.all(sol > tol))
        return FeasibilityResult(ok, sol if ok else None, 0, res)
    # maximise the smallest coefficient t subject to A alpha = rhs
    keep = _independent_rows(A, int(rank))
    c = np.zeros(K + 1)
    c[-1] = -1.0
    A_eq = np.hstack([A[keep], np.zeros((len(keep), 1))])
    A_ub = np.hstack([-np.eye(K), np.ones((K, 1))])
    lp = linprog(
        c,
        A_ub=A_ub,
        b_ub=np.zeros(K),
        A_eq=A_eq,
        b_eq=rhs[keep],
        bounds=[(None, None)] * K + [(None, total)],
        method="highs",
    )
    if lp.status != 0 or -lp.fun <= tol:
        return FeasibilityResult(False, None, dim, res)
    return FeasibilityResult(True, None, dim, res)


def _independent_rows(A: np.ndarray, rank: int) -> List[int]:
    keep: List[int] = []
    for i in range(A.shape[0]):
        trial = keep + [i]
        if np.linalg.matrix_rank(A[trial]) == len(trial):
            keep = trial
            if len(keep) == rank:
                break
    return keep


def worked_reduction_census(
    D, alpha_star: float, K: int = 2, tol: float = FEAS_TOL
) -> Dict[Permutation, TupleCensus]:
    """For every candidate of a ``4 x 4`` matrix, test all ``24^2`` decoy pairs.

    Substituting ``alpha_2 = (1 - alpha*) - alpha_1`` leaves 16 equations in
    the single unknown ``alpha_1``; a pair is consistent when they agree on a
    value strictly inside ``(0, 1 - alpha*)``. Pairs with ``sigma_1 = sigma_2``
    leave ``alpha_1`` free and are consistent iff the residual is that
    permutation matrix; those are recorded with ``alpha_1 = None``.
    """
    D = as_square_matrix(D)
    if D.shape[0] != 4 or K != 2:
        raise SizeCapError("the worked reduction census is defined for 2n = 4 and K = 2 only")
    total = 1.0 - alpha_star
    perms = _all_perms(4)
    mats = np.zeros((24, 4, 4))
    for i, p in enumerate(perms):
        mats[i, np.arange(4), p] = 1.0
    out: Dict[Permutation, TupleCensus] = {}
    for cand_row in perms:
        cand = Permutation(tuple(int(v) for v in cand_row))
        target = total * residual(D, cand, alpha_star)
        census = TupleCensus(candidate=cand, total_tuples=24**2)
        for i in range(24):
            for j in range(24):
                diff = mats[i] - mats[j]
                rhs = target - mats[j] * total
                nz = diff != 0
                if not nz.any():
                    if np.max(np.abs(rhs)) <= tol:
                        census.consistent_tuples.append(((_perm(perms[i]), _perm(perms[j])), None))
                    continue
                a1_values = rhs[nz] / diff[nz]
                a1 = float(np.mean(a1_values))
                if np.max(np.abs(a1 * diff - rhs)) > tol:
                    continue
                if tol < a1 < total - tol:
                    census.consistent_tuples.append(((_perm(perms[i]), _perm(perms[j])), (a1, total - a1)))
        out[cand] = census
    return out


def _perm(row) -> Permutation:
    return Permutation(tuple(int(v) for v in row))
