"""Adversary toolbox: de-shuffling, Bayesian posteriors and the non-likelihood attacks."""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import binomtest

from .hardness_oracles import candidate_space, tuple_feasibility
from .linalg_core import BitVector, Permutation, as_square_matrix
from .sampling import RngStream, fisher_yates_batch

__all__ = [
    "DeshuffleResult",
    "AttackOutcome",
    "GaussianNoise",
    "HistogramNoise",
    "MCDensityResult",
    "deshuffle_attack",
    "deshuffle_table",
    "scalar_posterior",
    "gaussian_map_attack",
    "hungarian_attack",
    "block_threshold_attack",
    "bits_from_permutation",
    "mc_density_estimate",
    "ENUMERATION_CAP",
    "PRUNED_CAP",
]

ENUMERATION_CAP = 10
PRUNED_CAP = 20
DESHUFFLE_TOL = 1e-6
TIE_TOL = 1e-12


@dataclass
class DeshuffleResult:
    """Assignments passing the integrality test; ``assignment[t]`` indexes the shuffled noise."""

    passing_assignments: List[Tuple[tuple, tuple]]
    unique: bool
    correct_recovered: Optional[bool] = None


@dataclass
class AttackOutcome:
    guess: Union[Permutation, BitVector]
    success: bool
    score: float
    extra: dict = field(default_factory=dict)


def _s_hat(f: np.ndarray, eta: np.ndarray, alpha_star: float) -> np.ndarray:
    return (f - eta) / alpha_star


def _valid_counts(s: np.ndarray, n: int, tol: float) -> np.ndarray:
    r = np.rint(s)
    return (np.abs(s - r) <= tol) & (r >= 0) & (r <= n)


def deshuffle_table(f: Sequence[float], shuffled_eta: Sequence[float], alpha_star: float, n: int, tol=DESHUFFLE_TOL):
    """Every assignment with its implied counts and whether they pass the integrality test.

    Each row is ``(assignment, s_hat, passes)`` where ``assignment[t]`` is the
    index of the shuffled noise value assigned to client ``t``.
    """
    f = np.asarray(f, dtype=float)
    eta = np.asarray(shuffled_eta, dtype=float)
    k = f.shape[0]
    if eta.shape[0] != k:
        raise ValueError("f and shuffled_eta must have the same length")
    if k > ENUMERATION_CAP:
        raise ValueError(f"k = {k} exceeds the enumeration cap {ENUMERATION_CAP}; use method='pruned'")
    rows = []
    for assignment in itertools.permutations(range(k)):
        s = _s_hat(f, eta[list(assignment)], alpha_star)
        rows.append((assignment, tuple(s.tolist()), bool(np.all(_valid_counts(s, n, tol)))))
    return rows


def _exact_cover(candidates: List[List[int]], k: int) -> List[tuple]:
    found: List[tuple] = []
    used = [False] * k
    current = [0] * k
    order = sorted(range(k), key=lambda t: len(candidates[t]))

    def rec(depth: int) -> None:
        if depth == k:
            found.append(tuple(current))
            return
        t = order[depth]
        for i in candidates[t]:
            if not used[i]:
                used[i] = True
                current[t] = i
                rec(depth + 1)
                used[i] = False

    rec(0)
    return found


def deshuffle_attack(
    f: Sequence[float],
    shuffled_eta: Sequence[float],
    alpha_star: float,
    n: int,
    tol: float = DESHUFFLE_TOL,
    method: str = "enumerate",
    truth: Optional[Sequence[int]] = None,
) -> DeshuffleResult:
    """Match shuffled noise back to clients using integrality of the bit counts.

    ``method="enumerate"`` tries all ``k!`` assignments (``k <= 10``).
    ``method="pruned"`` first keeps, per client, only the noise values that
    give a valid count and then enumerates perfect matchings (``k <= 20``).
    """
    f = np.asarray(f, dtype=float)
    eta = np.asarray(shuffled_eta, dtype=float)
    k = f.shape[0]
    if eta.shape[0] != k:
        raise ValueError("f and shuffled_eta must have the same length")
    if method == "enumerate":
        if k > ENUMERATION_CAP:
            raise ValueError(f"k = {k} exceeds the enumeration cap {ENUMERATION_CAP}; use method='pruned'")
        passing = [(a, tuple(int(round(v)) for v in s)) for a, s, ok in deshuffle_table(f, eta, alpha_star, n, tol) if ok]
    elif method == "pruned":
        if k > PRUNED_CAP:
            raise ValueError(f"k = {k} exceeds the pruned-mode cap {PRUNED_CAP}")
        grid = _s_hat(f[:, None], eta[None, :], alpha_star)
        ok = _valid_counts(grid, n, tol)
        candidates = [list(np.flatnonzero(ok[t])) for t in range(k)]
        passing = []
        for a in _exact_cover(candidates, k):
            s = grid[np.arange(k), list(a)]
            passing.append((a, tuple(int(round(v)) for v in s)))
        passing.sort()
    else:
        raise ValueError(f"unknown method {method!r}")
    # swapping two clients with bit-identical noise gives the same counts, so
    # uniqueness is judged on the recovered count vectors
    unique = len({s for _, s in passing}) == 1
    correct = None
    if truth is not None:
        correct = unique and passing[0][1] == tuple(int(v) for v in truth)
    return DeshuffleResult(passing, unique, correct)


@dataclass(frozen=True)
class GaussianNoise:
    mean: float
    sigma: float

    def density(self, x: np.ndarray) -> np.ndarray:
        z = (np.asarray(x, dtype=float) - self.mean) / self.sigma
        return np.exp(-0.5 * z * z) / (self.sigma * np.sqrt(2 * np.pi))


@dataclass(frozen=True)
class HistogramNoise:
    """Piecewise-constant density estimated from noise samples."""

    edges: np.ndarray
    heights: np.ndarray

    @classmethod
    def from_samples(cls, samples: Sequence[float], bins: int = 200) -> "HistogramNoise":
        heights, edges = np.histogram(np.asarray(samples, dtype=float), bins=bins, density=True)
        return cls(edges, heights)

    def density(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.edges, x, side="right") - 1
        # the right edge belongs to the last bin
        idx = np.where(x == self.edges[-1], len(self.heights) - 1, idx)
        inside = (idx >= 0) & (idx < len(self.heights))
        out = np.zeros_like(x)
        out[inside] = self.heights[idx[inside]]
        return out


def scalar_posterior(f_t: float, alpha_star: float, n: int, noise_model, prior: Optional[Sequence[float]] = None) -> np.ndarray:
    """Posterior over ``s in {0..n}``, proportional to ``mu(f_t - alpha* s) * prior(s)``."""
    s = np.arange(n + 1)
    pi = np.full(n + 1, 1.0 / (n + 1)) if prior is None else np.asarray(prior, dtype=float)
    if pi.shape != (n + 1,):
        raise ValueError("prior must have n + 1 entries")
    w = noise_model.density(f_t - alpha_star * s) * pi
    z = w.sum()
    if not z > 0 or not np.isfinite(z):
        warnings.warn("posterior normaliser vanished; returning the uniform posterior", RuntimeWarning)
        return np.full(n + 1, 1.0 / (n + 1))
    return w / z


def bits_from_permutation(guess: Permutation) -> BitVector:
    """Read bit ``j`` as whether the guess sends ``2j-1`` to ``2j``."""
    m = guess.size
    return BitVector(tuple(int(guess.map[2 * j] == 2 * j + 1) for j in range(m // 2)))


def gaussian_map_attack(
    D, alpha_star: float, n: int, K: int, search: str = "full", truth: Optional[Permutation] = None
) -> AttackOutcome:
    """Gaussian-surrogate MAP: the candidate minimising ``||D - alpha* M' - (1-alpha*) J/(2n)||_F``.

    With a scalar covariance the decoy count ``K`` only scales the likelihood
    and does not move the argmin; it is accepted for interface symmetry.
    ``search`` is ``"full"`` (all of ``S_{2n}``, ``2n <= 8``) or ``"block"``
    (the ``2^n`` block-diagonal candidates, ``n <= 20``). The score is the
    distance gap between the best and second-best candidate.
    """
    D = as_square_matrix(D)
    m = D.shape[0]
    if m != 2 * n:
        raise ValueError("D must be 2n x 2n")
    if K < 1:
        raise ValueError("K must be positive")
    cands = candidate_space(m, search)
    X = D - (1.0 - alpha_star) / m
    # ||X - a M'||^2 = ||X||^2 - 2a <X, M'> + a^2 m, and <X, M'> = sum_a X[a, sigma(a)]
    inner = X[np.arange(m), cands].sum(axis=1)
    dist2 = np.sum(X * X) - 2.0 * alpha_star * inner + alpha_star**2 * m
    dist = np.sqrt(np.maximum(dist2, 0.0))
    order = np.argsort(dist, kind="stable")
    best = order[0]
    margin = float(dist[order[1]] - dist[best]) if len(order) > 1 else float("inf")
    if margin <= TIE_TOL * max(1.0, float(dist[best])):
        margin = 0.0
    guess = Permutation(tuple(int(v) for v in cands[best]))
    success = truth is not None and guess == truth
    return AttackOutcome(guess, bool(success), margin, {"distance": float(dist[best])})


def hungarian_attack(D, alpha_star: float, truth: Optional[Permutation] = None) -> AttackOutcome:
    """Frobenius-nearest permutation to ``D / alpha*`` via a maximum-weight assignment on ``D``."""
    D = as_square_matrix(D)
    rows, cols = linear_sum_assignment(D, maximize=True)
    order = np.argsort(rows)
    guess = Permutation(tuple(int(c) for c in cols[order]))
    score = float(D[rows, cols].sum())
    return AttackOutcome(guess, bool(truth is not None and guess == truth), score)


def block_threshold_attack(D, alpha_star: float, truth: Optional[Sequence[int]] = None) -> AttackOutcome:
    """Guess ``b_j = 1`` iff ``D[2j-1, 2j] >= alpha*/2 + (1 - alpha*)/(2n)``."""
    D = as_square_matrix(D)
    m = D.shape[0]
    if m % 2:
        raise ValueError("D must have even size")
    threshold = alpha_star / 2 + (1.0 - alpha_star) / m
    entries = D[np.arange(0, m, 2), np.arange(1, m, 2)]
    guess = BitVector(tuple(int(v >= threshold) for v in entries))
    if truth is None:
        return AttackOutcome(guess, False, float("nan"))
    truth_bits = tuple(int(v) for v in truth)
    accuracy = float(np.mean(np.asarray(guess.bits) == np.asarray(truth_bits)))
    return AttackOutcome(guess, guess.bits == truth_bits, accuracy)


@dataclass
class MCDensityResult:
    hit_count: int
    samples: int
    hit_rate: float
    ci_low: float
    ci_high: float
    feasible_examples: list


def _tuples(m: int, K: int, N_samples: int, rng: Optional[RngStream], exhaustive: bool):
    if exhaustive:
        perms = [Permutation(p) for p in itertools.permutations(range(m))]
        yield from itertools.product(perms, repeat=K)
        return
    if rng is None:
        raise ValueError("random sampling needs an RngStream")
    batch = fisher_yates_batch(m, N_samples * K, rng).reshape(N_samples, K, m)
    for row in batch:
        yield tuple(Permutation(tuple(int(v) for v in p)) for p in row)


def mc_density_estimate(
    R_target,
    K: int,
    alpha_star: float,
    N_samples: int,
    rng: Optional[RngStream] = None,
    *,
    exhaustive: bool = False,
    confidence: float = 0.95,
    max_examples: int = 10,
    tol: float = 1e-9,
) -> MCDensityResult:
    """Naive Monte Carlo hit rate of uniformly random K-tuples of permutations.

    A tuple is a hit when ``sum_i alpha_i P_i = (1 - alpha*) R_target`` has a
    strictly positive solution. ``exhaustive=True`` walks every tuple in
    ``S_{2n}^K`` once instead of sampling (``N_samples`` is then ignored).
    The interval is the Wilson score interval.
    """
    R = as_square_matrix(R_target)
    m = R.shape[0]
    if np.max(np.abs(R.sum(axis=0) - 1)) > 1e-9 or np.max(np.abs(R.sum(axis=1) - 1)) > 1e-9:
        raise ValueError("R_target must have unit row and column sums")
    hits = 0
    total = 0
    examples = []
    for tup in _tuples(m, K, N_samples, rng, exhaustive):
        total += 1
        res = tuple_feasibility(tup, R, alpha_star, tol)
        if res.feasible:
            hits += 1
            if len(examples) < max_examples:
                examples.append((tup, None if res.alpha is None else tuple(res.alpha.tolist())))
    if total == 0:
        return MCDensityResult(0, 0, 0.0, 0.0, 1.0, [])
    ci = binomtest(hits, total).proportion_ci(confidence_level=confidence, method="wilson")
    return MCDensityResult(hits, total, hits / total, float(ci.low), float(ci.high), examples)
