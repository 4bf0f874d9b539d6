"""The aggregate-only simulator and empirical indistinguishability harnesses.

The simulator takes nothing but the aggregate ``S``: it draws fresh noise
with the same process the clients use and shifts it by ``alpha* S``. Its
noise path is written independently of the protocol module (vectorised
batch shuffles instead of per-client masking), so agreement between the
two is a real cross-check rather than a tautology.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np
from scipy.stats import ks_2samp

from .protocol import ProtocolParams, run_protocol
from .sampling import COEFFICIENT_MODES, RngStream, fisher_yates_batch

__all__ = [
    "ViewSample",
    "KS_THRESHOLD",
    "SIMULATOR_STREAM_BASE",
    "sample_eta",
    "simulate_server_view",
    "simulate_server_views",
    "real_server_views",
    "indistinguishability_test",
    "simulator_vs_real",
    "concentration_check",
    "hoeffding_bound",
]

KS_THRESHOLD = 1e-3
# simulator streams live far above any client stream id
SIMULATOR_STREAM_BASE = 1 << 32
_CHUNK_PERMS = 1 << 18


@dataclass(frozen=True)
class ViewSample:
    F: float
    H: float


def _coefficients(count: int, K: int, total: float, rng: RngStream, mode: str) -> np.ndarray:
    if mode == "uniform":
        return np.full((count, K), total / K)
    if mode != "dirichlet":
        raise ValueError(f"unknown coefficient mode {mode!r}; expected one of {COEFFICIENT_MODES}")
    e = rng.generator.standard_exponential((count, K))
    return e / e.sum(axis=1, keepdims=True) * total


def sample_eta(n: int, K: int, alpha_star: float, count: int, rng: RngStream, mode: str = "dirichlet") -> np.ndarray:
    """``count`` independent client noise values ``sum_i alpha_i w^T P_i y``.

    ``w^T P y`` counts the odd positions (1-based) that the permutation sends
    to even positions, so it is read straight off the index arrays.
    """
    if n < 1 or K < 1 or count < 0:
        raise ValueError("need n >= 1, K >= 1 and count >= 0")
    if not 0.0 < alpha_star < 1.0:
        raise ValueError("alpha_star must lie in (0, 1)")
    m = 2 * n
    perms = fisher_yates_batch(m, count * K, rng).reshape(count, K, m)
    x = (perms[:, :, 0::2] % 2 == 1).sum(axis=2)
    return (_coefficients(count, K, 1.0 - alpha_star, rng, mode) * x).sum(axis=1)


def simulate_server_views(
    S: int, k: int, n: int, K: int, alpha_star: float, count: int, rng: RngStream, coefficients: str = "dirichlet"
) -> np.ndarray:
    """``count`` simulated ``(F, H)`` rows as a ``(count, 2)`` array."""
    if k < 1:
        raise ValueError("k must be at least 1")
    if not 0 <= S <= k * n:
        raise ValueError(f"S = {S} outside [0, {k * n}]")
    H = sample_eta(n, K, alpha_star, count * k, rng, coefficients).reshape(count, k).sum(axis=1)
    return np.column_stack([alpha_star * S + H, H])


def simulate_server_view(
    S: int, k: int, n: int, K: int, alpha_star: float, rng: RngStream, coefficients: str = "dirichlet"
) -> ViewSample:
    """One simulated server view ``(alpha* S + H, H)`` built from ``S`` alone."""
    F, H = simulate_server_views(S, k, n, K, alpha_star, 1, rng, coefficients)[0]
    return ViewSample(float(F), float(H))


def real_server_views(inputs: Sequence, params: ProtocolParams, trials: int, seed: int) -> np.ndarray:
    """``(F, H)`` from ``trials`` independent two-layer runs, one stream path per trial."""
    if not params.variant.two_layer:
        raise ValueError("real views are collected from a two-layer variant")
    out = np.empty((trials, 2))
    for i in range(trials):
        tr = run_protocol(inputs, params, seed, trial=i)
        out[i] = (tr.server_view.F, tr.server_view.H)
    return out


def _total(inputs: Sequence) -> int:
    return int(sum(sum(int(v) for v in b) for b in inputs))


def indistinguishability_test(
    inputs_A: Sequence, inputs_B: Sequence, params: ProtocolParams, trials: int, seed: int = 0
) -> Dict[str, float]:
    """Two-sample KS on ``F`` and ``H`` between two inputs with the same aggregate.

    The two configurations use disjoint seeds (``seed`` and ``seed + 1``) so
    their samples are independent.
    """
    if _total(inputs_A) != _total(inputs_B):
        raise ValueError("inputs must have the same aggregate bit count")
    A = real_server_views(inputs_A, params, trials, seed)
    B = real_server_views(inputs_B, params, trials, seed + 1)
    ks_F = ks_2samp(A[:, 0], B[:, 0])
    ks_H = ks_2samp(A[:, 1], B[:, 1])
    return {
        "ks_F": float(ks_F.statistic),
        "p_F": float(ks_F.pvalue),
        "ks_H": float(ks_H.statistic),
        "p_H": float(ks_H.pvalue),
        "max_abs_F_minus_H_minus_aS": float(
            max(np.max(np.abs(A[:, 0] - A[:, 1] - params.alpha_star * _total(inputs_A))),
                np.max(np.abs(B[:, 0] - B[:, 1] - params.alpha_star * _total(inputs_B))))
        ),
    }


def simulator_vs_real(inputs: Sequence, params: ProtocolParams, trials: int, seed: int = 0) -> Dict[str, float]:
    """KS between the simulator's ``H`` and the real protocol's ``H`` for the same ``S``."""
    S = _total(inputs)
    real = real_server_views(inputs, params, trials, seed)
    sim = simulate_server_views(S, params.k, params.n, params.K, params.alpha_star, trials,
                                RngStream(seed, SIMULATOR_STREAM_BASE), params.coefficients)
    ks = ks_2samp(sim[:, 1], real[:, 1])
    ks_F = ks_2samp(sim[:, 0], real[:, 0])
    return {"ks_H": float(ks.statistic), "p_H": float(ks.pvalue), "ks_F": float(ks_F.statistic), "p_F": float(ks_F.pvalue)}


def hoeffding_bound(K: int, r: float) -> float:
    return float(min(1.0, 2.0 * np.exp(-2.0 * K * r * r)))


def concentration_check(n: int, K: int, trials: int, r_grid: Sequence[float], seed: int = 0) -> List[dict]:
    """Empirical tail of a decoy-matrix entry against ``2 exp(-2 K r^2)``.

    Each trial draws one uniform-weights decoy matrix ``R`` and records the
    entry ``R[0, 0]``; entries are exchangeable so one fixed entry suffices
    and keeps the draws independent. The standard error is
    ``sqrt(p (1 - p) / trials)``.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    rng = RngStream(seed, SIMULATOR_STREAM_BASE + 1, (n, K))
    m = 2 * n
    entry = np.empty(trials)
    chunk = max(1, _CHUNK_PERMS // K)
    for lo in range(0, trials, chunk):
        c = min(chunk, trials - lo)
        perms = fisher_yates_batch(m, c * K, rng).reshape(c, K, m)
        entry[lo:lo + c] = (perms[:, :, 0] == 0).mean(axis=1)
    dev = np.abs(entry - 1.0 / m)
    rows = []
    for r in r_grid:
        p = float(np.mean(dev > r))
        se = float(np.sqrt(p * (1 - p) / trials))
        bound = hoeffding_bound(K, r)
        rows.append({"n": n, "K": K, "r": float(r), "empirical_tail": p, "std_error": se,
                     "hoeffding_bound": bound, "ok": p <= bound + 3 * se})
    return rows
