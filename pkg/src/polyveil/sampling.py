"""Seeded random streams, Fisher-Yates permutations and simplex coefficients."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .linalg_core import Permutation

__all__ = [
    "RngStream",
    "CoefficientVector",
    "COEFFICIENT_MODES",
    "fisher_yates",
    "fisher_yates_batch",
    "dirichlet_simplex",
]

COEFFICIENT_MODES = ("dirichlet", "uniform")
_FLOOR = 1e-12
_MAX_REDRAWS = 1000


class RngStream:
    """A reproducible random stream keyed by ``(seed, stream_id, *path)``.

    Each stream wraps its own PCG64 generator seeded from a ``SeedSequence``
    built from the key (path length included), so clients can derive independent streams from one
    master seed without coordinating. A stream should be owned by one actor.
    """

    def __init__(self, seed: int, stream_id: int = 0, path: Sequence[int] = ()):
        key = (int(seed), int(stream_id), *(int(p) for p in path))
        if any(k < 0 for k in key):
            raise ValueError(f"seed, stream id and path must be non-negative, got {key}")
        self.seed = key[0]
        self.stream_id = key[1]
        self.path = key[2:]
        # the path length is part of the entropy: SeedSequence zero-pads, so
        # (seed, id) and (seed, id, 0) would otherwise collide
        entropy = [key[0], key[1], len(self.path), *self.path]
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def child(self, *path: int) -> "RngStream":
        """A new stream whose key extends this one's path."""
        return RngStream(self.seed, self.stream_id, (*self.path, *path))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, path={self.path})"


@dataclass(frozen=True)
class CoefficientVector:
    alphas: tuple
    total: float

    def __post_init__(self) -> None:
        alphas = tuple(float(a) for a in self.alphas)
        if not alphas:
            raise ValueError("need at least one coefficient")
        if any(not a > 0.0 for a in alphas):
            raise ValueError("coefficients must be strictly positive")
        if abs(math.fsum(alphas) - self.total) > 1e-12:
            raise ValueError(f"coefficients sum to {math.fsum(alphas)!r}, expected {self.total!r}")
        object.__setattr__(self, "alphas", alphas)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.alphas)

    def __len__(self) -> int:
        return len(self.alphas)


def fisher_yates(m: int, rng: RngStream) -> Permutation:
    """Uniform random permutation of ``m`` points via the Fisher-Yates shuffle.

    Position ``i`` (from the end) swaps with a uniform index in ``[0, i]``.
    The swap indices are drawn in one vectorised call, the swaps themselves
    run in a plain O(m) loop.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    arr = list(range(m))
    if m > 1:
        highs = np.arange(m, 1, -1)
        picks = rng.generator.integers(0, highs)
        for i, j in zip(range(m - 1, 0, -1), picks.tolist()):
            arr[i], arr[j] = arr[j], arr[i]
    return Permutation(tuple(arr))


def fisher_yates_batch(m: int, count: int, rng: RngStream) -> np.ndarray:
    """``count`` independent Fisher-Yates shuffles, returned as a ``(count, m)`` index array."""
    if m < 1:
        raise ValueError("m must be at least 1")
    if count < 0:
        raise ValueError("count must be non-negative")
    out = np.tile(np.arange(m, dtype=np.intp), (count, 1))
    rows = np.arange(count)
    for i in range(m - 1, 0, -1):
        j = rng.generator.integers(0, i + 1, size=count)
        tmp = out[rows, i].copy()
        out[rows, i] = out[rows, j]
        out[rows, j] = tmp
    return out


def dirichlet_simplex(K: int, total: float, rng: RngStream, mode: str = "dirichlet") -> CoefficientVector:
    """Positive coefficients summing to ``total``.

    ``mode="dirichlet"`` draws uniformly from the open simplex by normalising
    K unit exponentials; any draw with a coefficient below ``1e-12 * total``
    is discarded and redrawn. ``mode="uniform"`` returns ``total / K`` each.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    if not 0.0 < total < 1.0:
        raise ValueError(f"total must lie in (0, 1), got {total!r}")
    if mode == "uniform":
        return CoefficientVector((total / K,) * K, total)
    if mode != "dirichlet":
        raise ValueError(f"unknown coefficient mode {mode!r}; expected one of {COEFFICIENT_MODES}")
    if K == 1:
        return CoefficientVector((total,), total)
    for _ in range(_MAX_REDRAWS):
        e = rng.generator.standard_exponential(K)
        alphas = e / e.sum() * total
        # absorb rounding into the last entry so the sum is exact to one ulp
        alphas[-1] = total - math.fsum(alphas[:-1].tolist())
        if np.min(alphas) >= _FLOOR * total:
            return CoefficientVector(tuple(alphas.tolist()), total)
    raise RuntimeError("could not draw coefficients above the positivity floor")
