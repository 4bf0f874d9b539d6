"""Permutation and bit encodings, extraction vectors and doubly stochastic checks.

Permutations are stored as 0-based index maps ``map[i] = sigma(i)`` and are
only turned into dense matrices on request. The matrix of ``sigma`` has a one
at ``[i, sigma(i)]``. User-facing constructors that take 1-based maps are
named ``from_one_based`` so the index convention is explicit at boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

__all__ = [
    "DimensionError",
    "BitVector",
    "Permutation",
    "ExtractionPair",
    "as_square_matrix",
    "encode_bit",
    "encode_bitstream",
    "standard_extraction_pair",
    "perbit_pair",
    "weighted_pair",
    "bilinear_extract",
    "is_doubly_stochastic",
]

DS_TOL = 1e-9


class DimensionError(ValueError):
    """Raised when matrix and vector shapes do not line up."""


@dataclass(frozen=True)
class BitVector:
    """A client's private bit string; ``bits`` is stored as a tuple of 0/1 ints."""

    bits: tuple

    def __post_init__(self) -> None:
        bits = tuple(int(b) for b in self.bits)
        if len(bits) < 1:
            raise ValueError("a bit vector needs at least one bit")
        for b, raw in zip(bits, self.bits):
            if b not in (0, 1) or b != raw:
                raise ValueError(f"bits must be 0 or 1, got {raw!r}")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def of(cls, bits: Iterable[int]) -> "BitVector":
        return cls(tuple(bits))

    @property
    def n(self) -> int:
        return len(self.bits)

    def count(self) -> int:
        return sum(self.bits)

    def __len__(self) -> int:
        return len(self.bits)

    def __iter__(self):
        return iter(self.bits)

    def __getitem__(self, j: int) -> int:
        return self.bits[j]


@dataclass(frozen=True)
class Permutation:
    """A bijection on ``{0, ..., m-1}`` with ``map[i] = sigma(i)``."""

    map: tuple

    def __post_init__(self) -> None:
        m = tuple(int(v) for v in self.map)
        size = len(m)
        if size < 1:
            raise ValueError("a permutation needs at least one point")
        if sorted(m) != list(range(size)):
            raise ValueError(f"not a bijection on 0..{size - 1}: {m}")
        object.__setattr__(self, "map", m)

    @classmethod
    def identity(cls, m: int) -> "Permutation":
        return cls(tuple(range(m)))

    @classmethod
    def from_one_based(cls, values: Sequence[int]) -> "Permutation":
        return cls(tuple(int(v) - 1 for v in values))

    @classmethod
    def from_matrix(cls, P: np.ndarray, tol: float = 1e-9) -> "Permutation":
        P = np.asarray(P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise DimensionError(f"expected a square matrix, got shape {P.shape}")
        rounded = np.rint(P)
        if np.max(np.abs(P - rounded)) > tol or np.any((rounded != 0) & (rounded != 1)):
            raise ValueError("matrix is not a 0/1 matrix")
        if np.any(rounded.sum(axis=0) != 1) or np.any(rounded.sum(axis=1) != 1):
            raise ValueError("matrix is not a permutation matrix")
        return cls(tuple(int(c) for c in np.argmax(rounded, axis=1)))

    @property
    def size(self) -> int:
        return len(self.map)

    def one_based(self) -> tuple:
        return tuple(v + 1 for v in self.map)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.map, dtype=np.intp)

    def matrix(self) -> np.ndarray:
        m = self.size
        out = np.zeros((m, m))
        out[np.arange(m), self.as_array()] = 1.0
        return out

    def inverse(self) -> "Permutation":
        inv = [0] * self.size
        for i, v in enumerate(self.map):
            inv[v] = i
        return Permutation(tuple(inv))

    def __call__(self, i: int) -> int:
        return self.map[i]

    def __len__(self) -> int:
        return len(self.map)


@dataclass(frozen=True)
class ExtractionPair:
    """Vectors ``(w, y)`` defining the bilinear functional ``A -> w^T A y``."""

    w: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        w = np.array(self.w, dtype=float)
        y = np.array(self.y, dtype=float)
        if w.ndim != 1 or y.ndim != 1 or w.shape != y.shape:
            raise DimensionError(f"w and y must be equal-length vectors, got {w.shape} and {y.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(y))):
            raise ValueError("extraction vectors must be finite")
        w.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "y", y)

    @property
    def dim(self) -> int:
        return int(self.w.shape[0])


MatrixLike = Union[np.ndarray, Permutation]


def as_square_matrix(A, *, min_size: int = 1) -> np.ndarray:
    """Validate and return ``A`` as a finite float64 square matrix."""
    arr = np.asarray(A, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {arr.shape}")
    if arr.shape[0] < min_size:
        raise DimensionError(f"matrix must be at least {min_size}x{min_size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix entries must be finite")
    return arr


def encode_bit(b: int) -> Permutation:
    """Return the 2-point permutation for one bit: identity for 0, swap for 1."""
    if b not in (0, 1):
        raise ValueError(f"bit must be 0 or 1, got {b!r}")
    return Permutation((1, 0)) if b else Permutation((0, 1))


def encode_bitstream(b: Union[BitVector, Sequence[int]]) -> Permutation:
    """Block-diagonal encoding: block ``j`` acts on ``{2j, 2j+1}`` as ``encode_bit(b_j)``."""
    bits = b if isinstance(b, BitVector) else BitVector.of(b)
    out = []
    for j, bit in enumerate(bits):
        lo = 2 * j
        out.extend((lo + 1, lo) if bit else (lo, lo + 1))
    return Permutation(tuple(out))


def standard_extraction_pair(n: int) -> ExtractionPair:
    """``w = (1,0,1,0,...)`` and ``y = (0,1,0,1,...)``, each of length ``2n``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    w = np.zeros(2 * n)
    y = np.zeros(2 * n)
    w[0::2] = 1.0
    y[1::2] = 1.0
    return ExtractionPair(w, y)


def perbit_pair(n: int, j: int) -> ExtractionPair:
    """Unit vectors picking out entry ``(2j-1, 2j)`` (1-based ``j``) of a ``2n x 2n`` matrix."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 1 <= j <= n:
        raise ValueError(f"bit index j must lie in 1..{n}, got {j}")
    w = np.zeros(2 * n)
    y = np.zeros(2 * n)
    w[2 * (j - 1)] = 1.0
    y[2 * (j - 1) + 1] = 1.0
    return ExtractionPair(w, y)


def weighted_pair(c: Sequence[float]) -> ExtractionPair:
    """Place weight ``c_j`` on the odd coordinate of block ``j``; ``y`` is the standard one."""
    c = np.asarray(c, dtype=float)
    if c.ndim != 1 or c.shape[0] < 1:
        raise ValueError("weights must be a non-empty vector")
    if not np.all(np.isfinite(c)):
        raise ValueError("weights must be finite")
    n = c.shape[0]
    w = np.zeros(2 * n)
    w[0::2] = c
    return ExtractionPair(w, standard_extraction_pair(n).y)


def bilinear_extract(A: MatrixLike, p: ExtractionPair) -> float:
    """Evaluate ``w^T A y``.

    For a :class:`Permutation` the O(m) identity ``(P y)_a = y[sigma(a)]`` is
    used, so integer-valued vectors give an exact integer-valued float.
    """
    if isinstance(A, Permutation):
        if A.size != p.dim:
            raise DimensionError(f"permutation of size {A.size} vs vectors of length {p.dim}")
        return float(np.dot(p.w, p.y[A.as_array()]))
    arr = as_square_matrix(A)
    if arr.shape[0] != p.dim:
        raise DimensionError(f"matrix of size {arr.shape[0]} vs vectors of length {p.dim}")
    return float(p.w @ (arr @ p.y))


def is_doubly_stochastic(A, tol: float = DS_TOL) -> bool:
    """True iff all entries are >= -tol and every row and column sums to 1 within tol."""
    arr = np.asarray(A, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] == 0:
        return False
    if not np.all(np.isfinite(arr)):
        return False
    if np.min(arr) < -tol:
        return False
    rows = arr.sum(axis=1)
    cols = arr.sum(axis=0)
    return bool(np.all(np.abs(rows - 1.0) <= tol) and np.all(np.abs(cols - 1.0) <= tol))
