"""The four protocol variants as explicit client / aggregator / shuffler / server pipelines.

Entities only ever receive the objects listed in their view classes, so the
separation between what the aggregator, the noise aggregator and the server
learn is structural rather than a convention.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .linalg_core import (
    BitVector,
    ExtractionPair,
    Permutation,
    bilinear_extract,
    encode_bitstream,
    is_doubly_stochastic,
    perbit_pair,
    standard_extraction_pair,
    weighted_pair,
)
from .sampling import COEFFICIENT_MODES, CoefficientVector, RngStream, dirichlet_simplex, fisher_yates

__all__ = [
    "Variant",
    "ProtocolParams",
    "ClientFixture",
    "ClientMessage",
    "ShuffledServerView",
    "AggregateServerView",
    "AggregatorView",
    "NoiseAggregatorView",
    "Transcript",
    "IntegrityError",
    "RecoveryError",
    "UnsupportedVariantError",
    "client_mask_full",
    "client_mask_compressed",
    "trusted_shuffle",
    "run_protocol",
    "random_inputs",
    "xi_entry",
    "xi_rowsum",
    "extract_perbit_aggregate",
    "extract_weighted_aggregate",
    "SHUFFLER_STREAM",
    "client_stream_id",
]

SHUFFLER_STREAM = 0
DS_CHECK_TOL = 1e-9


class IntegrityError(ValueError):
    """A client submission failed the doubly stochastic check."""


class RecoveryError(ArithmeticError):
    """``(F - H) / alpha*`` was not close enough to an integer to round safely."""


class UnsupportedVariantError(ValueError):
    """The requested statistic needs data that this variant never transmits."""


class Variant(str, enum.Enum):
    FULL = "full"
    COMPRESSED = "compressed"
    TWO_LAYER_FULL = "two-layer"
    TWO_LAYER_COMPRESSED = "two-layer-compressed"

    @property
    def sends_matrix(self) -> bool:
        return self in (Variant.FULL, Variant.TWO_LAYER_FULL)

    @property
    def two_layer(self) -> bool:
        return self in (Variant.TWO_LAYER_FULL, Variant.TWO_LAYER_COMPRESSED)


@dataclass(frozen=True)
class ProtocolParams:
    n: int
    k: int
    alpha_star: float
    K: int
    variant: Variant = Variant.TWO_LAYER_FULL
    coefficients: str = "dirichlet"

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if not 0.0 < self.alpha_star < 1.0:
            raise ValueError(f"alpha_star must lie in (0, 1), got {self.alpha_star!r}")
        if self.K < 2:
            raise ValueError("K must be at least 2")
        if not self.variant.two_layer and self.k < 3:
            raise ValueError(f"the {self.variant.value} variant needs k >= 3 clients for the shuffle")
        if self.coefficients not in COEFFICIENT_MODES:
            raise ValueError(f"coefficients must be one of {COEFFICIENT_MODES}")


@dataclass(frozen=True)
class ClientFixture:
    """Pre-specified decoys and coefficients for one client (golden tests)."""

    decoys: tuple
    alphas: tuple

    def __post_init__(self) -> None:
        decoys = tuple(d if isinstance(d, Permutation) else Permutation(tuple(d)) for d in self.decoys)
        alphas = tuple(float(a) for a in self.alphas)
        if len(decoys) != len(alphas) or not decoys:
            raise ValueError("a fixture needs one coefficient per decoy")
        object.__setattr__(self, "decoys", decoys)
        object.__setattr__(self, "alphas", alphas)


@dataclass
class ClientMessage:
    client_id: int
    eta: float
    D: Optional[np.ndarray] = None
    f: Optional[float] = None
    decoy_sum: Optional[np.ndarray] = None


@dataclass(frozen=True)
class ShuffledServerView:
    """Server view in the single-layer variants: linked ``f_t`` (and ``D_t``) plus shuffled noise."""

    f: tuple
    shuffled_eta: tuple
    D: Optional[tuple] = None


@dataclass(frozen=True)
class AggregateServerView:
    """Server view in the two-layer variants: exactly the two scalars ``F`` and ``H``."""

    F: float
    H: float


@dataclass(frozen=True)
class AggregatorView:
    F: float
    D: Optional[tuple] = None
    f: Optional[tuple] = None


@dataclass(frozen=True)
class NoiseAggregatorView:
    H: float
    eta: tuple
    decoy_sums: Optional[tuple] = None


@dataclass(frozen=True)
class Transcript:
    params: ProtocolParams
    server_view: object
    aggregator_view: Optional[AggregatorView]
    noise_aggregator_view: Optional[NoiseAggregatorView]
    F: float
    H: float
    recovered_S: int
    ground_truth_S: int
    ground_truth_counts: tuple = field(default=())
    rounding_margin: float = 0.0


def client_stream_id(t: int) -> int:
    """Stream id for client ``t`` (0-based); id 0 is reserved for the shuffler."""
    return t + 1


def _draw_decoys(n: int, params: ProtocolParams, rng: RngStream, fixture: Optional[ClientFixture]):
    m = 2 * n
    if fixture is not None:
        if any(p.size != m for p in fixture.decoys):
            raise ValueError(f"fixture decoys must be permutations of size {m}")
        coeffs = CoefficientVector(fixture.alphas, 1.0 - params.alpha_star)
        return fixture.decoys, coeffs
    perms = tuple(fisher_yates(m, rng) for _ in range(params.K))
    coeffs = dirichlet_simplex(params.K, 1.0 - params.alpha_star, rng, mode=params.coefficients)
    return perms, coeffs


def _eta(perms, coeffs: CoefficientVector, pair: ExtractionPair) -> float:
    return float(sum(a * bilinear_extract(P, pair) for a, P in zip(coeffs.alphas, perms)))


def _decoy_sum(perms, coeffs: CoefficientVector, m: int) -> np.ndarray:
    N = np.zeros((m, m))
    rows = np.arange(m)
    for a, P in zip(coeffs.alphas, perms):
        N[rows, P.as_array()] += a
    return N


def _as_bits(b, n: int) -> BitVector:
    bits = b if isinstance(b, BitVector) else BitVector.of(b)
    if bits.n != n:
        raise ValueError(f"expected {n} bits, got {bits.n}")
    return bits


def client_mask_full(
    b, params: ProtocolParams, rng: RngStream, fixture: Optional[ClientFixture] = None, client_id: int = 0
) -> ClientMessage:
    """Masked matrix ``D = alpha* M(b) + sum_i alpha_i P_i`` with its noise scalar and decoy sum."""
    bits = _as_bits(b, params.n)
    m = 2 * params.n
    perms, coeffs = _draw_decoys(params.n, params, rng, fixture)
    pair = standard_extraction_pair(params.n)
    N = _decoy_sum(perms, coeffs, m)
    D = N.copy()
    D[np.arange(m), encode_bitstream(bits).as_array()] += params.alpha_star
    eta = _eta(perms, coeffs, pair)
    return ClientMessage(client_id=client_id, eta=eta, D=D, f=bilinear_extract(D, pair), decoy_sum=N)


def client_mask_compressed(
    b, params: ProtocolParams, rng: RngStream, fixture: Optional[ClientFixture] = None, client_id: int = 0
) -> ClientMessage:
    """Scalar form: ``f = alpha* s + eta`` without ever building the matrix."""
    bits = _as_bits(b, params.n)
    perms, coeffs = _draw_decoys(params.n, params, rng, fixture)
    eta = _eta(perms, coeffs, standard_extraction_pair(params.n))
    return ClientMessage(client_id=client_id, eta=eta, f=params.alpha_star * bits.count() + eta)


def trusted_shuffle(values: Sequence[float], rng: RngStream, pi: Optional[Permutation] = None) -> list:
    """Return ``[values[pi(0)], values[pi(1)], ...]`` for a uniform ``pi`` that is not exposed."""
    values = list(values)
    if not values:
        raise ValueError("nothing to shuffle")
    if pi is None:
        pi = fisher_yates(len(values), rng)
    elif pi.size != len(values):
        raise ValueError("shuffle permutation has the wrong size")
    return [values[i] for i in pi.map]


def random_inputs(n: int, k: int, rng: RngStream) -> list:
    bits = rng.generator.integers(0, 2, size=(k, n))
    return [BitVector(tuple(int(v) for v in row)) for row in bits]


def _recover(F: float, H: float, alpha_star: float):
    raw = (F - H) / alpha_star
    S = round(raw)
    margin = abs(raw - S)
    if not margin < 0.5:
        raise RecoveryError(f"(F - H)/alpha* = {raw!r} is not safely roundable")
    return int(S), margin


def _check_matrix(msg: ClientMessage) -> np.ndarray:
    if msg.D is None or not is_doubly_stochastic(msg.D, DS_CHECK_TOL):
        raise IntegrityError(f"client {msg.client_id} submitted a matrix that is not doubly stochastic")
    return msg.D


def run_protocol(
    inputs: Sequence,
    params: ProtocolParams,
    seed: int = 0,
    *,
    fixtures: Optional[Sequence[ClientFixture]] = None,
    shuffle: Optional[Permutation] = None,
    tamper: Optional[Callable[[int, ClientMessage], ClientMessage]] = None,
    trial: Optional[int] = None,
) -> Transcript:
    """Run one protocol instance end to end and return every entity's view.

    ``fixtures`` and ``shuffle`` inject decoys, coefficients and the shuffler's
    permutation; ``tamper`` lets tests corrupt messages in flight.
    """
    if len(inputs) != params.k:
        raise ValueError(f"expected {params.k} clients, got {len(inputs)}")
    if fixtures is not None and len(fixtures) != params.k:
        raise ValueError("need one fixture per client")
    bits = [_as_bits(b, params.n) for b in inputs]
    path = () if trial is None else (trial,)
    variant = params.variant
    mask = client_mask_full if variant.sends_matrix else client_mask_compressed

    msgs = []
    for t, b in enumerate(bits):
        rng = RngStream(seed, client_stream_id(t), path)
        msg = mask(b, params, rng, None if fixtures is None else fixtures[t], client_id=t)
        if tamper is not None:
            msg = tamper(t, msg)
        msgs.append(msg)

    pair = standard_extraction_pair(params.n)
    counts = tuple(b.count() for b in bits)
    etas = [msg.eta for msg in msgs]

    if variant.sends_matrix:
        D_list = tuple(_check_matrix(msg) for msg in msgs)
        f_list = tuple(bilinear_extract(D, pair) for D in D_list)
    else:
        D_list = None
        f_list = tuple(float(msg.f) for msg in msgs)
    F = float(sum(f_list))

    if variant.two_layer:
        decoy_sums = tuple(msg.decoy_sum for msg in msgs) if variant.sends_matrix else None
        H = float(sum(etas))
        server_view = AggregateServerView(F=F, H=H)
        aggregator_view = AggregatorView(F=F, D=D_list, f=None if D_list is not None else f_list)
        noise_view = NoiseAggregatorView(H=H, eta=tuple(etas), decoy_sums=decoy_sums)
    else:
        shuffled = trusted_shuffle(etas, RngStream(seed, SHUFFLER_STREAM, path), pi=shuffle)
        H = float(sum(shuffled))
        server_view = ShuffledServerView(f=f_list, shuffled_eta=tuple(shuffled), D=D_list)
        aggregator_view = None
        noise_view = None

    S, margin = _recover(F, H, params.alpha_star)
    return Transcript(
        params=params,
        server_view=server_view,
        aggregator_view=aggregator_view,
        noise_aggregator_view=noise_view,
        F=F,
        H=H,
        recovered_S=S,
        ground_truth_S=sum(counts),
        ground_truth_counts=counts,
        rounding_margin=margin,
    )


def xi_entry(decoy_sum: np.ndarray, j: int) -> float:
    """Per-bit noise as the single entry ``N[2j-1, 2j]`` (1-based ``j``)."""
    return float(decoy_sum[2 * (j - 1), 2 * (j - 1) + 1])


def xi_rowsum(decoy_sum: np.ndarray, j: int) -> float:
    """Per-bit noise in row-sum form ``(N y)_{2j-1}`` with the standard ``y``."""
    n = decoy_sum.shape[0] // 2
    return float(decoy_sum[2 * (j - 1)] @ standard_extraction_pair(n).y)


def _matrix_views(transcript: Transcript):
    if transcript.params.variant is not Variant.TWO_LAYER_FULL:
        raise UnsupportedVariantError(
            f"variant {transcript.params.variant.value} does not retain the matrices needed for"
            " multi-statistic extraction"
        )
    agg, noise = transcript.aggregator_view, transcript.noise_aggregator_view
    return agg.D, noise.decoy_sums


def extract_perbit_aggregate(transcript: Transcript, j: int, functional: str = "entry") -> int:
    """Recover ``sum_t b_{t,j}`` from the stored matrices.

    ``functional="entry"`` reads entry ``(2j-1, 2j)`` of each matrix;
    ``functional="rowsum"`` reads row ``2j-1`` against the standard ``y``.
    Both cancel exactly against the matching noise functional.
    """
    D_list, N_list = _matrix_views(transcript)
    n = transcript.params.n
    if functional == "entry":
        pair = perbit_pair(n, j)
        H_j = sum(xi_entry(N, j) for N in N_list)
    elif functional == "rowsum":
        w = np.zeros(2 * n)
        w[2 * (j - 1)] = 1.0
        pair = ExtractionPair(w, standard_extraction_pair(n).y)
        H_j = sum(xi_rowsum(N, j) for N in N_list)
    else:
        raise ValueError(f"unknown functional {functional!r}")
    F_j = sum(bilinear_extract(D, pair) for D in D_list)
    S_j, _ = _recover(F_j, H_j, transcript.params.alpha_star)
    return S_j


def extract_weighted_aggregate(transcript: Transcript, c: Sequence[float]) -> float:
    """Recover ``sum_t sum_j c_j b_{t,j}`` (real-valued, not rounded)."""
    D_list, N_list = _matrix_views(transcript)
    pair = weighted_pair(c)
    if pair.dim != 2 * transcript.params.n:
        raise ValueError("weight vector length must equal n")
    F_c = math.fsum(bilinear_extract(D, pair) for D in D_list)
    H_c = math.fsum(bilinear_extract(N, pair) for N in N_list)
    return (F_c - H_c) / transcript.params.alpha_star
