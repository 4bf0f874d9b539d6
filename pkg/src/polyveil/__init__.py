"""Secure aggregation of bit vectors by masking permutation matrices with random decoys."""

from .linalg_core import BitVector, Permutation
from .protocol import ProtocolParams, Variant, run_protocol

__all__ = ["BitVector", "Permutation", "ProtocolParams", "Variant", "run_protocol"]
__version__ = "0.1.0"
