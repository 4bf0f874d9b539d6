import json
from pathlib import Path

import pytest

from polyveil.linalg_core import BitVector, Permutation
from polyveil.protocol import ClientFixture

ROOT = Path(__file__).resolve().parent.parent


@pytest.fixture(scope="session")
def worked_config():
    return json.loads((ROOT / "worked_example.json").read_text())


@pytest.fixture(scope="session")
def worked(worked_config):
    cfg = worked_config
    fixtures = [
        ClientFixture(tuple(Permutation.from_one_based(p) for p in d), tuple(c))
        for d, c in zip(cfg["decoys"], cfg["coefficients"])
    ]
    return {
        "inputs": [BitVector.of(b) for b in cfg["bits"]],
        "fixtures": fixtures,
        "shuffle": Permutation.from_one_based(cfg["shuffle"]),
        "n": cfg["n"],
        "k": cfg["k"],
        "K": cfg["K"],
        "alpha_star": cfg["alpha_star"],
    }
