import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from remanence import DecayModel, GroundSpec, MemoryImage, apply_decay, expand_key


def seeded_bytes(seed: int, n: int) -> bytes:
    return np.random.Generator(np.random.PCG64(seed)).bytes(n)


def seeded_key(seed: int) -> bytes:
    return seeded_bytes(seed, 16)


def decayed_schedule(key: bytes, delta0: float, delta1: float, seed: int,
                     ground: int = 0) -> bytes:
    """Expanded schedule for key, pushed through the decay channel."""
    model = DecayModel(GroundSpec(ground), delta0, delta1)
    return apply_decay(MemoryImage(expand_key(key).data), model, seed).data


@pytest.fixture
def rng():
    return np.random.default_rng(20260811)
