"""Exposure-resilient key storage: keep K as (R, K xor H(R)).

Recovering the key needs R exactly; an attacker holding a decayed copy of
the random buffer must search every way the flipped bits could be placed,
which grows combinatorially with the buffer size.  H expands R by hashing
it with an incrementing 32-bit big-endian counter under SHA-256 and
truncating to the key length.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class ShieldedKey:
    r: bytes
    masked: bytes
    b: int  # bit size of r

    def __post_init__(self):
        if self.b != 8 * len(self.r) or self.b % 8:
            raise InvalidInputError("buffer bit count must be 8 * len(r)")
        if self.b < 8 * len(self.masked):
            raise InvalidInputError("buffer must be at least as long as the key")


def _expand(r: bytes, nbytes: int) -> bytes:
    out = bytearray()
    counter = 0
    while len(out) < nbytes:
        out += hashlib.sha256(r + counter.to_bytes(4, "big")).digest()
        counter += 1
    return bytes(out[:nbytes])


def shield(key: bytes, b: int, seed: int) -> ShieldedKey:
    """Mask a key with the hash expansion of a fresh b-bit random buffer."""
    if b % 8:
        raise InvalidInputError("b must be a multiple of 8")
    if b < 8 * len(key):
        raise InvalidInputError(f"b={b} is smaller than the {8 * len(key)}-bit key")
    rng = np.random.Generator(np.random.PCG64(seed))
    r = rng.bytes(b // 8)
    pad = _expand(r, len(key))
    masked = bytes(k ^ p for k, p in zip(key, pad))
    return ShieldedKey(r, masked, b)


def unshield(sk: ShieldedKey) -> bytes:
    """Recompute the key: masked xor H(R)."""
    pad = _expand(sk.r, len(sk.masked))
    return bytes(m ^ p for m, p in zip(sk.masked, pad))


def attack_search_space(b: int, d: int) -> int:
    """Candidate count facing an attacker when d bits of the b-bit buffer
    flipped and half the buffer could have decayed: C(b/2 + d, d)."""
    if b % 2:
        raise InvalidInputError("b must be even")
    if b < 0 or d < 0:
        raise InvalidInputError("b and d must be >= 0")
    return math.comb(b // 2 + d, d)
