"""Shared bit-level helpers.

Bit order is fixed globally: bit k of a byte sequence is bit (k % 8) of
byte k // 8, least-significant bit first.  Every module that counts,
flips, or serializes individual bits uses this convention.
"""

from __future__ import annotations

import numpy as np

# POPCOUNT[x] = number of set bits in byte x
POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


def popcount_bytes(arr: np.ndarray) -> int:
    """Total number of set bits in a uint8 array."""
    return int(POPCOUNT[arr].sum(dtype=np.int64))


def unpack_bits(data: bytes | np.ndarray) -> np.ndarray:
    """Bytes -> uint8 array of 0/1 bits in global (LSB-first) order."""
    arr = np.frombuffer(data, dtype=np.uint8) if isinstance(data, (bytes, bytearray)) else data
    return np.unpackbits(arr, bitorder="little")

def pack_bits(bits: np.ndarray) -> bytes:
    """Inverse of unpack_bits; pads the tail with zero bits."""
    return np.packbits(bits.astype(np.uint8), bitorder="little").tobytes()


def int_to_bits(value: int, nbits: int) -> np.ndarray:
    """Non-negative int -> uint8 array of its nbits low bits, LSB first."""
    if value < 0:
        raise ValueError("value must be non-negative")
    return np.array([(value >> k) & 1 for k in range(nbits)], dtype=np.uint8)


def bits_to_int(bits) -> int:
    value = 0
    for k, b in enumerate(bits):
        if b:
            value |= 1 << k
    return value


def int_to_le_bytes(value: int, nbits: int) -> bytes:
    """Pack the nbits low bits of value into bytes (global bit order)."""
    nbytes = (nbits + 7) // 8
    return value.to_bytes(nbytes, "little")


def le_bytes_to_int(data: bytes) -> int:
    return int.from_bytes(data, "little")
