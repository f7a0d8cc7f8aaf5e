"""AES-128 key-schedule math: expansion, verification, and the byte-level
relation graph that scanners and reconstructors exploit.

The 176-byte expanded schedule is 44 words w[0..43]; w[0..3] is the master
key.  Every derived byte (indices 16..175) is fixed by exactly one relation:

  XOR3:  s[t] = s[a] ^ s[b]                       (words with index % 4 != 0)
  CORE:  s[t] = Sbox(s[a]) ^ s[b] ^ rcon          (words with index % 4 == 0)

where for CORE the source byte a already accounts for the word rotation and
rcon is nonzero only for the first byte of each core word.  Knowing any two
bytes of a relation determines the third (the S-box is a bijection), which
is what makes partially decayed schedules reconstructible.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .bitops import POPCOUNT
from .errors import InvalidInputError

SBOX = np.array([
    0x63, 0x7C, 0x77, 0x7B, 0xF2, 0x6B, 0x6F, 0xC5, 0x30, 0x01, 0x67, 0x2B, 0xFE, 0xD7, 0xAB, 0x76,
    0xCA, 0x82, 0xC9, 0x7D, 0xFA, 0x59, 0x47, 0xF0, 0xAD, 0xD4, 0xA2, 0xAF, 0x9C, 0xA4, 0x72, 0xC0,
    0xB7, 0xFD, 0x93, 0x26, 0x36, 0x3F, 0xF7, 0xCC, 0x34, 0xA5, 0xE5, 0xF1, 0x71, 0xD8, 0x31, 0x15,
    0x04, 0xC7, 0x23, 0xC3, 0x18, 0x96, 0x05, 0x9A, 0x07, 0x12, 0x80, 0xE2, 0xEB, 0x27, 0xB2, 0x75,
    0x09, 0x83, 0x2C, 0x1A, 0x1B, 0x6E, 0x5A, 0xA0, 0x52, 0x3B, 0xD6, 0xB3, 0x29, 0xE3, 0x2F, 0x84,
    0x53, 0xD1, 0x00, 0xED, 0x20, 0xFC, 0xB1, 0x5B, 0x6A, 0xCB, 0xBE, 0x39, 0x4A, 0x4C, 0x58, 0xCF,
    0xD0, 0xEF, 0xAA, 0xFB, 0x43, 0x4D, 0x33, 0x85, 0x45, 0xF9, 0x02, 0x7F, 0x50, 0x3C, 0x9F, 0xA8,
    0x51, 0xA3, 0x40, 0x8F, 0x92, 0x9D, 0x38, 0xF5, 0xBC, 0xB6, 0xDA, 0x21, 0x10, 0xFF, 0xF3, 0xD2,
    0xCD, 0x0C, 0x13, 0xEC, 0x5F, 0x97, 0x44, 0x17, 0xC4, 0xA7, 0x7E, 0x3D, 0x64, 0x5D, 0x19, 0x73,
    0x60, 0x81, 0x4F, 0xDC, 0x22, 0x2A, 0x90, 0x88, 0x46, 0xEE, 0xB8, 0x14, 0xDE, 0x5E, 0x0B, 0xDB,
    0xE0, 0x32, 0x3A, 0x0A, 0x49, 0x06, 0x24, 0x5C, 0xC2, 0xD3, 0xAC, 0x62, 0x91, 0x95, 0xE4, 0x79,
    0xE7, 0xC8, 0x37, 0x6D, 0x8D, 0xD5, 0x4E, 0xA9, 0x6C, 0x56, 0xF4, 0xEA, 0x65, 0x7A, 0xAE, 0x08,
    0xBA, 0x78, 0x25, 0x2E, 0x1C, 0xA6, 0xB4, 0xC6, 0xE8, 0xDD, 0x74, 0x1F, 0x4B, 0xBD, 0x8B, 0x8A,
    0x70, 0x3E, 0xB5, 0x66, 0x48, 0x03, 0xF6, 0x0E, 0x61, 0x35, 0x57, 0xB9, 0x86, 0xC1, 0x1D, 0x9E,
    0xE1, 0xF8, 0x98, 0x11, 0x69, 0xD9, 0x8E, 0x94, 0x9B, 0x1E, 0x87, 0xE9, 0xCE, 0x55, 0x28, 0xDF,
    0x8C, 0xA1, 0x89, 0x0D, 0xBF, 0xE6, 0x42, 0x68, 0x41, 0x99, 0x2D, 0x0F, 0xB0, 0x54, 0xBB, 0x16,
], dtype=np.uint8)

INV_SBOX = np.zeros(256, dtype=np.uint8)
INV_SBOX[SBOX] = np.arange(256, dtype=np.uint8)

RCON = (0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1B, 0x36)

KEY_BYTES = 16
SCHEDULE_BYTES = 176


@dataclass(frozen=True)
class Aes128Key:
    data: bytes

    def __post_init__(self):
        if len(self.data) != KEY_BYTES:
            raise InvalidInputError(f"AES-128 key must be 16 bytes, got {len(self.data)}")

    def __bytes__(self) -> bytes:
        return self.data

    def hex(self) -> str:
        return self.data.hex()


@dataclass(frozen=True)
class AesKeySchedule:
    data: bytes

    def __post_init__(self):
        if len(self.data) != SCHEDULE_BYTES:
            raise InvalidInputError(
                f"schedule must be 176 bytes, got {len(self.data)}"
            )

    def __bytes__(self) -> bytes:
        return self.data

    @property
    def master_key(self) -> Aes128Key:
        return Aes128Key(self.data[:KEY_BYTES])

    def word(self, i: int) -> bytes:
        return self.data[4 * i:4 * i + 4]


class RelationKind(enum.Enum):
    XOR3 = "xor3"
    CORE = "core"


@dataclass(frozen=True)
class ScheduleRelation:
    """target = a ^ b (XOR3) or target = Sbox(a) ^ b ^ rcon (CORE)."""

    target: int
    kind: RelationKind
    sources: tuple[int, int]
    rcon: int = 0


@lru_cache(maxsize=1)
def relations() -> tuple[ScheduleRelation, ...]:
    """The 160 byte-level schedule relations, one per derived byte."""
    rels = []
    for w in range(4, 44):
        for j in range(4):
            t = 4 * w + j
            prev = 4 * (w - 4) + j
            if w % 4 == 0:
                src = 4 * (w - 1) + (j + 1) % 4   # rotated byte of prior word
                rc = RCON[w // 4 - 1] if j == 0 else 0
                rels.append(ScheduleRelation(t, RelationKind.CORE, (src, prev), rc))
            else:
                rels.append(ScheduleRelation(t, RelationKind.XOR3, (4 * (w - 1) + j, prev)))
    return tuple(rels)


def _as_bytes(value, length: int, what: str) -> bytes:
    data = bytes(value)
    if len(data) != length:
        raise InvalidInputError(f"{what} must be {length} bytes, got {len(data)}")
    return data


def expand_key(key: Aes128Key | bytes) -> AesKeySchedule:
    """Standard AES-128 key expansion (11 round keys of 4 words)."""
    kb = _as_bytes(key, KEY_BYTES, "key")
    s = bytearray(kb)
    sbox = SBOX
    for w in range(4, 44):
        prev = s[4 * (w - 1):4 * w]
        if w % 4 == 0:
            core = bytes((sbox[prev[1]] ^ RCON[w // 4 - 1], sbox[prev[2]],
                          sbox[prev[3]], sbox[prev[0]]))
            prev = core
        base = 4 * (w - 4)
        s += bytes(s[base + j] ^ prev[j] for j in range(4))
    return AesKeySchedule(bytes(s))


def verify_schedule(schedule: AesKeySchedule | bytes) -> bool:
    """True iff every schedule relation holds exactly."""
    s = _as_bytes(schedule, SCHEDULE_BYTES, "schedule")
    sbox = SBOX
    for rel in relations():
        a, b = rel.sources
        if rel.kind is RelationKind.XOR3:
            implied = s[a] ^ s[b]
        else:
            implied = sbox[s[a]] ^ s[b] ^ rel.rcon
        if implied != s[rel.target]:
            return False
    return True


def compatibility(
    observed: bytes,
    candidate: AesKeySchedule | bytes,
    ground: int = 0,
    known_mask=None,
) -> tuple[int, int]:
    """(down_flips, up_flips) of a candidate schedule against an observation.

    down_flips: candidate bits away from ground that were observed at ground
    (ordinary decay).  up_flips: candidate bits at ground observed away from
    it (reverse flips); under perfect decay a candidate is admissible iff
    up_flips == 0.  Bytes where known_mask is false are skipped.
    """
    obs = _as_bytes(observed, SCHEDULE_BYTES, "observed schedule")
    cand = _as_bytes(candidate, SCHEDULE_BYTES, "candidate schedule")
    if ground not in (0, 1):
        raise InvalidInputError("ground must be 0 or 1")
    g = 0xFF if ground else 0x00
    down = up = 0
    pop = POPCOUNT
    for k in range(SCHEDULE_BYTES):
        if known_mask is not None and not known_mask[k]:
            continue
        o = obs[k] ^ g
        c = cand[k] ^ g
        down += int(pop[c & ~o & 0xFF])
        up += int(pop[o & ~c & 0xFF])
    return down, up


def schedule_log_likelihood(
    observed: bytes,
    candidate: AesKeySchedule | bytes,
    delta0: float,
    delta1: float,
    ground: int = 0,
    known_mask=None,
) -> float:
    """Log-probability of the observation given the candidate schedule.

    down * log(d0) + kept_nonground * log(1-d0)
    + up * log(d1) + kept_ground * log(1-d1),
    with 0 * log(0) taken as 0.  Masked bytes contribute nothing.
    """
    obs = _as_bytes(observed, SCHEDULE_BYTES, "observed schedule")
    cand = _as_bytes(candidate, SCHEDULE_BYTES, "candidate schedule")
    g = 0xFF if ground else 0x00
    pop = POPCOUNT
    down = up = kept1 = kept0 = 0
    for k in range(SCHEDULE_BYTES):
        if known_mask is not None and not known_mask[k]:
            continue
        o = obs[k] ^ g
        c = cand[k] ^ g
        down += int(pop[c & ~o & 0xFF])
        up += int(pop[o & ~c & 0xFF])
        kept1 += int(pop[c & o])
        kept0 += int(pop[~c & ~o & 0xFF])
    terms = ((down, delta0), (kept1, 1.0 - delta0), (up, delta1), (kept0, 1.0 - delta1))
    ll = 0.0
    for count, prob in terms:
        if count:
            ll += count * (math.log(prob) if prob > 0.0 else float("-inf"))
    return ll


def encrypt_block(key: bytes, block: bytes) -> bytes:
    """Single-block AES-128 encryption (backed by the cryptography package)."""
    from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

    kb = _as_bytes(key, KEY_BYTES, "key")
    pb = _as_bytes(block, KEY_BYTES, "block")
    enc = Cipher(algorithms.AES(kb), modes.ECB()).encryptor()
    return enc.update(pb) + enc.finalize()
