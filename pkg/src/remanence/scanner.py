"""Locate candidate key material in memory images.

Four strategies: key-schedule relation scoring (works on decayed images),
sliding-window byte entropy, the DER-encoded RSA private-key version
prefix, and brute-force trial encryption of raw windows.
"""

from __future__ import annotations

import enum
import json
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np

# numba probes TBB on import; the fallback threading layer is fine
warnings.filterwarnings("ignore", message=".*TBB.*")
from numba import njit, prange

from . import aeskit
from .aeskit import INV_SBOX, SBOX, RelationKind, relations
from .bitops import POPCOUNT
from .errors import InvalidInputError
from .memimg import DecayModel, MemoryImage, estimate_delta0

_SCAN_CHUNK = 64 << 20  # bytes of image scored per kernel pass

THREADS_ENV = "REMANENCE_THREADS"


class FindingKind(enum.Enum):
    AES_SCHEDULE = "aes-schedule"
    RSA_DER = "rsa-der"
    ENTROPY_REGION = "entropy-region"
    BRUTE_FORCE_HIT = "brute-force-hit"


@dataclass(frozen=True)
class KeyFinding:
    offset: int
    kind: FindingKind
    score: float
    extent: int

    def to_dict(self) -> dict:
        return {"offset": self.offset, "kind": self.kind.value,
                "score": self.score, "extent": self.extent}


def findings_to_jsonl(findings) -> str:
    return "".join(json.dumps(f.to_dict()) + "\n" for f in findings)


def finding_from_dict(doc: dict) -> KeyFinding:
    return KeyFinding(int(doc["offset"]), FindingKind(doc["kind"]),
                      float(doc["score"]), int(doc["extent"]))


def resolve_threads(threads: int | None = None) -> int | None:
    """Worker count: explicit argument beats REMANENCE_THREADS beats the
    runtime default (all cores).  None means "leave the default"."""
    if threads is not None:
        if threads < 1:
            raise InvalidInputError("thread count must be >= 1")
        return threads
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise InvalidInputError(f"bad {THREADS_ENV}: {env!r}") from exc
        if n < 1:
            raise InvalidInputError(f"bad {THREADS_ENV}: {env!r}")
        return n
    return None


# --- key-schedule scan ------------------------------------------------------

def _relation_tables():
    rels = relations()
    kind = np.array([0 if r.kind is RelationKind.XOR3 else 1 for r in rels], np.uint8)
    ra = np.array([r.sources[0] for r in rels], np.int64)
    rb = np.array([r.sources[1] for r in rels], np.int64)
    rt = np.array([r.target for r in rels], np.int64)
    rc = np.array([r.rcon for r in rels], np.uint8)
    return kind, ra, rb, rt, rc


_REL_KIND, _REL_A, _REL_B, _REL_T, _REL_RC = _relation_tables()


@njit(cache=True, parallel=True)
def _schedule_score_kernel(img, sbx, kind, ra, rb, rt, rc, pop, threshold, out):
    width = img.size - 175
    nrel = kind.size
    for off in prange(width):
        s = 0
        for r in range(nrel):
            if kind[r] == 0:
                implied = img[off + ra[r]] ^ img[off + rb[r]]
            else:
                implied = sbx[off + ra[r]] ^ img[off + rb[r]] ^ rc[r]
            s += pop[implied ^ img[off + rt[r]]]
            if s > threshold:
                break
        out[off] = s


def default_aes_threshold(delta0: float, delta1: float = 0.0) -> int:
    """Mismatch-bit threshold for a schedule decayed at (delta0, delta1).

    mean + 4 sigma of the per-window mismatch distribution of a true
    schedule under the channel, modelling schedule bytes as uniform and a
    corrupted S-box input as flipping each output bit with probability 1/2.
    """
    rho = (delta0 + delta1) / 2.0  # per-bit flip probability of a uniform bit
    p_xor = (1.0 - (1.0 - 2.0 * rho) ** 3) / 2.0
    p_core = (1.0 - (1.0 - rho) ** 8 * (1.0 - 2.0 * rho) ** 2) / 2.0
    mean = 8.0 * (120.0 * p_xor + 40.0 * p_core)
    var = 8.0 * (120.0 * p_xor * (1 - p_xor) + 40.0 * p_core * (1 - p_core))
    return int(math.ceil(mean + 4.0 * math.sqrt(var)))


def scan_aes(
    image: MemoryImage,
    ground: int = 0,
    max_mismatch_bits: int | None = None,
    model: DecayModel | None = None,
    threads: int | None = None,
) -> list[KeyFinding]:
    """Score every byte offset as a possible 176-byte key schedule.

    A window's score is the total bit mismatch between each derived byte
    and the value its relation implies from the observed window; windows
    scoring <= max_mismatch_bits are reported in ascending offset order.
    When no threshold is given it is derived from the decay model (or, if
    none, from the image's estimated delta0).
    """
    if image.length < aeskit.SCHEDULE_BYTES:
        raise InvalidInputError("image shorter than one key schedule")
    if max_mismatch_bits is None:
        if model is not None:
            max_mismatch_bits = default_aes_threshold(model.delta0, model.delta1)
        else:
            max_mismatch_bits = default_aes_threshold(
                estimate_delta0(image, ground=ground))
    if max_mismatch_bits < 0:
        raise InvalidInputError("threshold must be >= 0")

    workers = resolve_threads(threads)
    if workers is not None:
        import numba

        numba.set_num_threads(min(workers, numba.config.NUMBA_NUM_THREADS))
    data = image.as_array()
    findings: list[KeyFinding] = []
    step = max(_SCAN_CHUNK, aeskit.SCHEDULE_BYTES)
    for base in range(0, image.length - aeskit.SCHEDULE_BYTES + 1, step):
        stop = min(base + step + aeskit.SCHEDULE_BYTES - 1, image.length)
        chunk = np.ascontiguousarray(data[base:stop])
        scores = np.empty(chunk.size - 175, np.uint16)
        _schedule_score_kernel(chunk, SBOX[chunk], _REL_KIND, _REL_A, _REL_B,
                               _REL_T, _REL_RC, POPCOUNT, max_mismatch_bits, scores)
        for local in np.nonzero(scores <= max_mismatch_bits)[0]:
            findings.append(KeyFinding(base + int(local), FindingKind.AES_SCHEDULE,
                                       float(scores[local]), aeskit.SCHEDULE_BYTES))
    return findings


# --- entropy scan -----------------------------------------------------------

def scan_entropy(image: MemoryImage, window: int, min_entropy: float) -> list[KeyFinding]:
    """Report regions whose sliding-window byte entropy reaches min_entropy.

    Windows advance by window/2; runs of qualifying windows merge into one
    region finding scored by the best window inside it.
    """
    if window > image.length:
        raise InvalidInputError("window exceeds image length")
    if window < 16 or window % 2:
        raise InvalidInputError("window must be even and >= 16")
    stride = window // 2
    data = image.as_array()
    nblocks = image.length // stride
    if nblocks < 2:
        return []
    ids = np.repeat(np.arange(nblocks, dtype=np.int64), stride)
    counts = np.bincount(
        ids * 256 + data[:nblocks * stride], minlength=nblocks * 256
    ).reshape(nblocks, 256)
    wcounts = counts[:-1] + counts[1:]  # window i covers blocks i, i+1
    nz = wcounts.astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(wcounts > 0, nz * np.log2(nz, where=wcounts > 0), 0.0)
    entropy = math.log2(window) - plogp.sum(axis=1) / window

    findings = []
    run_start = None
    for i in range(entropy.size + 1):
        qualifies = i < entropy.size and entropy[i] >= min_entropy
        if qualifies and run_start is None:
            run_start = i
        elif not qualifies and run_start is not None:
            start = run_start * stride
            end = (i - 1) * stride + window
            findings.append(KeyFinding(start, FindingKind.ENTROPY_REGION,
                                       float(entropy[run_start:i].max()), end - start))
            run_start = None
    return findings


# --- DER pattern scan -------------------------------------------------------

def _der_length_at(data, pos: int) -> int | None:
    """Header length of a valid DER length field at pos, else None."""
    if pos >= len(data):
        return None
    first = int(data[pos])
    if first < 0x80:
        return 1
    nbytes = first & 0x7F
    if first == 0x80 or nbytes > 8 or pos + 1 + nbytes > len(data):
        return None
    raw = bytes(data[pos + 1:pos + 1 + nbytes])
    value = int.from_bytes(raw, "big")
    if raw[0] == 0 or (nbytes == 1 and value < 0x80):
        return None  # not minimally encoded
    return 1 + nbytes


def scan_rsa_der(image: MemoryImage) -> list[KeyFinding]:
    """Find the DER signature of a PKCS#1 RSA private key.

    Matches SEQUENCE tag, a valid short- or long-form length, the version
    INTEGER zero (02 01 00), and the tag of the modulus INTEGER that
    immediately follows.  Overlapping or nested matches are all reported.
    """
    data = image.as_array()
    findings = []
    for off in np.nonzero(data == 0x30)[0]:
        off = int(off)
        hl = _der_length_at(data, off + 1)
        if hl is None:
            continue
        body = off + 1 + hl
        if body + 4 > image.length:
            continue
        if (data[body] == 0x02 and data[body + 1] == 0x01
                and data[body + 2] == 0x00 and data[body + 3] == 0x02):
            findings.append(KeyFinding(off, FindingKind.RSA_DER, 1.0, 1 + hl + 4))
    return findings


# --- brute-force scan -------------------------------------------------------

def scan_brute_force(
    image: MemoryImage, plaintext: bytes, ciphertext: bytes, stride: int = 1
) -> list[KeyFinding]:
    """Try every stride-aligned 16-byte window as an AES-128 key."""
    if stride < 1:
        raise InvalidInputError("stride must be >= 1")
    if len(plaintext) != 16 or len(ciphertext) != 16:
        raise InvalidInputError("plaintext and ciphertext must be 16 bytes")
    data = image.data
    findings = []
    for off in range(0, image.length - 15, stride):
        if aeskit.encrypt_block(data[off:off + 16], plaintext) == ciphertext:
            findings.append(KeyFinding(off, FindingKind.BRUTE_FORCE_HIT, 1.0, 16))
    return findings
