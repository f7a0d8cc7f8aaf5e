"""Memory images and the asymmetric bit-decay channel.

Decayed DRAM is modeled as a binary asymmetric channel: every bit that
differs from its ground state flips toward ground with probability
delta0, and every bit already at ground flips away with probability
delta1.  delta1 = 0 is the perfect-asymmetric case: bits observed in the
non-ground state are then known to be correct.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bitops import POPCOUNT
from .errors import InvalidInputError

# Identifier of the pseudorandom bit stream used by apply_decay.  Recorded
# in benchmark metadata so seeded runs can be replayed elsewhere.
DECAY_RNG_ALGORITHM = "numpy-pcg64"

# Decay samples one uniform per bit, drawn in fixed-size chunks.  Changing
# this constant would change seeded outputs.
_DECAY_CHUNK_BYTES = 1 << 20


@dataclass(frozen=True)
class Annotation:
    """Planted ground truth attached to a fixture image."""

    offset: int
    kind: str
    payload: bytes


@dataclass(frozen=True)
class MemoryImage:
    """Raw memory content plus optional fixture annotations."""

    data: bytes
    annotations: tuple[Annotation, ...] = ()

    def __post_init__(self):
        if len(self.data) < 1:
            raise InvalidInputError("image must hold at least one byte")
        for ann in self.annotations:
            if ann.offset < 0 or ann.offset + len(ann.payload) > len(self.data):
                raise InvalidInputError(
                    f"annotation at {ann.offset} (+{len(ann.payload)}) exceeds "
                    f"image length {len(self.data)}"
                )

    @property
    def length(self) -> int:
        return len(self.data)

    def as_array(self) -> np.ndarray:
        return np.frombuffer(self.data, dtype=np.uint8)


@dataclass(frozen=True)
class GroundSpec:
    """Per-region ground state: the bit value cells decay toward."""

    default_ground: int = 0
    overrides: tuple[tuple[int, int, int], ...] = ()

    def __post_init__(self):
        if self.default_ground not in (0, 1):
            raise InvalidInputError("default ground must be 0 or 1")
        spans = sorted(self.overrides)
        for start, end, bit in spans:
            if bit not in (0, 1):
                raise InvalidInputError("override ground must be 0 or 1")
            if start < 0 or start >= end:
                raise InvalidInputError(f"bad override range [{start}, {end})")
        for (_, e1, _), (s2, _, _) in zip(spans, spans[1:]):
            if s2 < e1:
                raise InvalidInputError("override ranges overlap")

    def byte_mask(self, length: int) -> np.ndarray:
        """uint8 mask, 0x00 or 0xFF per byte, for an image of `length` bytes."""
        for start, end, _ in self.overrides:
            if end > length:
                raise InvalidInputError(
                    f"override range [{start}, {end}) exceeds image length {length}"
                )
        mask = np.full(length, 0xFF if self.default_ground else 0x00, dtype=np.uint8)
        for start, end, bit in self.overrides:
            mask[start:end] = 0xFF if bit else 0x00
        return mask


@dataclass(frozen=True)
class DecayModel:
    """Ground state plus the two channel flip probabilities."""

    ground: GroundSpec = field(default_factory=GroundSpec)
    delta0: float = 0.0
    delta1: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.delta0 <= 1.0 and 0.0 <= self.delta1 <= 1.0):
            raise InvalidInputError("flip probabilities must lie in [0, 1]")

    @property
    def is_perfect(self) -> bool:
        return self.delta1 == 0.0


@dataclass(frozen=True)
class FlipStats:
    """Exact per-category bit counts between two equal-length images."""

    toward_ground: int
    away_from_ground: int
    unchanged_nonground: int
    unchanged_ground: int

    @property
    def unchanged(self) -> int:
        return self.unchanged_nonground + self.unchanged_ground

    @property
    def toward_rate(self) -> float:
        opp = self.toward_ground + self.unchanged_nonground
        return self.toward_ground / opp if opp else 0.0

    @property
    def away_rate(self) -> float:
        opp = self.away_from_ground + self.unchanged_ground
        return self.away_from_ground / opp if opp else 0.0


def apply_decay(image: MemoryImage, model: DecayModel, seed: int) -> MemoryImage:
    """Push an image through the decay channel with a seeded bit stream.

    Pure function of (image, model, seed): identical inputs give
    bit-identical output.  Annotations are carried through unchanged.
    """
    gmask = model.ground.byte_mask(image.length)
    rng = np.random.Generator(np.random.PCG64(seed))
    src = image.as_array()
    out = np.empty_like(src)
    for start in range(0, src.size, _DECAY_CHUNK_BYTES):
        stop = min(start + _DECAY_CHUNK_BYTES, src.size)
        bits = np.unpackbits(src[start:stop], bitorder="little")
        gbits = np.unpackbits(gmask[start:stop], bitorder="little")
        u = rng.random(bits.size)
        flip = np.where(bits != gbits, u < model.delta0, u < model.delta1)
        out[start:stop] = np.packbits(bits ^ flip, bitorder="little")
    return MemoryImage(out.tobytes(), image.annotations)


def estimate_delta0(
    image: MemoryImage,
    region: tuple[int, int] | None = None,
    ground: int = 0,
    assumed_delta1: float = 0.0,
) -> float:
    """Estimate delta0 from the bit balance of a region.

    Assumes the region held uniformly distributed data (key material)
    before decay.  With ground 0 the observed ones fraction is
    f = (1 - delta0)/2 + delta1/2, inverted and clamped to [0, 1];
    with ground 1 the zeros fraction plays the same role.
    """
    start, end = region if region is not None else (0, image.length)
    if not (0 <= start < end <= image.length):
        raise InvalidInputError(f"empty or out-of-bounds region [{start}, {end})")
    arr = image.as_array()[start:end]
    ones = int(POPCOUNT[arr].sum(dtype=np.int64))
    total = 8 * (end - start)
    f = ones / total if ground == 0 else (total - ones) / total
    return min(1.0, max(0.0, 1.0 - 2.0 * f + assumed_delta1))


def flip_stats(original: MemoryImage, decayed: MemoryImage, ground: GroundSpec) -> FlipStats:
    """Count per-category bit transitions between two images."""
    if original.length != decayed.length:
        raise InvalidInputError(
            f"length mismatch: {original.length} vs {decayed.length}"
        )
    gmask = ground.byte_mask(original.length)
    # Normalize so that a set bit means "differs from ground".
    o = original.as_array() ^ gmask
    d = decayed.as_array() ^ gmask
    pop = POPCOUNT
    toward = int(pop[o & ~d].sum(dtype=np.int64))
    away = int(pop[~o & d].sum(dtype=np.int64))
    kept_non = int(pop[o & d].sum(dtype=np.int64))
    total = 8 * original.length
    return FlipStats(toward, away, kept_non, total - toward - away - kept_non)


# ---------------------------------------------------------------------------
# Sidecar metadata: JSON file describing an image's ground map, channel
# parameters, and any planted fixtures.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SidecarMeta:
    ground: GroundSpec = field(default_factory=GroundSpec)
    delta0: float = 0.0
    delta1: float = 0.0
    planted: tuple[Annotation, ...] = ()


def save_sidecar(path: str | Path, meta: SidecarMeta) -> None:
    doc = {
        "ground": {
            "default": meta.ground.default_ground,
            "overrides": [list(o) for o in meta.ground.overrides],
        },
        "delta0": meta.delta0,
        "delta1": meta.delta1,
        "planted": [
            {"offset": a.offset, "kind": a.kind, "hex": a.payload.hex()}
            for a in meta.planted
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_sidecar(path: str | Path) -> SidecarMeta:
    doc = json.loads(Path(path).read_text())
    g = doc.get("ground", {})
    ground = GroundSpec(
        default_ground=int(g.get("default", 0)),
        overrides=tuple(tuple(int(x) for x in o) for o in g.get("overrides", [])),
    )
    planted = tuple(
        Annotation(int(p["offset"]), str(p["kind"]), bytes.fromhex(p["hex"]))
        for p in doc.get("planted", [])
    )
    return SidecarMeta(ground, float(doc.get("delta0", 0.0)),
                       float(doc.get("delta1", 0.0)), planted)
