"""Reconstruct RSA factors (p, q) from noisy least-significant-bit observations.

Candidates are grown bit by bit: a pair fixed mod 2^i extends to exactly two
pairs mod 2^(i+1) satisfying p*q = N (mod 2^(i+1)).  The perfect-decay
reconstructor walks this tree depth-first, discarding children that
contradict a bit the channel guarantees (observed away from ground with
delta1 = 0); the list reconstructor keeps the top-L candidates per level by
channel log-likelihood instead, which tolerates reverse flips.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InconsistentStateError, InvalidInputError
from .memimg import DecayModel

# --- domain types -----------------------------------------------------------


@dataclass(frozen=True)
class RsaPublicKey:
    n: int
    e: int

    def __post_init__(self):
        if self.n < 15 or self.n % 2 == 0:
            raise InvalidInputError("modulus must be odd and >= 15")
        if self.e < 3 or self.e % 2 == 0:
            raise InvalidInputError("public exponent must be odd and >= 3")


@dataclass(frozen=True)
class BitField:
    """LSB-first bit array packed into an int, with a known-bit mask."""

    bits: int
    known: int
    length: int

    def __post_init__(self):
        if self.length < 1:
            raise InvalidInputError("bit field must have length >= 1")
        top = 1 << self.length
        if not (0 <= self.bits < top and 0 <= self.known < top):
            raise InvalidInputError("bit values exceed declared length")

    def bit(self, i: int) -> int:
        return (self.bits >> i) & 1

    def is_known(self, i: int) -> bool:
        return bool((self.known >> i) & 1)

    def to_json(self) -> dict:
        nbytes = (self.length + 7) // 8
        return {
            "bits": self.bits.to_bytes(nbytes, "little").hex(),
            "known": self.known.to_bytes(nbytes, "little").hex(),
            "length": self.length,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "BitField":
        return cls(
            int.from_bytes(bytes.fromhex(doc["bits"]), "little"),
            int.from_bytes(bytes.fromhex(doc["known"]), "little"),
            int(doc["length"]),
        )

    @classmethod
    def fully_known(cls, value: int, length: int) -> "BitField":
        return cls(value & ((1 << length) - 1), (1 << length) - 1, length)


@dataclass(frozen=True)
class RsaObservedPrivate:
    """Observed bit arrays of p and q; d, dp, dq are carried but unused."""

    p: BitField
    q: BitField
    d: BitField | None = None
    dp: BitField | None = None
    dq: BitField | None = None

    def __post_init__(self):
        if self.p.length != self.q.length:
            raise InvalidInputError("p and q observations must have equal length")

    @property
    def half_bits(self) -> int:
        return self.p.length


@dataclass(frozen=True)
class RsaCandidate:
    """Factor pair resolved modulo 2^i."""

    i: int
    p_low: int
    q_low: int
    log_likelihood: float = 0.0


@dataclass(frozen=True)
class MlCandidate:
    p: int
    q: int
    log_likelihood: float
    verified: bool


# --- channel likelihood of a single bit --------------------------------------

def _bit_lls(field: BitField, i: int, delta0: float, delta1: float,
             ground: int) -> tuple[float, float]:
    """(log P(obs | true=0), log P(obs | true=1)) for bit i; (0,0) if unknown."""
    if not field.is_known(i):
        return 0.0, 0.0
    obs = field.bit(i)

    def logp(x: float) -> float:
        return math.log(x) if x > 0.0 else float("-inf")

    # A bit equal to ground flips away with delta1; one away from ground
    # decays toward it with delta0.
    def p_obs(true_bit: int) -> float:
        if true_bit == ground:
            return delta1 if obs != ground else 1.0 - delta1
        return delta0 if obs == ground else 1.0 - delta0

    return logp(p_obs(0)), logp(p_obs(1))


def _certain_bit(field: BitField, i: int, ground: int) -> int | None:
    """Bit value guaranteed under perfect decay, else None."""
    if field.is_known(i) and field.bit(i) != ground:
        return field.bit(i)
    return None


# --- Hensel lifting -----------------------------------------------------------

def lift(
    candidate: RsaCandidate,
    n: int,
    obs: RsaObservedPrivate | None = None,
    model: DecayModel | None = None,
    ground: int = 0,
) -> tuple[RsaCandidate, RsaCandidate]:
    """The two extensions of a candidate to the next bit position.

    Of the four (p_i, q_i) choices exactly two satisfy
    p*q = N (mod 2^(i+1)); they are returned with p_i = 0 first.  When an
    observation and model are supplied, child likelihoods accumulate the
    channel log-probability of the observed bits at position i.
    """
    i, p, q = candidate.i, candidate.p_low, candidate.q_low
    if i < 1 or p % 2 == 0 or q % 2 == 0 or (p * q - n) % (1 << i) != 0:
        raise InconsistentStateError(f"candidate invariant violated at i={i}")
    if obs is not None and i >= obs.half_bits:
        raise InconsistentStateError(f"lift beyond factor length {obs.half_bits}")
    c = ((n - p * q) >> i) & 1
    llp = llq = (0.0, 0.0)
    if obs is not None and model is not None:
        llp = _bit_lls(obs.p, i, model.delta0, model.delta1, ground)
        llq = _bit_lls(obs.q, i, model.delta0, model.delta1, ground)
    base = candidate.log_likelihood
    child_a = RsaCandidate(i + 1, p, q | (c << i), base + llp[0] + llq[c])
    child_b = RsaCandidate(i + 1, p | (1 << i), q | ((1 - c) << i),
                           base + llp[1] + llq[1 - c])
    return child_a, child_b


# --- perfect-decay reconstruction ---------------------------------------------

def _seed_candidate(obs: RsaObservedPrivate, ground: int) -> RsaCandidate | None:
    for field in (obs.p, obs.q):
        certain = _certain_bit(field, 0, ground)
        if certain == 0:
            return None  # factor cannot be even
    return RsaCandidate(1, 1, 1)


def reconstruct_pq_perfect(
    pub: RsaPublicKey,
    obs: RsaObservedPrivate,
    ground: int = 0,
) -> tuple[int, int] | None:
    """Depth-first factor recovery assuming no reverse flips (delta1 = 0).

    Children contradicting a certainly-known bit are discarded; a complete
    pair is accepted only if p*q equals N exactly.  Returns None when the
    search space is exhausted, which signals a model violation.
    """
    half = obs.half_bits
    n = pub.n
    seed = _seed_candidate(obs, ground)
    if seed is None:
        return None
    stack = [seed]
    while stack:
        cand = stack.pop()
        if cand.i == half:
            if cand.p_low * cand.q_low == n:
                return cand.p_low, cand.q_low
            continue
        children = _consistent_children(cand, n, obs, ground)
        # explore the child agreeing best with the observation first
        children.sort(key=lambda ch: _obs_agreement(ch, obs))
        stack.extend(children)
    return None


def _consistent_children(cand, n, obs, ground):
    i = cand.i
    msb_level = i == obs.half_bits - 1
    cert_p = _certain_bit(obs.p, i, ground)
    cert_q = _certain_bit(obs.q, i, ground)
    out = []
    for child in lift(cand, n):
        p_i = (child.p_low >> i) & 1
        q_i = (child.q_low >> i) & 1
        if msb_level and (p_i != 1 or q_i != 1):
            continue  # balanced primes have their top bit set
        if cert_p is not None and p_i != cert_p:
            continue
        if cert_q is not None and q_i != cert_q:
            continue
        out.append(child)
    return out


def _obs_agreement(child: RsaCandidate, obs: RsaObservedPrivate) -> int:
    i = child.i - 1
    score = 0
    if obs.p.is_known(i) and ((child.p_low >> i) & 1) == obs.p.bit(i):
        score += 1
    if obs.q.is_known(i) and ((child.q_low >> i) & 1) == obs.q.bit(i):
        score += 1
    return score  # stack order: best-agreeing child is pushed last, popped first


def perfect_frontier_widths(
    pub: RsaPublicKey,
    obs: RsaObservedPrivate,
    ground: int = 0,
    max_width: int = 1 << 22,
) -> list[int]:
    """Level-by-level count of consistent candidates under perfect decay.

    Breadth-first companion to reconstruct_pq_perfect used to study the
    branching behaviour of the lifting tree; aborts if a level would exceed
    max_width.
    """
    seed = _seed_candidate(obs, ground)
    if seed is None:
        return [0]
    level = [seed]
    widths = [1]
    for i in range(1, obs.half_bits):
        nxt = []
        for cand in level:
            nxt.extend(_consistent_children(cand, pub.n, obs, ground))
        if len(nxt) > max_width:
            raise InvalidInputError(
                f"frontier exceeded max_width={max_width} at level {i}")
        level = nxt
        widths.append(len(level))
        if not level:
            break
    return widths


# --- maximum-likelihood list reconstruction -----------------------------------

def reconstruct_pq_ml(
    pub: RsaPublicKey,
    obs: RsaObservedPrivate,
    model: DecayModel,
    list_size: int,
    ground: int = 0,
) -> list[MlCandidate]:
    """Breadth-first lifting keeping the top list_size candidates per level.

    Candidates are ranked by channel log-likelihood (ties by the (p, q)
    pair); survivors of the final level are flagged verified when p*q
    equals N exactly.  An empty verified set is a valid outcome.
    """
    if list_size < 1:
        raise InvalidInputError("list size must be >= 1")
    half = obs.half_bits
    if half <= 64:
        return _ml_vectorized(pub, obs, model, list_size, ground)
    return _ml_bigint(pub, obs, model, list_size, ground)


def _ml_level_lls(obs, model, ground, i):
    lp = _bit_lls(obs.p, i, model.delta0, model.delta1, ground)
    lq = _bit_lls(obs.q, i, model.delta0, model.delta1, ground)
    return lp, lq


def _ml_vectorized(pub, obs, model, L, ground):
    half = obs.half_bits
    n64 = np.uint64(pub.n & 0xFFFFFFFFFFFFFFFF)
    lp, lq = _ml_level_lls(obs, model, ground, 0)
    p = np.array([1], np.uint64)
    q = np.array([1], np.uint64)
    ll = np.array([lp[1] + lq[1]], np.float64)
    for i in range(1, half):
        lp, lq = _ml_level_lls(obs, model, ground, i)
        shift = np.uint64(i)
        c = ((n64 - p * q) >> shift) & np.uint64(1)
        bit = np.uint64(1) << shift
        cf = c.astype(np.float64)
        # child A: p_i = 0, q_i = c; child B: p_i = 1, q_i = 1 - c
        pa, qa = p, q | (c * bit)
        la = ll + lp[0] + cf * lq[1] + (1.0 - cf) * lq[0]
        pb, qb = p | bit, q | ((np.uint64(1) - c) * bit)
        lb = ll + lp[1] + (1.0 - cf) * lq[1] + cf * lq[0]
        if i == half - 1:  # balanced primes: both top bits must be 1
            keep = c == 0
            p, q, ll = pb[keep], qb[keep], lb[keep]
        else:
            p = np.concatenate([pa, pb])
            q = np.concatenate([qa, qb])
            ll = np.concatenate([la, lb])
        if p.size > L:
            sel = np.lexsort((q, p, -ll))[:L]
            p, q, ll = p[sel], q[sel], ll[sel]
    order = np.lexsort((q, p, -ll))
    out = []
    for idx in order:
        pi, qi = int(p[idx]), int(q[idx])
        out.append(MlCandidate(pi, qi, float(ll[idx]), pi * qi == pub.n))
    return out


def _ml_bigint(pub, obs, model, L, ground):
    half = obs.half_bits
    lp, lq = _ml_level_lls(obs, model, ground, 0)
    level = [(lp[1] + lq[1], 1, 1)]
    for i in range(1, half):
        lp, lq = _ml_level_lls(obs, model, ground, i)
        bit = 1 << i
        nxt = []
        for ll, p, q in level:
            c = ((pub.n - p * q) >> i) & 1
            if i == half - 1:
                if c == 0:
                    nxt.append((ll + lp[1] + lq[1], p | bit, q | bit))
                continue
            nxt.append((ll + lp[0] + (lq[1] if c else lq[0]), p, q | (c * bit)))
            nxt.append((ll + lp[1] + (lq[0] if c else lq[1]), p | bit,
                        q | ((1 - c) * bit)))
        nxt.sort(key=lambda x: (-x[0], x[1], x[2]))
        level = nxt[:L]
    return [MlCandidate(p, q, ll, p * q == pub.n) for ll, p, q in level]


# --- feasibility predicate ----------------------------------------------------

def kunihiro_feasible(delta: float, epsilon: float, m: int) -> bool:
    """Whether (erasure rate delta, error rate epsilon, m secret parameters)
    admits polynomial-time noisy-key reconstruction:

        1 - delta - 2*epsilon >= sqrt(2 * (1 - delta) * ln(2) / m)
    """
    if not 0.0 <= epsilon < 0.5:
        raise InvalidInputError("epsilon must lie in [0, 1/2)")
    if not 0.0 <= delta < 1.0:
        raise InvalidInputError("delta must lie in [0, 1)")
    if epsilon + delta >= 1.0:
        raise InvalidInputError("epsilon + delta must be < 1")
    if m < 1:
        raise InvalidInputError("m must be >= 1")
    return 1.0 - delta - 2.0 * epsilon >= math.sqrt(2.0 * (1.0 - delta) * math.log(2.0) / m)


# --- fixtures and file format ---------------------------------------------------

_SMALL_PRIMES = (3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47)


def _is_probable_prime(n: int, rng) -> bool:
    if n < 2:
        return False
    for sp in (2,) + _SMALL_PRIMES:
        if n % sp == 0:
            return n == sp
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    # deterministic witnesses below 3.3e24, otherwise seeded random rounds
    if n < 3317044064679887385961981:
        bases = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)
    else:
        nbytes = (n.bit_length() + 7) // 8
        bases = tuple(
            2 + int.from_bytes(rng.bytes(nbytes), "little") % (n - 3)
            for _ in range(40))
    for a in bases:
        a %= n
        if a < 2:
            continue
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def generate_balanced_factors(modulus_bits: int, seed: int) -> tuple[int, int]:
    """Seeded (p, q) with p, q prime, each exactly modulus_bits/2 bits,
    and p*q exactly modulus_bits bits."""
    if modulus_bits < 8 or modulus_bits % 2:
        raise InvalidInputError("modulus_bits must be even and >= 8")
    half = modulus_bits // 2
    rng = np.random.Generator(np.random.PCG64(seed))

    def draw_prime() -> int:
        while True:
            raw = int.from_bytes(rng.bytes((half + 7) // 8), "little")
            cand = (raw | (1 << (half - 1)) | 1) & ((1 << half) - 1)
            if _is_probable_prime(cand, rng):
                return cand

    while True:
        p, q = draw_prime(), draw_prime()
        if p != q and (p * q).bit_length() == modulus_bits:
            return p, q


def observe_bits(value: int, nbits: int, delta0: float, delta1: float,
                 seed: int, ground: int = 0) -> BitField:
    """Push an integer's low nbits through the decay channel (all bits known)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    u = rng.random(nbits)
    out = 0
    for i in range(nbits):
        b = (value >> i) & 1
        flipped = bool(u[i] < (delta0 if b != ground else delta1))
        out |= (b ^ int(flipped)) << i
    return BitField.fully_known(out, nbits)


def save_observed(path: str | Path, pub: RsaPublicKey, obs: RsaObservedPrivate) -> None:
    doc = {"N": str(pub.n), "e": str(pub.e),
           "p": obs.p.to_json(), "q": obs.q.to_json()}
    for name in ("d", "dp", "dq"):
        field = getattr(obs, name)
        if field is not None:
            doc[name] = field.to_json()
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_observed(path: str | Path) -> tuple[RsaPublicKey, RsaObservedPrivate]:
    doc = json.loads(Path(path).read_text())
    pub = RsaPublicKey(int(doc["N"]), int(doc["e"]))
    extras = {name: BitField.from_json(doc[name])
              for name in ("d", "dp", "dq") if name in doc}
    obs = RsaObservedPrivate(BitField.from_json(doc["p"]),
                             BitField.from_json(doc["q"]), **extras)
    return pub, obs
