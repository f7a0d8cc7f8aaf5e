"""Reconstruct AES-128 master keys from decayed schedule observations.

Two reconstructors:

* reconstruct_brute_force - enumerates the Hamming ball around the observed
  master-key bytes with incremental schedule checks.  Slow but simple; the
  testing oracle for the tree search.
* reconstruct_tree - recursive branch-and-bound over schedule bytes: guess
  one undetermined byte, propagate every relation to fixpoint, prune on
  reverse-flip budget and (with an imperfect channel) on a best-possible
  log-likelihood bound.  The inner search runs as a compiled, resumable
  depth-first state machine so large decay fractions stay tractable.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit

from . import aeskit
from .aeskit import (INV_SBOX, SBOX, Aes128Key, RelationKind, relations)
from .bitops import POPCOUNT
from .errors import InvalidInputError
from .memimg import DecayModel

_NBYTES = aeskit.SCHEDULE_BYTES
_PRUNE_EPS = 1e-9


@dataclass(frozen=True)
class ReconstructionBudget:
    """Search limits; max_up_flips = 0 selects the perfect-decay mode."""

    max_up_flips: int = 0
    max_nodes: int | None = None
    time_limit: float | None = None
    max_candidates: int | None = None

    def __post_init__(self):
        for name in ("max_up_flips", "max_nodes", "time_limit", "max_candidates"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise InvalidInputError(f"{name} must be >= 0")

    @property
    def is_perfect(self) -> bool:
        return self.max_up_flips == 0


@dataclass(frozen=True)
class RankedKey:
    key: Aes128Key
    log_likelihood: float
    down_flips: int
    up_flips: int


@dataclass
class ReconstructionResult:
    """Candidate list (descending log-likelihood) plus search telemetry."""

    candidates: list[RankedKey]
    exhaustive: bool
    nodes: int
    elapsed: float

    def __iter__(self):
        return iter(self.candidates)

    def __len__(self):
        return len(self.candidates)

    def __getitem__(self, i):
        return self.candidates[i]

    @property
    def best(self) -> RankedKey | None:
        return self.candidates[0] if self.candidates else None


# --- relation tables shared by both reconstructors -------------------------

def _build_tables():
    rels = relations()
    kind = np.array([0 if r.kind is RelationKind.XOR3 else 1 for r in rels], np.uint8)
    ra = np.array([r.sources[0] for r in rels], np.int64)
    rb = np.array([r.sources[1] for r in rels], np.int64)
    rt = np.array([r.target for r in rels], np.int64)
    rc = np.array([r.rcon for r in rels], np.uint8)
    touching = [[] for _ in range(_NBYTES)]
    for i, r in enumerate(rels):
        touching[r.target].append(i)
        for s in r.sources:
            touching[s].append(i)
    off = np.zeros(_NBYTES + 1, np.int64)
    flat = []
    for k in range(_NBYTES):
        off[k + 1] = off[k] + len(touching[k])
        flat.extend(touching[k])
    return kind, ra, rb, rt, rc, off, np.array(flat, np.int64)


_RKIND, _RA, _RB, _RT, _RC, _ADJ_OFF, _ADJ = _build_tables()


# --- guess ordering ---------------------------------------------------------

def _closure(known: np.ndarray) -> np.ndarray:
    """Positions derivable from `known` via 2-of-3 relation propagation."""
    known = known.copy()
    changed = True
    while changed:
        changed = False
        for i in range(_RKIND.size):
            a, b, t = _RA[i], _RB[i], _RT[i]
            if int(known[a]) + int(known[b]) + int(known[t]) == 2:
                known[a] = known[b] = known[t] = 1
                changed = True
    return known


@lru_cache(maxsize=1)
def _static_guess_order() -> tuple[int, ...]:
    known = np.zeros(_NBYTES, np.uint8)
    order = []
    while int(known.sum()) < _NBYTES:
        best_pos, best_gain, best_closure = -1, -1, None
        for p in range(_NBYTES):
            if known[p]:
                continue
            trial = known.copy()
            trial[p] = 1
            closed = _closure(trial)
            gain = int(closed.sum()) - int(known.sum()) - 1
            if gain > best_gain:
                best_pos, best_gain, best_closure = p, gain, closed
        order.append(best_pos)
        known = best_closure
    return tuple(order)


def guess_order(observed: bytes | None = None, ground: int = 0) -> list[int]:
    """Deterministic guess-position ordering for the tree search.

    Each position greedily maximizes the number of schedule bytes implied
    by relations once it is fixed (ties to the lowest index).  Implication
    depends only on the relation graph, so the ordering is the same for
    every observation; the arguments are accepted for interface symmetry.
    """
    return list(_static_guess_order())


# --- compiled tree-search state machine -------------------------------------

_ST_DEPTH, _ST_TRAIL, _ST_DOWN, _ST_UP, _ST_KNOWN, _ST_NCAND, _ST_NODES = range(7)
_SF_LL, _SF_REMBEST, _SF_BESTLL = range(3)

_DONE, _PAUSED, _CAND_FULL = 0, 1, 2


@njit(cache=True)
def _tree_kernel(istate, fstate, value, known, trail, sp_pos, sp_rank, sp_trail,
                 sp_cursor, sp_down, sp_up, sp_ll, sp_rb, wl, pord, pup, pdown,
                 pll, pbest, order, up_cap, use_ll, slice_budget,
                 cand_keys, cand_down, cand_up, cand_ll, cand_cap):
    nodes = 0
    depth = istate[_ST_DEPTH]
    while True:
        if depth < 0:
            istate[_ST_DEPTH] = depth
            return _DONE
        if nodes >= slice_budget:
            istate[_ST_DEPTH] = depth
            return _PAUSED
        pos = sp_pos[depth]
        rank = sp_rank[depth]
        backtrack = False
        if rank >= 256:
            backtrack = True
        else:
            sp_rank[depth] = rank + 1
            v = pord[pos, rank]
            if istate[_ST_UP] + pup[pos, v] > up_cap:
                backtrack = True  # values are ordered by reverse flips first
        if backtrack:
            depth -= 1
            if depth >= 0:
                while istate[_ST_TRAIL] > sp_trail[depth]:
                    istate[_ST_TRAIL] -= 1
                    known[trail[istate[_ST_TRAIL]]] = 0
                    istate[_ST_KNOWN] -= 1
                istate[_ST_DOWN] = sp_down[depth]
                istate[_ST_UP] = sp_up[depth]
                fstate[_SF_LL] = sp_ll[depth]
                fstate[_SF_REMBEST] = sp_rb[depth]
            continue

        nodes += 1
        istate[_ST_NODES] += 1

        # assign value[pos] = v, then propagate relations to fixpoint
        ok = True
        head = 0
        tail = 0
        known[pos] = 1
        value[pos] = v
        trail[istate[_ST_TRAIL]] = pos
        istate[_ST_TRAIL] += 1
        istate[_ST_KNOWN] += 1
        istate[_ST_DOWN] += pdown[pos, v]
        istate[_ST_UP] += pup[pos, v]
        fstate[_SF_LL] += pll[pos, v]
        fstate[_SF_REMBEST] -= pbest[pos]
        if istate[_ST_UP] > up_cap:
            ok = False
        else:
            wl[tail] = pos
            tail += 1
        while ok and head < tail:
            k = wl[head]
            head += 1
            for idx in range(_ADJ_OFF[k], _ADJ_OFF[k + 1]):
                r = _ADJ[idx]
                a = _RA[r]
                b = _RB[r]
                t = _RT[r]
                nk = known[a] + known[b] + known[t]
                if nk == 3:
                    if _RKIND[r] == 0:
                        implied = value[a] ^ value[b]
                    else:
                        implied = SBOX[value[a]] ^ value[b] ^ _RC[r]
                    if implied != value[t]:
                        ok = False
                        break
                elif nk == 2:
                    if _RKIND[r] == 0:
                        if known[t] == 0:
                            np_, nv = t, value[a] ^ value[b]
                        elif known[a] == 0:
                            np_, nv = a, value[t] ^ value[b]
                        else:
                            np_, nv = b, value[t] ^ value[a]
                    else:
                        if known[t] == 0:
                            np_, nv = t, SBOX[value[a]] ^ value[b] ^ _RC[r]
                        elif known[b] == 0:
                            np_, nv = b, SBOX[value[a]] ^ value[t] ^ _RC[r]
                        else:
                            np_, nv = a, INV_SBOX[value[t] ^ value[b] ^ _RC[r]]
                    known[np_] = 1
                    value[np_] = nv
                    trail[istate[_ST_TRAIL]] = np_
                    istate[_ST_TRAIL] += 1
                    istate[_ST_KNOWN] += 1
                    istate[_ST_DOWN] += pdown[np_, nv]
                    istate[_ST_UP] += pup[np_, nv]
                    fstate[_SF_LL] += pll[np_, nv]
                    fstate[_SF_REMBEST] -= pbest[np_]
                    if istate[_ST_UP] > up_cap:
                        ok = False
                        break
                    wl[tail] = np_
                    tail += 1

        if ok and use_ll and istate[_ST_NCAND] > 0:
            if fstate[_SF_LL] + fstate[_SF_REMBEST] < fstate[_SF_BESTLL] - _PRUNE_EPS:
                ok = False

        if ok and istate[_ST_KNOWN] == _NBYTES:
            nc = istate[_ST_NCAND]
            if nc >= cand_cap:
                istate[_ST_DEPTH] = depth
                return _CAND_FULL
            for j in range(16):
                cand_keys[nc, j] = value[j]
            cand_down[nc] = istate[_ST_DOWN]
            cand_up[nc] = istate[_ST_UP]
            cand_ll[nc] = fstate[_SF_LL]
            istate[_ST_NCAND] = nc + 1
            if fstate[_SF_LL] > fstate[_SF_BESTLL]:
                fstate[_SF_BESTLL] = fstate[_SF_LL]
            ok = False  # fall through to the per-trial undo below

        if not ok:
            while istate[_ST_TRAIL] > sp_trail[depth]:
                istate[_ST_TRAIL] -= 1
                known[trail[istate[_ST_TRAIL]]] = 0
                istate[_ST_KNOWN] -= 1
            istate[_ST_DOWN] = sp_down[depth]
            istate[_ST_UP] = sp_up[depth]
            fstate[_SF_LL] = sp_ll[depth]
            fstate[_SF_REMBEST] = sp_rb[depth]
            continue

        # descend: next guess position is the first still-unknown entry
        cur = sp_cursor[depth]
        npos = -1
        while cur < order.size:
            p2 = order[cur]
            cur += 1
            if known[p2] == 0:
                npos = p2
                break
        if npos < 0:
            for k in range(_NBYTES):
                if known[k] == 0:
                    npos = k
                    break
        ndepth = depth + 1
        sp_pos[ndepth] = npos
        sp_rank[ndepth] = 0
        sp_trail[ndepth] = istate[_ST_TRAIL]
        sp_cursor[ndepth] = cur
        sp_down[ndepth] = istate[_ST_DOWN]
        sp_up[ndepth] = istate[_ST_UP]
        sp_ll[ndepth] = fstate[_SF_LL]
        sp_rb[ndepth] = fstate[_SF_REMBEST]
        depth = ndepth


# --- per-call table construction --------------------------------------------

def _per_position_tables(observed: bytes, known_mask, ground: int,
                         delta0: float, delta1: float):
    obs = np.frombuffer(observed, np.uint8)
    g = np.uint8(0xFF if ground else 0x00)
    obs_n = obs ^ g
    vn = (np.arange(256, dtype=np.uint8) ^ g)[None, :]
    on = obs_n[:, None]
    up = POPCOUNT[on & ~vn].astype(np.uint8)
    down = POPCOUNT[vn & ~on].astype(np.uint8)
    kept1 = POPCOUNT[on & vn].astype(np.float64)
    kept0 = POPCOUNT[~on & ~vn].astype(np.float64)

    def term(count, prob):
        logp = math.log(prob) if prob > 0.0 else float("-inf")
        with np.errstate(invalid="ignore"):
            return np.where(count > 0, count * logp, 0.0)

    pll = (term(up.astype(np.float64), delta1) + term(down.astype(np.float64), delta0)
           + term(kept1, 1.0 - delta0) + term(kept0, 1.0 - delta1))
    if known_mask is not None:
        unknown = ~np.asarray(known_mask, bool)
        up[unknown] = 0
        down[unknown] = 0
        pll[unknown] = 0.0
    pord = np.empty((_NBYTES, 256), np.uint8)
    values = np.arange(256)
    for k in range(_NBYTES):
        pord[k] = np.lexsort((values, down[k], up[k])).astype(np.uint8)
    pbest = pll.max(axis=1)
    return pord, up, down, pll, pbest


# --- tree-search driver ------------------------------------------------------

def reconstruct_tree(
    observed: bytes,
    model: DecayModel,
    budget: ReconstructionBudget | None = None,
    ground: int | None = None,
    known_mask=None,
    order=None,
) -> ReconstructionResult:
    """Branch-and-bound search for master keys matching a decayed schedule.

    Guesses one undetermined schedule byte per level (observed value first,
    then by increasing reverse flips, then increasing decay flips),
    propagates every relation to fixpoint after each guess, and prunes
    branches that exceed the reverse-flip budget or, when delta1 > 0,
    provably cannot beat the best candidate found so far.  The reverse-flip
    cap is raised in stages from 0 to max_up_flips so lightly corrupted
    observations resolve before the expensive slack is explored.

    Returns candidates sorted by log-likelihood (ties by key bytes), with
    `exhaustive` set iff every stage ran to completion within budget.
    """
    if len(observed) != _NBYTES:
        raise InvalidInputError(f"observed schedule must be {_NBYTES} bytes")
    budget = budget or ReconstructionBudget()
    if ground is None:
        ground = model.ground.default_ground
    started = time.monotonic()
    deadline = started + budget.time_limit if budget.time_limit is not None else None

    pord, pup, pdown, pll, pbest = _per_position_tables(
        bytes(observed), known_mask, ground, model.delta0, model.delta1)
    order_arr = np.array(order if order is not None else guess_order(), np.int64)
    use_ll = model.delta1 > 0.0
    cand_cap = budget.max_candidates if budget.max_candidates is not None else 4096
    cand_cap = max(cand_cap, 1)

    found: dict[bytes, tuple[float, int, int]] = {}
    nodes_total = 0
    exhaustive = True
    best_ll = float("-inf")

    value = np.zeros(_NBYTES, np.uint8)
    known = np.zeros(_NBYTES, np.uint8)
    trail = np.zeros(_NBYTES, np.int64)
    sp = [np.zeros(_NBYTES + 1, np.int64) for _ in range(4)]
    sp_pos, sp_rank, sp_trail, sp_cursor = sp
    sp_down = np.zeros(_NBYTES + 1, np.int64)
    sp_up = np.zeros(_NBYTES + 1, np.int64)
    sp_ll = np.zeros(_NBYTES + 1, np.float64)
    sp_rb = np.zeros(_NBYTES + 1, np.float64)
    wl = np.zeros(_NBYTES, np.int64)
    cand_keys = np.zeros((cand_cap, 16), np.uint8)
    cand_down = np.zeros(cand_cap, np.int64)
    cand_up = np.zeros(cand_cap, np.int64)
    cand_ll = np.zeros(cand_cap, np.float64)

    slice_budget = 100_000
    for cap in range(0, budget.max_up_flips + 1):
        value[:] = 0
        known[:] = 0
        istate = np.zeros(7, np.int64)
        fstate = np.array([0.0, float(pbest.sum()), best_ll], np.float64)
        sp_pos[0] = order_arr[0]
        sp_rank[0] = 0
        sp_trail[0] = 0
        sp_cursor[0] = 1
        sp_down[0] = sp_up[0] = 0
        sp_ll[0] = 0.0
        sp_rb[0] = fstate[_SF_REMBEST]

        aborted = False
        while True:
            this_slice = slice_budget
            if budget.max_nodes is not None:
                remaining = budget.max_nodes - (nodes_total + int(istate[_ST_NODES]))
                if remaining <= 0:
                    aborted = True
                    break
                this_slice = min(this_slice, remaining)
            t0 = time.monotonic()
            status = _tree_kernel(
                istate, fstate, value, known, trail, sp_pos, sp_rank, sp_trail,
                sp_cursor, sp_down, sp_up, sp_ll, sp_rb, wl, pord, pup, pdown,
                pll, pbest, order_arr, cap, use_ll, this_slice,
                cand_keys, cand_down, cand_up, cand_ll, cand_cap)
            dt = time.monotonic() - t0
            if status == _DONE:
                break
            if status == _CAND_FULL:
                aborted = True
                break
            if deadline is not None and time.monotonic() >= deadline:
                aborted = True
                break
            if dt > 1e-4:  # retune slice toward ~0.2 s per kernel call
                slice_budget = int(min(max(this_slice * 0.2 / dt, 5e4), 5e6))
        nodes_total += int(istate[_ST_NODES])
        best_ll = max(best_ll, float(fstate[_SF_BESTLL]))
        for i in range(int(istate[_ST_NCAND])):
            found[cand_keys[i].tobytes()] = (
                float(cand_ll[i]), int(cand_down[i]), int(cand_up[i]))
        if aborted:
            exhaustive = False
            break

    ranked = [RankedKey(Aes128Key(k), ll, down, up)
              for k, (ll, down, up) in found.items()]
    ranked.sort(key=lambda r: (-r.log_likelihood, r.key.data))
    if budget.max_candidates is not None:
        ranked = ranked[:budget.max_candidates]
    return ReconstructionResult(ranked, exhaustive, nodes_total,
                                time.monotonic() - started)


# --- brute-force oracle ------------------------------------------------------

# Master bytes ordered so each derived byte of round key 1 becomes checkable
# as early as possible; bytes 4..11 then pin down words 5 and 6 step by step.
_BF_FIX_ORDER = (13, 0, 14, 1, 15, 2, 12, 3, 4, 5, 6, 7, 8, 9, 10, 11)


@lru_cache(maxsize=1)
def _bf_derivation_plan() -> tuple[tuple, ...]:
    """Per fix-order slot: relations (in dependency order) whose sources all
    become known once the slot's master byte is fixed."""
    rels = relations()
    known = set()
    plan = []
    for pos in _BF_FIX_ORDER:
        known.add(pos)
        step = []
        progress = True
        while progress:
            progress = False
            for r in rels:
                if r.target in known or not all(s in known for s in r.sources):
                    continue
                is_core = r.kind is RelationKind.CORE
                step.append((r.target, r.sources[0], r.sources[1], is_core, r.rcon))
                known.add(r.target)
                progress = True
        plan.append(tuple(step))
    assert len(known) == _NBYTES
    return tuple(plan)


def _submasks_by_weight(mask: int) -> list[int]:
    subs = []
    s = mask
    while True:
        subs.append(s)
        if s == 0:
            break
        s = (s - 1) & mask
    subs.sort(key=lambda x: (int(POPCOUNT[x]), x))
    return subs


def reconstruct_brute_force(
    observed: bytes,
    ground: int = 0,
    radius: int = 8,
    known_mask=None,
    model: DecayModel | None = None,
    max_nodes: int | None = None,
) -> list[RankedKey]:
    """Enumerate master keys near the observed bytes 0..15; keep admissible ones.

    Walks every key whose master-key bits differ from the observation in at
    most `radius` positions and keeps those whose full expanded schedule is
    admissible under perfect decay.  Clearing an observed non-ground bit
    can never be admissible, so the walk only ever adds such bits; derived
    schedule bytes are checked as soon as the fixed master bytes determine
    them, which keeps the enumeration exact while skipping provably dead
    prefixes.  This is the testing oracle for reconstruct_tree.
    """
    if len(observed) != _NBYTES:
        raise InvalidInputError(f"observed schedule must be {_NBYTES} bytes")
    if radius < 0 or radius > 16:
        est = sum(math.comb(128, d) for d in range(0, max(radius, 0) + 1))
        raise InvalidInputError(
            f"radius {radius} refused: ball holds about {est:.3e} keys; "
            "supported radius is 0..16 bits")
    if model is None:
        model = DecayModel(delta0=0.5, delta1=0.0)
    g = 0xFF if ground else 0x00
    obs = bytes(observed)
    mask = ([bool(known_mask[k]) for k in range(_NBYTES)]
            if known_mask is not None else [True] * _NBYTES)

    # value choices per master byte, cheapest first
    choices: list[list[tuple[int, int]]] = []  # per order slot: (value, flips)
    for pos in _BF_FIX_ORDER:
        if not mask[pos]:
            choices.append([(v, 0) for v in range(256)])
            continue
        on = obs[pos] ^ g
        zeros = ~on & 0xFF
        choices.append([((on | s) ^ g, int(POPCOUNT[s]))
                        for s in _submasks_by_weight(zeros)])

    plan = _bf_derivation_plan()
    sbox = SBOX.tolist()
    sched = bytearray(_NBYTES)
    results: list[RankedKey] = []
    nodes = 0
    # precomputed admissibility masks: observed non-ground bits per byte
    need = [(obs[k] ^ g) if mask[k] else 0 for k in range(_NBYTES)]

    def walk(slot: int, flips: int):
        nonlocal nodes
        if slot == len(_BF_FIX_ORDER):
            key = bytes(sched[:16])
            full = bytes(sched)
            down, up = aeskit.compatibility(obs, full, ground, mask)
            if up == 0:
                ll = aeskit.schedule_log_likelihood(
                    obs, full, model.delta0, model.delta1, ground, mask)
                results.append(RankedKey(Aes128Key(key), ll, down, up))
            return
        pos = _BF_FIX_ORDER[slot]
        steps = plan[slot]
        for val, cost in choices[slot]:
            if flips + cost > radius:
                break  # choices are sorted by flip count
            nodes += 1
            if max_nodes is not None and nodes > max_nodes:
                raise InvalidInputError(
                    f"brute-force enumeration exceeded max_nodes={max_nodes}")
            sched[pos] = val
            ok = True
            for t, a, b, is_core, rc in steps:
                dv = (sbox[sched[a]] ^ sched[b] ^ rc) if is_core else (sched[a] ^ sched[b])
                if need[t] & ~(dv ^ g) & 0xFF:
                    ok = False
                    break
                sched[t] = dv
            if ok:
                walk(slot + 1, flips + cost)

    walk(0, 0)
    results.sort(key=lambda r: (-r.log_likelihood, r.key.data))
    return results
