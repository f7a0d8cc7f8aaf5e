"""Command-line surface: fixture planting, decay simulation, scanning,
key recovery, shielded storage, and the benchmark harness.

Exit codes: 0 success, 1 nothing found / inconclusive, 2 usage error,
3 I/O error.  Every randomized command requires --seed so any run can be
reproduced bit for bit.
"""

from __future__ import annotations

import argparse
import csv
import json
import statistics
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, aeskit, rsarec, scanner, shieldstore
from .aesrec import ReconstructionBudget, reconstruct_tree
from .errors import InvalidInputError
from .memimg import (DECAY_RNG_ALGORITHM, Annotation, DecayModel, GroundSpec,
                     MemoryImage, SidecarMeta, apply_decay, load_sidecar,
                     save_sidecar)

DEFAULT_IMAGE_CAP = 4 << 30

BENCH_HEADER = ["scenario", "delta0", "delta1", "kind", "trials", "successes",
                "median_ms", "mean_ms", "nodes", "seed"]


def parse_size(text: str) -> int:
    text = text.strip()
    factor = 1
    if text and text[-1].upper() in "KMG":
        factor = {"K": 1 << 10, "M": 1 << 20, "G": 1 << 30}[text[-1].upper()]
        text = text[:-1]
    try:
        value = int(text) * factor
    except ValueError as exc:
        raise InvalidInputError(f"bad size: {text!r}") from exc
    if value < 1:
        raise InvalidInputError("size must be >= 1 byte")
    return value


def _check_cap(nbytes: int, cap: int) -> None:
    if nbytes > cap:
        raise InvalidInputError(
            f"image of {nbytes} bytes exceeds the {cap}-byte cap "
            "(raise with --max-image-bytes)")


def _read_image(path: str, cap: int) -> MemoryImage:
    size = Path(path).stat().st_size
    _check_cap(size, cap)
    return MemoryImage(Path(path).read_bytes())


def _sidecar_path(image_path: str) -> Path:
    return Path(image_path + ".json")


def _load_sidecar_if_any(image_path: str) -> SidecarMeta | None:
    p = _sidecar_path(image_path)
    return load_sidecar(p) if p.exists() else None


# --- plant -------------------------------------------------------------------

def cmd_plant(args) -> int:
    size = parse_size(args.size)
    _check_cap(size, args.max_image_bytes)
    if args.fill == "random":
        if args.seed is None:
            raise InvalidInputError("--seed is required with --fill random")
        rng = np.random.Generator(np.random.PCG64(args.seed))
        buf = bytearray()
        while len(buf) < size:
            buf += rng.bytes(min(64 << 20, size - len(buf)))
        data = bytearray(buf[:size])
    else:
        data = bytearray(size)

    planted: list[Annotation] = []
    aes_keys = args.aes_key or []
    offsets = args.offset or []
    if len(aes_keys) != len(offsets):
        raise InvalidInputError("--aes-key and --offset counts must match")
    payloads = []
    for keyhex, off in zip(aes_keys, offsets):
        sched = aeskit.expand_key(bytes.fromhex(keyhex)).data
        payloads.append((off, "aes-schedule", sched))
    rsa_files = args.rsa_der or []
    rsa_offsets = args.rsa_offset or []
    if len(rsa_files) != len(rsa_offsets):
        raise InvalidInputError("--rsa-der and --rsa-offset counts must match")
    for path, off in zip(rsa_files, rsa_offsets):
        payloads.append((off, "rsa-der", Path(path).read_bytes()))

    for idx, (off, kind, payload) in enumerate(payloads):
        if off < 0 or off + len(payload) > size:
            raise InvalidInputError(f"payload at {off} does not fit the image")
        written = payload
        if args.plant_delta0 > 0.0:
            # planted material decays with its own derived seed; the sidecar
            # keeps the undecayed payload as ground truth
            model = DecayModel(GroundSpec(args.ground), args.plant_delta0,
                               args.plant_delta1)
            written = apply_decay(MemoryImage(payload), model,
                                  (args.seed or 0) + 1 + idx).data
        data[off:off + len(payload)] = written
        planted.append(Annotation(off, kind, payload))

    Path(args.out).write_bytes(bytes(data))
    save_sidecar(_sidecar_path(args.out), SidecarMeta(
        GroundSpec(args.ground), args.plant_delta0, args.plant_delta1,
        tuple(planted)))
    print(f"wrote {size} bytes to {args.out} ({len(planted)} planted)",
          file=sys.stderr)
    return 0


# --- decay -------------------------------------------------------------------

def cmd_decay(args) -> int:
    image = _read_image(args.infile, args.max_image_bytes)
    meta = _load_sidecar_if_any(args.infile)
    ground = GroundSpec(args.ground) if args.ground is not None else (
        meta.ground if meta else GroundSpec())
    model = DecayModel(ground, args.delta0, args.delta1)
    out = apply_decay(image, model, args.seed)
    Path(args.out).write_bytes(out.data)
    save_sidecar(_sidecar_path(args.out), SidecarMeta(
        ground, args.delta0, args.delta1, meta.planted if meta else ()))
    return 0


# --- scan --------------------------------------------------------------------

def cmd_scan(args) -> int:
    image = _read_image(args.image, args.max_image_bytes)
    meta = _load_sidecar_if_any(args.image)
    if args.mode == "aes":
        model = None
        if args.delta0 is not None:
            model = DecayModel(delta0=args.delta0, delta1=args.delta1 or 0.0)
        elif meta is not None:
            model = DecayModel(meta.ground, meta.delta0, meta.delta1)
        threshold = args.threshold
        if threshold is None and model is not None:
            threshold = scanner.default_aes_threshold(model.delta0, model.delta1)
        if threshold is not None:
            print(f"schedule scan threshold: {threshold} mismatch bits",
                  file=sys.stderr)
        findings = scanner.scan_aes(image, max_mismatch_bits=threshold,
                                    model=model, threads=args.threads)
    elif args.mode == "entropy":
        findings = scanner.scan_entropy(image, args.window, args.min_entropy)
    elif args.mode == "rsa-der":
        findings = scanner.scan_rsa_der(image)
    else:  # brute
        if not args.plaintext or not args.ciphertext:
            raise InvalidInputError("brute mode needs --plaintext and --ciphertext")
        findings = scanner.scan_brute_force(
            image, bytes.fromhex(args.plaintext), bytes.fromhex(args.ciphertext),
            args.stride)
    text = scanner.findings_to_jsonl(findings)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0 if findings else 1


# --- recover-aes ---------------------------------------------------------------

def cmd_recover_aes(args) -> int:
    image = _read_image(args.image, args.max_image_bytes)
    if args.offset < 0 or args.offset + aeskit.SCHEDULE_BYTES > image.length:
        raise InvalidInputError("offset leaves no room for a schedule")
    observed = image.data[args.offset:args.offset + aeskit.SCHEDULE_BYTES]
    meta = _load_sidecar_if_any(args.image)
    if args.delta0 is not None:
        model = DecayModel(GroundSpec(args.ground or 0), args.delta0,
                           args.delta1 or 0.0)
    elif meta is not None:
        model = DecayModel(meta.ground, meta.delta0, meta.delta1)
    else:
        model = DecayModel(GroundSpec(args.ground or 0), 0.5, 0.0)
    budget = ReconstructionBudget(
        max_up_flips=args.max_up_flips, max_nodes=args.max_nodes,
        time_limit=args.time_limit, max_candidates=args.max_candidates)
    result = reconstruct_tree(observed, model, budget)
    doc = {
        "keys": [{"hex": r.key.hex(), "log_likelihood": r.log_likelihood,
                  "down_flips": r.down_flips, "up_flips": r.up_flips}
                 for r in result],
        "exhaustive": result.exhaustive,
        "nodes": result.nodes,
    }
    print(json.dumps(doc, indent=2))
    return 0 if result.candidates else 1


# --- recover-rsa ---------------------------------------------------------------

def cmd_recover_rsa(args) -> int:
    pub, obs = rsarec.load_observed(args.observed)
    if args.mode == "perfect":
        pair = rsarec.reconstruct_pq_perfect(pub, obs, args.ground)
        if pair is None:
            print(json.dumps({"found": False}))
            return 1
        print(json.dumps({"found": True, "p": str(pair[0]), "q": str(pair[1])}))
        return 0
    model = DecayModel(GroundSpec(args.ground), args.delta0, args.delta1)
    results = rsarec.reconstruct_pq_ml(pub, obs, model, args.list_size,
                                       args.ground)
    verified = [c for c in results if c.verified]
    doc = {"verified": [{"p": str(c.p), "q": str(c.q),
                         "log_likelihood": c.log_likelihood} for c in verified],
           "list_size": args.list_size, "candidates": len(results)}
    print(json.dumps(doc, indent=2))
    return 0 if verified else 1


# --- shield / unshield ----------------------------------------------------------

def cmd_shield(args) -> int:
    sk = shieldstore.shield(bytes.fromhex(args.key), args.bits, args.seed)
    doc = {"r": sk.r.hex(), "masked": sk.masked.hex(), "b": sk.b}
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_unshield(args) -> int:
    doc = json.loads(Path(args.infile).read_text())
    sk = shieldstore.ShieldedKey(bytes.fromhex(doc["r"]),
                                 bytes.fromhex(doc["masked"]), int(doc["b"]))
    print(shieldstore.unshield(sk).hex())
    return 0


# --- bench ----------------------------------------------------------------------

@dataclass
class BenchRecord:
    scenario: str
    delta0: float
    delta1: float
    kind: str
    trials: int
    successes: int
    median_ms: float
    mean_ms: float
    nodes: int
    seed: int

    def row(self) -> list[str]:
        return [self.scenario, str(self.delta0), str(self.delta1), self.kind,
                str(self.trials), str(self.successes),
                f"{self.median_ms:.3f}", f"{self.mean_ms:.3f}",
                str(self.nodes), str(self.seed)]


def _bench_aes_tree(args) -> BenchRecord:
    model = DecayModel(GroundSpec(), args.delta0, args.delta1)
    budget = ReconstructionBudget(
        max_up_flips=args.max_up_flips, max_nodes=args.max_nodes,
        time_limit=args.time_limit, max_candidates=16)
    times, nodes, successes = [], 0, 0
    for t in range(args.trials):
        key = np.random.Generator(np.random.PCG64(args.seed + 2 * t)).bytes(16)
        sched = aeskit.expand_key(key)
        observed = apply_decay(MemoryImage(sched.data), model,
                               args.seed + 2 * t + 1)
        t0 = time.monotonic()
        result = reconstruct_tree(observed.data, model, budget)
        times.append((time.monotonic() - t0) * 1000.0)
        nodes += result.nodes
        if result.best is not None and result.best.key.data == key:
            successes += 1
    return BenchRecord(args.scenario, args.delta0, args.delta1, "aes-128",
                       args.trials, successes, statistics.median(times),
                       statistics.fmean(times), nodes, args.seed)


def _bench_rsa(args, ml: bool) -> BenchRecord:
    model = DecayModel(GroundSpec(), args.delta0, args.delta1)
    half = args.modulus_bits // 2
    times, nodes, successes = [], 0, 0
    for t in range(args.trials):
        p, q = rsarec.generate_balanced_factors(args.modulus_bits,
                                                args.seed + 3 * t)
        pub = rsarec.RsaPublicKey(p * q, 65537)
        obs = rsarec.RsaObservedPrivate(
            rsarec.observe_bits(p, half, args.delta0, args.delta1,
                                args.seed + 3 * t + 1),
            rsarec.observe_bits(q, half, args.delta0, args.delta1,
                                args.seed + 3 * t + 2))
        t0 = time.monotonic()
        if ml:
            results = rsarec.reconstruct_pq_ml(pub, obs, model, args.list_size)
            ok = any(c.verified and {c.p, c.q} == {p, q} for c in results)
            nodes += len(results)
        else:
            pair = rsarec.reconstruct_pq_perfect(pub, obs)
            ok = pair is not None and {pair[0], pair[1]} == {p, q}
        times.append((time.monotonic() - t0) * 1000.0)
        successes += int(ok)
    kind = f"rsa-{args.modulus_bits}"
    return BenchRecord(args.scenario, args.delta0, args.delta1, kind,
                       args.trials, successes, statistics.median(times),
                       statistics.fmean(times), nodes, args.seed)


_BENCH_RUNNERS = {
    "aes-tree": lambda a: _bench_aes_tree(a),
    "rsa-perfect": lambda a: _bench_rsa(a, ml=False),
    "rsa-ml": lambda a: _bench_rsa(a, ml=True),
}


def cmd_bench(args) -> int:
    if args.kind not in _BENCH_RUNNERS:
        raise InvalidInputError(f"unknown bench kind: {args.kind}")
    if args.scenario is None:
        args.scenario = f"{args.kind}-d{args.delta0}"
    record = _BENCH_RUNNERS[args.kind](args)
    out = Path(args.out)
    fresh = not out.exists()
    with out.open("a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(BENCH_HEADER)
        writer.writerow(record.row())
    meta_path = Path(str(out) + ".meta.json")
    if not meta_path.exists():
        meta_path.write_text(json.dumps(
            {"rng": DECAY_RNG_ALGORITHM, "package": "remanence",
             "version": __version__}, indent=2) + "\n")
    print(",".join(record.row()))
    return 0


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="remanence",
        description="cold-boot decay simulation, key scanning, and recovery")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_cap(p):
        p.add_argument("--max-image-bytes", type=int, default=DEFAULT_IMAGE_CAP,
                       help="refuse images larger than this (default 4 GiB)")

    p = sub.add_parser("plant", help="build a fixture image with planted keys")
    p.add_argument("--size", required=True, help="image size, e.g. 1M or 64M")
    p.add_argument("--fill", choices=["random", "zero"], default="random")
    p.add_argument("--seed", type=int, help="required with --fill random")
    p.add_argument("--ground", type=int, choices=[0, 1], default=0)
    p.add_argument("--aes-key", action="append", metavar="HEX",
                   help="plant this key's expanded schedule (repeatable)")
    p.add_argument("--offset", action="append", type=int,
                   help="offset for the matching --aes-key")
    p.add_argument("--rsa-der", action="append", metavar="FILE",
                   help="plant raw DER bytes from FILE (repeatable)")
    p.add_argument("--rsa-offset", action="append", type=int)
    p.add_argument("--plant-delta0", type=float, default=0.0,
                   help="decay planted payloads at this rate before writing")
    p.add_argument("--plant-delta1", type=float, default=0.0)
    p.add_argument("--out", required=True)
    add_cap(p)
    p.set_defaults(func=cmd_plant)

    p = sub.add_parser("decay", help="apply the asymmetric decay channel")
    p.add_argument("--delta0", type=float, required=True)
    p.add_argument("--delta1", type=float, default=0.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--ground", type=int, choices=[0, 1])
    p.add_argument("infile")
    p.add_argument("out")
    add_cap(p)
    p.set_defaults(func=cmd_decay)

    p = sub.add_parser("scan", help="locate candidate key material")
    p.add_argument("--mode", choices=["aes", "entropy", "rsa-der", "brute"],
                   required=True)
    p.add_argument("--threshold", type=int,
                   help="aes: max mismatch bits (default: derived from model)")
    p.add_argument("--delta0", type=float, help="aes: channel for the default threshold")
    p.add_argument("--delta1", type=float)
    p.add_argument("--window", type=int, default=256, help="entropy: window bytes")
    p.add_argument("--min-entropy", type=float, default=7.0)
    p.add_argument("--plaintext", metavar="HEX", help="brute: known plaintext block")
    p.add_argument("--ciphertext", metavar="HEX", help="brute: matching ciphertext")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--threads", type=int, help=f"workers (else ${scanner.THREADS_ENV})")
    p.add_argument("--out", help="write findings here instead of stdout")
    p.add_argument("image")
    add_cap(p)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("recover-aes", help="reconstruct a key from a schedule offset")
    p.add_argument("--offset", type=int, required=True)
    p.add_argument("--delta0", type=float)
    p.add_argument("--delta1", type=float)
    p.add_argument("--ground", type=int, choices=[0, 1])
    p.add_argument("--max-up-flips", type=int, default=0)
    p.add_argument("--max-nodes", type=int)
    p.add_argument("--time-limit", type=float)
    p.add_argument("--max-candidates", type=int, default=16)
    p.add_argument("image")
    add_cap(p)
    p.set_defaults(func=cmd_recover_aes)

    p = sub.add_parser("recover-rsa", help="reconstruct RSA factors from observed bits")
    p.add_argument("--mode", choices=["perfect", "ml"], default="perfect")
    p.add_argument("--delta0", type=float, default=0.0, help="ml: channel rate")
    p.add_argument("--delta1", type=float, default=0.0)
    p.add_argument("--ground", type=int, choices=[0, 1], default=0)
    p.add_argument("--list-size", type=int, default=1 << 14)
    p.add_argument("observed", help="JSON observed-key file")
    p.set_defaults(func=cmd_recover_rsa)

    p = sub.add_parser("shield", help="store a key as (R, K xor H(R))")
    p.add_argument("--key", required=True, metavar="HEX")
    p.add_argument("--bits", type=int, required=True, help="random buffer size")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_shield)

    p = sub.add_parser("unshield", help="recover a shielded key")
    p.add_argument("infile", help="JSON produced by shield")
    p.set_defaults(func=cmd_unshield)

    p = sub.add_parser("bench", help="run a benchmark scenario, append CSV")
    p.add_argument("--kind", choices=sorted(_BENCH_RUNNERS), required=True)
    p.add_argument("--scenario", help="row id (default: derived from kind)")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--delta0", type=float, default=0.3)
    p.add_argument("--delta1", type=float, default=0.0)
    p.add_argument("--max-up-flips", type=int, default=0)
    p.add_argument("--max-nodes", type=int)
    p.add_argument("--time-limit", type=float)
    p.add_argument("--modulus-bits", type=int, default=256)
    p.add_argument("--list-size", type=int, default=1 << 14)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
