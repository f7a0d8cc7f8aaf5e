import json

import numpy as np
import pytest

import reference_aes
from remanence import (
    DecayModel,
    FindingKind,
    GroundSpec,
    InvalidInputError,
    MemoryImage,
    default_aes_threshold,
    expand_key,
    findings_to_jsonl,
    resolve_threads,
    scan_aes,
    scan_brute_force,
    scan_entropy,
    scan_rsa_der,
)
from remanence.scanner import THREADS_ENV, finding_from_dict

from conftest import decayed_schedule, seeded_bytes, seeded_key


def plant(background: bytes, offset: int, payload: bytes) -> MemoryImage:
    buf = bytearray(background)
    buf[offset:offset + len(payload)] = payload
    return MemoryImage(bytes(buf))


class TestScanAes:
    def test_exact_schedule_at_threshold_zero(self):
        key = seeded_key(1)
        img = plant(seeded_bytes(2, 8192), 1000, expand_key(key).data)
        found = scan_aes(img, max_mismatch_bits=0)
        assert [f.offset for f in found] == [1000]
        assert found[0].kind is FindingKind.AES_SCHEDULE
        assert found[0].score == 0.0
        assert found[0].extent == 176

    def test_decayed_schedule_found_in_megabyte(self):
        obs = decayed_schedule(seeded_key(3), 0.3, 0.0, 77)
        img = plant(seeded_bytes(4, 1 << 20), 65536, obs)
        found = scan_aes(img, max_mismatch_bits=500)
        assert 65536 in [f.offset for f in found]
        # the true offset scores best within its neighborhood
        best = min(found, key=lambda f: (f.score, f.offset))
        assert best.offset == 65536

    def test_no_findings_on_random_image(self):
        img = MemoryImage(seeded_bytes(5, 1 << 20))
        assert scan_aes(img, max_mismatch_bits=100) == []

    def test_offset_found_for_many_keys(self):
        for seed in range(100):
            key = seeded_key(seed)
            img = plant(seeded_bytes(1000 + seed, 2048), 512, expand_key(key).data)
            assert 512 in [f.offset for f in scan_aes(img, max_mismatch_bits=0)]

    def test_threshold_monotonicity(self):
        obs = decayed_schedule(seeded_key(6), 0.4, 0.0, 5)
        img = plant(seeded_bytes(7, 65536), 4096, obs)
        low = {f.offset for f in scan_aes(img, max_mismatch_bits=480)}
        high = {f.offset for f in scan_aes(img, max_mismatch_bits=560)}
        assert low <= high

    def test_ascending_offsets(self):
        img = MemoryImage(seeded_bytes(8, 1 << 18))
        found = scan_aes(img, max_mismatch_bits=620)
        offsets = [f.offset for f in found]
        assert offsets == sorted(offsets)

    def test_threads_do_not_change_results(self):
        obs = decayed_schedule(seeded_key(9), 0.3, 0.0, 11)
        img = plant(seeded_bytes(10, 1 << 18), 9999, obs)
        a = scan_aes(img, max_mismatch_bits=560, threads=1)
        b = scan_aes(img, max_mismatch_bits=560, threads=2)
        assert a == b

    def test_default_threshold_from_model(self):
        # matches the analytic mean + 4 sigma derivation
        assert default_aes_threshold(0.0, 0.0) == 0
        t = default_aes_threshold(0.3, 0.0)
        assert 450 < t < 560
        img = plant(seeded_bytes(11, 1 << 18), 300,
                    decayed_schedule(seeded_key(11), 0.3, 0.0, 13))
        found = scan_aes(img, model=DecayModel(GroundSpec(), 0.3, 0.0))
        assert 300 in [f.offset for f in found]

    def test_image_shorter_than_schedule_rejected(self):
        with pytest.raises(InvalidInputError):
            scan_aes(MemoryImage(b"\x00" * 100), max_mismatch_bits=0)

    def test_agrees_with_brute_force_on_clean_plants(self):
        key = seeded_key(12)
        img = plant(seeded_bytes(13, 32768), 21000, expand_key(key).data)
        pt = seeded_bytes(14, 16)
        ct = reference_aes.encrypt_block(key, pt)
        sched_hits = [f.offset for f in scan_aes(img, max_mismatch_bits=0)]
        brute_hits = [f.offset for f in scan_brute_force(img, pt, ct, stride=1)]
        assert sched_hits == brute_hits == [21000]


class TestScanEntropy:
    def test_all_zero_image(self):
        assert scan_entropy(MemoryImage(b"\x00" * 8192), 256, 7.0) == []

    def test_random_region_reported(self):
        img = plant(b"\x00" * 65536, 16384, seeded_bytes(15, 4096))
        found = scan_entropy(img, 256, 7.0)
        assert len(found) == 1
        region = found[0]
        assert region.kind is FindingKind.ENTROPY_REGION
        assert region.offset <= 16384 + 256
        assert region.offset + region.extent >= 16384 + 4096 - 256
        assert region.score >= 7.0

    def test_uniform_window_entropy_is_exactly_eight(self):
        img = MemoryImage(bytes(range(256)) * 4)
        found = scan_entropy(img, 256, 8.0)
        assert found and found[0].score == 8.0

    def test_window_larger_than_image_rejected(self):
        with pytest.raises(InvalidInputError):
            scan_entropy(MemoryImage(b"\x00" * 128), 256, 7.0)

    def test_tiny_or_odd_window_rejected(self):
        img = MemoryImage(b"\x00" * 1024)
        with pytest.raises(InvalidInputError):
            scan_entropy(img, 8, 7.0)
        with pytest.raises(InvalidInputError):
            scan_entropy(img, 255, 7.0)


class TestScanRsaDer:
    def test_long_form_pattern(self):
        img = plant(b"\x00" * 8192, 100, bytes.fromhex("308204A402010002"))
        found = scan_rsa_der(img)
        assert [(f.offset, f.extent) for f in found] == [(100, 8)]

    def test_short_form_pattern(self):
        img = plant(b"\x00" * 256, 10, bytes.fromhex("303f02010002"))
        assert [f.offset for f in scan_rsa_der(img)] == [10]

    def test_all_zero_image(self):
        assert scan_rsa_der(MemoryImage(b"\x00" * 4096)) == []

    def test_non_minimal_length_rejected(self):
        # 0x81 with value < 0x80 is not valid DER
        img = plant(b"\x00" * 256, 50, bytes.fromhex("30817f02010002"))
        assert scan_rsa_der(img) == []
        # leading zero length byte is not minimal either
        img = plant(b"\x00" * 256, 50, bytes.fromhex("3082001102010002"))
        assert [f.offset for f in scan_rsa_der(img)] == []
        img = plant(b"\x00" * 256, 50, bytes.fromhex("3082101102010002"))
        assert [f.offset for f in scan_rsa_der(img)] == [50]

    def test_real_der_key_found(self):
        from cryptography.hazmat.primitives import serialization
        from cryptography.hazmat.primitives.asymmetric import rsa

        key = rsa.generate_private_key(public_exponent=65537, key_size=2048)
        der = key.private_bytes(serialization.Encoding.DER,
                                serialization.PrivateFormat.TraditionalOpenSSL,
                                serialization.NoEncryption())
        img = plant(seeded_bytes(16, 32768), 7321, der)
        assert 7321 in [f.offset for f in scan_rsa_der(img)]

    def test_truncated_tail_still_reported(self):
        # header at the very end of the image, body missing
        img = plant(b"\x00" * 108, 100, bytes.fromhex("308204A402010002"))
        assert [f.offset for f in scan_rsa_der(img)] == [100]


class TestScanBruteForce:
    def test_planted_key_found(self):
        key = seeded_key(17)
        img = plant(seeded_bytes(18, 16384), 4096, key)
        pt = seeded_bytes(19, 16)
        ct = reference_aes.encrypt_block(key, pt)
        found = scan_brute_force(img, pt, ct, stride=1)
        assert [f.offset for f in found] == [4096]
        assert found[0].kind is FindingKind.BRUTE_FORCE_HIT

    def test_zero_image_no_findings(self):
        pt, ct = seeded_bytes(20, 16), seeded_bytes(21, 16)
        assert scan_brute_force(MemoryImage(b"\x00" * 4096), pt, ct, 16) == []

    def test_only_matching_key_reported(self):
        k1, k2 = seeded_key(22), seeded_key(23)
        img = plant(plant(b"\x00" * 8192, 1024, k1).data, 2048, k2)
        pt = seeded_bytes(24, 16)
        ct = reference_aes.encrypt_block(k1, pt)
        assert [f.offset for f in scan_brute_force(img, pt, ct, 1)] == [1024]

    def test_stride_respected(self):
        key = seeded_key(25)
        img = plant(b"\x00" * 4096, 100, key)  # unaligned for stride 16
        pt = seeded_bytes(26, 16)
        ct = reference_aes.encrypt_block(key, pt)
        assert scan_brute_force(img, pt, ct, stride=16) == []
        assert [f.offset for f in scan_brute_force(img, pt, ct, stride=4)] == [100]

    def test_bad_arguments_rejected(self):
        img = MemoryImage(b"\x00" * 64)
        with pytest.raises(InvalidInputError):
            scan_brute_force(img, b"\x00" * 15, b"\x00" * 16, 1)
        with pytest.raises(InvalidInputError):
            scan_brute_force(img, b"\x00" * 16, b"\x00" * 16, 0)


class TestSerialization:
    def test_jsonl_round_trip(self):
        findings = [
            scan_aes(plant(seeded_bytes(27, 2048), 512,
                           expand_key(seeded_key(27)).data),
                     max_mismatch_bits=0)[0],
            scan_entropy(plant(b"\x00" * 4096, 1024, seeded_bytes(28, 1024)),
                         256, 7.0)[0],
        ]
        lines = findings_to_jsonl(findings).splitlines()
        docs = [json.loads(line) for line in lines]
        assert docs[0] == {"offset": 512, "kind": "aes-schedule",
                           "score": 0.0, "extent": 176}
        assert [finding_from_dict(d) for d in docs] == findings


class TestThreadResolution:
    def test_argument_wins_over_env(self, monkeypatch):
        monkeypatch.setenv(THREADS_ENV, "4")
        assert resolve_threads(2) == 2
        assert resolve_threads(None) == 4

    def test_default_is_runtime_choice(self, monkeypatch):
        monkeypatch.delenv(THREADS_ENV, raising=False)
        assert resolve_threads(None) is None

    def test_bad_values_rejected(self, monkeypatch):
        with pytest.raises(InvalidInputError):
            resolve_threads(0)
        monkeypatch.setenv(THREADS_ENV, "zero")
        with pytest.raises(InvalidInputError):
            resolve_threads(None)
