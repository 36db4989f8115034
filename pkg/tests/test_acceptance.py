"""Acceptance criteria, one test each. Every test records a PASS/FAIL line that
is printed in the terminal summary, including its measured runtime."""

import json
import os
import random
import time
from pathlib import Path

import pytest

import golden
import oracles
from conftest import ACCEPTANCE
from mobilefbe.bootsim import Phase, ScenarioRunner, expected_live
from mobilefbe.core import CipherId, KdfMode, KeyClass, MasterKey, NodeType, Platform, kgen
from mobilefbe.experiment import ContentRepetitionAdversary, GameConfig, TrivialAdversary, estimate_advantage
from mobilefbe.fsenc import EncryptedStore, decrypt_store, encrypt_store
from mobilefbe.kdf import IvContext, KdfConfig, get_iv, kdf
from mobilefbe.keyring import Keyring
from mobilefbe.keywrap import decode_blob, encode_blob, unwrap_blob
from mobilefbe.rand import SeededRandom
from trees import random_tree

pytestmark = pytest.mark.acceptance

SCENARIOS = Path(__file__).parent / "fixtures" / "scenarios"

PAIRINGS = [
    (mode, cipher)
    for mode in (KdfMode.V1, KdfMode.V2_DEFAULT, KdfMode.IV_INO_LBLK_64)
    for cipher in (CipherId.AES_256_XTS, CipherId.AES_128_CBC_ESSIV, CipherId.ADIANTUM)
] + [(KdfMode.ADIANTUM_DIRECT_KEY, CipherId.ADIANTUM)]


def record(cid, ok, detail, elapsed, budget):
    within = elapsed < budget
    ACCEPTANCE[cid] = (ok and within, f"{detail}; {elapsed:.2f}s (budget {budget:g}s)")
    assert ok, detail
    assert within, f"{cid} took {elapsed:.2f}s, budget {budget}s"


def test_ac1_tree_round_trips():
    start = time.perf_counter()
    r = random.Random("ac1")
    trees = failures = nodes = 0
    for mode, cipher in PAIRINGS:
        for _ in range(100):
            store = random_tree(r, 100)
            ring = Keyring()
            kid = ring.provision_key(kgen(256, SeededRandom(r.randbytes(16))))
            est = encrypt_store(store, kid, ring, mode, cipher, rng=SeededRandom(r.randbytes(16)))
            back = decrypt_store(EncryptedStore.from_bytes(est.to_bytes()), kid, ring)
            trees += 1
            nodes += len(store)
            failures += back != store
    elapsed = time.perf_counter() - start
    record("AC1 round trip", failures == 0 and trees == 1000,
           f"{trees} trees / {nodes} nodes over {len(PAIRINGS)} pairings, {failures} mismatches", elapsed, 60)


def _golden_blobs():
    files, _ = golden.build()
    return {name: data for name, data in files.items() if name.endswith(".mfbe")}


def test_ac2_tamper_every_bit():
    start = time.perf_counter()
    tee = golden.golden_tee()
    android_token = tee.generate_token(0, golden.PASSCODE)
    ios_token = tee.derive_master_key_ios(0, golden.PASSCODE)
    blobs = _golden_blobs()
    layers_seen = set()
    flips = accepts = baseline_fail = 0
    for name, blob in blobs.items():
        phi, bpol = decode_blob(blob)
        layers_seen.add((bpol.platform, phi.layer_count))
        assert len(blob) <= 256
        token = android_token if bpol.platform is Platform.ANDROID else ios_token
        token = token if bpol.auth_token_required else None
        baseline_fail += unwrap_blob(blob, tee, token) is None
        for bit in range(len(blob) * 8):
            mutated = bytearray(blob)
            mutated[bit // 8] ^= 1 << (bit % 8)
            flips += 1
            accepts += unwrap_blob(bytes(mutated), tee, token) is not None
    elapsed = time.perf_counter() - start
    covered = {(Platform.ANDROID, 1), (Platform.IOS, 1), (Platform.IOS, 2), (Platform.IOS, 3)} <= layers_seen
    record("AC2 tamper", accepts == 0 and baseline_fail == 0 and covered,
           f"{flips} single-bit flips over {len(blobs)} blobs, {accepts} false accepts", elapsed, 30)


def test_ac3_v1_reversible():
    start = time.perf_counter()
    r = random.Random("ac3")
    cfg = KdfConfig(bytes(16))
    bad = 0
    for i in range(100):
        k = MasterKey(r.randbytes(32 if i % 2 else 16))
        n = r.randbytes(16)
        d = kdf(k, n, KdfMode.V1, cfg, CipherId.AES_256_XTS)
        bad += oracles.ecb_decrypt(n, d.val)[: len(k)] != k.val
    record("AC3 v1 reversal", bad == 0, f"100 (k, n) pairs, {bad} failed to invert", time.perf_counter() - start, 1)


def test_ac4_hkdf_oracle():
    start = time.perf_counter()
    r = random.Random("ac4")
    cfg = KdfConfig(bytes(16))
    bad = 0
    for i in range(100):
        k, n = MasterKey(r.randbytes(32)), r.randbytes(16)
        names = bool(i % 2)
        cipher = CipherId.AES_256_CTS_CBC if names else CipherId.AES_256_XTS
        got = kdf(k, n, KdfMode.V2_DEFAULT, cfg, cipher, for_names=names).val
        info = b"fscrypt" + (b"\x02" if names else b"\x01") + n
        bad += got != oracles.hkdf(k.val, info, cipher.key_size)
    record("AC4 HKDF oracle", bad == 0, f"100 derivations, {bad} mismatches", time.perf_counter() - start, 1)


def test_ac5_iv_injectivity():
    start = time.perf_counter()
    dummy = kdf(MasterKey(bytes(32)), bytes(16), KdfMode.V2_DEFAULT, KdfConfig(bytes(16)), CipherId.AES_256_XTS)
    n = os.urandom(16)
    default = {get_iv(IvContext(NodeType.FILE, lbn, 1, n, KdfMode.V2_DEFAULT, CipherId.AES_256_XTS), dummy)
               for lbn in range(10_000)}
    grid = {get_iv(IvContext(NodeType.FILE, lbn, ino, n, KdfMode.IV_INO_LBLK_64, CipherId.AES_256_XTS), dummy)
            for lbn in range(128) for ino in range(128)}
    collisions = (10_000 - len(default)) + (128 * 128 - len(grid))
    record("AC5 IV injectivity", collisions == 0,
           f"10000 default IVs + 16384 (lbn, inode) IVs, {collisions} collisions", time.perf_counter() - start, 5)


class CoverageRunner(ScenarioRunner):
    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.checked = set()

    def step(self, cmd, args):
        out = super().step(cmd, args)
        if cmd == "expect":
            self.checked.add((self.device.platform, self.device.phase, KeyClass.parse(args[0]), args[1] == "live"))
        return out


def test_ac6_availability_matrix():
    start = time.perf_counter()
    required = {
        (platform, phase, cls)
        for platform in Platform
        for phase in Phase
        for cls in KeyClass.for_platform(platform)
    }
    checked, failures = set(), []
    for script in ("android_matrix.txt", "ios_matrix.txt"):
        runner = CoverageRunner(SCENARIOS, seed=6)
        result = runner.run((SCENARIOS / script).read_text())
        if not result.ok:
            failures.append(f"{script}:{result.line_no} {result.message}")
        checked |= runner.checked
    # the scripts' expectations must agree with the reference table too
    disagree = [c for c in checked if (c[2] in expected_live(c[0], c[1])) != c[3]]
    missing = required - {c[:3] for c in checked}
    record("AC6 availability", not failures and not missing and not disagree,
           f"{len(required) - len(missing)}/{len(required)} (platform, phase, class) cells asserted, "
           f"failures={failures}, table disagreements={len(disagree)}",
           time.perf_counter() - start, 5)


def test_ac7_game_sanity():
    start = time.perf_counter()
    trials = 2000
    trivial = estimate_advantage(TrivialAdversary, trials, seed="ac7-trivial")
    correct = estimate_advantage(ContentRepetitionAdversary, trials, seed="ac7-correct")
    broken = estimate_advantage(ContentRepetitionAdversary, trials, seed="ac7-broken",
                                cfg=GameConfig(constant_nonce=True))
    ok = trivial == 0.0 and correct <= 0.05 and broken >= 0.9
    record("AC7 game", ok,
           f"trivial={trivial:.3f} (=0), repetition/correct={correct:.3f} (<=0.05), "
           f"repetition/constant-nonce={broken:.3f} (>=0.9), {trials} trials per arm",
           time.perf_counter() - start, 300)


def test_ac8_golden_formats():
    start = time.perf_counter()
    gdir = golden.GOLDEN_DIR
    manifest = json.loads((gdir / "manifest.json").read_text())
    rebuilt, rebuilt_manifest = golden.build()
    problems = []
    if rebuilt_manifest != manifest:
        problems.append("manifest differs from a fresh rebuild")
    tee = golden.golden_tee()
    android_token = tee.generate_token(0, golden.PASSCODE)
    ios_token = tee.derive_master_key_ios(0, golden.PASSCODE)
    for name, meta in manifest["blobs"].items():
        data = (gdir / name).read_bytes()
        if data != rebuilt[name]:
            problems.append(f"{name}: rebuild not byte-identical")
        phi, bpol = decode_blob(data)
        if encode_blob(phi, bpol) != data or phi.layer_count != meta["layers"]:
            problems.append(f"{name}: decode/encode mismatch")
        token = (android_token if bpol.platform is Platform.ANDROID else ios_token) if bpol.auth_token_required else None
        k = unwrap_blob(data, tee, token)
        if k is None or k.val.hex() != meta["key"]:
            problems.append(f"{name}: unwrapped key differs")
    expected_tree = golden.golden_tree()
    for name, meta in manifest["containers"].items():
        data = (gdir / name).read_bytes()
        if data != rebuilt[name]:
            problems.append(f"{name}: rebuild not byte-identical")
        est = EncryptedStore.from_bytes(data)
        if est.to_bytes() != data or est.mode.name != meta["mode"] or est.cipher.name != meta["cipher"]:
            problems.append(f"{name}: decode/encode mismatch")
        ring = Keyring()
        kid = ring.provision_key(MasterKey(bytes.fromhex(meta["key"])))
        tree = decrypt_store(est, kid, ring)
        if tree is None or [(n.name, n.content) for n in tree.preorder()] != [
            (n.name, n.content) for n in expected_tree.preorder()
        ]:
            problems.append(f"{name}: decrypted tree differs")
    total = len(manifest["blobs"]) + len(manifest["containers"])
    record("AC8 golden formats", not problems, f"{total} fixtures checked, problems={problems}",
           time.perf_counter() - start, 1)
