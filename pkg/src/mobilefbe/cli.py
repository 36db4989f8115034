"""Command-line front end.

Persistent state lives in one passphrase-encrypted file (``tee.sealed`` by
default): the simulated TEE (hardware key, enrolled user, clock) and the
table of provisioned key handles. Handles map to sealed MFBE blobs, never to
plaintext keys; each command unwraps what it needs in-process.

Exit codes: 0 success, 1 rejected operation or bad input file, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import __version__
from .bootsim import run_script
from .ciphers import XtsStandIn, register_adiantum
from .core import GCM_NONCE_LEN, CipherId, KdfMode, KeyClass, MasterKey, NodeType, Platform, Policy, kgen
from .errors import MfbeError
from .experiment import ADVERSARIES, GameConfig, play
from .fsenc import CONTAINER_MAGIC, EncryptedStore, NodeStore, decrypt_store, encrypt_store
from .kdf import IvContext, KdfConfig, get_iv, kdf
from .keyring import Keyring
from .keywrap import BLOB_MAGIC, WRAP_CIPHER, decode_blob, encode_blob, unwrap_blob, wrap_key
from .rand import RandomSource, SeededRandom
from .tee import Tee

STATE_MAGIC = b"MFBT"
STATE_VERSION = 1
KEY_MAGIC = b"MFBK"
KEY_VERSION = 1
STATE_KDF_ITERATIONS = 50_000
DEFAULT_PASSPHRASE = "mfbe-sim"
USER_ID = 0

MODES = {
    "v1": KdfMode.V1,
    "v2": KdfMode.V2_DEFAULT,
    "ino-lblk-64": KdfMode.IV_INO_LBLK_64,
    "direct-key": KdfMode.ADIANTUM_DIRECT_KEY,
}
CONTENT_CIPHERS = {
    "xts": CipherId.AES_256_XTS,
    "cbc-essiv": CipherId.AES_128_CBC_ESSIV,
    "adiantum": CipherId.ADIANTUM,
}


class Rejected(Exception):
    """A domain-level rejection; maps to exit code 1."""


class UsageError(Exception):
    """Bad combination of arguments; maps to exit code 2."""


# sealed state


class Session:
    def __init__(self, path: Path, passphrase: str, rng: RandomSource | None) -> None:
        self.path = path
        self.passphrase = passphrase.encode()
        self.rng = rng
        self.handles: dict[str, str] = {}
        self.next_kid = 1
        if path.exists():
            state = self._unseal(path.read_bytes())
            self.tee = Tee._load_state(state["tee"], rng=self._fork("tee-nonces"))
            self.handles = state.get("handles", {})
            self.next_kid = state.get("next_kid", 1)
        else:
            self.tee = Tee(rng=self._fork("tee"))

    def _fork(self, label: str) -> RandomSource | None:
        return self.rng.fork(label) if isinstance(self.rng, SeededRandom) else None

    def _key(self, salt: bytes) -> bytes:
        return hashlib.pbkdf2_hmac("sha256", self.passphrase, salt, STATE_KDF_ITERATIONS, 32)

    def _unseal(self, data: bytes) -> dict:
        if data[:4] != STATE_MAGIC or len(data) < 4 + 1 + 16 + GCM_NONCE_LEN:
            raise MfbeError(f"{self.path} is not a sealed TEE state file")
        if data[4] != STATE_VERSION:
            raise MfbeError(f"unsupported TEE state version {data[4]}")
        salt, nonce, ct = data[5:21], data[21:33], data[33:]
        try:
            plain = AESGCM(self._key(salt)).decrypt(nonce, ct, STATE_MAGIC)
        except InvalidTag:
            raise Rejected("cannot open TEE state: wrong passphrase or corrupted file") from None
        return json.loads(plain)

    def save(self) -> None:
        rng = self._fork("state-seal")
        draw = rng.bytes if rng is not None else os.urandom
        salt, nonce = draw(16), draw(GCM_NONCE_LEN)
        body = json.dumps(
            {"tee": self.tee._dump_state(), "handles": self.handles, "next_kid": self.next_kid}, sort_keys=True
        ).encode()
        ct = AESGCM(self._key(salt)).encrypt(nonce, body, STATE_MAGIC)
        self.path.write_bytes(STATE_MAGIC + bytes([STATE_VERSION]) + salt + nonce + ct)

    def ensure_user(self, passcode: str) -> None:
        if not self.tee.is_enrolled(USER_ID):
            self.tee.enroll_user(USER_ID, passcode)

    def token_for(self, platform: Platform, passcode: str | None):
        if passcode is None:
            return None
        self.ensure_user(passcode)
        if platform is Platform.ANDROID:
            token = self.tee.generate_token(USER_ID, passcode)
        else:
            token = self.tee.derive_master_key_ios(USER_ID, passcode)
        if token is None:
            raise Rejected(f"passcode rejected (failures={self.tee.failure_count(USER_ID)})")
        return token

    def seal_key(self, k: MasterKey) -> bytes:
        return KEY_MAGIC + bytes([KEY_VERSION]) + self.tee.encrypt(k.val, KEY_MAGIC)

    def open_key(self, data: bytes) -> MasterKey:
        if data[:4] != KEY_MAGIC or len(data) < 5 or data[4] != KEY_VERSION:
            raise MfbeError("not a sealed key file")
        raw = self.tee.decrypt(data[5:], KEY_MAGIC)
        if raw is None:
            raise Rejected("sealed key does not open under this TEE")
        return MasterKey(raw)


# helpers


def _rng(args) -> RandomSource | None:
    seed = os.environ.get("MFBE_SEED", args.seed)
    return None if seed is None else SeededRandom(str(seed))


def _session(args) -> Session:
    passphrase = args.tee_passphrase or os.environ.get("MFBE_TEE_PASSPHRASE", DEFAULT_PASSPHRASE)
    return Session(Path(args.tee), passphrase, _rng(args))


def _key_class(platform: Platform, text: str) -> KeyClass:
    cls = KeyClass.parse(text)
    if cls.platform is not platform:
        raise UsageError(f"{cls.label} is not a {platform.name.lower()} key class")
    return cls


def _blob_key(sess: Session, blob: bytes, passcode: str | None) -> MasterKey:
    _, bpol = decode_blob(blob)
    token = sess.token_for(bpol.platform, passcode) if bpol.auth_token_required else None
    k = unwrap_blob(blob, sess.tee, token)
    if k is None:
        hint = " (this key needs --passcode)" if bpol.auth_token_required and passcode is None else ""
        raise Rejected("unwrap rejected the blob" + hint)
    return k


def _tree_key(sess: Session, args) -> MasterKey:
    if args.blob:
        blob = Path(args.blob).read_bytes()
    else:
        blob_hex = sess.handles.get(str(args.kid))
        if blob_hex is None:
            raise Rejected(f"kid {args.kid} is not provisioned")
        blob = bytes.fromhex(blob_hex)
    return _blob_key(sess, blob, args.passcode)


# subcommands


def cmd_keygen(args, out) -> int:
    sess = _session(args)
    k = kgen(args.lam, sess._fork(f"keygen:{args.out}"))
    Path(args.out).write_bytes(sess.seal_key(k))
    sess.save()
    print(f"wrote {args.out} ({args.lam}-bit key, sealed)", file=out)
    return 0


def cmd_wrap(args, out) -> int:
    sess = _session(args)
    platform = Platform[args.platform.upper()]
    cls = _key_class(platform, args.usage)
    rng = sess._fork(f"wrap:{args.out}")
    k = sess.open_key(Path(args.key).read_bytes())
    w = sess.open_key(Path(args.wrap_key).read_bytes()) if args.wrap_key else kgen(256, rng)
    if platform is Platform.IOS and cls is KeyClass.CLASS_D:
        w = None
    if cls.token_gated and args.passcode is None:
        raise UsageError(f"{cls.label} is passcode gated; pass --passcode")
    token = sess.token_for(platform, args.passcode) if cls.token_gated else None
    result = wrap_key(k, w, Policy(WRAP_CIPHER, cls.usage, token), sess.tee, rng=rng)
    sess.save()
    if result is None:
        raise Rejected("wrap guard rejected the policy")
    blob = encode_blob(*result)
    Path(args.out).write_bytes(blob)
    print(f"wrote {args.out} ({len(blob)} bytes, {result[0].layer_count} layer(s))", file=out)
    return 0


def cmd_unwrap(args, out) -> int:
    sess = _session(args)
    try:
        k = _blob_key(sess, Path(args.blob).read_bytes(), args.passcode)
    finally:
        sess.save()
    if args.out:
        Path(args.out).write_bytes(sess.seal_key(k))
        sess.save()
    print(f"unwrap ok ({len(k)}-byte key)", file=out)
    return 0


def cmd_provision(args, out) -> int:
    sess = _session(args)
    blob = Path(args.blob).read_bytes()
    try:
        _blob_key(sess, blob, args.passcode)
    finally:
        sess.save()
    kid = sess.next_kid
    sess.next_kid += 1
    sess.handles[str(kid)] = blob.hex()
    sess.save()
    print(f"kid {kid}", file=out)
    return 0


def cmd_evict(args, out) -> int:
    sess = _session(args)
    if sess.handles.pop(str(args.kid), None) is None:
        raise Rejected(f"kid {args.kid} is not provisioned")
    sess.save()
    print(f"evicted kid {args.kid}", file=out)
    return 0


def _install(sess: Session, args) -> tuple[Keyring, int]:
    ring = Keyring()
    kid = ring.provision_key(_tree_key(sess, args))
    return ring, kid


def cmd_encrypt_tree(args, out) -> int:
    sess = _session(args)
    try:
        ring, kid = _install(sess, args)
    finally:
        sess.save()
    rng = sess._fork(f"encrypt-tree:{args.out}")
    store = NodeStore.from_path(args.inp, rng=rng)
    estore = encrypt_store(store, kid, ring, MODES[args.mode], CONTENT_CIPHERS[args.cipher], rng=rng)
    ring.clear()
    if estore is None:
        raise Rejected("encryption rejected")
    Path(args.out).write_bytes(estore.to_bytes())
    print(f"wrote {args.out} ({len(estore.records)} nodes)", file=out)
    return 0


def cmd_decrypt_tree(args, out) -> int:
    sess = _session(args)
    try:
        ring, kid = _install(sess, args)
    finally:
        sess.save()
    estore = EncryptedStore.from_bytes(Path(args.inp).read_bytes())
    store = decrypt_store(estore, kid, ring)
    ring.clear()
    if store is None:
        raise Rejected("decryption rejected")
    store.to_path(args.out)
    print(f"wrote {args.out} ({len(store)} nodes)", file=out)
    return 0


def cmd_vectors(args, out) -> int:
    rng = _rng(args) or SeededRandom(b"vectors")
    cipher = CONTENT_CIPHERS[args.cipher]
    cfg = KdfConfig(bytes(16))
    for _ in range(args.count):
        k, n = kgen(256, rng), rng.bytes(16)
        for name, mode in MODES.items():
            if (mode is KdfMode.ADIANTUM_DIRECT_KEY) != (cipher is CipherId.ADIANTUM):
                continue
            ke = kdf(k, n, mode, cfg, cipher)
            print(f"mode={name} k={k.val.hex()} n={n.hex()} -> ke={ke.val.hex()}", file=out)
    # IVs with the plain (non-ESSIV) construction, which depends only on position
    for _ in range(args.count):
        lbn = int.from_bytes(rng.bytes(4), "little")
        ino = int.from_bytes(rng.bytes(4), "little")
        nonce = rng.bytes(16)
        for name, mode in (("v2", KdfMode.V2_DEFAULT), ("ino-lblk-64", KdfMode.IV_INO_LBLK_64), ("direct-key", KdfMode.ADIANTUM_DIRECT_KEY)):
            ctx = IvContext(NodeType.FILE, lbn, ino, nonce, mode, CipherId.AES_256_XTS)
            iv = get_iv(ctx, None)
            print(f"ivmode={name} lbn={lbn} ino={ino} nonce={nonce.hex()} -> iv={iv.hex()}", file=out)
    return 0


def cmd_bootsim(args, out) -> int:
    seed = os.environ.get("MFBE_SEED", args.seed)
    result = run_script(args.script, seed=seed)
    for line in result.log:
        print(line, file=out)
    if not result.ok:
        print(f"FAILED at line {result.line_no}: {result.message}", file=out)
        return 1
    print("all expectations passed", file=out)
    return 0


def cmd_experiment(args, out) -> int:
    seed = os.environ.get("MFBE_SEED", args.seed if args.seed is not None else 0)
    cfg = GameConfig(
        mode=MODES[args.mode],
        cipher=CONTENT_CIPHERS[args.cipher],
        platform=Platform[args.platform.upper()],
        constant_nonce=args.constant_nonce,
        share_keys=args.share_keys,
    )
    factory = ADVERSARIES[args.adversary]
    ones = [0, 0]
    lines = []
    for t in range(args.trials):
        for b in (0, 1):
            res = play(factory(), b, f"{seed}/{t}", cfg)
            ones[b] += res.guess
            if args.transcript:
                lines.append(f"# trial {t} b={b}")
                lines.extend(res.transcript)
    if args.transcript:
        Path(args.transcript).write_text("\n".join(lines) + "\n")
    adv = abs(ones[1] - ones[0]) / args.trials
    print(f"adversary={args.adversary} trials={args.trials} p1={ones[1] / args.trials:.3f} "
          f"p0={ones[0] / args.trials:.3f}", file=out)
    print(f"advantage {adv:.3f}", file=out)
    return 0


def _inspect_lines(data: bytes) -> list[str]:
    magic = data[:4]
    if magic == BLOB_MAGIC:
        phi, bpol = decode_blob(data)
        return [
            "type: MFBE wrapped-key blob",
            f"version: {data[4]}",
            f"platform: {bpol.platform.name.lower()}",
            f"usage: {bpol.usage.name}",
            f"cipher: {bpol.cipher.name}",
            f"layers: {phi.layer_count}",
            f"auth token required: {bpol.auth_token_required}",
            f"sealed wrap key: {len(bpol.wrapkey_ct or b'')} bytes",
            f"wrapped key: {len(phi.ct)} bytes",
        ]
    if magic == CONTAINER_MAGIC:
        estore = EncryptedStore.from_bytes(data)
        files = sum(r.node_type is NodeType.FILE for r in estore.records)
        return [
            "type: MFBC encrypted container",
            f"version: {data[4]}",
            f"uuid: {estore.uuid.hex()}",
            f"mode: {estore.mode.name}",
            f"content cipher: {estore.cipher.name}",
            f"nodes: {len(estore.records)} ({files} files, {len(estore.records) - files} directories)",
        ]
    if magic == KEY_MAGIC:
        return ["type: MFBK sealed key", f"version: {data[4]}", f"sealed payload: {len(data) - 5} bytes"]
    if magic == STATE_MAGIC:
        return ["type: MFBT sealed TEE state", f"version: {data[4]}", f"encrypted payload: {len(data) - 33} bytes"]
    raise MfbeError("unrecognised file (no MFBE/MFBC/MFBK/MFBT magic)")


def cmd_inspect(args, out) -> int:
    for line in _inspect_lines(Path(args.file).read_bytes()):
        print(line, file=out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mobilefbe", description="Mobile file-based encryption model")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--tee", default="tee.sealed", help="sealed TEE state file (default: %(default)s)")
    p.add_argument("--tee-passphrase", help="passphrase for the state file (or MFBE_TEE_PASSPHRASE)")
    p.add_argument("--seed", help="deterministic randomness (MFBE_SEED overrides)")
    p.add_argument("--adiantum-standin", action="store_true",
                   help="register the XTS-based placeholder in the Adiantum slot (not Adiantum)")
    # --seed is accepted before or after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", default=argparse.SUPPRESS, help=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("keygen", parents=[common], help="generate a class key, sealed to the TEE")
    s.add_argument("--lambda", dest="lam", type=int, choices=(128, 256), default=256)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_keygen)

    s = sub.add_parser("wrap", parents=[common], help="wrap a sealed key under a platform policy")
    s.add_argument("--platform", choices=("android", "ios"), required=True)
    s.add_argument("--usage", required=True, help="key class, e.g. de-system, ce-user, class-a")
    s.add_argument("--key", required=True, help="sealed key from keygen")
    s.add_argument("--wrap-key", help="sealed wrap key (fresh if omitted; iOS uses the ClassD key)")
    s.add_argument("--passcode")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_wrap)

    s = sub.add_parser("unwrap", parents=[common], help="check that a blob unwraps; optionally reseal the key")
    s.add_argument("--blob", required=True)
    s.add_argument("--passcode")
    s.add_argument("--out")
    s.set_defaults(func=cmd_unwrap)

    s = sub.add_parser("provision", parents=[common], help="register a blob under a new key handle")
    s.add_argument("--blob", required=True)
    s.add_argument("--passcode")
    s.set_defaults(func=cmd_provision)

    s = sub.add_parser("evict", parents=[common], help="drop a key handle")
    s.add_argument("--kid", type=int, required=True)
    s.set_defaults(func=cmd_evict)

    for name, func, help_ in (
        ("encrypt-tree", cmd_encrypt_tree, "encrypt a directory tree into an MFBC container"),
        ("decrypt-tree", cmd_decrypt_tree, "decrypt an MFBC container into a directory"),
    ):
        s = sub.add_parser(name, parents=[common], help=help_)
        src = s.add_mutually_exclusive_group(required=True)
        src.add_argument("--kid", type=int)
        src.add_argument("--blob")
        s.add_argument("--passcode")
        s.add_argument("--in", dest="inp", required=True)
        s.add_argument("--out", required=True)
        if name == "encrypt-tree":
            s.add_argument("--mode", choices=MODES, default="v2")
            s.add_argument("--cipher", choices=CONTENT_CIPHERS, default="xts")
        s.set_defaults(func=func)

    s = sub.add_parser("vectors", parents=[common], help="emit KDF and IV vectors")
    s.add_argument("--count", type=int, default=8)
    s.add_argument("--cipher", choices=CONTENT_CIPHERS, default="xts")
    s.set_defaults(func=cmd_vectors)

    s = sub.add_parser("bootsim", parents=[common], help="run a device scenario script")
    s.add_argument("script")
    s.set_defaults(func=cmd_bootsim)

    s = sub.add_parser("experiment", parents=[common], help="estimate an adversary's advantage in the security game")
    s.add_argument("--adversary", choices=ADVERSARIES, required=True)
    s.add_argument("--trials", type=int, default=1000)
    s.add_argument("--mode", choices=MODES, default="v2")
    s.add_argument("--cipher", choices=CONTENT_CIPHERS, default="xts")
    s.add_argument("--platform", choices=("android", "ios"), default="android")
    s.add_argument("--constant-nonce", action="store_true", help="broken config: one nonce for every node")
    s.add_argument("--share-keys", action="store_true", help="broken config: every wrap reuses one class key")
    s.add_argument("--transcript", help="write per-trial oracle transcripts here")
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("inspect", parents=[common], help="print the header of a blob, container or state file")
    s.add_argument("file")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv: list[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.adiantum_standin:
        register_adiantum(XtsStandIn())
    if getattr(args, "trials", 1) < 1:
        parser.error("--trials must be at least 1")
    try:
        return args.func(args, out)
    except UsageError as exc:
        parser.error(str(exc))
    except Rejected as exc:
        print(f"rejected: {exc}", file=sys.stderr)
        return 1
    except (MfbeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
