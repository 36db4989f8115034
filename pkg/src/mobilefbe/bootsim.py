"""Device lifecycle simulator: provisioning, boot, user unlock, lock and power off.

Class keys exist in plaintext only inside the device keyring. Everything
persisted across power cycles is an MFBE blob sealed by the TEE.
"""

from __future__ import annotations

import enum
import logging
import shlex
from dataclasses import dataclass, field
from pathlib import Path

from .core import CipherId, KdfMode, KeyClass, MasterKey, Node, Platform, Policy, kgen
from .errors import BootHalted, DeviceStateError, FormatError
from .fsenc import EncryptedNode, decrypt_node, encrypt_node
from .kdf import KdfConfig
from .keyring import KeyId, Keyring
from .keywrap import WRAP_CIPHER, encode_blob, unwrap_blob, wrap_key_android, wrap_key_ios
from .rand import RandomSource, SeededRandom, resolve
from .tee import Passcode, Tee

log = logging.getLogger(__name__)

LOCK_EVICTION_DELAY = 10


class Phase(enum.Enum):
    POWERED_OFF = "PoweredOff"
    BOOTED = "Booted"
    USER_UNLOCKED = "UserUnlocked"
    LOCKED = "Locked"

    @classmethod
    def parse(cls, text: str) -> Phase:
        for p in cls:
            if text.lower() in (p.value.lower(), p.name.lower()):
                return p
        raise ValueError(f"unknown phase {text!r}")


_BOOT_CLASSES = {
    Platform.ANDROID: (KeyClass.DE_SYSTEM, KeyClass.DE_USER),
    Platform.IOS: (KeyClass.CLASS_D, KeyClass.CLASS_B_PUB),
}


def expected_live(platform: Platform, phase: Phase) -> frozenset[KeyClass]:
    """Which class keys must be installed in each phase."""
    if phase is Phase.POWERED_OFF:
        return frozenset()
    if phase is Phase.BOOTED:
        return frozenset(_BOOT_CLASSES[platform])
    everything = frozenset(KeyClass.for_platform(platform))
    if phase is Phase.LOCKED and platform is Platform.IOS:
        return everything - {KeyClass.CLASS_A}
    return everything


@dataclass
class Device:
    platform: Platform
    tee: Tee = field(default_factory=Tee)
    rng: RandomSource | None = None
    user_id: int = 0
    mode: KdfMode = KdfMode.V2_DEFAULT
    cipher: CipherId = CipherId.AES_256_XTS

    def __post_init__(self) -> None:
        self.phase = Phase.POWERED_OFF
        self.ring = Keyring()
        self.installed: dict[KeyClass, KeyId] = {}
        self.sealed_blobs: dict[KeyClass, bytes] = {}
        self.fs_cfg = KdfConfig(resolve(self.rng).bytes(16))
        self.last_token = None

    @property
    def provisioned(self) -> bool:
        return bool(self.sealed_blobs)

    def _require(self, *phases: Phase) -> None:
        if self.phase not in phases:
            allowed = ", ".join(p.value for p in phases)
            raise DeviceStateError(f"device is {self.phase.value}; needs {allowed}")

    # provisioning

    def first_boot(self, passcode: Passcode | bytes | str) -> None:
        if self.provisioned:
            raise DeviceStateError("device is already provisioned")
        self._require(Phase.POWERED_OFF)
        rng = self.rng
        self.tee.enroll_user(self.user_id, passcode)
        if self.platform is Platform.ANDROID:
            token = self.tee.generate_token(self.user_id, passcode)
            for cls in KeyClass.for_platform(Platform.ANDROID):
                pol = Policy(WRAP_CIPHER, cls.usage, token if cls.token_gated else None)
                out = wrap_key_android(kgen(256, rng), kgen(256, rng), pol, self.tee, rng=rng)
                if out is None:
                    raise DeviceStateError(f"could not wrap {cls.label} during provisioning")
                self.sealed_blobs[cls] = encode_blob(*out)
            return

        derived = self.tee.derive_master_key_ios(self.user_id, passcode)
        k_d = kgen(256, rng)
        # ClassB is a key pair in the real design; one symmetric key is sealed twice,
        # encrypt-only without the passcode and in full with it
        k_b = kgen(256, rng)
        keys = {KeyClass.CLASS_D: k_d, KeyClass.CLASS_B_PUB: k_b, KeyClass.CLASS_B_PRIV: k_b}
        for cls in KeyClass.for_platform(Platform.IOS):
            k = keys.get(cls) or kgen(256, rng)
            w = None if cls is KeyClass.CLASS_D else k_d
            pol = Policy(WRAP_CIPHER, cls.usage, derived if cls.token_gated else None)
            self.sealed_blobs[cls] = encode_blob(*wrap_key_ios(k, w, pol, self.tee, rng=rng))

    # transitions

    def _install(self, cls: KeyClass, k: MasterKey) -> None:
        if cls in self.installed:
            return
        self.installed[cls] = self.ring.provision_key(k, encrypt_only=cls is KeyClass.CLASS_B_PUB)

    def _evict(self, cls: KeyClass) -> None:
        kid = self.installed.pop(cls, None)
        if kid is not None:
            self.ring.evict_key(kid)

    def boot(self) -> None:
        self._require(Phase.POWERED_OFF)
        if not self.provisioned:
            raise DeviceStateError("device has not been provisioned")
        for cls in _BOOT_CLASSES[self.platform]:
            k = unwrap_blob(self.sealed_blobs[cls], self.tee)
            if k is None:
                self._evict_all()
                raise BootHalted(f"sealed blob for {cls.label} failed to authenticate; boot halted")
            self._install(cls, k)
        self.phase = Phase.BOOTED

    def _gated(self) -> list[KeyClass]:
        return [c for c in KeyClass.for_platform(self.platform) if c.token_gated]

    def user_unlock(self, passcode: Passcode | bytes | str) -> bool:
        """Unlock with the passcode. A wrong passcode leaves the phase unchanged and returns False."""
        self._require(Phase.BOOTED, Phase.LOCKED)
        if self.platform is Platform.ANDROID:
            token = self.tee.generate_token(self.user_id, passcode)
        else:
            token = self.tee.derive_master_key_ios(self.user_id, passcode)
        if token is None:
            return False
        self.last_token = token
        return self._unlock_with(token)

    def user_unlock_with_token(self, token) -> bool:
        """Present a previously issued token (Android replay path)."""
        self._require(Phase.BOOTED, Phase.LOCKED)
        return self._unlock_with(token)

    def _unlock_with(self, token) -> bool:
        keys = {}
        for cls in self._gated():
            if cls in self.installed:
                continue
            k = unwrap_blob(self.sealed_blobs[cls], self.tee, token)
            if k is None:
                return False
            keys[cls] = k
        for cls, k in keys.items():
            self._install(cls, k)
        self.phase = Phase.USER_UNLOCKED
        return True

    def lock(self) -> None:
        self._require(Phase.USER_UNLOCKED)
        if self.platform is Platform.IOS:
            log.info("ClassA evicted on lock (%d-tick delay modelled as immediate)", LOCK_EVICTION_DELAY)
            self._evict(KeyClass.CLASS_A)
        self.phase = Phase.LOCKED

    def _evict_all(self) -> None:
        for cls in list(self.installed):
            self._evict(cls)

    def power_off(self) -> None:
        self._evict_all()
        self.phase = Phase.POWERED_OFF

    # observation and use

    def is_live(self, cls: KeyClass) -> bool:
        kid = self.installed.get(cls)
        return kid is not None and kid in self.ring

    def live_classes(self) -> frozenset[KeyClass]:
        return frozenset(c for c in KeyClass.for_platform(self.platform) if self.is_live(c))

    def encrypt(self, cls: KeyClass, content: bytes, *, inode_number: int = 1) -> EncryptedNode | None:
        kid = self.installed.get(cls)
        if kid is None:
            return None
        fnode = Node.file(content, inode_number=inode_number)
        return encrypt_node(fnode, kid, self.mode, self.ring, self.fs_cfg, self.cipher, rng=self.rng)

    def decrypt(self, cls: KeyClass, enode: EncryptedNode) -> bytes | None:
        kid = self.installed.get(cls)
        if kid is None:
            return None
        node = decrypt_node(enode, kid, self.mode, self.ring, self.fs_cfg, self.cipher)
        return None if node is None else node.content


# scenario scripts


@dataclass
class ScriptResult:
    ok: bool
    line_no: int = 0
    message: str = ""
    log: list[str] = field(default_factory=list)


def _outcome(args: list[str], default: str = "ok") -> bool:
    word = args[0] if args else default
    if word not in ("ok", "fail"):
        raise FormatError(f"expected ok|fail, got {word!r}")
    return word == "ok"


class ScenarioRunner:
    """Interpreter for line-oriented scenario scripts.

    Commands (``#`` starts a comment; ``[ok|fail]`` states the expected outcome, default ok)::

        first_boot [android|ios] [passcode]
        boot [ok|halt]
        unlock <passcode> [ok|fail]
        replay [ok|fail]              re-present the last issued token
        lock | power_off
        advance <ticks>
        tamper <class>                flip one bit of a sealed blob
        enc <class> <path> [ok|fail]
        dec <class> <path> [ok|fail]  compare against the file on disk
        expect <class> live|dead
        expect_phase <phase>
        expect_failures <n>
    """

    def __init__(self, base_dir: str | Path = ".", *, seed: int | bytes | str | None = None) -> None:
        self.base_dir = Path(base_dir)
        self.seed = seed
        self.device: Device | None = None
        # last ciphertext produced from each path
        self.ciphertexts: dict[str, EncryptedNode] = {}

    def _dev(self) -> Device:
        if self.device is None:
            raise DeviceStateError("no device yet; run first_boot")
        return self.device

    def _check(self, cond: bool, message: str) -> None:
        if not cond:
            raise AssertionError(message)

    def step(self, cmd: str, args: list[str]) -> str:
        if cmd == "first_boot":
            platform = Platform[args[0].upper()] if args else Platform.ANDROID
            passcode = args[1] if len(args) > 1 else "0000"
            if self.device is None:
                if self.seed is None:
                    self.device = Device(platform)
                else:
                    rng = SeededRandom(self.seed)
                    self.device = Device(platform, Tee(rng=rng.fork("tee")), rng=rng.fork("device"))
            self.device.first_boot(passcode)
            return f"provisioned {platform.name.lower()}"
        dev = self._dev()
        if cmd == "boot":
            want_halt = bool(args) and args[0] == "halt"
            try:
                dev.boot()
            except BootHalted as exc:
                self._check(want_halt, str(exc))
                return f"halted: {exc}"
            self._check(not want_halt, "boot succeeded but a halt was expected")
            return "booted"
        if cmd == "unlock":
            if not args:
                raise FormatError("unlock needs a passcode")
            got = dev.user_unlock(args[0])
            self._check(got == _outcome(args[1:]), f"unlock returned {got}")
            return f"unlock -> {got}, failures={dev.tee.failure_count(dev.user_id)}"
        if cmd == "replay":
            if dev.last_token is None:
                raise DeviceStateError("no token has been issued")
            got = dev.user_unlock_with_token(dev.last_token)
            self._check(got == _outcome(args), f"replay returned {got}")
            return f"replay -> {got}"
        if cmd == "lock":
            dev.lock()
            return "locked"
        if cmd == "power_off":
            dev.power_off()
            return "powered off"
        if cmd == "advance":
            return f"clock={dev.tee.advance(int(args[0]))}"
        if cmd == "tamper":
            cls = KeyClass.parse(args[0])
            blob = bytearray(dev.sealed_blobs[cls])
            blob[-1] ^= 0x01
            dev.sealed_blobs[cls] = bytes(blob)
            return f"tampered {cls.label}"
        if cmd in ("enc", "dec"):
            cls, rel = KeyClass.parse(args[0]), args[1]
            want = _outcome(args[2:])
            content = (self.base_dir / rel).read_bytes()
            if cmd == "enc":
                enode = dev.encrypt(cls, content)
                self._check((enode is not None) == want, f"enc under {cls.label} gave {enode is not None}")
                if enode is not None:
                    self.ciphertexts[rel] = enode
                return f"enc {cls.label} {rel} -> {'ok' if enode else 'fail'}"
            enode = self.ciphertexts.get(rel)
            if enode is None:
                raise DeviceStateError(f"nothing has been encrypted from {rel}")
            plain = dev.decrypt(cls, enode)
            self._check((plain == content) == want, f"dec under {cls.label} gave {'match' if plain == content else 'no match'}")
            return f"dec {cls.label} {rel} -> {'ok' if plain == content else 'fail'}"
        if cmd == "expect":
            cls, state = KeyClass.parse(args[0]), args[1]
            if state not in ("live", "dead"):
                raise FormatError(f"expected live|dead, got {state!r}")
            self._check(dev.is_live(cls) == (state == "live"), f"{cls.label} is not {state}")
            return f"{cls.label} {state}"
        if cmd == "expect_phase":
            want = Phase.parse(args[0])
            self._check(dev.phase is want, f"phase is {dev.phase.value}, expected {want.value}")
            return f"phase {want.value}"
        if cmd == "expect_failures":
            got = dev.tee.failure_count(dev.user_id)
            self._check(got == int(args[0]), f"failure count is {got}")
            return f"failures {got}"
        raise FormatError(f"unknown command {cmd!r}")

    def run(self, text: str) -> ScriptResult:
        result = ScriptResult(ok=True)
        for no, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            cmd, *args = shlex.split(line)
            try:
                out = self.step(cmd, args)
            except (AssertionError, DeviceStateError, FormatError, KeyError, ValueError, IndexError, OSError) as exc:
                msg = str(exc) or type(exc).__name__
                result.log.append(f"{no}: {line} -> FAIL: {msg}")
                return ScriptResult(False, no, msg, result.log)
            result.log.append(f"{no}: {line} -> {out}")
        return result


def run_script(path: str | Path, *, seed: int | bytes | str | None = None) -> ScriptResult:
    path = Path(path)
    return ScenarioRunner(path.parent, seed=seed).run(path.read_text())
