"""Security game for the node-encryption scheme.

One run plays: setup, stage 1 (oracle queries and a challenge choice),
encryption of one of two challenge files under the chosen handle, stage 2,
and the adversary's guess. Advantage is estimated by Monte-Carlo over seeds.

Both arms of :func:`estimate_advantage` reuse the same per-trial seed, so an
adversary whose view does not depend on ``b`` scores exactly zero.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol

from .ciphers import aes_ecb_decrypt
from .core import (
    AuthToken,
    BoundPolicy,
    CipherId,
    KdfMode,
    MasterKey,
    Node,
    NodeType,
    Platform,
    Policy,
    Usage,
    WrappedKey,
    kgen,
)
from .errors import ChallengeError, PolicyError
from .fsenc import EncryptedNode, dec_fs_ciph, decrypt_node, encrypt_node
from .kdf import IvContext, KdfConfig, kdf
from .keyring import KeyId, Keyring
from .keywrap import WRAP_CIPHER, unwrap_key, wrap_key_android, wrap_key_ios
from .rand import ConstantRandom, RandomSource, SeededRandom
from .tee import Tee


@dataclass(frozen=True)
class GameConfig:
    mode: KdfMode = KdfMode.V2_DEFAULT
    cipher: CipherId = CipherId.AES_256_XTS
    platform: Platform = Platform.ANDROID
    lam: int = 256
    # negative controls
    constant_nonce: bool = False
    share_keys: bool = False


@dataclass
class WrapRecord:
    k: MasterKey
    w: MasterKey
    phi: WrappedKey
    bpol: BoundPolicy


@dataclass
class GameState:
    b: int
    ring: Keyring
    l_wrap: list[WrapRecord] = field(default_factory=list)
    revealed: set[KeyId] = field(default_factory=set)
    challenged_kid: KeyId | None = None
    challenge_ct: EncryptedNode | None = None
    # fingerprints of O^enc outputs, per handle
    enc_outputs: dict[KeyId, set[bytes]] = field(default_factory=dict)

    @property
    def enc_outputs_under_challenge(self) -> set[bytes]:
        if self.challenged_kid is None:
            return set()
        return self.enc_outputs.get(self.challenged_kid, set())


def _canon(x: Any) -> bytes:
    """Injective byte encoding of oracle arguments and results, for transcript digests."""
    if x is None:
        return b"N"
    if isinstance(x, bool):
        return b"B" + bytes([x])
    if isinstance(x, int):
        return b"I" + str(x).encode() + b";"
    if isinstance(x, (bytes, bytearray)):
        return b"Y" + struct.pack("<I", len(x)) + bytes(x)
    if isinstance(x, (list, tuple)):
        return b"L" + struct.pack("<I", len(x)) + b"".join(_canon(i) for i in x)
    if isinstance(x, MasterKey):
        return b"K" + _canon(x.val)
    if isinstance(x, WrappedKey):
        return b"W" + _canon((x.layer_count, x.ct))
    if isinstance(x, BoundPolicy):
        return b"P" + _canon((x.cipher, x.wrapkey_ct, x.auth_token_required, x.usage, x.platform))
    if isinstance(x, Policy):
        return b"Q" + _canon((x.cipher, x.usage, x.auth_token))
    if isinstance(x, AuthToken):
        return b"T" + _canon((x.user_id, x.challenge, x.issued_at, x.mac, x.derived_key))
    if isinstance(x, Node):
        return b"F" + _canon((x.node_type, x.name, x.content, x.children, x.inode_number, x.base_lbn, x.meta))
    if isinstance(x, EncryptedNode):
        return b"E" + x.to_record()
    raise TypeError(f"no canonical encoding for {type(x).__name__}")


def _digest(x: Any) -> str:
    return hashlib.sha256(_canon(x)).hexdigest()


class Oracles:
    """Oracle interface handed to the adversary. Inputs are copied, never mutated."""

    def __init__(
        self,
        state: GameState,
        cfg: GameConfig,
        tee: Tee,
        *,
        key_rng: RandomSource,
        nonce_rng: RandomSource,
        kdf_cfg: KdfConfig,
        tape: RandomSource,
    ) -> None:
        self._state = state
        self.cfg = cfg
        self._tee = tee
        self._key_rng = key_rng
        self._nonce_rng = nonce_rng
        self._shared_key: MasterKey | None = None
        self.kdf_cfg = kdf_cfg
        self.tape = tape
        self.transcript: list[str] = []

    def _log(self, name: str, args: Any, result: Any) -> None:
        self.transcript.append(f"{len(self.transcript)} {name} {_digest(args)} {_digest(result)}")

    def _fresh_class_key(self) -> MasterKey:
        if self.cfg.share_keys:
            if self._shared_key is None:
                self._shared_key = kgen(self.cfg.lam, self._key_rng)
            return self._shared_key
        return kgen(self.cfg.lam, self._key_rng)

    def wrap(self, pol: Policy) -> tuple[WrappedKey, BoundPolicy] | None:
        result = self._wrap(pol)
        self._log("wrap", pol, result)
        return result

    def _wrap(self, pol: Policy) -> tuple[WrappedKey, BoundPolicy] | None:
        if pol.cipher is not WRAP_CIPHER or pol.platform is not self.cfg.platform:
            return None
        k, w = self._fresh_class_key(), kgen(256, self._key_rng)
        try:
            if self.cfg.platform is Platform.ANDROID:
                out = wrap_key_android(k, w, pol, self._tee, rng=self._key_rng)
            else:
                out = wrap_key_ios(k, w, pol, self._tee, rng=self._key_rng)
        except PolicyError:
            return None
        if out is None:
            return None
        self._state.l_wrap.append(WrapRecord(k, w, *out))
        return out

    def unwrap(self, phi: WrappedKey, bpol: BoundPolicy) -> KeyId | None:
        k = unwrap_key(phi, bpol, self._tee)
        kid = None if k is None else self._state.ring.provision_key(k, bpol)
        self._log("unwrap", (phi, bpol), kid)
        return kid

    def enc(self, kid: KeyId, fnode: Node) -> EncryptedNode | None:
        enode = self._encrypt(kid, fnode)
        if enode is not None:
            self._state.enc_outputs.setdefault(kid, set()).add(enode.fingerprint())
        self._log("enc", (kid, fnode), enode)
        return enode

    def _encrypt(self, kid: KeyId, fnode: Node) -> EncryptedNode | None:
        return encrypt_node(
            fnode.copy(), kid, self.cfg.mode, self._state.ring, self.kdf_cfg, self.cfg.cipher, rng=self._nonce_rng
        )

    def dec(self, kid: KeyId, enode: EncryptedNode) -> Node | None:
        st = self._state
        result = None
        forbidden = kid == st.challenged_kid and (
            enode == st.challenge_ct or enode.fingerprint() in st.enc_outputs_under_challenge
        )
        if not forbidden:
            result = decrypt_node(enode, kid, self.cfg.mode, st.ring, self.kdf_cfg, self.cfg.cipher)
        self._log("dec", (kid, enode), result)
        return result

    def reveal(self, kid: KeyId) -> MasterKey | None:
        st = self._state
        result = None
        if kid != st.challenged_kid:
            entry = st.ring.lookup(kid)
            if entry is not None:
                st.revealed.add(kid)
                result = entry.key
        self._log("reveal", kid, result)
        return result


class Adversary(Protocol):
    def stage1(self, oracles: Oracles) -> tuple[Node, Node, KeyId, Any]: ...

    def stage2(self, oracles: Oracles, state: Any, enode: EncryptedNode) -> int: ...


def _validate_challenge(st: GameState, f0: Node, f1: Node, kid: KeyId) -> None:
    if f0.node_type is not NodeType.FILE or f1.node_type is not NodeType.FILE:
        raise ChallengeError("challenge nodes must be files")
    if f0.meta is not None or f1.meta is not None:
        raise ChallengeError("challenge nodes must not carry a nonce")
    if len(f0.content) != len(f1.content):
        raise ChallengeError("challenge contents must have equal length")
    if kid in st.revealed:
        raise ChallengeError("challenge handle has been revealed")
    if kid not in st.ring:
        raise ChallengeError("challenge handle is not live")


@dataclass
class GameResult:
    guess: int
    transcript: list[str]


def play(adv: Adversary, b: int, seed: int | bytes | str, cfg: GameConfig | None = None) -> GameResult:
    if b not in (0, 1):
        raise ValueError("b is a bit")
    cfg = cfg or GameConfig()
    root = SeededRandom(seed)
    tee = Tee(rng=root.fork("tee"))
    state = GameState(b=b, ring=Keyring())
    oracles = Oracles(
        state,
        cfg,
        tee,
        key_rng=root.fork("keys"),
        nonce_rng=ConstantRandom() if cfg.constant_nonce else root.fork("nonces"),
        kdf_cfg=KdfConfig(root.fork("uuid").bytes(16)),
        tape=root.fork("adversary"),
    )
    f0, f1, kid, adv_state = adv.stage1(oracles)
    _validate_challenge(state, f0, f1, kid)
    state.challenged_kid = kid
    challenge = oracles._encrypt(kid, (f0, f1)[b])
    if challenge is None:
        raise ChallengeError("challenge encryption failed")
    state.challenge_ct = challenge
    oracles._log("challenge", (kid, f0, f1), challenge)
    guess = adv.stage2(oracles, adv_state, challenge)
    if guess not in (0, 1):
        raise ValueError(f"adversary must output a bit, got {guess!r}")
    oracles._log("guess", None, guess)
    return GameResult(guess, oracles.transcript)


def run_experiment(adv: Adversary, b: int, seed: int | bytes | str, cfg: GameConfig | None = None) -> int:
    return play(adv, b, seed, cfg).guess


def estimate_advantage(
    adv: Adversary | Callable[[], Adversary],
    trials: int,
    seed: int | str = 0,
    cfg: GameConfig | None = None,
) -> float:
    """|P[b'=1 | b=1] - P[b'=1 | b=0]| over ``trials`` runs per arm."""
    if trials < 1:
        raise ValueError("trials must be at least 1")
    factory = adv if isinstance(adv, type) or not hasattr(adv, "stage1") else (lambda: adv)
    ones = [0, 0]
    for t in range(trials):
        trial_seed = f"{seed}/{t}"
        for b in (0, 1):
            ones[b] += run_experiment(factory(), b, trial_seed, cfg)
    return abs(ones[1] - ones[0]) / trials


# adversaries


def _handle(oracles: Oracles, usage: Usage = Usage.DEVICE_DATA_AFTER_BOOT) -> KeyId:
    out = oracles.wrap(Policy(WRAP_CIPHER, usage))
    if out is None:
        raise ChallengeError(f"wrap oracle refused {usage.name}")
    kid = oracles.unwrap(*out)
    if kid is None:
        raise ChallengeError("unwrap oracle refused its own output")
    return kid


def _default_usage(oracles: Oracles) -> Usage:
    if oracles.cfg.platform is Platform.ANDROID:
        return Usage.DEVICE_DATA_AFTER_BOOT
    return Usage.FILE_PROTECTION_NONE


def _coin(oracles: Oracles) -> int:
    return oracles.tape.bytes(1)[0] & 1


class TrivialAdversary:
    """Submits the same file twice and guesses at random."""

    def __init__(self, size: int = 64) -> None:
        self.size = size

    def stage1(self, oracles):
        kid = _handle(oracles, _default_usage(oracles))
        f = Node.file(oracles.tape.bytes(self.size))
        return f, f.copy(), kid, None

    def stage2(self, oracles, state, enode):
        return _coin(oracles)


class ConstantAdversary:
    """Always answers 0."""

    def stage1(self, oracles):
        kid = _handle(oracles, _default_usage(oracles))
        return Node.file(b"\x00" * 32), Node.file(b"\xff" * 32), kid, None

    def stage2(self, oracles, state, enode):
        return 0


class ContentRepetitionAdversary:
    """Encrypts fnode_0 under kid* first, then checks whether the challenge repeats it.

    Against fresh per-node nonces the two ciphertexts never match. With a
    constant nonce the scheme is deterministic and the match reveals b.
    """

    def __init__(self, size: int = 4096) -> None:
        self.size = size

    def stage1(self, oracles):
        kid = _handle(oracles, _default_usage(oracles))
        f0 = Node.file(oracles.tape.bytes(self.size), inode_number=7)
        f1 = Node.file(oracles.tape.bytes(self.size), inode_number=7)
        reference = oracles.enc(kid, f0)
        return f0, f1, kid, reference.enc_content

    def stage2(self, oracles, state, enode):
        return 0 if enode.enc_content == state else 1


class V1KeyRecoveryAdversary:
    """Uses the reversibility of the v1 derivation.

    It reveals a second, non-challenge handle, derives a per-file key from it,
    inverts that key back to the master key with AES-ECB decryption and tries
    the result on the challenge. This only helps if the harness hands out the
    same master key twice (``share_keys``); otherwise it guesses.
    """

    def __init__(self, size: int = 64) -> None:
        self.size = size

    def stage1(self, oracles):
        usage = _default_usage(oracles)
        other, kid = _handle(oracles, usage), _handle(oracles, usage)
        f0 = Node.file(oracles.tape.bytes(self.size))
        f1 = Node.file(oracles.tape.bytes(self.size))
        probe = oracles.enc(other, Node.file(bytes(16)))
        k_other = oracles.reveal(other)
        derived = kdf(k_other, probe.meta, KdfMode.V1, oracles.kdf_cfg, oracles.cfg.cipher)
        recovered = MasterKey(aes_ecb_decrypt(probe.meta, derived.val)[: len(k_other)])
        return f0, f1, kid, (f0, f1, recovered)

    def stage2(self, oracles, state, enode):
        f0, f1, k = state
        cfg = oracles.cfg
        k_e = kdf(k, enode.meta, cfg.mode, oracles.kdf_cfg, cfg.cipher)
        ctx = IvContext(NodeType.FILE, enode.base_lbn, enode.inode_number, enode.meta, cfg.mode, cfg.cipher)
        plain = dec_fs_ciph(enode.enc_content, k_e, ctx, enode.content_length)
        if plain == f0.content:
            return 0
        if plain == f1.content:
            return 1
        return _coin(oracles)


class MalleabilityAdversary:
    """Flips one bit in the last cipher block and asks O^dec for the rest.

    Length-preserving content ciphers are unauthenticated, so the mauled
    ciphertext is a legal decryption query and its first block still matches
    the chosen plaintext. This wins against XTS/CBC/Adiantum-style content
    encryption, which is not IND-CCA.
    """

    def __init__(self, size: int = 64) -> None:
        if size < 32:
            raise ValueError("needs at least two cipher blocks")
        self.size = size

    def stage1(self, oracles):
        kid = _handle(oracles, _default_usage(oracles))
        f0 = Node.file(oracles.tape.bytes(self.size))
        f1 = Node.file(oracles.tape.bytes(self.size))
        return f0, f1, kid, (kid, f0)

    def stage2(self, oracles, state, enode):
        kid, f0 = state
        mauled = bytearray(enode.enc_content)
        mauled[-1] ^= 0x01
        forged = EncryptedNode(
            enode.meta, enode.node_type, bytes(mauled), (), enode.inode_number, enode.base_lbn, enode.content_length
        )
        plain = oracles.dec(kid, forged)
        if plain is None:
            return _coin(oracles)
        return 0 if plain.content[:16] == f0.content[:16] else 1


ADVERSARIES: dict[str, Callable[[], Adversary]] = {
    "trivial": TrivialAdversary,
    "constant": ConstantAdversary,
    "content-repetition": ContentRepetitionAdversary,
    "v1-key-recovery": V1KeyRecoveryAdversary,
    "malleability": MalleabilityAdversary,
}
