"""Simulated secure element.

Holds the hardware key, performs hardware-bound AES-256-GCM, issues and checks
HMAC auth tokens and derives the iOS passcode key. The hardware key is never
handed out; callers only ever see GCM ciphertexts and their decryptions.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
import threading
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .core import GCM_NONCE_LEN, GCM_OVERHEAD, AuthToken, CipherId
from .errors import EnrollmentError
from .rand import RandomSource, SeededRandom, randint64, resolve

SIGMA_CIPH = CipherId.AES_256_GCM
DEFAULT_TOKEN_WINDOW = 600
DEFAULT_KDF_ITERATIONS = 10_000
FREE_ATTEMPTS = 5
FIRST_DELAY = 30
MAX_DELAY = 3600


def delay_schedule(failures: int) -> int:
    """Ticks a caller must wait after ``failures`` consecutive wrong passcodes."""
    if failures < FREE_ATTEMPTS:
        return 0
    return min(FIRST_DELAY << (failures - FREE_ATTEMPTS), MAX_DELAY)


@dataclass(frozen=True)
class Passcode:
    secret: bytes = field(repr=False)

    def __post_init__(self) -> None:
        if not self.secret:
            raise ValueError("passcode must be non-empty")

    @classmethod
    def of(cls, value: Passcode | bytes | str) -> Passcode:
        if isinstance(value, Passcode):
            return value
        return cls(value.encode() if isinstance(value, str) else bytes(value))


@dataclass
class _User:
    salt: bytes
    digest: bytes
    hmac_key: bytes
    failures: int = 0
    last_failure_at: int | None = None


def _token_message(user_id: int, challenge: int, issued_at: int) -> bytes:
    return struct.pack("<QQQ", user_id, challenge, issued_at)


class Tee:
    """Single-owner secure element state; every call is serialized by an internal lock."""

    def __init__(
        self,
        seed: bytes | str | None = None,
        *,
        rng: RandomSource | None = None,
        token_window: int = DEFAULT_TOKEN_WINDOW,
        kdf_iterations: int = DEFAULT_KDF_ITERATIONS,
    ) -> None:
        if seed is not None:
            seeded = SeededRandom(seed)
            self._sigma_key = seeded.fork("sigma-key").bytes(32)
            self._rng = rng if rng is not None else seeded.fork("tee-nonces")
        else:
            self._rng = resolve(rng)
            self._sigma_key = self._rng.bytes(32)
        self._aead = AESGCM(self._sigma_key)
        self._users: dict[int, _User] = {}
        self._lock = threading.RLock()
        self.token_window = token_window
        self.kdf_iterations = kdf_iterations
        self.clock = 0

    def advance(self, ticks: int) -> int:
        if ticks < 0:
            raise ValueError("the clock is monotonic")
        with self._lock:
            self.clock += ticks
            return self.clock

    def _now(self, now: int | None) -> int:
        return self.clock if now is None else now

    # hardware-bound encryption

    def encrypt(self, plaintext: bytes, ad: bytes = b"") -> bytes:
        with self._lock:
            nonce = self._rng.bytes(GCM_NONCE_LEN)
            return nonce + self._aead.encrypt(nonce, plaintext, ad or None)

    def decrypt(self, ciphertext: bytes, ad: bytes = b"") -> bytes | None:
        if len(ciphertext) < GCM_OVERHEAD:
            return None
        with self._lock:
            try:
                return self._aead.decrypt(ciphertext[:GCM_NONCE_LEN], ciphertext[GCM_NONCE_LEN:], ad or None)
            except InvalidTag:
                return None

    # enrollment and passcode gating

    def enroll_user(self, user_id: int, passcode: Passcode | bytes | str) -> None:
        passcode = Passcode.of(passcode)
        with self._lock:
            if user_id in self._users:
                raise EnrollmentError(f"user {user_id} is already enrolled")
            salt = self._rng.bytes(16)
            self._users[user_id] = _User(
                salt=salt,
                digest=hashlib.sha256(salt + passcode.secret).digest(),
                hmac_key=self._rng.bytes(32),
            )

    def is_enrolled(self, user_id: int) -> bool:
        return user_id in self._users

    def failure_count(self, user_id: int) -> int:
        user = self._users.get(user_id)
        return 0 if user is None else user.failures

    def retry_at(self, user_id: int) -> int:
        """Earliest tick at which the next passcode attempt is considered."""
        user = self._users[user_id]
        if user.last_failure_at is None:
            return 0
        return user.last_failure_at + delay_schedule(user.failures)

    def _check_passcode(self, user_id: int, passcode: Passcode, now: int) -> _User | None:
        user = self._users.get(user_id)
        if user is None:
            raise EnrollmentError(f"user {user_id} is not enrolled")
        if user.last_failure_at is not None and now < self.retry_at(user_id):
            return None
        candidate = hashlib.sha256(user.salt + passcode.secret).digest()
        if not hmac.compare_digest(candidate, user.digest):
            user.failures += 1
            user.last_failure_at = now
            return None
        user.failures = 0
        user.last_failure_at = None
        return user

    # Android tokens

    def generate_token(
        self, user_id: int, passcode: Passcode | bytes | str, now: int | None = None
    ) -> AuthToken | None:
        passcode = Passcode.of(passcode)
        with self._lock:
            now = self._now(now)
            user = self._check_passcode(user_id, passcode, now)
            if user is None:
                return None
            challenge = randint64(self._rng)
            mac = hmac.new(user.hmac_key, _token_message(user_id, challenge, now), hashlib.sha256).digest()
            return AuthToken(user_id=user_id, challenge=challenge, issued_at=now, mac=mac)

    def verify_token(self, token: AuthToken | None, now: int | None = None) -> bool:
        if token is None or token.mac is None:
            return False
        with self._lock:
            now = self._now(now)
            user = self._users.get(token.user_id)
            if user is None:
                return False
            if not 0 <= now - token.issued_at <= self.token_window:
                return False
            expected = hmac.new(
                user.hmac_key, _token_message(token.user_id, token.challenge, token.issued_at), hashlib.sha256
            ).digest()
            return hmac.compare_digest(expected, token.mac)

    # iOS passcode key

    def derive_master_key_ios(
        self, user_id: int, passcode: Passcode | bytes | str, now: int | None = None
    ) -> AuthToken | None:
        passcode = Passcode.of(passcode)
        with self._lock:
            now = self._now(now)
            user = self._check_passcode(user_id, passcode, now)
            if user is None:
                return None
            # hardware key entangled into the salt: derivation only works on this device
            salt = hashlib.sha256(b"sep-entangle" + self._sigma_key + user.salt).digest()
            derived = hashlib.pbkdf2_hmac("sha256", passcode.secret, salt, self.kdf_iterations, 32)
            return AuthToken(user_id=user_id, challenge=0, issued_at=now, derived_key=derived)

    # persistence hooks for the CLI's sealed state file

    def _dump_state(self) -> dict:
        with self._lock:
            return {
                "sigma_key": self._sigma_key.hex(),
                "token_window": self.token_window,
                "kdf_iterations": self.kdf_iterations,
                "clock": self.clock,
                "users": {
                    str(uid): {
                        "salt": u.salt.hex(),
                        "digest": u.digest.hex(),
                        "hmac_key": u.hmac_key.hex(),
                        "failures": u.failures,
                        "last_failure_at": u.last_failure_at,
                    }
                    for uid, u in self._users.items()
                },
            }

    @classmethod
    def _load_state(cls, state: dict, rng: RandomSource | None = None) -> Tee:
        tee = cls(rng=rng, token_window=state["token_window"], kdf_iterations=state["kdf_iterations"])
        tee._sigma_key = bytes.fromhex(state["sigma_key"])
        tee._aead = AESGCM(tee._sigma_key)
        tee.clock = state["clock"]
        for uid, u in state["users"].items():
            tee._users[int(uid)] = _User(
                salt=bytes.fromhex(u["salt"]),
                digest=bytes.fromhex(u["digest"]),
                hmac_key=bytes.fromhex(u["hmac_key"]),
                failures=u["failures"],
                last_failure_at=u["last_failure_at"],
            )
        return tee

    def __repr__(self) -> str:
        return f"Tee(users={len(self._users)}, clock={self.clock})"
