"""Platform key wrapping.

Android seals one GCM layer under a per-policy wrap key and stores that wrap
key TEE-encrypted inside the bound policy. iOS stacks layers: optional
passcode-key layer, wrap-key layer (the ClassD key), then the hardware layer.

Every layer is AES-256-GCM, so each layer adds a 12-byte nonce and a 16-byte
tag. The outermost layer authenticates ``usage || platform`` as associated
data, which binds a blob to the policy it was issued under.
"""

from __future__ import annotations

import struct

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .core import (
    GCM_NONCE_LEN,
    GCM_OVERHEAD,
    AuthToken,
    BoundPolicy,
    CipherId,
    MasterKey,
    Platform,
    Policy,
    Usage,
    WrappedKey,
)
from .errors import FormatError, PolicyError
from .rand import RandomSource, resolve
from .tee import Tee

WRAP_CIPHER = CipherId.AES_256_GCM
BLOB_MAGIC = b"MFBE"
BLOB_VERSION = 1
_HEADER = struct.Struct("<4sBBBBB")

_ANDROID_OPEN = (Usage.DEVICE_DATA_AFTER_BOOT, Usage.USER_DATA_AFTER_BOOT)


def _binding(usage: Usage, platform: Platform) -> bytes:
    return bytes([usage, platform])


def _seal(key: bytes, plaintext: bytes, ad: bytes | None, rng: RandomSource | None) -> bytes:
    nonce = resolve(rng).bytes(GCM_NONCE_LEN)
    return nonce + AESGCM(key).encrypt(nonce, plaintext, ad)


def _open(key: bytes, ciphertext: bytes, ad: bytes | None = None) -> bytes | None:
    if len(ciphertext) < GCM_OVERHEAD or len(key) != 32:
        return None
    try:
        return AESGCM(key).decrypt(ciphertext[:GCM_NONCE_LEN], ciphertext[GCM_NONCE_LEN:], ad)
    except InvalidTag:
        return None


def _check_wrap_inputs(w: MasterKey | None, pol: Policy) -> None:
    if pol.cipher is not WRAP_CIPHER:
        raise PolicyError(f"wrapping cipher is fixed to {WRAP_CIPHER.name}, got {pol.cipher.name}")
    if w is not None and len(w.val) != 32:
        raise PolicyError("wrap keys are 256-bit")


def expected_layers(usage: Usage, has_token: bool) -> int:
    """iOS class table: D -> 1, B-pub -> 2, A / B-priv / C -> 3."""
    if usage is Usage.FILE_PROTECTION_NONE:
        return 1
    return 3 if has_token else 2


def _layers_consistent(phi: WrappedKey) -> bool:
    return len(phi.ct) - GCM_OVERHEAD * phi.layer_count in (16, 32)


def _as_key(raw: bytes | None) -> MasterKey | None:
    if raw is None or len(raw) not in (16, 32):
        return None
    return MasterKey(raw)


# Android


def _android_guard(usage: Usage, token: AuthToken | None, tee: Tee, now: int | None) -> bool:
    if usage in _ANDROID_OPEN:
        return True
    return usage is Usage.USER_DATA_AFTER_AUTH and tee.verify_token(token, now)


def wrap_key_android(
    k: MasterKey,
    w: MasterKey,
    pol: Policy,
    tee: Tee,
    *,
    rng: RandomSource | None = None,
    now: int | None = None,
) -> tuple[WrappedKey, BoundPolicy] | None:
    _check_wrap_inputs(w, pol)
    if not _android_guard(pol.usage, pol.auth_token, tee, now):
        return None
    phi = _seal(w.val, k.val, _binding(pol.usage, Platform.ANDROID), rng)
    bpol = BoundPolicy(
        cipher=pol.cipher,
        wrapkey_ct=tee.encrypt(w.val),
        auth_token_required=pol.usage is Usage.USER_DATA_AFTER_AUTH,
        usage=pol.usage,
        platform=Platform.ANDROID,
        auth_token=pol.auth_token,
    )
    return WrappedKey(phi, 1), bpol


def unwrap_key_android(
    phi: WrappedKey, bpol: BoundPolicy, tee: Tee, *, now: int | None = None
) -> MasterKey | None:
    if bpol.platform is not Platform.ANDROID or bpol.cipher is not WRAP_CIPHER:
        return None
    if phi.layer_count != 1 or not _layers_consistent(phi):
        return None
    w = tee.decrypt(bpol.wrapkey_ct)
    if w is None:
        return None
    # the token is a gate, not a decryption input
    if not _android_guard(bpol.usage, bpol.auth_token, tee, now):
        return None
    return _as_key(_open(w, phi.ct, _binding(bpol.usage, Platform.ANDROID)))


# iOS


def wrap_key_ios(
    k: MasterKey,
    w: MasterKey | None,
    pol: Policy,
    tee: Tee,
    *,
    rng: RandomSource | None = None,
) -> tuple[WrappedKey, BoundPolicy]:
    if pol.platform is not Platform.IOS:
        raise PolicyError(f"{pol.usage.name} is not an iOS usage")
    _check_wrap_inputs(w, pol)
    token = pol.auth_token
    if token is not None and token.derived_key is None:
        raise PolicyError("iOS policies take a passcode-derived key, not an HMAC token")

    wrapkey_ct = None
    if pol.usage is Usage.FILE_PROTECTION_NONE:
        if token is not None:
            raise PolicyError("ClassD keys are not passcode protected")
        inner = k.val
    else:
        if w is None:
            raise PolicyError("iOS class keys other than ClassD need a wrap key")
        if token is None:
            if pol.usage is not Usage.FILE_PROTECTION_COMPLETE_UNLESS_OPEN:
                raise PolicyError(f"{pol.usage.name} requires a passcode-derived key")
            inner = _seal(w.val, k.val, None, rng)
        else:
            inner = _seal(w.val, _seal(token.derived_key, k.val, None, rng), None, rng)
        wrapkey_ct = tee.encrypt(w.val)

    layers = expected_layers(pol.usage, token is not None)
    phi = tee.encrypt(inner, _binding(pol.usage, Platform.IOS))
    bpol = BoundPolicy(
        cipher=pol.cipher,
        wrapkey_ct=wrapkey_ct,
        auth_token_required=layers == 3,
        usage=pol.usage,
        platform=Platform.IOS,
        auth_token=token,
    )
    return WrappedKey(phi, layers), bpol


def unwrap_key_ios(phi: WrappedKey, bpol: BoundPolicy, tee: Tee) -> MasterKey | None:
    if bpol.platform is not Platform.IOS or bpol.cipher is not WRAP_CIPHER:
        return None
    if not _layers_consistent(phi):
        return None
    if phi.layer_count != expected_layers(bpol.usage, bpol.auth_token_required):
        return None
    inner = tee.decrypt(phi.ct, _binding(bpol.usage, Platform.IOS))
    if inner is None:
        return None
    if bpol.usage is Usage.FILE_PROTECTION_NONE:
        return _as_key(inner)
    w = tee.decrypt(bpol.wrapkey_ct)
    if w is None:
        return None
    middle = _open(w, inner)
    if middle is None or phi.layer_count == 2:
        return _as_key(middle)
    token = bpol.auth_token
    if token is None or token.derived_key is None:
        return None
    return _as_key(_open(token.derived_key, middle))


def wrap_key(k, w, pol, tee, *, rng=None, now=None):
    """Dispatch on the policy's platform."""
    if pol.platform is Platform.IOS:
        return wrap_key_ios(k, w, pol, tee, rng=rng)
    return wrap_key_android(k, w, pol, tee, rng=rng, now=now)


def unwrap_key(phi: WrappedKey, bpol: BoundPolicy, tee: Tee, *, now: int | None = None) -> MasterKey | None:
    if bpol.platform is Platform.IOS:
        return unwrap_key_ios(phi, bpol, tee)
    return unwrap_key_android(phi, bpol, tee, now=now)


# blob format


def encode_blob(phi: WrappedKey, bpol: BoundPolicy) -> bytes:
    wrapkey_ct = bpol.wrapkey_ct or b""
    return b"".join(
        [
            _HEADER.pack(BLOB_MAGIC, BLOB_VERSION, bpol.platform, bpol.usage, bpol.cipher, phi.layer_count),
            struct.pack("<I", len(wrapkey_ct)),
            wrapkey_ct,
            struct.pack("<I", len(phi.ct)),
            phi.ct,
        ]
    )


def decode_blob(data: bytes) -> tuple[WrappedKey, BoundPolicy]:
    try:
        magic, version, platform, usage, cipher, layers = _HEADER.unpack_from(data, 0)
        if magic != BLOB_MAGIC:
            raise FormatError("not an MFBE blob")
        if version != BLOB_VERSION:
            raise FormatError(f"unsupported MFBE version {version}")
        pos = _HEADER.size
        (n_wrap,) = struct.unpack_from("<I", data, pos)
        pos += 4
        wrapkey_ct = data[pos : pos + n_wrap]
        pos += n_wrap
        (n_phi,) = struct.unpack_from("<I", data, pos)
        pos += 4
        ct = data[pos : pos + n_phi]
        pos += n_phi
        if len(wrapkey_ct) != n_wrap or len(ct) != n_phi or pos != len(data):
            raise FormatError("MFBE length fields do not match the blob size")
        platform, usage, cipher = Platform(platform), Usage(usage), CipherId(cipher)
        phi = WrappedKey(bytes(ct), layers)
        if platform is Platform.ANDROID:
            required = usage is Usage.USER_DATA_AFTER_AUTH
        else:
            required = layers == 3
        bpol = BoundPolicy(cipher, bytes(wrapkey_ct) or None, required, usage, platform)
    except FormatError:
        raise
    except (struct.error, ValueError, PolicyError) as exc:
        raise FormatError(f"malformed MFBE blob: {exc}") from exc
    return phi, bpol


def unwrap_blob(
    blob: bytes, tee: Tee, token: AuthToken | None = None, *, now: int | None = None
) -> MasterKey | None:
    """Decode and unwrap; any parse failure is a rejection like any other."""
    try:
        phi, bpol = decode_blob(blob)
    except FormatError:
        return None
    return unwrap_key(phi, bpol.with_token(token), tee, now=now)
