"""Per-node key derivation and IV construction for the fscrypt-style modes."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .ciphers import aes_ecb_encrypt
from .core import NONCE_LEN, CipherId, DerivedKey, KdfMode, MasterKey, NodeType

CB_CONTENTS = 0x01
CB_NAMES = 0x02
V2_LABEL = b"fscrypt"


@dataclass(frozen=True)
class KdfConfig:
    uuid: bytes

    def __post_init__(self) -> None:
        if len(self.uuid) != 16:
            raise ValueError("partition uuid is 16 bytes")


@dataclass(frozen=True)
class IvContext:
    node_type: NodeType
    lbn: int
    inode_number: int
    nonce: bytes
    mode: KdfMode
    content_cipher: CipherId

    def __post_init__(self) -> None:
        if self.node_type is NodeType.DIRECTORY:
            object.__setattr__(self, "lbn", 0)
        if not 0 <= self.lbn < 2**64:
            raise ValueError("lbn is a 64-bit unsigned value")

    def at(self, lbn: int) -> IvContext:
        return IvContext(self.node_type, lbn, self.inode_number, self.nonce, self.mode, self.content_cipher)


def hkdf_sha512(key: bytes, info: bytes, length: int) -> bytes:
    # no salt
    return HKDF(algorithm=hashes.SHA512(), length=length, salt=None, info=info).derive(key)


def _v1_material(k: bytes, length: int) -> bytes:
    # k || (k ^ 0x01..) || (k ^ 0x02..) ... truncated to the target length
    out = bytearray(k)
    i = 1
    while len(out) < length:
        out += bytes(b ^ i for b in k)
        i += 1
    return bytes(out[:length])


def kdf(
    k: MasterKey,
    n: bytes | None,
    mode: KdfMode,
    cfg: KdfConfig,
    target_cipher: CipherId,
    *,
    for_names: bool = False,
) -> DerivedKey:
    length = target_cipher.key_size
    if mode is KdfMode.V1:
        _need_nonce(n)
        # nonce is the AES-128 key, master key is the plaintext
        val = aes_ecb_encrypt(n, _v1_material(k.val, length))
    elif mode is KdfMode.ADIANTUM_DIRECT_KEY:
        if target_cipher is not CipherId.ADIANTUM:
            raise ValueError("DIRECT_KEY mode is only defined for Adiantum")
        if len(k.val) != length:
            raise ValueError(f"DIRECT_KEY needs a {length}-byte master key")
        val = k.val
    elif mode is KdfMode.IV_INO_LBLK_64:
        val = hkdf_sha512(k.val, bytes([mode]) + cfg.uuid, length)
    else:
        _need_nonce(n)
        cb = CB_NAMES if for_names else CB_CONTENTS
        val = hkdf_sha512(k.val, V2_LABEL + bytes([cb]) + n, length)
    return DerivedKey(mode, val)


def _need_nonce(n: bytes | None) -> None:
    if n is None or len(n) != NONCE_LEN:
        raise ValueError(f"this mode needs a {NONCE_LEN}-byte node nonce")


def get_iv(ctx: IvContext, derived_key: DerivedKey) -> bytes:
    lbn = ctx.lbn
    if ctx.mode is KdfMode.ADIANTUM_DIRECT_KEY:
        _need_nonce(ctx.nonce)
        return struct.pack("<Q", lbn) + ctx.nonce
    if ctx.mode is KdfMode.IV_INO_LBLK_64:
        if lbn >= 2**32:
            raise ValueError("IV_INO_LBLK_64 only addresses 2^32 blocks per file")
        base = struct.pack("<II", lbn, ctx.inode_number) + bytes(8)
    else:
        base = struct.pack("<Q", lbn) + bytes(8)
    if ctx.content_cipher is CipherId.AES_128_CBC_ESSIV:
        k_iv = hashlib.sha256(derived_key.val).digest()
        return aes_ecb_encrypt(k_iv, base)
    return base
