"""Length-preserving block-unit ciphers used for node contents and names.

AES comes from ``cryptography``. CTS-CBC uses the CS3 convention (the last
two blocks are always swapped), matching the Linux ``cts(cbc(aes))``
template. Adiantum is a pluggable slot; nothing is registered by default.
"""

from __future__ import annotations

import hashlib
import hmac
from typing import Protocol

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .core import CipherId
from .errors import CipherUnavailable

AES_BLOCK = 16


def aes_ecb_encrypt(key: bytes, data: bytes) -> bytes:
    enc = Cipher(algorithms.AES(key), modes.ECB()).encryptor()
    return enc.update(data) + enc.finalize()


def aes_ecb_decrypt(key: bytes, data: bytes) -> bytes:
    dec = Cipher(algorithms.AES(key), modes.ECB()).decryptor()
    return dec.update(data) + dec.finalize()


def _cbc(key: bytes, iv: bytes, data: bytes, encrypt: bool) -> bytes:
    c = Cipher(algorithms.AES(key), modes.CBC(iv))
    op = c.encryptor() if encrypt else c.decryptor()
    return op.update(data) + op.finalize()


def _xor(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


def cts_cbc_encrypt(key: bytes, iv: bytes, data: bytes) -> bytes:
    n = len(data)
    if n < AES_BLOCK:
        raise ValueError("CTS-CBC needs at least one full block")
    if n == AES_BLOCK:
        return _cbc(key, iv, data, True)
    r = n % AES_BLOCK or AES_BLOCK
    padded = data + bytes(AES_BLOCK - r)
    ct = _cbc(key, iv, padded, True)
    head, c_prev, c_last = ct[: -2 * AES_BLOCK], ct[-2 * AES_BLOCK : -AES_BLOCK], ct[-AES_BLOCK:]
    return head + c_last + c_prev[:r]


def cts_cbc_decrypt(key: bytes, iv: bytes, data: bytes) -> bytes:
    n = len(data)
    if n < AES_BLOCK:
        raise ValueError("CTS-CBC needs at least one full block")
    if n == AES_BLOCK:
        return _cbc(key, iv, data, False)
    r = n % AES_BLOCK or AES_BLOCK
    split = n - AES_BLOCK - r
    head, d, e = data[:split], data[split : split + AES_BLOCK], data[split + AES_BLOCK :]
    plain_head = _cbc(key, iv, head, False) if head else b""
    chain = head[-AES_BLOCK:] if head else iv
    x = aes_ecb_decrypt(key, d)
    p_last = _xor(x[:r], e)
    c_prev = e + x[r:]
    p_prev = _xor(aes_ecb_decrypt(key, c_prev), chain)
    return plain_head + p_prev + p_last


def cbc_encrypt(key: bytes, iv: bytes, data: bytes) -> bytes:
    """Plain CBC for aligned units, ciphertext stealing for a ragged tail."""
    if len(data) % AES_BLOCK == 0:
        return _cbc(key, iv, data, True)
    return cts_cbc_encrypt(key, iv, data)


def cbc_decrypt(key: bytes, iv: bytes, data: bytes) -> bytes:
    if len(data) % AES_BLOCK == 0:
        return _cbc(key, iv, data, False)
    return cts_cbc_decrypt(key, iv, data)


def xts_encrypt(key: bytes, tweak: bytes, data: bytes) -> bytes:
    enc = Cipher(algorithms.AES(key), modes.XTS(tweak)).encryptor()
    return enc.update(data) + enc.finalize()


def xts_decrypt(key: bytes, tweak: bytes, data: bytes) -> bytes:
    dec = Cipher(algorithms.AES(key), modes.XTS(tweak)).decryptor()
    return dec.update(data) + dec.finalize()


class TweakableCipher(Protocol):
    """Length-preserving cipher taking an arbitrary-length tweak."""

    key_size: int

    def encrypt(self, key: bytes, tweak: bytes, data: bytes) -> bytes: ...

    def decrypt(self, key: bytes, tweak: bytes, data: bytes) -> bytes: ...


class XtsStandIn:
    """Placeholder for the Adiantum slot. NOT Adiantum.

    Derives a per-tweak AES-256-XTS key with HMAC-SHA512 and encrypts under a
    zero XTS tweak. It has the right interface (32-byte key, long tweak,
    length preserving for inputs of 16 bytes or more) so DIRECT_KEY
    configurations can be exercised end to end.
    """

    key_size = 32

    def _subkey(self, key: bytes, tweak: bytes) -> bytes:
        return hmac.new(key, b"adiantum-standin" + tweak, hashlib.sha512).digest()

    def encrypt(self, key: bytes, tweak: bytes, data: bytes) -> bytes:
        return xts_encrypt(self._subkey(key, tweak), bytes(AES_BLOCK), data)

    def decrypt(self, key: bytes, tweak: bytes, data: bytes) -> bytes:
        return xts_decrypt(self._subkey(key, tweak), bytes(AES_BLOCK), data)


_adiantum: TweakableCipher | None = None


def register_adiantum(impl: TweakableCipher | None) -> TweakableCipher | None:
    """Install (or with ``None`` remove) the Adiantum implementation; returns the previous one."""
    global _adiantum
    previous, _adiantum = _adiantum, impl
    return previous


def adiantum() -> TweakableCipher:
    if _adiantum is None:
        raise CipherUnavailable("no Adiantum implementation registered (see register_adiantum)")
    return _adiantum


def require_available(cipher: CipherId) -> None:
    if cipher is CipherId.ADIANTUM:
        adiantum()


CONTENT_CIPHERS = (CipherId.AES_256_XTS, CipherId.AES_128_CBC_ESSIV, CipherId.ADIANTUM)

_NAME_CIPHER = {
    CipherId.AES_256_XTS: CipherId.AES_256_CTS_CBC,
    CipherId.AES_128_CBC_ESSIV: CipherId.AES_128_CTS_CBC,
    CipherId.ADIANTUM: CipherId.ADIANTUM,
}


def name_cipher_for(content_cipher: CipherId) -> CipherId:
    try:
        return _NAME_CIPHER[content_cipher]
    except KeyError:
        raise ValueError(f"{content_cipher.name} is not a content cipher") from None


def encrypt_unit(cipher: CipherId, key: bytes, iv: bytes, data: bytes) -> bytes:
    if len(key) != cipher.key_size:
        raise ValueError(f"{cipher.name} takes a {cipher.key_size}-byte key, got {len(key)}")
    if cipher is CipherId.AES_256_XTS:
        return xts_encrypt(key, iv, data)
    if cipher is CipherId.AES_128_CBC_ESSIV:
        return cbc_encrypt(key, iv, data)
    if cipher in (CipherId.AES_256_CTS_CBC, CipherId.AES_128_CTS_CBC):
        return cts_cbc_encrypt(key, iv, data)
    if cipher is CipherId.ADIANTUM:
        return adiantum().encrypt(key, iv, data)
    raise ValueError(f"{cipher.name} is not a length-preserving unit cipher")


def decrypt_unit(cipher: CipherId, key: bytes, iv: bytes, data: bytes) -> bytes:
    if len(key) != cipher.key_size:
        raise ValueError(f"{cipher.name} takes a {cipher.key_size}-byte key, got {len(key)}")
    if cipher is CipherId.AES_256_XTS:
        return xts_decrypt(key, iv, data)
    if cipher is CipherId.AES_128_CBC_ESSIV:
        return cbc_decrypt(key, iv, data)
    if cipher in (CipherId.AES_256_CTS_CBC, CipherId.AES_128_CTS_CBC):
        return cts_cbc_decrypt(key, iv, data)
    if cipher is CipherId.ADIANTUM:
        return adiantum().decrypt(key, iv, data)
    raise ValueError(f"{cipher.name} is not a length-preserving unit cipher")
