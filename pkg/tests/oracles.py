"""Independent reference implementations used to cross-check the package.

AES and GCM come from pycryptodome; HKDF, XTS and CTS are written out by hand
from their definitions. Nothing here imports the package under test.
"""

import hashlib
import hmac

from Crypto.Cipher import AES

BLOCK = 16


def ecb_encrypt(key: bytes, data: bytes) -> bytes:
    return AES.new(key, AES.MODE_ECB).encrypt(data)


def ecb_decrypt(key: bytes, data: bytes) -> bytes:
    return AES.new(key, AES.MODE_ECB).decrypt(data)


def gcm_open(key: bytes, blob: bytes, ad: bytes | None = None) -> bytes:
    nonce, ct, tag = blob[:12], blob[12:-16], blob[-16:]
    c = AES.new(key, AES.MODE_GCM, nonce=nonce)
    if ad:
        c.update(ad)
    return c.decrypt_and_verify(ct, tag)


def hkdf(ikm: bytes, info: bytes, length: int, salt: bytes = b"", hash_name: str = "sha512") -> bytes:
    size = hashlib.new(hash_name).digest_size
    prk = hmac.new(salt or bytes(size), ikm, hash_name).digest()
    okm, t, i = b"", b"", 1
    while len(okm) < length:
        t = hmac.new(prk, t + info + bytes([i]), hash_name).digest()
        okm += t
        i += 1
    return okm[:length]


def _xor(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


def _gf_double(t: bytes) -> bytes:
    n = int.from_bytes(t, "little")
    n = (n << 1) ^ (0x87 if n >> 127 else 0)
    return (n & ((1 << 128) - 1)).to_bytes(16, "little")


def xts_encrypt(key: bytes, tweak: bytes, data: bytes) -> bytes:
    """IEEE 1619 XTS with ciphertext stealing, built from single-block AES."""
    k1, k2 = key[: len(key) // 2], key[len(key) // 2 :]
    t = ecb_encrypt(k2, tweak)
    full, rem = divmod(len(data), BLOCK)
    if rem:
        full -= 1
    out = []
    for i in range(full):
        p = data[i * BLOCK : (i + 1) * BLOCK]
        out.append(_xor(ecb_encrypt(k1, _xor(p, t)), t))
        t = _gf_double(t)
    if rem:
        p_m1 = data[full * BLOCK : (full + 1) * BLOCK]
        p_m = data[(full + 1) * BLOCK :]
        cc = _xor(ecb_encrypt(k1, _xor(p_m1, t)), t)
        t2 = _gf_double(t)
        pp = p_m + cc[rem:]
        out.append(_xor(ecb_encrypt(k1, _xor(pp, t2)), t2))
        out.append(cc[:rem])
    return b"".join(out)


def cts_cbc_encrypt(key: bytes, iv: bytes, data: bytes) -> bytes:
    """CBC-CS3: CBC over the zero-padded message, then swap the last two blocks and truncate."""
    if len(data) == BLOCK:
        return AES.new(key, AES.MODE_CBC, iv=iv).encrypt(data)
    r = len(data) % BLOCK or BLOCK
    ct = AES.new(key, AES.MODE_CBC, iv=iv).encrypt(data + bytes(BLOCK - r))
    return ct[: -2 * BLOCK] + ct[-BLOCK:] + ct[-2 * BLOCK : -BLOCK][:r]


def essiv(key: bytes, sector: int) -> bytes:
    salt = hashlib.sha256(key).digest()
    return ecb_encrypt(salt, sector.to_bytes(8, "little") + bytes(8))
