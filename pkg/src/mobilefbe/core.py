"""Shared domain vocabulary: keys, policies, tokens, nodes and cipher ids."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .errors import PolicyError
from .rand import RandomSource, resolve

NONCE_LEN = 16
BLOCK_SIZE = 4096
GCM_NONCE_LEN = 12
GCM_TAG_LEN = 16
GCM_OVERHEAD = GCM_NONCE_LEN + GCM_TAG_LEN


class Platform(enum.IntEnum):
    ANDROID = 0
    IOS = 1


class CipherId(enum.IntEnum):
    AES_256_GCM = 0
    AES_256_XTS = 1
    AES_128_CBC_ESSIV = 2
    AES_256_CTS_CBC = 3
    AES_128_CTS_CBC = 4
    ADIANTUM = 5

    @property
    def authenticated(self) -> bool:
        return self is CipherId.AES_256_GCM

    @property
    def key_size(self) -> int:
        return _KEY_SIZES[self]


_KEY_SIZES = {
    CipherId.AES_256_GCM: 32,
    CipherId.AES_256_XTS: 64,
    CipherId.AES_128_CBC_ESSIV: 16,
    CipherId.AES_256_CTS_CBC: 32,
    CipherId.AES_128_CTS_CBC: 16,
    CipherId.ADIANTUM: 32,
}


class Usage(enum.IntEnum):
    DEVICE_DATA_AFTER_BOOT = 0
    USER_DATA_AFTER_BOOT = 1
    USER_DATA_AFTER_AUTH = 2
    FILE_PROTECTION_NONE = 3
    FILE_PROTECTION_COMPLETE_UNTIL_FIRST_USER_AUTHENTICATION = 4
    FILE_PROTECTION_COMPLETE_UNLESS_OPEN = 5
    FILE_PROTECTION_COMPLETE = 6

    @property
    def platform(self) -> Platform:
        return Platform.ANDROID if self <= Usage.USER_DATA_AFTER_AUTH else Platform.IOS


class KdfMode(enum.IntEnum):
    V1 = 0
    V2_DEFAULT = 1
    IV_INO_LBLK_64 = 2
    ADIANTUM_DIRECT_KEY = 3


class NodeType(enum.IntEnum):
    FILE = 0
    DIRECTORY = 1


@dataclass(frozen=True)
class SecurityParameter:
    lambda_bits: int = 256

    def __post_init__(self) -> None:
        if self.lambda_bits not in (128, 256):
            raise ValueError(f"security parameter must be 128 or 256 bits, got {self.lambda_bits}")

    @property
    def nbytes(self) -> int:
        return self.lambda_bits // 8


@dataclass(frozen=True)
class MasterKey:
    val: bytes

    def __post_init__(self) -> None:
        if len(self.val) not in (16, 32):
            raise ValueError(f"master key must be 16 or 32 bytes, got {len(self.val)}")

    def __len__(self) -> int:
        return len(self.val)

    def __repr__(self) -> str:
        return f"MasterKey(<{len(self.val)} bytes>)"


def kgen(lam: SecurityParameter | int = 256, rng: RandomSource | None = None) -> MasterKey:
    if isinstance(lam, int):
        lam = SecurityParameter(lam)
    return MasterKey(resolve(rng).bytes(lam.nbytes))


@dataclass(frozen=True)
class AuthToken:
    """Android HMAC token (``mac`` set) or iOS passcode-derived key (``derived_key`` set)."""

    user_id: int
    challenge: int
    issued_at: int
    mac: bytes | None = None
    derived_key: bytes | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if (self.mac is None) == (self.derived_key is None):
            raise ValueError("token carries exactly one of mac / derived_key")
        for name in ("user_id", "challenge"):
            if not 0 <= getattr(self, name) < 2**64:
                raise ValueError(f"{name} must fit in 64 bits")

    @property
    def platform(self) -> Platform:
        return Platform.ANDROID if self.mac is not None else Platform.IOS


@dataclass(frozen=True)
class Policy:
    """Unbound policy: carries no device-specific cryptographic material."""

    cipher: CipherId
    usage: Usage
    auth_token: AuthToken | None = None

    @property
    def platform(self) -> Platform:
        return self.usage.platform


@dataclass(frozen=True)
class BoundPolicy:
    cipher: CipherId
    wrapkey_ct: bytes | None
    auth_token_required: bool
    usage: Usage
    platform: Platform
    # runtime attachment only; never serialized
    auth_token: AuthToken | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.usage.platform is not self.platform:
            raise PolicyError(f"usage {self.usage.name} is not valid on {self.platform.name}")
        if self.platform is Platform.IOS and self.usage is Usage.FILE_PROTECTION_NONE:
            if self.wrapkey_ct is not None:
                raise PolicyError("ClassD bound policy carries no wrap key")
        elif self.wrapkey_ct is None or len(self.wrapkey_ct) < GCM_OVERHEAD:
            raise PolicyError("bound policy needs a sealed wrap key")

    def with_token(self, token: AuthToken | None) -> BoundPolicy:
        return BoundPolicy(
            self.cipher, self.wrapkey_ct, self.auth_token_required, self.usage, self.platform, token
        )


@dataclass(frozen=True)
class WrappedKey:
    ct: bytes
    layer_count: int

    def __post_init__(self) -> None:
        if self.layer_count not in (1, 2, 3):
            raise ValueError("layer_count must be 1, 2 or 3")


@dataclass(frozen=True)
class DerivedKey:
    mode: KdfMode
    val: bytes = field(repr=False)


class KeyClass(enum.Enum):
    """Named class keys of both platforms, with the policy each one uses."""

    DE_SYSTEM = ("de-system", Usage.DEVICE_DATA_AFTER_BOOT, False)
    DE_USER = ("de-user", Usage.USER_DATA_AFTER_BOOT, False)
    CE_USER = ("ce-user", Usage.USER_DATA_AFTER_AUTH, True)
    CLASS_D = ("class-d", Usage.FILE_PROTECTION_NONE, False)
    CLASS_B_PUB = ("class-b-pub", Usage.FILE_PROTECTION_COMPLETE_UNLESS_OPEN, False)
    CLASS_B_PRIV = ("class-b-priv", Usage.FILE_PROTECTION_COMPLETE_UNLESS_OPEN, True)
    CLASS_A = ("class-a", Usage.FILE_PROTECTION_COMPLETE, True)
    CLASS_C = ("class-c", Usage.FILE_PROTECTION_COMPLETE_UNTIL_FIRST_USER_AUTHENTICATION, True)

    def __init__(self, label: str, usage: Usage, token_gated: bool) -> None:
        self.label = label
        self.usage = usage
        self.token_gated = token_gated

    @property
    def platform(self) -> Platform:
        return self.usage.platform

    @classmethod
    def for_platform(cls, platform: Platform) -> list[KeyClass]:
        return [c for c in cls if c.platform is platform]

    @classmethod
    def parse(cls, text: str) -> KeyClass:
        for c in cls:
            if text.lower() in (c.label, c.name.lower()):
                return c
        raise ValueError(f"unknown key class {text!r}")


class Node:
    """Filesystem node. ``meta`` holds the 16-byte per-node nonce and is write-once."""

    __slots__ = ("node_type", "name", "content", "children", "inode_number", "base_lbn", "_meta")

    def __init__(
        self,
        node_type: NodeType,
        name: bytes = b"",
        content: bytes = b"",
        children: list[bytes] | None = None,
        inode_number: int = 0,
        base_lbn: int = 0,
        meta: bytes | None = None,
    ) -> None:
        children = list(children or [])
        if node_type is NodeType.FILE and children:
            raise ValueError("file nodes have no children")
        if node_type is NodeType.DIRECTORY and content:
            raise ValueError("directory nodes have no content")
        if not 0 <= inode_number < 2**32:
            raise ValueError("inode number must fit in 32 bits")
        self.node_type = node_type
        self.name = bytes(name)
        self.content = bytes(content)
        self.children = children
        self.inode_number = inode_number
        self.base_lbn = base_lbn
        self._meta: bytes | None = None
        if meta is not None:
            self.meta = meta

    @property
    def meta(self) -> bytes | None:
        return self._meta

    @meta.setter
    def meta(self, value: bytes) -> None:
        if self._meta is not None:
            raise AttributeError("node meta is write-once")
        if value is None or len(value) != NONCE_LEN:
            raise ValueError(f"meta nonce must be {NONCE_LEN} bytes")
        self._meta = bytes(value)

    @classmethod
    def file(cls, content: bytes = b"", name: bytes = b"", **kw) -> Node:
        return cls(NodeType.FILE, name=name, content=content, **kw)

    @classmethod
    def directory(cls, children: list[bytes] | None = None, name: bytes = b"", **kw) -> Node:
        return cls(NodeType.DIRECTORY, name=name, children=children, **kw)

    def copy(self) -> Node:
        return Node(
            self.node_type,
            self.name,
            self.content,
            list(self.children),
            self.inode_number,
            self.base_lbn,
            self._meta,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Node):
            return NotImplemented
        return all(getattr(self, s) == getattr(other, s) for s in self.__slots__)

    def __repr__(self) -> str:
        kind = self.node_type.name.lower()
        body = f"{len(self.content)} bytes" if self.node_type is NodeType.FILE else f"{len(self.children)} children"
        return f"Node({kind}, name={self.name!r}, ino={self.inode_number}, {body})"
