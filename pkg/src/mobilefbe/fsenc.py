"""Node encryption: per-block contents, deterministic child names, node stores and the MFBC container."""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

from .ciphers import AES_BLOCK, decrypt_unit, encrypt_unit, name_cipher_for, require_available
from .core import BLOCK_SIZE, NONCE_LEN, CipherId, DerivedKey, KdfMode, Node, NodeType
from .errors import FormatError
from .kdf import IvContext, KdfConfig, get_iv, kdf
from .keyring import KeyId, Keyring
from .rand import RandomSource, resolve

MAX_NAME_LEN = 255
CONTAINER_MAGIC = b"MFBC"
CONTAINER_VERSION = 1


def check_fs_policy(mode: KdfMode, cipher: CipherId) -> None:
    """Fail fast on unusable (mode, content cipher) selections."""
    name_cipher_for(cipher)
    if mode is KdfMode.ADIANTUM_DIRECT_KEY and cipher is not CipherId.ADIANTUM:
        raise ValueError("DIRECT_KEY mode requires the Adiantum content cipher")
    require_available(cipher)


def _units(n: int) -> list[tuple[int, int]]:
    """Split ``n`` bytes into data units; a tail shorter than one AES block joins the previous unit."""
    bounds = [(i, min(i + BLOCK_SIZE, n)) for i in range(0, n, BLOCK_SIZE)]
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] < AES_BLOCK:
        (start, _), (_, end) = bounds[-2], bounds[-1]
        bounds[-2:] = [(start, end)]
    return bounds


def enc_fs_ciph(content: bytes, k_e: DerivedKey, ctx: IvContext) -> bytes:
    if not content:
        return b""
    if len(content) < AES_BLOCK:
        # true length lives in the container record
        content = content + bytes(AES_BLOCK - len(content))
    out = []
    for i, (start, end) in enumerate(_units(len(content))):
        iv = get_iv(ctx.at(ctx.lbn + i), k_e)
        out.append(encrypt_unit(ctx.content_cipher, k_e.val, iv, content[start:end]))
    return b"".join(out)


def dec_fs_ciph(econtent: bytes, k_e: DerivedKey, ctx: IvContext, length: int | None = None) -> bytes:
    out = []
    for i, (start, end) in enumerate(_units(len(econtent))):
        iv = get_iv(ctx.at(ctx.lbn + i), k_e)
        out.append(decrypt_unit(ctx.content_cipher, k_e.val, iv, econtent[start:end]))
    plain = b"".join(out)
    return plain if length is None else plain[:length]


def _name_ctx(ctx: IvContext) -> IvContext:
    cipher = ctx.content_cipher
    if cipher not in (CipherId.AES_256_CTS_CBC, CipherId.AES_128_CTS_CBC, CipherId.ADIANTUM):
        cipher = name_cipher_for(cipher)
    return IvContext(NodeType.DIRECTORY, 0, ctx.inode_number, ctx.nonce, ctx.mode, cipher)


def encrypt_name(name: bytes, k_e: DerivedKey, ctx: IvContext) -> bytes:
    if not 1 <= len(name) <= MAX_NAME_LEN:
        raise ValueError(f"names are 1..{MAX_NAME_LEN} bytes, got {len(name)}")
    ctx = _name_ctx(ctx)
    padded = bytes([len(name)]) + name
    padded += bytes(-len(padded) % AES_BLOCK)
    return encrypt_unit(ctx.content_cipher, k_e.val, get_iv(ctx, k_e), padded)


def decrypt_name(ename: bytes, k_e: DerivedKey, ctx: IvContext) -> bytes:
    ctx = _name_ctx(ctx)
    plain = decrypt_unit(ctx.content_cipher, k_e.val, get_iv(ctx, k_e), ename)
    n = plain[0]
    # wrong-key output has no valid length prefix; hand back the garbage as-is
    return plain[1 : 1 + n] if 1 <= n < len(plain) else plain


@dataclass(frozen=True)
class EncryptedNode:
    meta: bytes
    node_type: NodeType
    enc_content: bytes = b""
    enc_children: tuple[bytes, ...] = ()
    inode_number: int = 0
    base_lbn: int = 0
    content_length: int = 0

    def to_record(self) -> bytes:
        parts = [
            struct.pack("<IB", self.inode_number, self.node_type),
            self.meta,
            struct.pack("<QQI", self.base_lbn, self.content_length, len(self.enc_content)),
            self.enc_content,
            struct.pack("<H", len(self.enc_children)),
        ]
        for child in self.enc_children:
            parts += [struct.pack("<H", len(child)), child]
        return b"".join(parts)

    @classmethod
    def from_record(cls, data: bytes, pos: int = 0) -> tuple[EncryptedNode, int]:
        try:
            inode, ntype = struct.unpack_from("<IB", data, pos)
            pos += 5
            meta = data[pos : pos + NONCE_LEN]
            pos += NONCE_LEN
            base_lbn, length, n_payload = struct.unpack_from("<QQI", data, pos)
            pos += 20
            payload = data[pos : pos + n_payload]
            pos += n_payload
            (n_children,) = struct.unpack_from("<H", data, pos)
            pos += 2
            children = []
            for _ in range(n_children):
                (n,) = struct.unpack_from("<H", data, pos)
                pos += 2
                children.append(bytes(data[pos : pos + n]))
                if len(children[-1]) != n:
                    raise FormatError("truncated child name")
                pos += n
            if len(meta) != NONCE_LEN or len(payload) != n_payload:
                raise FormatError("truncated node record")
            node = cls(bytes(meta), NodeType(ntype), bytes(payload), tuple(children), inode, base_lbn, length)
        except (struct.error, ValueError) as exc:
            raise FormatError(f"malformed node record: {exc}") from exc
        return node, pos

    def fingerprint(self) -> bytes:
        return hashlib.sha256(self.to_record()).digest()


def encrypt_node(
    fnode: Node,
    kid: KeyId,
    mode: KdfMode,
    ring: Keyring,
    cfg: KdfConfig,
    cipher: CipherId = CipherId.AES_256_XTS,
    *,
    rng: RandomSource | None = None,
) -> EncryptedNode | None:
    """Encrypt one node. A node without a nonce gets a fresh one, recorded on ``fnode``."""
    check_fs_policy(mode, cipher)
    entry = ring.lookup(kid)
    if entry is None:
        return None
    if fnode.meta is None:
        fnode.meta = resolve(rng).bytes(NONCE_LEN)
    n = fnode.meta
    if fnode.node_type is NodeType.DIRECTORY:
        name_cipher = name_cipher_for(cipher)
        k_e = kdf(entry.key, n, mode, cfg, name_cipher, for_names=True)
        ctx = IvContext(NodeType.DIRECTORY, 0, fnode.inode_number, n, mode, name_cipher)
        return EncryptedNode(
            meta=n,
            node_type=NodeType.DIRECTORY,
            enc_children=tuple(encrypt_name(c, k_e, ctx) for c in fnode.children),
            inode_number=fnode.inode_number,
            base_lbn=fnode.base_lbn,
        )
    k_e = kdf(entry.key, n, mode, cfg, cipher)
    ctx = IvContext(NodeType.FILE, fnode.base_lbn, fnode.inode_number, n, mode, cipher)
    return EncryptedNode(
        meta=n,
        node_type=NodeType.FILE,
        enc_content=enc_fs_ciph(fnode.content, k_e, ctx),
        inode_number=fnode.inode_number,
        base_lbn=fnode.base_lbn,
        content_length=len(fnode.content),
    )


def decrypt_node(
    enode: EncryptedNode,
    kid: KeyId,
    mode: KdfMode,
    ring: Keyring,
    cfg: KdfConfig,
    cipher: CipherId = CipherId.AES_256_XTS,
) -> Node | None:
    check_fs_policy(mode, cipher)
    entry = ring.lookup(kid)
    if entry is None or entry.encrypt_only:
        return None
    n = enode.meta
    if enode.node_type is NodeType.DIRECTORY:
        name_cipher = name_cipher_for(cipher)
        k_d = kdf(entry.key, n, mode, cfg, name_cipher, for_names=True)
        ctx = IvContext(NodeType.DIRECTORY, 0, enode.inode_number, n, mode, name_cipher)
        children = [decrypt_name(c, k_d, ctx) for c in enode.enc_children]
        return Node.directory(children, inode_number=enode.inode_number, base_lbn=enode.base_lbn, meta=n)
    k_d = kdf(entry.key, n, mode, cfg, cipher)
    ctx = IvContext(NodeType.FILE, enode.base_lbn, enode.inode_number, n, mode, cipher)
    content = dec_fs_ciph(enode.enc_content, k_d, ctx, enode.content_length)
    return Node.file(content, inode_number=enode.inode_number, base_lbn=enode.base_lbn, meta=n)


class NodeStore:
    """A directory tree of nodes with sequential inodes and contiguous block allocation."""

    def __init__(self, uuid: bytes | None = None, *, rng: RandomSource | None = None) -> None:
        self.uuid = uuid if uuid is not None else resolve(rng).bytes(16)
        self.nodes: dict[int, Node] = {}
        self._links: dict[int, dict[bytes, int]] = {}
        self._next_ino = 1
        self._next_lbn = 0
        self.root = self._add(Node.directory()).inode_number

    @property
    def cfg(self) -> KdfConfig:
        return KdfConfig(self.uuid)

    def _add(self, node: Node) -> Node:
        node.inode_number = self._next_ino
        self._next_ino += 1
        if node.node_type is NodeType.FILE:
            node.base_lbn = self._next_lbn
            self._next_lbn += max(1, -(-len(node.content) // BLOCK_SIZE))
        else:
            self._links[node.inode_number] = {}
        self.nodes[node.inode_number] = node
        return node

    def _attach(self, parent: int, node: Node) -> Node:
        pnode = self.nodes[parent]
        if pnode.node_type is not NodeType.DIRECTORY:
            raise ValueError("parent is not a directory")
        if not 1 <= len(node.name) <= MAX_NAME_LEN:
            raise ValueError(f"names are 1..{MAX_NAME_LEN} bytes")
        if node.name in self._links[parent]:
            raise ValueError(f"{node.name!r} already exists")
        self._add(node)
        pnode.children.append(node.name)
        self._links[parent][node.name] = node.inode_number
        return node

    def mkdir(self, parent: int, name: bytes) -> Node:
        return self._attach(parent, Node.directory(name=name))

    def create_file(self, parent: int, name: bytes, content: bytes = b"") -> Node:
        return self._attach(parent, Node.file(content, name=name))

    def child(self, parent: int, name: bytes) -> Node:
        return self.nodes[self._links[parent][name]]

    def children(self, parent: int) -> list[Node]:
        return [self.child(parent, name) for name in self.nodes[parent].children]

    def preorder(self) -> list[Node]:
        out: list[Node] = []
        stack = [self.nodes[self.root]]
        while stack:
            node = stack.pop()
            out.append(node)
            if node.node_type is NodeType.DIRECTORY:
                stack.extend(reversed(self.children(node.inode_number)))
        return out

    def __len__(self) -> int:
        return len(self.nodes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, NodeStore):
            return NotImplemented
        return self.uuid == other.uuid and self.preorder() == other.preorder()

    @classmethod
    def from_path(cls, path: str | os.PathLike, *, rng: RandomSource | None = None) -> NodeStore:
        store = cls(rng=rng)

        def load(dirpath: Path, ino: int) -> None:
            for entry in sorted(dirpath.iterdir(), key=lambda p: p.name):
                name = os.fsencode(entry.name)
                if entry.is_dir():
                    load(entry, store.mkdir(ino, name).inode_number)
                elif entry.is_file():
                    store.create_file(ino, name, entry.read_bytes())

        load(Path(path), store.root)
        return store

    def to_path(self, path: str | os.PathLike) -> None:
        def dump(dirpath: Path, ino: int) -> None:
            dirpath.mkdir(parents=True, exist_ok=True)
            for node in self.children(ino):
                target = dirpath / os.fsdecode(node.name)
                if node.node_type is NodeType.DIRECTORY:
                    dump(target, node.inode_number)
                else:
                    target.write_bytes(node.content)

        dump(Path(path), self.root)


@dataclass
class EncryptedStore:
    uuid: bytes
    mode: KdfMode
    cipher: CipherId
    records: list[EncryptedNode] = field(default_factory=list)

    def to_bytes(self) -> bytes:
        head = CONTAINER_MAGIC + struct.pack("<B", CONTAINER_VERSION) + self.uuid
        head += struct.pack("<BBI", self.mode, self.cipher, len(self.records))
        return head + b"".join(r.to_record() for r in self.records)

    @classmethod
    def from_bytes(cls, data: bytes) -> EncryptedStore:
        if data[:4] != CONTAINER_MAGIC:
            raise FormatError("not an MFBC container")
        try:
            (version,) = struct.unpack_from("<B", data, 4)
            if version != CONTAINER_VERSION:
                raise FormatError(f"unsupported MFBC version {version}")
            uuid = bytes(data[5:21])
            mode, cipher, count = struct.unpack_from("<BBI", data, 21)
            mode, cipher = KdfMode(mode), CipherId(cipher)
        except (struct.error, ValueError) as exc:
            raise FormatError(f"malformed MFBC header: {exc}") from exc
        pos = 27
        records = []
        for _ in range(count):
            record, pos = EncryptedNode.from_record(data, pos)
            records.append(record)
        if pos != len(data):
            raise FormatError("trailing bytes after the last node record")
        return cls(uuid, mode, cipher, records)


def encrypt_store(
    store: NodeStore,
    kid: KeyId,
    ring: Keyring,
    mode: KdfMode = KdfMode.V2_DEFAULT,
    cipher: CipherId = CipherId.AES_256_XTS,
    *,
    rng: RandomSource | None = None,
) -> EncryptedStore | None:
    """Encrypt every node; records are laid out in pre-order so the tree shape is implicit."""
    check_fs_policy(mode, cipher)
    cfg = store.cfg
    records = []
    for node in store.preorder():
        enode = encrypt_node(node, kid, mode, ring, cfg, cipher, rng=rng)
        if enode is None:
            return None
        records.append(enode)
    return EncryptedStore(store.uuid, mode, cipher, records)


def decrypt_store(estore: EncryptedStore, kid: KeyId, ring: Keyring) -> NodeStore | None:
    cfg = KdfConfig(estore.uuid)
    plain: list[Node] = []
    for record in estore.records:
        node = decrypt_node(record, kid, estore.mode, ring, cfg, estore.cipher)
        if node is None:
            return None
        plain.append(node)
    if not plain or plain[0].node_type is not NodeType.DIRECTORY:
        raise FormatError("container has no root directory")

    store = NodeStore.__new__(NodeStore)
    store.uuid = estore.uuid
    store.nodes, store._links = {}, {}
    store.root = plain[0].inode_number
    cursor = 0

    def take() -> Node:
        nonlocal cursor
        if cursor >= len(plain):
            raise FormatError("container ends inside a directory")
        node = plain[cursor]
        cursor += 1
        if node.inode_number in store.nodes:
            raise FormatError(f"duplicate inode {node.inode_number}")
        store.nodes[node.inode_number] = node
        if node.node_type is NodeType.DIRECTORY:
            links = store._links[node.inode_number] = {}
            for name in node.children:
                child = take()
                child.name = name
                links[name] = child.inode_number
        return node

    take()
    if cursor != len(plain):
        raise FormatError("records left over after the root subtree")
    store._next_ino = max(store.nodes) + 1
    files = [n for n in plain if n.node_type is NodeType.FILE]
    store._next_lbn = max((n.base_lbn + max(1, -(-len(n.content) // BLOCK_SIZE)) for n in files), default=0)
    return store
