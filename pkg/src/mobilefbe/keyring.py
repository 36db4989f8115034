"""Handle-based table of installed keys (ProvisionKey / EvictKey)."""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass
from typing import Callable, NewType

from .core import BoundPolicy, MasterKey

KeyId = NewType("KeyId", int)


@dataclass
class _Entry:
    buf: bytearray
    bpol: BoundPolicy | None
    encrypt_only: bool


@dataclass(frozen=True)
class KeyEntry:
    key: MasterKey
    bpol: BoundPolicy | None
    encrypt_only: bool = False


class Keyring:
    """Installed keys behind opaque, never-reused handles.

    ``on_zeroize`` is an instrumentation hook: it receives each key buffer
    after it has been overwritten and before the entry is dropped.
    """

    def __init__(self, on_zeroize: Callable[[bytearray], None] | None = None) -> None:
        self._table: dict[int, _Entry] = {}
        self._ids = itertools.count(1)
        self._lock = threading.Lock()
        self.on_zeroize = on_zeroize

    def provision_key(
        self, k: MasterKey, bpol: BoundPolicy | None = None, *, encrypt_only: bool = False
    ) -> KeyId:
        with self._lock:
            kid = KeyId(next(self._ids))
            self._table[kid] = _Entry(bytearray(k.val), bpol, encrypt_only)
            return kid

    def evict_key(self, kid: KeyId) -> bool:
        with self._lock:
            entry = self._table.pop(kid, None)
            if entry is None:
                return False
            for i in range(len(entry.buf)):
                entry.buf[i] = 0
            if self.on_zeroize is not None:
                self.on_zeroize(entry.buf)
            return True

    def lookup(self, kid: KeyId) -> KeyEntry | None:
        with self._lock:
            entry = self._table.get(kid)
            if entry is None:
                return None
            return KeyEntry(MasterKey(bytes(entry.buf)), entry.bpol, entry.encrypt_only)

    def live(self) -> list[KeyId]:
        with self._lock:
            return sorted(self._table)

    def __contains__(self, kid: object) -> bool:
        with self._lock:
            return kid in self._table

    def __len__(self) -> int:
        return len(self._table)

    def clear(self) -> int:
        """Evict everything; returns how many keys were dropped."""
        return sum(self.evict_key(kid) for kid in self.live())
