"""Randomness sources.

Everything that draws random bytes takes an optional ``rng``. The default is
the operating system CSPRNG; :class:`SeededRandom` gives reproducible streams
for tests, golden fixtures and the game harness.
"""

from __future__ import annotations

import hashlib
import os
from typing import Protocol


class RandomSource(Protocol):
    def bytes(self, n: int) -> bytes: ...


class SystemRandom:
    def bytes(self, n: int) -> bytes:
        return os.urandom(n)

    def __repr__(self) -> str:
        return "SystemRandom()"


class SeededRandom:
    """Deterministic byte stream: SHAKE-256 over ``seed || counter``.

    Not a DRBG for production use; it exists so that identical seeds give
    bit-identical transcripts.
    """

    def __init__(self, seed: bytes | str | int) -> None:
        if isinstance(seed, int):
            seed = seed.to_bytes(16, "little", signed=True)
        elif isinstance(seed, str):
            seed = seed.encode()
        self._seed = bytes(seed)
        self._counter = 0

    def bytes(self, n: int) -> bytes:
        block = hashlib.shake_256(self._seed + self._counter.to_bytes(8, "little")).digest(n)
        self._counter += 1
        return block

    def fork(self, label: str) -> SeededRandom:
        """Independent child stream, keyed by label."""
        return SeededRandom(hashlib.sha256(self._seed + b"/" + label.encode()).digest())

    def __repr__(self) -> str:
        return f"SeededRandom(<{len(self._seed)}-byte seed>, counter={self._counter})"


class ConstantRandom:
    """Returns the same bytes on every call. Only for negative-control configs."""

    def __init__(self, fill: bytes = b"\x5a") -> None:
        self._fill = fill

    def bytes(self, n: int) -> bytes:
        return (self._fill * n)[:n]


DEFAULT_RNG: RandomSource = SystemRandom()


def resolve(rng: RandomSource | None) -> RandomSource:
    return DEFAULT_RNG if rng is None else rng


def randint64(rng: RandomSource | None = None) -> int:
    return int.from_bytes(resolve(rng).bytes(8), "little")
