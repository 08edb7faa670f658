"""
Canonical binary encoding used for digests and signed messages.

Every field is written in a fixed order. Integers are big-endian and
fixed width, byte strings and sequences carry a 4-byte length prefix, so
two different values can never share an encoding.
"""

import hashlib
import struct
from typing import Callable, Iterable, List, TypeVar

T = TypeVar("T")

DIGEST_SIZE = 32


def sha256(*parts: bytes) -> bytes:
    """Hash the concatenation of ``parts``."""
    h = hashlib.sha256()
    for part in parts:
        h.update(part)
    return h.digest()


def u64(value: int) -> bytes:
    return struct.pack(">Q", value)


class Writer:
    """Append-only canonical encoder."""

    def __init__(self, tag: bytes = b""):
        self._chunks: List[bytes] = []
        if tag:
            self.blob(tag)

    def u8(self, value: int) -> "Writer":
        self._chunks.append(struct.pack(">B", value))
        return self

    def u64(self, value: int) -> "Writer":
        self._chunks.append(struct.pack(">Q", value))
        return self

    def blob(self, value: bytes) -> "Writer":
        self._chunks.append(struct.pack(">I", len(value)))
        self._chunks.append(bytes(value))
        return self

    def seq(self, items: Iterable[T], write: Callable[["Writer", T], object]) -> "Writer":
        items = list(items)
        self._chunks.append(struct.pack(">I", len(items)))
        for item in items:
            write(self, item)
        return self

    def getvalue(self) -> bytes:
        return b"".join(self._chunks)


class Reader:
    """Decoder matching :class:`Writer`; raises ValueError on malformed input."""

    def __init__(self, data: bytes, tag: bytes = b""):
        self._data = bytes(data)
        self._pos = 0
        if tag and self.blob() != tag:
            raise ValueError("unexpected encoding tag")

    def _take(self, size: int) -> bytes:
        end = self._pos + size
        if end > len(self._data):
            raise ValueError("truncated encoding")
        chunk = self._data[self._pos:end]
        self._pos = end
        return chunk

    def u8(self) -> int:
        return struct.unpack(">B", self._take(1))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def blob(self) -> bytes:
        (size,) = struct.unpack(">I", self._take(4))
        return self._take(size)

    def seq(self, read: Callable[["Reader"], T]) -> List[T]:
        (count,) = struct.unpack(">I", self._take(4))
        return [read(self) for _ in range(count)]

    def finish(self) -> None:
        if self._pos != len(self._data):
            raise ValueError("trailing bytes after encoding")
