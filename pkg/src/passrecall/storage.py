"""Binary artifact files: versioned headers and length-prefixed fields.

Every persisted artifact (corpus, trie, per-document index) shares one
container format: magic bytes ``MREF``, a little-endian u32 format version,
a 4-byte section kind, then kind-specific fields.  Variable-length fields
carry 64-bit little-endian length prefixes.  Writers are fully
deterministic: the same logical content always produces the same bytes.
"""

from __future__ import annotations

import struct
from typing import BinaryIO, Sequence

MAGIC = b"MREF"
FORMAT_VERSION = 1

KIND_CORPUS = b"CORP"
KIND_TRIE = b"TRIE"
KIND_FMINDEX = b"FMIX"


class StorageError(ValueError):
    """Raised when an artifact file is malformed or has the wrong kind."""


class Writer:
    def __init__(self, stream: BinaryIO):
        self._stream = stream

    def header(self, kind: bytes) -> None:
        if len(kind) != 4:
            raise ValueError("section kind must be 4 bytes")
        self._stream.write(MAGIC)
        self.u32(FORMAT_VERSION)
        self._stream.write(kind)

    def u8(self, value: int) -> None:
        self._stream.write(struct.pack("<B", value))

    def u32(self, value: int) -> None:
        self._stream.write(struct.pack("<I", value))

    def u64(self, value: int) -> None:
        self._stream.write(struct.pack("<Q", value))

    def raw(self, data: bytes) -> None:
        self.u64(len(data))
        self._stream.write(data)

    def text(self, value: str) -> None:
        self.raw(value.encode("utf-8"))

    def u32_seq(self, values: Sequence[int]) -> None:
        self.u64(len(values))
        self._stream.write(struct.pack(f"<{len(values)}I", *values))


class Reader:
    def __init__(self, stream: BinaryIO):
        self._stream = stream

    def header(self, expected_kind: bytes) -> None:
        magic = self._take(4)
        if magic != MAGIC:
            raise StorageError(f"bad magic {magic!r}; not an artifact file")
        version = self.u32()
        if version != FORMAT_VERSION:
            raise StorageError(f"unsupported format version {version}")
        kind = self._take(4)
        if kind != expected_kind:
            raise StorageError(
                f"wrong section kind {kind!r}; expected {expected_kind!r}"
            )

    def _take(self, n: int) -> bytes:
        data = self._stream.read(n)
        if len(data) != n:
            raise StorageError("truncated artifact file")
        return data

    def u8(self) -> int:
        return struct.unpack("<B", self._take(1))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def raw(self) -> bytes:
        return self._take(self.u64())

    def text(self) -> str:
        return self.raw().decode("utf-8")

    def u32_seq(self) -> list[int]:
        count = self.u64()
        return list(struct.unpack(f"<{count}I", self._take(4 * count)))
