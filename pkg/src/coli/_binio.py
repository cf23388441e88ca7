"""Little-endian binary reader/writer used by every on-disk format."""

from __future__ import annotations

import struct

import numpy as np

from .errors import TruncatedError


class Writer:
    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def pack(self, fmt: str, *values) -> None:
        self._parts.append(struct.pack("<" + fmt, *values))

    def raw(self, data: bytes) -> None:
        self._parts.append(bytes(data))

    def name(self, s: str) -> None:
        b = s.encode("utf-8")
        self.pack("H", len(b))
        self.raw(b)

    def f32_array(self, arr: np.ndarray) -> None:
        self.raw(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, data: bytes, offset: int = 0) -> None:
        self._data = memoryview(data)
        self.pos = offset

    @property
    def remaining(self) -> int:
        return len(self._data) - self.pos

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self._data):
            raise TruncatedError("unexpected end of stream")
        out = bytes(self._data[self.pos : self.pos + n])
        self.pos += n
        return out

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        vals = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return vals[0] if len(vals) == 1 else vals

    def name(self) -> str:
        n = self.unpack("H")
        return self.take(n).decode("utf-8")

    def f32_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float32)
