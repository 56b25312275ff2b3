"""Bounds-checked FlatBuffers reading primitives.

Implements just enough of the FlatBuffers wire format to decode TFLite files:
little-endian scalars, vtable-indirected table fields, strings and vectors.
Every access is validated against the buffer length so truncated files fail
with ``Truncated`` instead of reading garbage.
"""

from __future__ import annotations

import struct

from ..errors import Truncated

_U8 = struct.Struct("<B")
_I8 = struct.Struct("<b")
_U16 = struct.Struct("<H")
_I16 = struct.Struct("<h")
_U32 = struct.Struct("<I")
_I32 = struct.Struct("<i")
_I64 = struct.Struct("<q")
_U64 = struct.Struct("<Q")
_F32 = struct.Struct("<f")
_F64 = struct.Struct("<d")

SCALARS = {
    "u8": _U8, "i8": _I8, "u16": _U16, "i16": _I16,
    "u32": _U32, "i32": _I32, "i64": _I64, "u64": _U64,
    "f32": _F32, "f64": _F64,
}


class FlatReader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.size = len(buf)

    def _check(self, pos: int, nbytes: int) -> None:
        if pos < 0 or pos + nbytes > self.size:
            raise Truncated(f"read of {nbytes} bytes at offset {pos} exceeds buffer of {self.size}")

    def scalar(self, kind: str, pos: int):
        st = SCALARS[kind]
        self._check(pos, st.size)
        return st.unpack_from(self.buf, pos)[0]

    def root(self) -> int:
        # uoffset to the root table lives at position 0
        off = self.scalar("u32", 0)
        pos = off
        self._check(pos, 4)
        return pos

    def identifier(self) -> bytes:
        self._check(4, 4)
        return self.buf[4:8]

    # -- table access ------------------------------------------------------

    def _vtable(self, table: int) -> tuple[int, int]:
        soffset = self.scalar("i32", table)
        vt = table - soffset
        vt_size = self.scalar("u16", vt)
        if vt_size < 4:
            raise Truncated(f"vtable at {vt} has invalid size {vt_size}")
        return vt, vt_size

    def field_pos(self, table: int, field_id: int) -> int | None:
        """Absolute position of a table field, or None when absent."""
        vt, vt_size = self._vtable(table)
        slot = 4 + 2 * field_id
        if slot + 2 > vt_size:
            return None
        rel = self.scalar("u16", vt + slot)
        if rel == 0:
            return None
        return table + rel

    def field_scalar(self, table: int, field_id: int, kind: str, default):
        pos = self.field_pos(table, field_id)
        if pos is None:
            return default
        return self.scalar(kind, pos)

    def field_indirect(self, table: int, field_id: int) -> int | None:
        """Follow a uoffset field to a child table / string / vector."""
        pos = self.field_pos(table, field_id)
        if pos is None:
            return None
        target = pos + self.scalar("u32", pos)
        self._check(target, 4)
        return target

    # -- composite values --------------------------------------------------

    def string(self, pos: int) -> str:
        n = self.scalar("u32", pos)
        self._check(pos + 4, n)
        return self.buf[pos + 4 : pos + 4 + n].decode("utf-8", errors="replace")

    def vector_len(self, pos: int) -> int:
        return self.scalar("u32", pos)

    def vector_scalars(self, pos: int, kind: str) -> list:
        st = SCALARS[kind]
        n = self.vector_len(pos)
        self._check(pos + 4, n * st.size)
        return [st.unpack_from(self.buf, pos + 4 + i * st.size)[0] for i in range(n)]

    def vector_bytes(self, pos: int) -> bytes:
        n = self.vector_len(pos)
        self._check(pos + 4, n)
        return self.buf[pos + 4 : pos + 4 + n]

    def vector_indirect(self, pos: int) -> list[int]:
        """Positions of table/string elements of an offset vector."""
        n = self.vector_len(pos)
        self._check(pos + 4, n * 4)
        out = []
        for i in range(n):
            p = pos + 4 + i * 4
            target = p + self.scalar("u32", p)
            self._check(target, 4)
            out.append(target)
        return out
