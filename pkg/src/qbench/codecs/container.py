"""QBF1 container: serialized quantized tensors with per-payload CRCs.

Layout (all integers little-endian):

    magic   4 bytes   51 42 46 31 ("QBF1")
    u32     version   = 1
    u32     tensor count
    then per tensor:
        u32     name byte length, then UTF-8 name
        u8      role id
        u8      scheme id
        u32     rows
        u32     cols
        u32     pad_count
        u64     payload byte length
        bytes   payload (packed group records, row-major block order;
                FP16 payload is raw binary16 values)
        u32     CRC32 of the payload

The format carries no explicit layer field; tensors named with the
"blk.<layer>." prefix used by synthetic models get their layer parsed
back on read (anything else reads as layer 0), which is what the
split-precision schemes key on.

Readers never trust a length field: every size is checked against the
remaining bytes before use, so corrupt files produce typed errors, not
crashes.  A byte flip that still decodes to a structurally valid file
(say, inside a name) is undetectable by design; payload bits are always
covered by the CRC.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import CodecError, IoError, QbenchError
from ..tensor import Role, TensorShape
from .schemes import Scheme
from .tensorops import QuantizedTensor

MAGIC = b"QBF1"
VERSION = 1
_MAX_NAME = 1 << 16


def _layer_from_name(name: str) -> int:
    if name.startswith("blk."):
        head = name[4:].split(".", 1)[0]
        if head.isdigit():
            return int(head)
    return 0


def write_container(tensors: list[QuantizedTensor], path) -> None:
    """Serialize tensors to a QBF1 file."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for qt in tensors:
        qt.validate()
        name = qt.name.encode("utf-8")
        if len(name) > _MAX_NAME:
            raise CodecError(f"tensor name of {len(name)} bytes exceeds {_MAX_NAME}")
        payload = qt.payload.tobytes()
        parts.append(struct.pack("<I", len(name)))
        parts.append(name)
        parts.append(struct.pack("<BBIIIQ", int(qt.role), int(qt.scheme),
                                 qt.shape.rows, qt.shape.cols, qt.pad_count,
                                 len(payload)))
        parts.append(payload)
        parts.append(struct.pack("<I", zlib.crc32(payload)))
    try:
        Path(path).write_bytes(b"".join(parts))
    except OSError as e:
        raise IoError(f"cannot write container '{path}': {e}") from e


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.blob):
            raise CodecError(
                f"truncated container '{self.path}': needed {n} bytes for {what} "
                f"at offset {self.pos}, file has {len(self.blob)}"
            )
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]


def read_container(path) -> list[QuantizedTensor]:
    """Parse a QBF1 file, validating structure and payload checksums."""
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"cannot read container '{path}': {e}") from e

    r = _Reader(blob, path)
    if r.take(4, "magic") != MAGIC:
        raise CodecError(f"bad magic in '{path}': not a QBF1 container")
    version = r.u32("version")
    if version != VERSION:
        raise CodecError(f"unsupported container version {version} in '{path}'")
    count = r.u32("tensor count")

    tensors = []
    for i in range(count):
        ctx = f"tensor {i} in '{path}'"
        name_len = r.u32(f"{ctx} name length")
        if name_len > _MAX_NAME:
            raise CodecError(f"{ctx}: implausible name length {name_len}")
        try:
            name = r.take(name_len, f"{ctx} name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise CodecError(f"{ctx}: name is not valid UTF-8") from e
        role_id = r.u8(f"{ctx} role")
        scheme_id = r.u8(f"{ctx} scheme")
        rows = r.u32(f"{ctx} rows")
        cols = r.u32(f"{ctx} cols")
        pad_count = r.u32(f"{ctx} pad_count")
        payload_len = r.u64(f"{ctx} payload length")
        payload = r.take(payload_len, f"{ctx} payload")
        stored_crc = r.u32(f"{ctx} checksum")
        if zlib.crc32(payload) != stored_crc:
            raise CodecError(f"payload checksum mismatch for {ctx} ('{name}')")
        try:
            role = Role(role_id)
        except ValueError:
            raise CodecError(f"{ctx} ('{name}'): unknown role id {role_id}") from None
        try:
            scheme = Scheme(scheme_id)
        except ValueError:
            raise CodecError(f"{ctx} ('{name}'): unknown scheme id {scheme_id}") from None
        try:
            qt = QuantizedTensor(
                shape=TensorShape(rows, cols),
                scheme=scheme,
                role=role,
                payload=np.frombuffer(payload, dtype=np.uint8),
                pad_count=pad_count,
                name=name,
                layer=_layer_from_name(name),
            )
        except QbenchError as e:
            raise CodecError(f"{ctx} ('{name}'): {e}") from e
        tensors.append(qt)
    if r.pos != len(blob):
        raise CodecError(
            f"trailing {len(blob) - r.pos} bytes after last tensor in '{path}'"
        )
    return tensors
