"""Binary weight container ("CKT1").

Layout (all integers little-endian)::

    b"CKT1"  u32 count
    per tensor:
        u16 name_len, name (UTF-8), u8 dtype, u8 rank, u32 dims[rank], payload

    dtype 0  float32 dense:   prod(dims) float32 values
    dtype 1  int8 quantized:  u8 flags (bit0 per-axis, bit1 symmetric),
                              u8 axis (0xFF = per-tensor), u32 slices,
                              slices x (f32 scale, i32 zero_point),
                              prod(dims) int8 values
    dtype 2  sparse bitmap:   ceil(prod(dims)/8) bytes of mask bits
                              (LSB-first), then float32 values of set bits
"""

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .quant import QuantizedTensor, QuantParams

MAGIC = b"CKT1"
DENSE_F32 = 0
INT8 = 1
SPARSE_BITMAP = 2

SCHEMES = {"dense_f32": DENSE_F32, "int8": INT8, "sparse_bitmap": SPARSE_BITMAP}


@dataclass(frozen=True)
class SparseTensor:
    """Tensor stored as a keep-bitmap plus the kept float32 values."""

    shape: tuple
    bits: np.ndarray     # bool, flat
    values: np.ndarray   # float32, one per set bit

    @classmethod
    def from_dense(cls, dense, bits=None):
        dense = np.asarray(dense, dtype=np.float32)
        bits = dense != 0 if bits is None else np.asarray(bits).astype(bool)
        if bits.shape != dense.shape:
            raise ValueError(f"bitmap shape {bits.shape} != tensor shape {dense.shape}")
        return cls(dense.shape, bits.reshape(-1), dense.reshape(-1)[bits.reshape(-1)].copy())

    def to_dense(self):
        out = np.zeros(int(np.prod(self.shape)), dtype=np.float32)
        out[self.bits] = self.values
        return out.reshape(self.shape)

    def mask(self):
        return self.bits.reshape(self.shape)


def _header(name, dtype, shape):
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError(f"tensor name too long: {name[:40]}...")
    if len(shape) > 0xFF:
        raise ValueError("rank exceeds 255")
    return (struct.pack("<H", len(raw)) + raw + struct.pack("<BB", dtype, len(shape))
            + struct.pack(f"<{len(shape)}I", *shape))


def _encode(name, value):
    if isinstance(value, QuantizedTensor):
        p = value.params
        flags = (1 if p.axis is not None else 0) | (2 if p.symmetric else 0)
        axis = 0xFF if p.axis is None else p.axis
        meta = struct.pack("<BBI", flags, axis, p.slices)
        meta += b"".join(struct.pack("<fi", float(s), int(z))
                         for s, z in zip(p.scale, p.zero_point))
        return (_header(name, INT8, value.shape) + meta
                + np.ascontiguousarray(value.values, dtype=np.int8).tobytes())
    if isinstance(value, SparseTensor):
        bitmap = np.packbits(value.bits.astype(np.uint8), bitorder="little")
        return (_header(name, SPARSE_BITMAP, value.shape) + bitmap.tobytes()
                + np.asarray(value.values, dtype="<f4").tobytes())
    arr = np.asarray(value, dtype="<f4")
    if arr.ndim == 0:
        arr = arr.reshape(1)
    return _header(name, DENSE_F32, arr.shape) + np.ascontiguousarray(arr).tobytes()


def dumps(entries):
    """Serialize an ordered ``{name: array | QuantizedTensor | SparseTensor}``."""
    parts = [MAGIC, struct.pack("<I", len(entries))]
    for name, value in entries.items():
        parts.append(_encode(name, value))
    return b"".join(parts)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if n < 0 or self.pos + n > len(self.buf):
            raise FormatError(f"truncated {what}: need {n} bytes, {len(self.buf) - self.pos} left",
                              self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads(buf):
    buf = bytes(buf)
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic, expected CKT1", 0)
    (count,) = r.unpack("<I", "tensor count")
    out = {}
    for _ in range(count):
        start = r.pos
        (name_len,) = r.unpack("<H", "name length")
        try:
            name = r.take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not UTF-8", start + 2) from None
        dtype_pos = r.pos
        dtype, rank = r.unpack("<BB", "dtype/rank")
        shape = r.unpack(f"<{rank}I", "dims") if rank else ()
        if rank == 0 or any(d == 0 for d in shape):
            raise FormatError(f"invalid shape {shape} for {name!r}", r.pos)
        n = int(np.prod(shape, dtype=np.int64))
        if name in out:
            raise FormatError(f"duplicate tensor name {name!r}", start)
        if dtype == DENSE_F32:
            data = r.take(4 * n, f"float32 payload of {name!r}")
            out[name] = np.frombuffer(data, dtype="<f4").astype(np.float32).reshape(shape)
        elif dtype == INT8:
            meta_pos = r.pos
            flags, axis, slices = r.unpack("<BBI", "quantization header")
            per_axis = bool(flags & 1)
            symmetric = bool(flags & 2)
            raw = r.take(8 * slices, "quantization slices")
            pairs = np.frombuffer(raw, dtype=np.dtype([("s", "<f4"), ("z", "<i4")]))
            values = np.frombuffer(r.take(n, f"int8 payload of {name!r}"), dtype=np.int8)
            try:
                params = QuantParams(pairs["s"].copy(), pairs["z"].copy(),
                                     axis if per_axis else None, symmetric)
                out[name] = QuantizedTensor(values.reshape(shape).copy(), params)
            except (ValueError, TypeError) as exc:
                raise FormatError(f"invalid quantization metadata for {name!r}: {exc}",
                                  meta_pos) from None
        elif dtype == SPARSE_BITMAP:
            nbytes = (n + 7) // 8
            bitmap = np.frombuffer(r.take(nbytes, "bitmap"), dtype=np.uint8)
            bits = np.unpackbits(bitmap, bitorder="little", count=n).astype(bool)
            kept = int(bits.sum())
            values = np.frombuffer(r.take(4 * kept, f"sparse values of {name!r}"), dtype="<f4")
            out[name] = SparseTensor(tuple(shape), bits, values.astype(np.float32))
        else:
            raise FormatError(f"unknown dtype code {dtype}", dtype_pos)
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes", r.pos)
    return out


def save(path, entries):
    data = dumps(entries)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())


def file_size(path):
    return os.path.getsize(path)
