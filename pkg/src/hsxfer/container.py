"""Binary container shared by encoder checkpoints (MHSL), heads (MHED) and MiniROCKET models (MRKT).

Layout, all little-endian::

    magic        4 bytes
    version      u32
    config       u32 count, then per item: u16 key length, key (utf-8),
                 u8 tag ('i' int64 | 'f' float64 | 's' u32 length + utf-8)
    tensors      u32 count, then per tensor: u16 name length, name,
                 u8 itemsize (4 = f32, 8 = f64, 2 = u16, 1 = i8), u8 ndim,
                 ndim x u32 extents, raw data
    digest       32-byte SHA-256 of everything above
"""
import hashlib
import struct
from collections import OrderedDict

import numpy as np

from .errors import FormatError

VERSION = 1
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8"), 2: np.dtype("<u2"), 1: np.dtype("<i1")}
_CODES = {np.dtype(np.float32): 4, np.dtype(np.float64): 8, np.dtype(np.uint16): 2, np.dtype(np.int8): 1}


def pack(magic: bytes, config: dict, tensors: "OrderedDict[str, np.ndarray]") -> bytes:
    out = bytearray(magic)
    out += struct.pack("<I", VERSION)
    out += struct.pack("<I", len(config))
    for key, value in config.items():
        kb = key.encode("utf-8")
        out += struct.pack("<H", len(kb)) + kb
        if isinstance(value, bool) or isinstance(value, (int, np.integer)):
            out += b"i" + struct.pack("<q", int(value))
        elif isinstance(value, (float, np.floating)):
            out += b"f" + struct.pack("<d", float(value))
        elif isinstance(value, str):
            vb = value.encode("utf-8")
            out += b"s" + struct.pack("<I", len(vb)) + vb
        else:
            raise TypeError(f"unsupported config value for {key!r}: {type(value).__name__}")
    out += struct.pack("<I", len(tensors))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise TypeError(f"unsupported tensor dtype for {name!r}: {arr.dtype}")
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb)) + nb
        out += struct.pack("<BB", code, arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    out += hashlib.sha256(out).digest()
    return bytes(out)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated file while reading {what}", self.pos)
        chunk = self.buf[self.pos: self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def text(self, n, what):
        start = self.pos
        try:
            return self.take(n, what).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{what} is not valid utf-8", start + exc.start) from exc


def unpack(buf: bytes, magic: bytes):
    """Parse a container, returning ``(config, tensors, digest_hex)``."""
    r = _Reader(buf)
    got = r.take(4, "magic")
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}", 0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}, expected {VERSION}", 4)
    config = OrderedDict()
    (n_cfg,) = r.unpack("<I", "config count")
    for _ in range(n_cfg):
        (klen,) = r.unpack("<H", "config key length")
        key = r.text(klen, "config key")
        tag_pos = r.pos
        tag = r.take(1, "config tag")
        if tag == b"i":
            (config[key],) = r.unpack("<q", key)
        elif tag == b"f":
            (config[key],) = r.unpack("<d", key)
        elif tag == b"s":
            (slen,) = r.unpack("<I", key)
            config[key] = r.text(slen, key)
        else:
            raise FormatError(f"unknown config tag {tag!r}", tag_pos)
    tensors = OrderedDict()
    (n_t,) = r.unpack("<I", "tensor count")
    for _ in range(n_t):
        (nlen,) = r.unpack("<H", "tensor name length")
        name = r.text(nlen, "tensor name")
        code_pos = r.pos
        code, ndim = r.unpack("<BB", name)
        if code not in _DTYPES:
            raise FormatError(f"unknown dtype code {code} for {name!r}", code_pos)
        shape = r.unpack(f"<{ndim}I", name)
        dt = _DTYPES[code]
        count = int(np.prod(shape, dtype=np.int64))
        raw = r.take(count * dt.itemsize, name)
        tensors[name] = np.frombuffer(raw, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    body_end = r.pos
    digest = r.take(32, "digest")
    if hashlib.sha256(buf[:body_end]).digest() != digest:
        raise FormatError("content hash mismatch", body_end)
    if r.pos != len(buf):
        raise FormatError("trailing bytes after digest", r.pos)
    return config, tensors, digest.hex()


def digest_of(buf: bytes) -> str:
    return buf[-32:].hex()
