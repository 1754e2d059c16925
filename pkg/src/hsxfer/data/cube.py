"""HyperCube and the HSCB binary cube format.

HSCB layout (little-endian)::

    "HSCB" | u32 version=1 | u32 H | u32 W | u32 C | u8 has_labels | 3 pad bytes
    C x f32 wavelengths (nm)
    H*W*C x f32 reflectance, pixel-interleaved (all bands of (0,0), then (0,1), ...)
    H*W x u16 labels, row-major            (only if has_labels)
"""
import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import DataError, FormatError
from ..tokenizer import check_wavelengths

IGNORE_LABEL = 65535
MAGIC = b"HSCB"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIB3x")


@dataclass(eq=False)
class HyperCube:
    reflectance: np.ndarray  # H x W x C, float32
    wavelengths: np.ndarray  # C, float32, nm
    labels: Optional[np.ndarray] = None  # H x W, uint16

    def __post_init__(self):
        self.reflectance = np.ascontiguousarray(self.reflectance, dtype=np.float32)
        self.wavelengths = np.ascontiguousarray(self.wavelengths, dtype=np.float32)
        if self.reflectance.ndim != 3:
            raise DataError(f"reflectance must be H x W x C, got shape {self.reflectance.shape}")
        if self.wavelengths.shape != (self.reflectance.shape[2],):
            raise DataError(f"{self.wavelengths.size} wavelengths for {self.reflectance.shape[2]} bands")
        check_wavelengths(self.wavelengths)
        if self.labels is not None:
            self.labels = np.ascontiguousarray(self.labels, dtype=np.uint16)
            if self.labels.shape != self.reflectance.shape[:2]:
                raise DataError(f"label plane {self.labels.shape} does not match {self.reflectance.shape[:2]}")

    @property
    def shape(self):
        return self.reflectance.shape

    @property
    def n_bands(self):
        return self.reflectance.shape[2]

    def check_labels(self, n_classes):
        if self.labels is None:
            return
        lab = self.labels
        bad = (lab >= n_classes) & (lab != IGNORE_LABEL)
        if bad.any():
            raise DataError(f"label {int(lab[bad][0])} outside [0, {n_classes}) and not {IGNORE_LABEL}")

    def content_hash(self):
        """Hash of wavelengths + reflectance (labels excluded: features do not depend on them)."""
        h = hashlib.sha256()
        h.update(struct.pack("<III", *self.reflectance.shape))
        h.update(self.wavelengths.astype("<f4").tobytes())
        h.update(self.reflectance.astype("<f4").tobytes())
        return h.hexdigest()

    def equals(self, other):
        same_labels = (self.labels is None and other.labels is None) or (
            self.labels is not None and other.labels is not None and np.array_equal(self.labels, other.labels))
        return (same_labels and self.reflectance.shape == other.reflectance.shape
                and self.reflectance.tobytes() == other.reflectance.tobytes()
                and self.wavelengths.tobytes() == other.wavelengths.tobytes())


def cube_to_bytes(cube: HyperCube) -> bytes:
    h, w, c = cube.reflectance.shape
    has = cube.labels is not None
    parts = [_HEADER.pack(MAGIC, VERSION, h, w, c, int(has)),
             cube.wavelengths.astype("<f4").tobytes(),
             cube.reflectance.astype("<f4").tobytes()]
    if has:
        parts.append(cube.labels.astype("<u2").tobytes())
    return b"".join(parts)


def cube_from_bytes(buf: bytes) -> HyperCube:
    if len(buf) < _HEADER.size:
        raise FormatError(f"truncated header: {len(buf)} of {_HEADER.size} bytes", len(buf))
    magic, version, h, w, c, has = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported HSCB version {version}", 4)
    if c == 0:
        raise FormatError("band count must be positive", 16)
    if has not in (0, 1):
        raise FormatError(f"has_labels flag must be 0 or 1, got {has}", 20)
    off = _HEADER.size
    sizes = [("wavelengths", 4 * c), ("reflectance", 4 * h * w * c)]
    if has:
        sizes.append(("labels", 2 * h * w))
    chunks = {}
    for what, n in sizes:
        if off + n > len(buf):
            raise FormatError(f"truncated {what}: need {n} bytes, {len(buf) - off} left", len(buf))
        chunks[what] = buf[off: off + n]
        off += n
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes", off)
    wl = np.frombuffer(chunks["wavelengths"], dtype="<f4").astype(np.float32)
    refl = np.frombuffer(chunks["reflectance"], dtype="<f4").astype(np.float32).reshape(h, w, c)
    labels = None
    if has:
        labels = np.frombuffer(chunks["labels"], dtype="<u2").astype(np.uint16).reshape(h, w)
    try:
        return HyperCube(refl, wl, labels)
    except DataError as exc:
        raise FormatError(f"invalid cube contents: {exc}", _HEADER.size) from exc


def write_cube(cube: HyperCube, path):
    Path(path).write_bytes(cube_to_bytes(cube))


def read_cube(path) -> HyperCube:
    return cube_from_bytes(Path(path).read_bytes())
