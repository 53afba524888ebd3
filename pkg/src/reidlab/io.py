"""Binary embedding files and CSV import.

Layout (little-endian, no padding)::

    b"REID"  u32 version=1  u64 N  u32 D  u8 flags(bit0 = normalized)
    N*D float32 values (row-major)
    N int64 labels (-1 = unknown)
    N uint32 camera ids
"""

import csv
import struct

import numpy as np

from .embeddings import SampleMeta
from .errors import BadMagic, TruncatedFile, VersionUnsupported

MAGIC = b"REID"
VERSION = 1
_HEADER = struct.Struct("<4sIQIB")
FLAG_NORMALIZED = 0x01


def encode_embeddings(e, meta, normalized=False):
    e = np.asarray(e, dtype="<f4")
    n = len(meta)
    if e.ndim != 2 or e.shape[0] != n:
        raise ValueError(f"embeddings of shape {e.shape} for {n} samples")
    header = _HEADER.pack(MAGIC, VERSION, n, e.shape[1], FLAG_NORMALIZED if normalized else 0)
    return b"".join([
        header,
        np.ascontiguousarray(e).tobytes(),
        meta.labels.astype("<i8").tobytes(),
        meta.cameras.astype("<u4").tobytes(),
    ])


def write_embeddings(path, e, meta, normalized=False):
    with open(path, "wb") as fh:
        fh.write(encode_embeddings(e, meta, normalized))


def decode_embeddings(buf):
    """Parse file bytes into ``(float32 matrix, SampleMeta, normalized flag)``."""
    buf = memoryview(buf)
    if len(buf) < 4 or bytes(buf[:4]) != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}", 0)
    if len(buf) < _HEADER.size:
        raise TruncatedFile(f"header needs {_HEADER.size} bytes, file has {len(buf)}", len(buf))
    _, version, n, d, flags = _HEADER.unpack_from(buf, 0)
    if version != VERSION:
        raise VersionUnsupported(f"version {version} is not supported", 4)
    offset = _HEADER.size
    sections = [("values", "<f4", n * d), ("labels", "<i8", n), ("cameras", "<u4", n)]
    out = {}
    for name, dtype, count in sections:
        size = np.dtype(dtype).itemsize * count
        if len(buf) < offset + size:
            raise TruncatedFile(f"{name} section needs {size} bytes, "
                                f"{len(buf) - offset} remain", len(buf))
        out[name] = np.frombuffer(buf, dtype=dtype, count=count, offset=offset).copy()
        offset += size
    values = out["values"].astype(np.float32).reshape(n, d)
    meta = SampleMeta(out["labels"].astype(np.int64), out["cameras"].astype(np.int64))
    return values, meta, bool(flags & FLAG_NORMALIZED)


def read_embeddings(path):
    with open(path, "rb") as fh:
        return decode_embeddings(fh.read())


def read_csv(path):
    """CSV with header ``label,camera,f0..f{D-1}``; returns the same triple as
    :func:`read_embeddings` (normalized flag is always false)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["label", "camera"]:
            raise ValueError("CSV header must start with 'label,camera'")
        d = len(header) - 2
        labels, cams, rows = [], [], []
        for line in reader:
            if not line:
                continue
            labels.append(int(line[0]))
            cams.append(int(line[1]))
            rows.append([float(v) for v in line[2:2 + d]])
    values = np.array(rows, dtype=np.float32).reshape(len(rows), d)
    return values, SampleMeta(labels, cams), False
