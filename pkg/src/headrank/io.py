"""Binary containers (BMAT, TOKS1, LBLS1), CSV/JSON writers and run manifests.

All integers are little-endian u32. BMAT payloads are row-major float32
(dtype code 0) or float64 (dtype code 1).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

BMAT_MAGIC = b"BMAT1"
TOKS_MAGIC = b"TOKS1"
LBLS_MAGIC = b"LBLS1"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class FormatError(ValueError):
    pass


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file while reading {what}")
    return buf


def _check_magic(f, magic, path):
    got = f.read(len(magic))
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}")


def read_bmat(path) -> np.ndarray:
    with open(path, "rb") as f:
        _check_magic(f, BMAT_MAGIC, path)
        rows, cols, code = struct.unpack("<IIB", _read_exact(f, 9, "BMAT header"))
        if code not in _DTYPES:
            raise FormatError(f"{path}: unknown dtype code {code}")
        dt = _DTYPES[code]
        payload = f.read()
    if len(payload) != rows * cols * dt.itemsize:
        raise FormatError(
            f"{path}: payload has {len(payload)} bytes, expected {rows * cols * dt.itemsize}"
        )
    m = np.frombuffer(payload, dtype=dt).astype(np.float64).reshape(rows, cols)
    if not np.isfinite(m).all():
        raise FormatError(f"{path}: matrix has non-finite entries")
    return m


def write_bmat(path, m, dtype_code=1):
    a = np.asarray(m)
    if a.ndim != 2:
        raise ValueError("BMAT holds 2-D matrices")
    header = BMAT_MAGIC + struct.pack("<IIB", a.shape[0], a.shape[1], dtype_code)
    atomic_write_bytes(path, header + np.ascontiguousarray(a, dtype=_DTYPES[dtype_code]).tobytes())


def read_tokens(path, vocab_size=None):
    """Return ``(documents, vocab_size)`` from a TOKS1 file."""
    with open(path, "rb") as f:
        _check_magic(f, TOKS_MAGIC, path)
        vocab, ndocs = struct.unpack("<II", _read_exact(f, 8, "TOKS1 header"))
        docs = []
        for i in range(ndocs):
            (length,) = struct.unpack("<I", _read_exact(f, 4, f"length of document {i}"))
            docs.append(np.frombuffer(_read_exact(f, 4 * length, f"document {i}"), dtype="<u4").astype(np.int64))
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after {ndocs} documents")
    return docs, vocab


def write_tokens(path, documents, vocab_size):
    buf = io.BytesIO()
    buf.write(TOKS_MAGIC + struct.pack("<II", vocab_size, len(documents)))
    for doc in documents:
        arr = np.asarray(doc, dtype="<u4")
        buf.write(struct.pack("<I", arr.size))
        buf.write(arr.tobytes())
    atomic_write_bytes(path, buf.getvalue())


def read_labels(path) -> np.ndarray:
    with open(path, "rb") as f:
        _check_magic(f, LBLS_MAGIC, path)
        (count,) = struct.unpack("<I", _read_exact(f, 4, "LBLS1 header"))
        ids = np.frombuffer(_read_exact(f, 4 * count, "labels"), dtype="<u4").astype(np.int64)
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after {count} labels")
    return ids


def write_labels(path, labels):
    arr = np.asarray(labels, dtype="<u4")
    atomic_write_bytes(path, LBLS_MAGIC + struct.pack("<I", arr.size) + arr.tobytes())


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return "" if v is None else str(v)


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    atomic_write_bytes(path, buf.getvalue().encode())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def write_json(path, obj):
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False)
    atomic_write_bytes(path, (text + "\n").encode())


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seed: int | None
    version: str
    backend: str
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def add_input(self, path):
        self.inputs[str(path)] = file_digest(path)

    def write(self, path):
        write_json(path, asdict(self))
