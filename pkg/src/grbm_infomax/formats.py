"""Binary containers: GRBM checkpoints ("GRBM"), datasets ("DSET") and SVM models ("SVMM").

All integers and floats are little-endian; float payloads are IEEE-754 float64
in row-major order.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .core import GrbmParams
from .errors import FormatError, MissingArtifact

_F64 = np.dtype("<f8")
_U32 = np.dtype("<u4")


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError as exc:
        raise MissingArtifact(f"{path}: file not found") from exc


def _atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.path}: truncated file ({len(self.buf)} bytes)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype=_F64).astype(np.float64)

    def remaining(self) -> int:
        return len(self.buf) - self.pos


def _magic(reader: _Reader, magic: bytes) -> None:
    got = reader.take(4)
    if got != magic:
        raise FormatError(f"{reader.path}: bad magic {got!r}, expected {magic!r}")


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def encode_checkpoint(params: GrbmParams, epoch: int) -> bytes:
    head = b"GRBM" + struct.pack("<III", CHECKPOINT_VERSION, params.M, params.N)
    body = b"".join(np.ascontiguousarray(x, dtype=_F64).tobytes()
                    for x in (params.W, params.a, params.b, params.sigma))
    return head + body + struct.pack("<Q", epoch)


def decode_checkpoint(buf: bytes, path="<bytes>"):
    r = _Reader(buf, path)
    _magic(r, b"GRBM")
    version, M, N = r.unpack("<III")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    W = r.floats(M * N).reshape(M, N)
    a, b, sigma = r.floats(M), r.floats(N), r.floats(N)
    (epoch,) = r.unpack("<Q")
    if r.remaining():
        raise FormatError(f"{path}: {r.remaining()} trailing bytes")
    return GrbmParams(W, a, b, sigma), int(epoch)


def write_checkpoint(path, params: GrbmParams, epoch: int) -> None:
    _atomic_write(path, encode_checkpoint(params, epoch))


def read_checkpoint(path):
    """Returns ``(params, epoch)``."""
    return decode_checkpoint(_read_bytes(path), path)


# ---------------------------------------------------------------------------
# datasets

DATASET_VERSION = 1


def write_dataset(path, rows, labels=None) -> None:
    rows = np.ascontiguousarray(rows, dtype=_F64)
    if rows.ndim != 2:
        raise FormatError("dataset rows must be 2-D")
    parts = [b"DSET", struct.pack("<IQQ", DATASET_VERSION, rows.shape[0], rows.shape[1]), rows.tobytes()]
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != (rows.shape[0],):
            raise FormatError("labels must have one entry per row")
        parts.append(labels.astype(_U32).tobytes())
    _atomic_write(path, b"".join(parts))


def read_dataset(path):
    """Returns ``(rows, labels)``; labels is None when the optional block is absent."""
    r = _Reader(_read_bytes(path), path)
    _magic(r, b"DSET")
    version, n, dim = r.unpack("<IQQ")
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    rows = r.floats(n * dim).reshape(n, dim)
    rest = r.remaining()
    if rest == 0:
        return rows, None
    if rest != 4 * n:
        raise FormatError(f"{path}: label block has {rest} bytes, expected {4 * n}")
    labels = np.frombuffer(r.take(rest), dtype=_U32).astype(np.int64)
    return rows, labels


# ---------------------------------------------------------------------------
# SVM models

SVM_VERSION = 1


def encode_svm(model) -> bytes:
    K, D = model.weights.shape
    head = b"SVMM" + struct.pack("<III", SVM_VERSION, K, D)
    body = b"".join(np.ascontiguousarray(x, dtype=_F64).tobytes() for x in (
        model.weights, model.biases, np.array([model.C]), model.feature_mean, model.feature_std))
    return head + body


def decode_svm(buf: bytes, path="<bytes>"):
    from .classify import LinearSvmModel

    r = _Reader(buf, path)
    _magic(r, b"SVMM")
    version, K, D = r.unpack("<III")
    if version != SVM_VERSION:
        raise FormatError(f"{path}: unsupported SVM version {version}")
    weights = r.floats(K * D).reshape(K, D)
    biases = r.floats(K)
    (C,) = r.floats(1)
    mean, std = r.floats(D), r.floats(D)
    if r.remaining():
        raise FormatError(f"{path}: {r.remaining()} trailing bytes")
    return LinearSvmModel(weights, biases, float(C), mean, std)


def write_svm(path, model) -> None:
    _atomic_write(path, encode_svm(model))


def read_svm(path):
    return decode_svm(_read_bytes(path), path)
