"""Little-endian binary checkpoints.

Layout::

    magic   4 bytes  b"CAVG"
    version u32      1 = spectral field, 2 = per-k covariance blocks
    nx      u32
    ny      u32
    payload f64 pairs (re, im), row-major

Version 1 stores the (2*nx + 1, ny) coefficient array of a sine-basis field,
rows ordered k = -nx..nx, columns j = 1..ny. Version 2 stores nx blocks of
shape (ny, ny), one covariance matrix per x-frequency k = 1..nx.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .spectral import SpectralField

MAGIC = b"CAVG"
FIELD_VERSION = 1
COVARIANCE_VERSION = 2
_HEADER = struct.Struct("<4sIII")


class CheckpointError(ValueError):
    pass


def _pack(version: int, nx: int, ny: int, data: np.ndarray) -> bytes:
    payload = np.empty(data.shape + (2,), dtype="<f8")
    payload[..., 0] = data.real
    payload[..., 1] = data.imag
    return _HEADER.pack(MAGIC, version, nx, ny) + payload.tobytes(order="C")


def _unpack(blob: bytes) -> tuple[int, int, int, np.ndarray]:
    if len(blob) < _HEADER.size:
        raise CheckpointError("truncated header")
    magic, version, nx, ny = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version == FIELD_VERSION:
        shape = (2 * nx + 1, ny)
    elif version == COVARIANCE_VERSION:
        shape = (nx, ny, ny)
    else:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    raw = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
    if raw.size != 2 * int(np.prod(shape)):
        raise CheckpointError(
            f"payload has {raw.size} doubles, expected {2 * int(np.prod(shape))}")
    pairs = raw.reshape(shape + (2,))
    return version, nx, ny, pairs[..., 0] + 1j * pairs[..., 1]


def field_to_bytes(f: SpectralField) -> bytes:
    return _pack(FIELD_VERSION, f.nx, f.ny, f.coeffs)


def field_from_bytes(blob: bytes) -> SpectralField:
    version, _, _, data = _unpack(blob)
    if version != FIELD_VERSION:
        raise CheckpointError(f"expected a field checkpoint, found version {version}")
    return SpectralField(data)


def covariance_to_bytes(blocks: np.ndarray) -> bytes:
    blocks = np.asarray(blocks, dtype=complex)
    nx, ny, _ = blocks.shape
    return _pack(COVARIANCE_VERSION, nx, ny, blocks)


def covariance_from_bytes(blob: bytes) -> np.ndarray:
    version, _, _, data = _unpack(blob)
    if version != COVARIANCE_VERSION:
        raise CheckpointError(f"expected a covariance checkpoint, found version {version}")
    return data


def save_field(path, f: SpectralField) -> None:
    Path(path).write_bytes(field_to_bytes(f))


def load_field(path) -> SpectralField:
    return field_from_bytes(Path(path).read_bytes())


def save_covariance(path, blocks: np.ndarray) -> None:
    Path(path).write_bytes(covariance_to_bytes(blocks))


def load_covariance(path) -> np.ndarray:
    return covariance_from_bytes(Path(path).read_bytes())
