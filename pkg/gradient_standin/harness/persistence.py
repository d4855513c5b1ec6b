"""
Files written and read by the harness: binary gradient dumps, PGM images and CSV tables.

Gradient dump layout, all integers little-endian::

    8 bytes   magic b"GSTDUMP\\x00"
    uint32    format version (1)
    uint8     kind length, then kind as ASCII ("gradient", "params", "reference")
    uint64    round
    int64     client id (-1 when not tied to a client)
    uint16    transform length, then transform description as UTF-8
    32 bytes  SHA-256 of the model architecture
    uint32    tensor count
    per tensor: uint32 ndim, ndim × uint64 dims, float64 data row-major
"""

import hashlib
import re
import struct
from pathlib import Path
from typing import Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger

from gradient_standin.classes import GradientDump, Layer
from gradient_standin.nn import GradientSet, MlpSpec

DUMP_MAGIC = b"GSTDUMP\x00"
DUMP_VERSION = 1
VALID_KINDS = {"gradient", "params", "reference"}

PathLike = Union[str, Path]

_PGM_HEADER = re.compile(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s")


def spec_hash(spec: MlpSpec) -> str:
    """Hex SHA-256 identifying the architecture a dump belongs to."""
    text = ",".join(str(size) for size in spec.layer_sizes) + ";" + spec.activation
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def gradient_tensors(grads: GradientSet) -> Tuple[np.ndarray, ...]:
    """Weights and biases interleaved layer by layer."""
    return tuple(array for layer in grads for array in (layer.weight, layer.bias))


def gradients_from_tensors(tensors) -> GradientSet:
    """Inverse of :func:`gradient_tensors`."""
    if len(tensors) % 2:
        raise ValueError(f"Expected weight/bias pairs, got {len(tensors)} tensors")
    return tuple(
        Layer(weight=tensors[i], bias=tensors[i + 1]) for i in range(0, len(tensors), 2)
    )


def write_dump(dump: GradientDump, path: PathLike) -> Path:
    """
    Write a :class:`GradientDump` in the binary layout of this module.

    Returns
    -------
    Path
        The written file.
    """
    if dump.kind not in VALID_KINDS:
        raise ValueError(f"Dump kind must be one of {sorted(VALID_KINDS)}, not {dump.kind}")
    digest = bytes.fromhex(dump.spec_hash)
    if len(digest) != 32:
        raise ValueError("spec_hash must be a 64-character hex SHA-256 digest")
    kind = dump.kind.encode("ascii")
    transform = dump.transform.encode("utf-8")

    chunks = [
        DUMP_MAGIC,
        struct.pack("<I", DUMP_VERSION),
        struct.pack("<B", len(kind)),
        kind,
        struct.pack("<Q", dump.round),
        struct.pack("<q", dump.client_id),
        struct.pack("<H", len(transform)),
        transform,
        digest,
        struct.pack("<I", len(dump.tensors)),
    ]
    for tensor in dump.tensors:
        array = np.ascontiguousarray(tensor, dtype="<f8")
        chunks.append(struct.pack("<I", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        chunks.append(array.tobytes())

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(b"".join(chunks))
    logger.debug(f"Wrote {dump.kind} dump with {len(dump.tensors)} tensors to {path}")
    return path


class _Reader:
    def __init__(self, raw: bytes, path: PathLike):
        self.raw = raw
        self.path = path
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.raw):
            raise ValueError(f"{self.path}: truncated gradient dump")
        chunk = self.raw[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_dump(path: PathLike) -> GradientDump:
    """
    Read a dump written by :func:`write_dump`; tensors come back bit-identical.

    Raises
    ------
    ValueError
        On a wrong magic, an unknown version, trailing bytes or truncation.
    """
    reader = _Reader(Path(path).read_bytes(), path)
    if reader.take(8) != DUMP_MAGIC:
        raise ValueError(f"{path}: not a gradient dump (bad magic)")
    (version,) = reader.unpack("<I")
    if version != DUMP_VERSION:
        raise ValueError(f"{path}: unsupported dump version {version}")
    (kind_length,) = reader.unpack("<B")
    kind = reader.take(kind_length).decode("ascii")
    (round_index,) = reader.unpack("<Q")
    (client_id,) = reader.unpack("<q")
    (transform_length,) = reader.unpack("<H")
    transform = reader.take(transform_length).decode("utf-8")
    digest = reader.take(32).hex()
    (count,) = reader.unpack("<I")

    tensors = []
    for _ in range(count):
        (ndim,) = reader.unpack("<I")
        shape = reader.unpack(f"<{ndim}Q") if ndim else ()
        size = int(np.prod(shape, dtype="int64"))
        data = np.frombuffer(reader.take(8 * size), dtype="<f8")
        tensors.append(data.astype("float64").reshape(shape))
    if reader.offset != len(reader.raw):
        raise ValueError(f"{path}: {len(reader.raw) - reader.offset} trailing bytes")

    return GradientDump(
        spec_hash=digest,
        round=round_index,
        client_id=client_id,
        transform=transform,
        tensors=tuple(tensors),
        kind=kind,
    )


def write_pgm(image: np.ndarray, value_range: float, path: PathLike) -> Path:
    """
    Write a 2-D image as binary PGM (``P5``, max value 255).

    Pixels are scaled from ``[0, value_range]`` to ``[0, 255]``, rounded and clamped.
    """
    image = np.asarray(image, dtype="float64")
    if image.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got shape {image.shape}")
    if not value_range > 0:
        raise ValueError(f"value_range must be > 0, not {value_range}")
    scaled = np.nan_to_num(image / value_range * 255.0, nan=0.0, posinf=255.0, neginf=0.0)
    pixels = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
    rows, cols = image.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(f"P5\n{cols} {rows}\n255\n".encode("ascii") + pixels.tobytes())
    return path


def read_pgm(path: PathLike, value_range: float = 255.0) -> np.ndarray:
    """Read a binary PGM back into ``[0, value_range]``."""
    raw = Path(path).read_bytes()
    match = _PGM_HEADER.match(raw)
    if match is None:
        raise ValueError(f"{path}: not a binary PGM")
    cols, rows, maxval = (int(group) for group in match.groups())
    if not 0 < maxval < 256:
        raise ValueError(f"{path}: only 8-bit PGM is supported, max value {maxval}")
    body = raw[match.end() : match.end() + rows * cols]
    if len(body) != rows * cols:
        raise ValueError(f"{path}: truncated PGM")
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(rows, cols).astype("float64")
    return pixels / maxval * value_range


def write_csv(frame: pd.DataFrame, path: PathLike) -> Path:
    """Write a result table; missing values are spelled ``nan`` so no cell is empty."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, na_rep="nan")
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path
