"""Dataset ingestion: MNIST-style IDX files, synthetic blobs and block downsampling."""

import gzip
import struct
from collections import namedtuple
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from loguru import logger

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

PathLike = Union[str, Path]

# inputs scaled to [0, 1]; value_range is the native intensity range
Dataset = namedtuple("Dataset", ["inputs", "labels", "value_range", "image_shape", "name"])

IdxSummary = namedtuple("IdxSummary", ["count", "rows", "cols", "max_label"])


class IdxFormatError(ValueError):
    """An IDX file has a wrong magic number, is truncated or disagrees with its partner."""


def _read_bytes(path: PathLike) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as handle:
            return handle.read()
    return path.read_bytes()


def _read_head(path: PathLike, size: int) -> bytes:
    opener = gzip.open if Path(path).suffix == ".gz" else open
    with opener(path, "rb") as handle:
        return handle.read(size)


def _read_idx_images(path: PathLike) -> np.ndarray:
    # [magic 0x00000803][count][rows][cols] as big-endian uint32, then pixels
    raw = _read_bytes(path)
    if len(raw) < 16:
        raise IdxFormatError(f"{path}: truncated header")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGES_MAGIC:
        raise IdxFormatError(f"{path}: bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")
    expected = count * rows * cols
    if len(raw) - 16 < expected:
        raise IdxFormatError(
            f"{path}: truncated, {len(raw) - 16} pixel bytes for {count} images of {rows}x{cols}"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8, count=expected, offset=16)
    return pixels.reshape(count, rows, cols).astype("float64")


def _read_idx_labels(path: PathLike) -> np.ndarray:
    # [magic 0x00000801][count] as big-endian uint32, then one byte per label
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise IdxFormatError(f"{path}: truncated header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != LABELS_MAGIC:
        raise IdxFormatError(f"{path}: bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")
    if len(raw) - 8 < count:
        raise IdxFormatError(f"{path}: truncated, {len(raw) - 8} label bytes for {count} labels")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=8).astype("int64")


def load_idx(images_path: PathLike, labels_path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    """
    Load an IDX image file and its label file (optionally gzipped).

    Parameters
    ----------
    images_path : str or Path
        File with magic 0x00000803.
    labels_path : str or Path
        File with magic 0x00000801.

    Returns
    -------
    tuple of np.ndarray
        Images of shape ``[count, rows, cols]`` with pixel values in [0, 255]
        and integer labels of shape ``[count]``.

    Raises
    ------
    IdxFormatError
        On a bad magic number, a truncated file or differing counts.
    """
    images = _read_idx_images(images_path)
    labels = _read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"count mismatch: {images.shape[0]} images but {labels.shape[0]} labels"
        )
    logger.info(f"Loaded {images.shape[0]} images of {images.shape[1]}x{images.shape[2]}")
    return images, labels


def idx_summary(
    images_path: PathLike, labels_path: PathLike, limit: Optional[int] = None
) -> IdxSummary:
    """
    Image geometry and label range of an IDX pair without decoding the pixels.

    Only the 16-byte image header is read; the label file is read in full.
    ``limit`` restricts the label range to the first ``limit`` examples.

    Raises
    ------
    IdxFormatError
        On a bad magic number, a truncated header or differing counts.
    """
    head = _read_head(images_path, 16)
    if len(head) < 16:
        raise IdxFormatError(f"{images_path}: truncated header")
    magic, count, rows, cols = struct.unpack(">IIII", head)
    if magic != IMAGES_MAGIC:
        raise IdxFormatError(
            f"{images_path}: bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"
        )
    labels = _read_idx_labels(labels_path)
    if labels.size != count:
        raise IdxFormatError(f"count mismatch: {count} images but {labels.size} labels")
    labels = labels[:limit]
    max_label = int(labels.max()) if labels.size else -1
    return IdxSummary(count, rows, cols, max_label)


def gen_blobs(
    n_per_class: int,
    dims: int,
    classes: int,
    spread: float,
    seed: int,
    scale: float = 3.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gaussian blobs around the scaled unit axes ``scale·e_k``.

    Returns
    -------
    tuple of np.ndarray
        Inputs of shape ``[n_per_class·classes, dims]`` grouped by class and
        labels ``0, …, classes-1``.
    """
    if classes < 2:
        raise ValueError(f"Need at least 2 classes, not {classes}")
    if dims < classes:
        raise ValueError(f"Need dims >= classes for axis centers, got {dims} < {classes}")
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, not {n_per_class}")
    if spread < 0:
        raise ValueError(f"spread must be >= 0, not {spread}")
    rng = np.random.default_rng(seed)
    centers = scale * np.eye(classes, dims)
    labels = np.repeat(np.arange(classes), n_per_class)
    inputs = centers[labels] + spread * rng.standard_normal((labels.size, dims))
    return inputs, labels


def downsample(image: np.ndarray, factor: int) -> np.ndarray:
    """Means of non-overlapping ``factor × factor`` blocks of a 2-D image."""
    image = np.asarray(image, dtype="float64")
    if image.ndim != 2:
        raise ValueError(f"Expected a 2-D image, got shape {image.shape}")
    if factor < 1:
        raise ValueError(f"Downsample factor must be >= 1, not {factor}")
    rows, cols = image.shape
    if rows % factor or cols % factor:
        raise ValueError(f"Image of shape {image.shape} is not divisible by {factor}")
    return image.reshape(rows // factor, factor, cols // factor, factor).mean(axis=(1, 3))
