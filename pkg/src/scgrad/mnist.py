"""Reader for MNIST files in IDX format (optionally gzip-compressed).

Layout: a 4-byte big-endian magic (0x00000803 for images, 0x00000801
for labels), one big-endian uint32 per dimension, then unsigned bytes.
"""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"


class IdxFormatError(ValueError):
    """Malformed IDX file; ``offset`` is the byte position of the problem."""

    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: byte {offset}: {message}")
        self.path = str(path)
        self.offset = offset


def _open(path: Path):
    with open(path, "rb") as f:
        gz = f.read(2) == b"\x1f\x8b"
    return gzip.open(path, "rb") if gz else open(path, "rb")


def _read_exact(f, n: int, path, offset: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise IdxFormatError(path, offset + len(buf),
                             f"truncated {what}: expected {n} bytes, got {len(buf)}")
    return buf


def _header(f, path, magic: int, ndim: int) -> tuple:
    raw = _read_exact(f, 4, path, 0, "magic number")
    (got,) = struct.unpack(">I", raw)
    if got != magic:
        raise IdxFormatError(path, 0, f"bad magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", _read_exact(f, 4 * ndim, path, 4, "dimensions"))
    return dims


@dataclass(frozen=True)
class IdxImages:
    """Header of an image file; pixel data is read lazily."""

    path: Path
    count: int
    rows: int
    cols: int

    @property
    def data_offset(self) -> int:
        return 16

    @property
    def pixels(self) -> int:
        return self.rows * self.cols

    def batches(self, batch_size: int, limit: Optional[int] = None) -> Iterator[np.ndarray]:
        """Stream ``(k, rows * cols)`` float arrays in file order, scaled to [0, 1]."""
        if batch_size < 1:
            raise ValueError("batch_size must be positive")
        total = self.count if limit is None else min(limit, self.count)
        with _open(self.path) as f:
            f.read(self.data_offset)
            done = 0
            while done < total:
                k = min(batch_size, total - done)
                at = self.data_offset + done * self.pixels
                raw = _read_exact(f, k * self.pixels, self.path, at, "pixel data")
                yield np.frombuffer(raw, dtype=np.uint8).reshape(k, self.pixels) / 255.0
                done += k

    def load(self, limit: Optional[int] = None) -> np.ndarray:
        parts = list(self.batches(10_000, limit))
        return np.concatenate(parts) if parts else np.zeros((0, self.pixels))


def read_image_header(path, expected=(28, 28)) -> IdxImages:
    path = Path(path)
    with _open(path) as f:
        count, rows, cols = _header(f, path, IMAGES_MAGIC, 3)
    if expected is not None and (rows, cols) != tuple(expected):
        raise IdxFormatError(path, 8, f"images are {rows}x{cols}, expected "
                                      f"{expected[0]}x{expected[1]}")
    return IdxImages(path, count, rows, cols)


def read_labels(path, limit: Optional[int] = None) -> np.ndarray:
    path = Path(path)
    with _open(path) as f:
        (count,) = _header(f, path, LABELS_MAGIC, 1)
        n = count if limit is None else min(limit, count)
        raw = _read_exact(f, n, path, 8, "label data")
    return np.frombuffer(raw, dtype=np.uint8).copy()


@dataclass(frozen=True)
class Mnist:
    images: IdxImages
    labels_path: Path
    count: int

    def batches(self, batch_size: int, limit: Optional[int] = None):
        return self.images.batches(batch_size, limit)

    def load(self, limit: Optional[int] = None) -> tuple:
        return self.images.load(limit), read_labels(self.labels_path, limit)


def load_mnist_idx(images_path, labels_path, expected=(28, 28)) -> Mnist:
    """Validate both headers and return a streaming batch source."""
    images = read_image_header(images_path, expected)
    path = Path(labels_path)
    with _open(path) as f:
        (count,) = _header(f, path, LABELS_MAGIC, 1)
    if count != images.count:
        raise IdxFormatError(path, 4, f"{count} labels for {images.count} images")
    return Mnist(images, path, count)


def find_files(directory) -> tuple:
    """Locate the training image and label files (plain or ``.gz``) in a directory."""
    d = Path(directory)
    found = []
    for stem in (TRAIN_IMAGES, TRAIN_LABELS):
        for name in (stem, stem + ".gz"):
            if (d / name).is_file():
                found.append(d / name)
                break
        else:
            raise FileNotFoundError(f"{d}: no {stem}[.gz]")
    return tuple(found)


def write_idx(path, array: np.ndarray, compress: Optional[bool] = None) -> None:
    """Write a uint8 array as IDX (used to build fixtures)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = {3: IMAGES_MAGIC, 1: LABELS_MAGIC}.get(array.ndim)
    if magic is None:
        raise ValueError("IDX writer supports rank-1 labels or rank-3 images")
    body = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape) + array.tobytes()
    path = Path(path)
    if compress is None:
        compress = path.suffix == ".gz"
    with (gzip.GzipFile(path, "wb", mtime=0) if compress else open(path, "wb")) as f:
        f.write(body)
