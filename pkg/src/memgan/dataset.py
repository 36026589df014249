"""Dataset ingestion: MNIST IDX files and CIFAR-10 binary batches.

Images come out as float64 in [-1, 1], shaped (N, C, H, W), in file
order (deterministic).  MNIST can be center-cropped from its native
28x28 down to 20x20; the digits sit in a centered 20x20 box so the crop
is lossless for the strokes.
"""

from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    name: str
    images: np.ndarray  # (N, C, H, W) in [-1, 1]
    labels: np.ndarray  # (N,) int64
    classes: int

    def subset(self, n: int) -> "Dataset":
        n = min(n, len(self.labels))
        return Dataset(self.name, self.images[:n], self.labels[:n], self.classes)


def _open_maybe_gz(path):
    if str(path).endswith(".gz"):
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(fh, n, path, what):
    data = fh.read(n)
    if len(data) != n:
        raise DatasetError(f"{path}: truncated while reading {what} "
                           f"(wanted {n} bytes, got {len(data)})")
    return data


def read_idx_images(path) -> np.ndarray:
    """Raw (N, H, W) uint8 pixels from an IDX3 file (optionally gzipped)."""
    if os.path.getsize(path) == 0:
        raise DatasetError(f"{path}: file is empty")
    with _open_maybe_gz(path) as fh:
        magic, n, h, w = struct.unpack(">IIII", _read_exact(fh, 16, path, "IDX header"))
        if magic != IDX_IMAGE_MAGIC:
            raise DatasetError(f"{path}: bad IDX image magic {magic} (expected {IDX_IMAGE_MAGIC})")
        raw = _read_exact(fh, n * h * w, path, f"{n} images of {h}x{w}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(n, h, w)


def read_idx_labels(path) -> np.ndarray:
    if os.path.getsize(path) == 0:
        raise DatasetError(f"{path}: file is empty")
    with _open_maybe_gz(path) as fh:
        magic, n = struct.unpack(">II", _read_exact(fh, 8, path, "IDX header"))
        if magic != IDX_LABEL_MAGIC:
            raise DatasetError(f"{path}: bad IDX label magic {magic} (expected {IDX_LABEL_MAGIC})")
        raw = _read_exact(fh, n, path, f"{n} labels")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)


def write_idx_images(path, images: np.ndarray):
    """Inverse of read_idx_images, for fixtures and surrogate datasets."""
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, len(labels)))
        fh.write(labels.tobytes())


def _center_crop(images: np.ndarray, side: int) -> np.ndarray:
    h, w = images.shape[1:]
    if side > h or side > w:
        raise DatasetError(f"cannot crop {h}x{w} images to {side}x{side}")
    top, left = (h - side) // 2, (w - side) // 2
    return images[:, top : top + side, left : left + side]


def _find(path, stem):
    for suffix in ("", ".gz"):
        cand = os.path.join(path, stem + suffix)
        if os.path.exists(cand):
            return cand
    raise DatasetError(f"missing dataset file {stem}[.gz] under {path}")


def ingest_mnist(path, split: str = "train", image_size: int = 20) -> Dataset:
    """Load an MNIST-format IDX pair and normalize to [-1, 1].

    ``image_size`` of 20 center-crops the native 28x28 frame; 28 keeps
    it.  Files may be the standard names with or without .gz.
    """
    stem = "train" if split == "train" else "t10k"
    images = read_idx_images(_find(path, f"{stem}-images-idx3-ubyte"))
    labels = read_idx_labels(_find(path, f"{stem}-labels-idx1-ubyte"))
    if len(images) != len(labels):
        raise DatasetError(f"{path}: {len(images)} images vs {len(labels)} labels")
    if image_size != images.shape[1]:
        images = _center_crop(images, image_size)
    x = images.astype(np.float64) / 255.0 * 2.0 - 1.0
    return Dataset("mnist", x[:, None, :, :], labels, classes=10)


def ingest_cifar10(path, split: str = "train") -> Dataset:
    """Load CIFAR-10 binary batches: 1 label byte + 3072 pixel bytes."""
    files = [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
    images, labels = [], []
    for name in files:
        fpath = _find(path, name)
        if os.path.getsize(fpath) == 0:
            raise DatasetError(f"{fpath}: file is empty")
        with _open_maybe_gz(fpath) as fh:
            raw = fh.read()
        rec = 1 + 3072
        if len(raw) % rec != 0:
            raise DatasetError(f"{fpath}: size {len(raw)} is not a multiple of {rec}")
        arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, rec)
        labels.append(arr[:, 0].astype(np.int64))
        images.append(arr[:, 1:].reshape(-1, 3, 32, 32))
    x = np.concatenate(images).astype(np.float64) / 255.0 * 2.0 - 1.0
    return Dataset("cifar10", x, np.concatenate(labels), classes=10)
