"""Synthetic datasets and the binary dataset file format.

File layout (little-endian)::

    b"PVAEDS01"            8-byte magic
    u64 n, u64 dim
    u8  has_labels
    f64 rows[n * dim]      row-major
    i64 labels[n]          only if has_labels
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"PVAEDS01"
_HEADER = struct.Struct("<8sQQB")


class DatasetFormatError(ValueError):
    pass


@dataclass
class Dataset:
    rows: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise ValueError(f"Dataset: rows must be a 2-D matrix, got shape {self.rows.shape}")
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("Dataset: rows contain non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.n,):
                raise ValueError(f"Dataset: expected {self.n} labels, got shape {self.labels.shape}")

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        same_rows = self.rows.shape == other.rows.shape and self.rows.tobytes() == other.rows.tobytes()
        if (self.labels is None) != (other.labels is None):
            return False
        return same_rows and (self.labels is None or np.array_equal(self.labels, other.labels))


def pinwheel(
    n: int = 400,
    arms: int = 4,
    radial_std: float = 0.3,
    tangential_std: float = 0.05,
    rate: float = 0.25,
    seed: int = 0,
) -> Dataset:
    """Points on ``arms`` spirals in 2-D, ``n // arms`` per arm.

    Radii are ``N(1, radial_std)``; each point's angle is its arm's base
    angle ``2 pi k / arms`` plus ``N(0, tangential_std)`` plus
    ``rate * (radius - 1)``.
    """
    if arms < 1 or n % arms:
        raise ValueError(f"pinwheel: number of arms {arms} must divide n={n}")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(arms), n // arms)
    radius = 1.0 + radial_std * rng.standard_normal(n)
    angle = 2.0 * np.pi * labels / arms + tangential_std * rng.standard_normal(n) + rate * (radius - 1.0)
    rows = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
    return Dataset(rows, labels)


SHAPE_CLASSES = ("hbar", "vbar", "box", "frame")


def synth_images(n: int, side: int = 8, seed: int = 0) -> Dataset:
    """Binary ``side x side`` images of bars and rectangles, flattened.

    Labels index :data:`SHAPE_CLASSES` and are drawn uniformly.
    """
    if side < 4:
        raise ValueError(f"synth_images: side must be at least 4, got {side}")
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, len(SHAPE_CLASSES), size=n)
    imgs = np.zeros((n, side, side))
    for i, c in enumerate(labels):
        if c == 0:
            r = rng.integers(0, side)
            lo, hi = np.sort(rng.choice(side + 1, size=2, replace=False))
            imgs[i, r, lo:max(hi, lo + 2)] = 1.0
        elif c == 1:
            col = rng.integers(0, side)
            lo, hi = np.sort(rng.choice(side + 1, size=2, replace=False))
            imgs[i, lo:max(hi, lo + 2), col] = 1.0
        else:
            h, w = rng.integers(3, side + 1, size=2)
            r0, c0 = rng.integers(0, side - h + 1), rng.integers(0, side - w + 1)
            imgs[i, r0 : r0 + h, c0 : c0 + w] = 1.0
            if c == 3:
                imgs[i, r0 + 1 : r0 + h - 1, c0 + 1 : c0 + w - 1] = 0.0
    return Dataset(imgs.reshape(n, side * side), labels)


def save_dataset(ds: Dataset, path) -> None:
    has_labels = ds.labels is not None
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, ds.n, ds.dim, int(has_labels)))
        fh.write(ds.rows.astype("<f8").tobytes(order="C"))
        if has_labels:
            fh.write(ds.labels.astype("<i8").tobytes())


def read_header(path) -> tuple[int, int, bool]:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    return _parse_header(head)


def _parse_header(buf: bytes) -> tuple[int, int, bool]:
    if len(buf) < 8 or buf[:8] != MAGIC:
        raise DatasetFormatError(f"bad magic at byte offset 0: expected {MAGIC!r}, got {buf[:8]!r}")
    if len(buf) < _HEADER.size:
        raise DatasetFormatError(
            f"truncated header: expected {_HEADER.size} bytes, got {len(buf)} (ends at byte offset {len(buf)})"
        )
    _, n, dim, flag = _HEADER.unpack_from(buf)
    if flag not in (0, 1):
        raise DatasetFormatError(f"bad has_labels flag {flag} at byte offset 24")
    return n, dim, bool(flag)


def load_dataset(path) -> Dataset:
    buf = Path(path).read_bytes()
    n, dim, has_labels = _parse_header(buf)
    expected = _HEADER.size + 8 * n * dim + (8 * n if has_labels else 0)
    if len(buf) != expected:
        kind = "truncated" if len(buf) < expected else "trailing bytes in"
        raise DatasetFormatError(
            f"{kind} dataset file: expected {expected} bytes for n={n}, dim={dim}, "
            f"labels={has_labels}, got {len(buf)} (mismatch at byte offset {min(len(buf), expected)})"
        )
    off = _HEADER.size
    rows = np.frombuffer(buf, dtype="<f8", count=n * dim, offset=off).astype(np.float64).reshape(n, dim)
    labels = None
    if has_labels:
        labels = np.frombuffer(buf, dtype="<i8", count=n, offset=off + 8 * n * dim).astype(np.int64)
    return Dataset(rows, labels)
