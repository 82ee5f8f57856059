"""On-disk dataset format, in-memory container, and stratified splitting.

The file format ("AMCD") is a little-endian binary layout: a header naming
the classes, then fixed-size records of (class index, SNR, I row, Q row).
One file holds one signal length. Reading and writing are bit-exact inverse
operations, which the converter tooling and tests rely on.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"AMCD"
VERSION = 1


class FormatError(Exception):
    """Malformed file content (bad structure, inconsistent fields)."""


class MagicError(FormatError):
    """Leading magic bytes are not the expected tag."""


class VersionError(FormatError):
    """Recognized file with an unsupported version number."""


class TruncatedFileError(FormatError):
    """File ends before the declared content is complete."""


@dataclass
class Dataset:
    """Labeled I/Q samples of one common length.

    iq: (N, 2, L) float32, row 0 in-phase, row 1 quadrature;
    labels: (N,) uint16 class indices into class_names;
    snr_db: (N,) float32 per-sample signal-to-noise ratio.
    """

    iq: np.ndarray
    labels: np.ndarray
    snr_db: np.ndarray
    class_names: list[str]

    def __post_init__(self):
        self.iq = np.ascontiguousarray(self.iq, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint16)
        self.snr_db = np.ascontiguousarray(self.snr_db, dtype=np.float32)
        n = self.iq.shape[0]
        if self.iq.ndim != 3 or self.iq.shape[1] != 2:
            raise ValueError(f"iq must be (N, 2, L), got {self.iq.shape}")
        if self.labels.shape != (n,) or self.snr_db.shape != (n,):
            raise ValueError("labels/snr_db must be 1-D with one entry per sample")
        if n and self.labels.max() >= len(self.class_names):
            raise ValueError("label index out of range of class table")

    def __len__(self) -> int:
        return self.iq.shape[0]

    @property
    def length(self) -> int:
        return self.iq.shape[2]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.iq[idx], self.labels[idx], self.snr_db[idx],
                       list(self.class_names))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.class_names == other.class_names
                and self.iq.shape == other.iq.shape
                and self.iq.tobytes() == other.iq.tobytes()
                and self.labels.tobytes() == other.labels.tobytes()
                and self.snr_db.tobytes() == other.snr_db.tobytes())


def _record_dtype(length: int) -> np.dtype:
    return np.dtype([("label", "<u2"), ("snr", "<f4"), ("iq", "<f4", (2, length))])


def write(dataset: Dataset, path) -> None:
    """Serialize a dataset; see module docstring for the layout."""
    head = bytearray()
    head += MAGIC
    head += struct.pack("<I", VERSION)
    head += struct.pack("<I", dataset.num_classes)
    for name in dataset.class_names:
        blob = name.encode("utf-8")
        head += struct.pack("<H", len(blob)) + blob
    head += struct.pack("<II", len(dataset), dataset.length)

    recs = np.empty(len(dataset), dtype=_record_dtype(dataset.length))
    recs["label"] = dataset.labels
    recs["snr"] = dataset.snr_db
    recs["iq"] = dataset.iq
    with open(path, "wb") as fh:
        fh.write(bytes(head))
        fh.write(recs.tobytes())


class _Cursor:
    """Byte reader that turns short reads into TruncatedFileError."""

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(
                f"need {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def read(path) -> Dataset:
    """Parse a dataset file, validating magic, version, and exact size."""
    with open(path, "rb") as fh:
        buf = fh.read()
    cur = _Cursor(buf)
    magic = cur.take(4)
    if magic != MAGIC:
        raise MagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = cur.u32()
    if version != VERSION:
        raise VersionError(f"unsupported version {version}")
    num_classes = cur.u32()
    names = [cur.take(cur.u16()).decode("utf-8") for _ in range(num_classes)]
    num_samples = cur.u32()
    length = cur.u32()

    dtype = _record_dtype(length)
    payload = cur.take(num_samples * dtype.itemsize)
    if cur.pos != len(buf):
        raise FormatError(f"{len(buf) - cur.pos} trailing bytes after records")
    recs = np.frombuffer(payload, dtype=dtype)
    labels = recs["label"]
    if num_samples and names and labels.max() >= num_classes:
        raise FormatError("record class index out of range of class table")
    return Dataset(recs["iq"].copy(), labels.copy(), recs["snr"].copy(), names)


def split(dataset: Dataset, ratio: float = 0.8, seed: int = 0
          ) -> tuple[Dataset, Dataset]:
    """Stratified train/test split over (class, SNR) cells.

    Each cell is shuffled with a generator seeded once for the whole split,
    then cut at floor(ratio * cell size). Cells are visited in sorted order,
    so a fixed seed yields a fixed split regardless of row order history.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    labels = dataset.labels
    snrs = dataset.snr_db
    train_parts, test_parts = [], []
    for lab, snr in sorted(set(zip(labels.tolist(), snrs.tolist()))):
        idx = np.flatnonzero((labels == lab) & (snrs == np.float32(snr)))
        if idx.size < 2:
            raise ValueError(
                f"cell (class={lab}, snr={snr}) has {idx.size} sample(s); need >= 2")
        perm = rng.permutation(idx.size)
        cut = int(np.floor(ratio * idx.size))
        train_parts.append(idx[perm[:cut]])
        test_parts.append(idx[perm[cut:]])
    train_idx = np.sort(np.concatenate(train_parts))
    test_idx = np.sort(np.concatenate(test_parts))
    return dataset.subset(train_idx), dataset.subset(test_idx)
