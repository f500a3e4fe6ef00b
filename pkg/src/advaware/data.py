"""Image dataset loading, normalization, subsampling, and flattening.

Supports the two classic binary formats:

* IDX (big-endian header; magic 0x00000801 for labels, 0x00000803 for
  image cubes) as shipped by MNIST-style datasets, optionally gzipped.
* CIFAR-10/100 binary records (1 or 2 label bytes followed by 3072
  pixel bytes in row-major R, G, B planes).

Pixels are always normalized to [0, 1] by dividing raw bytes by 255 in
float64; no per-channel standardization is applied, so L-infinity attack
budgets keep a uniform pixel-space meaning.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

IDX_LABELS_MAGIC = 0x00000801
IDX_IMAGES_MAGIC = 0x00000803

CIFAR_PIXELS_PER_RECORD = 3072
CIFAR10_RECORD_SIZE = 1 + CIFAR_PIXELS_PER_RECORD
CIFAR100_RECORD_SIZE = 2 + CIFAR_PIXELS_PER_RECORD

CIFAR_LABEL_MODES = {
    "cifar10": 10,
    "cifar100_fine": 100,
    "cifar100_coarse": 20,
}

SPLIT_TAGS = ("train", "test")


class DatasetError(ValueError):
    """Base class for malformed dataset files."""


class BadMagicError(DatasetError):
    """File does not start with the expected IDX magic number."""


class TruncatedFileError(DatasetError):
    """File length disagrees with what its header declares."""


class CountMismatchError(DatasetError):
    """Image file and label file declare different item counts."""


class RecordSizeError(DatasetError):
    """CIFAR binary file length is not a multiple of the record size."""


class LabelRangeError(DatasetError):
    """A label lies outside [0, class_count)."""


@dataclass(frozen=True)
class Image:
    """One normalized image: pixels shaped (channels, height, width), values in [0, 1]."""

    pixels: np.ndarray
    label: int


@dataclass
class Dataset:
    """An ordered image collection with a fixed class range.

    `pixels` has shape (n, channels, height, width) in float64, every value
    in [0, 1]; `labels` is the aligned (n,) integer vector. `class_count`
    is authoritative for the verifier's top-k range k in [1, class_count].
    """

    pixels: np.ndarray
    labels: np.ndarray
    class_count: int
    split_tag: str = "test"

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.pixels.ndim != 4:
            raise DatasetError(f"pixels must have shape (n, c, h, w), got {self.pixels.shape}")
        if self.labels.ndim != 1 or len(self.labels) != len(self.pixels):
            raise CountMismatchError(
                f"{len(self.pixels)} images but {self.labels.shape} labels"
            )
        if self.class_count < 2:
            raise DatasetError(f"class_count must be >= 2, got {self.class_count}")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise LabelRangeError(
                f"labels must lie in [0, {self.class_count}), found "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )
        if self.pixels.size and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise DatasetError("pixel values must lie in [0, 1]")
        if self.split_tag not in SPLIT_TAGS:
            raise DatasetError(f"split_tag must be one of {SPLIT_TAGS}, got {self.split_tag!r}")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, index: int) -> Image:
        return Image(pixels=self.pixels[index], label=int(self.labels[index]))

    def __iter__(self) -> Iterator[Image]:
        for i in range(len(self)):
            yield self[i]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.pixels.shape[1:])  # type: ignore[return-value]

    @property
    def feature_dim(self) -> int:
        c, h, w = self.image_shape
        return c * h * w

    def features(self) -> np.ndarray:
        """All images flattened to an (n, channels*height*width) matrix."""
        return self.pixels.reshape(len(self), -1)


def _read_binary(path: str | Path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":  # transparently accept gzipped files
        return gzip.decompress(raw)
    return raw


def load_idx(
    images_path: str | Path,
    labels_path: str | Path,
    *,
    class_count: int | None = None,
    split_tag: str = "test",
) -> Dataset:
    """Load an IDX image/label file pair into a normalized Dataset.

    The images file must carry magic 0x00000803 followed by three
    big-endian uint32 dims (count, rows, cols); the labels file magic
    0x00000801 followed by the count. Raw bytes become float64 pixels
    divided by 255. class_count defaults to max label + 1.
    """
    img_raw = _read_binary(images_path)
    lab_raw = _read_binary(labels_path)

    if len(img_raw) < 4:
        raise TruncatedFileError(f"{images_path}: too short for an IDX magic number")
    if len(lab_raw) < 4:
        raise TruncatedFileError(f"{labels_path}: too short for an IDX magic number")

    (img_magic,) = struct.unpack(">I", img_raw[:4])
    if img_magic != IDX_IMAGES_MAGIC:
        raise BadMagicError(f"{images_path}: magic {img_magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")
    (lab_magic,) = struct.unpack(">I", lab_raw[:4])
    if lab_magic != IDX_LABELS_MAGIC:
        raise BadMagicError(f"{labels_path}: magic {lab_magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")

    if len(img_raw) < 16:
        raise TruncatedFileError(f"{images_path}: header truncated")
    n_images, rows, cols = struct.unpack(">III", img_raw[4:16])
    expected = 16 + n_images * rows * cols
    if len(img_raw) != expected:
        raise TruncatedFileError(
            f"{images_path}: expected {expected} bytes for {n_images}x{rows}x{cols}, found {len(img_raw)}"
        )

    if len(lab_raw) < 8:
        raise TruncatedFileError(f"{labels_path}: header truncated")
    (n_labels,) = struct.unpack(">I", lab_raw[4:8])
    if len(lab_raw) != 8 + n_labels:
        raise TruncatedFileError(
            f"{labels_path}: expected {8 + n_labels} bytes for {n_labels} labels, found {len(lab_raw)}"
        )

    if n_images != n_labels:
        raise CountMismatchError(f"{n_images} images but {n_labels} labels")

    pixels = np.frombuffer(img_raw, dtype=np.uint8, offset=16).astype(np.float64) / 255.0
    pixels = pixels.reshape(n_images, 1, rows, cols)
    labels = np.frombuffer(lab_raw, dtype=np.uint8, offset=8).astype(np.int64)

    if class_count is None:
        class_count = int(labels.max()) + 1 if n_labels else 2
    return Dataset(pixels=pixels, labels=labels, class_count=class_count, split_tag=split_tag)


def write_idx(dataset: Dataset, images_path: str | Path, labels_path: str | Path) -> None:
    """Write a single-channel dataset as an IDX file pair (inverse of load_idx).

    Pixels are quantized to bytes with round(p * 255), so a dataset whose
    values are already byte multiples of 1/255 round-trips exactly.
    """
    c, h, w = dataset.image_shape
    if c != 1:
        raise DatasetError(f"IDX image files are single-channel, dataset has {c} channels")
    n = len(dataset)
    raw = np.round(dataset.pixels * 255.0).astype(np.uint8)
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w) + raw.tobytes())
    Path(labels_path).write_bytes(
        struct.pack(">II", IDX_LABELS_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes()
    )


def load_cifar_binary(
    paths: Sequence[str | Path],
    label_mode: str,
    *,
    split_tag: str = "test",
) -> Dataset:
    """Load CIFAR-10/100 binary batch files.

    cifar10 records are 1 label byte + 3072 pixel bytes; cifar100 records
    carry 2 label bytes (coarse then fine) + 3072 pixel bytes. Pixel bytes
    are row-major R, G, B planes, normalized by 255 into shape (3, 32, 32).
    """
    if label_mode not in CIFAR_LABEL_MODES:
        raise DatasetError(f"label_mode must be one of {sorted(CIFAR_LABEL_MODES)}, got {label_mode!r}")
    class_count = CIFAR_LABEL_MODES[label_mode]
    record_size = CIFAR10_RECORD_SIZE if label_mode == "cifar10" else CIFAR100_RECORD_SIZE
    label_offset = 0 if label_mode in ("cifar10", "cifar100_coarse") else 1

    all_pixels = []
    all_labels = []
    for path in paths:
        raw = _read_binary(path)
        if len(raw) % record_size != 0:
            raise RecordSizeError(
                f"{path}: length {len(raw)} is not a multiple of the {record_size}-byte record"
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, record_size)
        labels = records[:, label_offset].astype(np.int64)
        if len(labels) and labels.max() >= class_count:
            raise LabelRangeError(
                f"{path}: label byte {labels.max()} out of range for {label_mode} ({class_count} classes)"
            )
        pixels = records[:, record_size - CIFAR_PIXELS_PER_RECORD :].astype(np.float64) / 255.0
        all_pixels.append(pixels.reshape(-1, 3, 32, 32))
        all_labels.append(labels)

    return Dataset(
        pixels=np.concatenate(all_pixels, axis=0),
        labels=np.concatenate(all_labels, axis=0),
        class_count=class_count,
        split_tag=split_tag,
    )


def subsample(dataset: Dataset, n: int, *, seed: int, stratified: bool = False) -> Dataset:
    """Deterministically select n images, preserving the original order.

    Stratified mode keeps per-class proportions within one image of the
    exact share (largest-remainder apportionment, remainder ties resolved
    toward the smaller class index).
    """
    total = len(dataset)
    if not 1 <= n <= total:
        raise ValueError(f"subsample size must satisfy 1 <= n <= {total}, got {n}")
    rng = np.random.default_rng(seed)
    if not stratified:
        chosen = rng.choice(total, size=n, replace=False)
    else:
        counts = np.bincount(dataset.labels, minlength=dataset.class_count)
        quota = n * counts / total
        base = np.floor(quota).astype(np.int64)
        remainder = n - int(base.sum())
        if remainder:
            # stable sort on -fraction: ties go to the smaller class index
            order = np.argsort(-(quota - base), kind="stable")
            base[order[:remainder]] += 1
        picks = []
        for cls in range(dataset.class_count):
            if base[cls] == 0:
                continue
            members = np.nonzero(dataset.labels == cls)[0]
            picks.append(members[rng.choice(len(members), size=base[cls], replace=False)])
        chosen = np.concatenate(picks)
    chosen = np.sort(chosen)
    return Dataset(
        pixels=dataset.pixels[chosen],
        labels=dataset.labels[chosen],
        class_count=dataset.class_count,
        split_tag=dataset.split_tag,
    )


def flatten(image: Image | np.ndarray) -> np.ndarray:
    """Flatten an image to a 1-D channel-major feature vector, values unchanged."""
    pixels = image.pixels if isinstance(image, Image) else np.asarray(image)
    return pixels.reshape(-1)


def unflatten(vector: np.ndarray, shape: tuple[int, int, int]) -> np.ndarray:
    """Inverse of flatten for a known (channels, height, width) shape."""
    return np.asarray(vector).reshape(shape)
