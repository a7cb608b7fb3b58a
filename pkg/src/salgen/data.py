"""MNIST-format IDX ingestion, normalization and deterministic sampling.

Images are stored normalized to [0, 1] (byte value / 255). The dataset is
immutable after load and safe to share read-only across workers.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagic,
    InsufficientClassMembers,
    LabelOutOfRange,
    TruncatedFile,
)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

NUM_CLASSES = 10

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"

DATA_DIR_ENV = "SALGEN_DATA_DIR"


@dataclass(frozen=True)
class LabeledDataset:
    """Images with class labels and a split tag ("train" or "test")."""

    images: np.ndarray  # (n, 28, 28) float32 in [0, 1]
    labels: np.ndarray  # (n,) int64 in 0..9
    split_tag: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(
                "images/labels length mismatch: %d vs %d"
                % (len(self.images), len(self.labels))
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= NUM_CLASSES):
            raise LabelOutOfRange("labels must lie in 0..%d" % (NUM_CLASSES - 1))
        if not np.isfinite(self.images).all():
            raise ValueError("dataset images contain non-finite values")
        self.images.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self):
        return len(self.labels)

    def class_indices(self) -> dict[int, np.ndarray]:
        return {c: np.flatnonzero(self.labels == c) for c in range(NUM_CLASSES)}


def parse_idx_images(raw: bytes) -> np.ndarray:
    """Parse an IDX image file into a (count, rows, cols) float32 array in [0, 1].

    Raises BadMagic for a non-image magic number and TruncatedFile when the
    payload length disagrees with the declared dimensions.
    """
    if len(raw) < 16:
        raise TruncatedFile("image header needs 16 bytes, got %d" % len(raw))
    magic, count, rows, cols = struct.unpack(">iiii", raw[:16])
    if magic != IMAGE_MAGIC:
        raise BadMagic("expected image magic 0x%08x, got 0x%08x" % (IMAGE_MAGIC, magic))
    expected = 16 + count * rows * cols
    if len(raw) != expected:
        raise TruncatedFile(
            "image payload is %d bytes, header declares %d" % (len(raw), expected)
        )
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16)
    return (pixels.astype(np.float32) / 255.0).reshape(count, rows, cols)


def parse_idx_labels(raw: bytes) -> np.ndarray:
    """Parse an IDX label file into an (count,) int64 array of class ids."""
    if len(raw) < 8:
        raise TruncatedFile("label header needs 8 bytes, got %d" % len(raw))
    magic, count = struct.unpack(">ii", raw[:8])
    if magic != LABEL_MAGIC:
        raise BadMagic("expected label magic 0x%08x, got 0x%08x" % (LABEL_MAGIC, magic))
    if len(raw) != 8 + count:
        raise TruncatedFile(
            "label payload is %d bytes, header declares %d" % (len(raw), 8 + count)
        )
    labels = np.frombuffer(raw, dtype=np.uint8, offset=8)
    if len(labels) and labels.max() >= NUM_CLASSES:
        raise LabelOutOfRange("label byte %d outside 0..9" % labels.max())
    return labels.astype(np.int64)


def serialize_idx_images(images: np.ndarray) -> bytes:
    """Inverse of parse_idx_images; exact for images that came from bytes."""
    count, rows, cols = images.shape
    header = struct.pack(">iiii", IMAGE_MAGIC, count, rows, cols)
    quantized = np.rint(np.asarray(images, dtype=np.float64) * 255.0).astype(np.uint8)
    return header + quantized.tobytes()


def serialize_idx_labels(labels: np.ndarray) -> bytes:
    header = struct.pack(">ii", LABEL_MAGIC, len(labels))
    return header + np.asarray(labels, dtype=np.uint8).tobytes()


def load_split(images_path: str, labels_path: str, split_tag: str) -> LabeledDataset:
    with open(images_path, "rb") as fh:
        images = parse_idx_images(fh.read())
    with open(labels_path, "rb") as fh:
        labels = parse_idx_labels(fh.read())
    if len(images) != len(labels):
        raise TruncatedFile(
            "image file has %d items but label file has %d" % (len(images), len(labels))
        )
    return LabeledDataset(images=images, labels=labels, split_tag=split_tag)


def load_dataset(data_dir: str | None = None) -> tuple[LabeledDataset, LabeledDataset]:
    """Load the canonical train/test splits from a directory of IDX files.

    `data_dir` defaults to the SALGEN_DATA_DIR environment variable.
    """
    data_dir = data_dir or os.environ.get(DATA_DIR_ENV)
    if not data_dir:
        raise FileNotFoundError(
            "no data directory given; pass --data-dir or set %s" % DATA_DIR_ENV
        )
    train = load_split(
        os.path.join(data_dir, TRAIN_IMAGES), os.path.join(data_dir, TRAIN_LABELS), "train"
    )
    test = load_split(
        os.path.join(data_dir, TEST_IMAGES), os.path.join(data_dir, TEST_LABELS), "test"
    )
    return train, test


def write_dataset(data_dir: str, train: LabeledDataset, test: LabeledDataset) -> None:
    """Write both splits as canonical IDX files under `data_dir`."""
    os.makedirs(data_dir, exist_ok=True)
    pairs = [
        (TRAIN_IMAGES, serialize_idx_images(train.images)),
        (TRAIN_LABELS, serialize_idx_labels(train.labels)),
        (TEST_IMAGES, serialize_idx_images(test.images)),
        (TEST_LABELS, serialize_idx_labels(test.labels)),
    ]
    for name, blob in pairs:
        with open(os.path.join(data_dir, name), "wb") as fh:
            fh.write(blob)


def sample_per_class(ds: LabeledDataset, s: int, seed: int) -> dict[int, np.ndarray]:
    """Draw exactly `s` distinct image indices per class, deterministically.

    Selection is keyed on the sorted member indices of each class, so it is
    invariant to how the dataset happens to be ordered upstream.
    """
    rng = np.random.default_rng(seed)
    out = {}
    for c in range(NUM_CLASSES):
        members = np.flatnonzero(ds.labels == c)
        if len(members) < s:
            raise InsufficientClassMembers(
                "class %d has %d members, need %d" % (c, len(members), s)
            )
        out[c] = members[rng.choice(len(members), size=s, replace=False)]
    return out


def stratified_subset(ds: LabeledDataset, n: int, seed: int) -> LabeledDataset:
    """Deterministic class-balanced subset of size `n` (desk-scale mode)."""
    base, extra = divmod(n, NUM_CLASSES)
    rng = np.random.default_rng(seed)
    chosen = []
    for c in range(NUM_CLASSES):
        want = base + (1 if c < extra else 0)
        members = np.flatnonzero(ds.labels == c)
        if len(members) < want:
            raise InsufficientClassMembers(
                "class %d has %d members, need %d" % (c, len(members), want)
            )
        chosen.append(members[rng.choice(len(members), size=want, replace=False)])
    idx = np.sort(np.concatenate(chosen))
    return LabeledDataset(
        images=ds.images[idx].copy(), labels=ds.labels[idx].copy(), split_tag=ds.split_tag
    )
