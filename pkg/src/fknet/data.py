"""Bit-exact loaders for the MNIST IDX and CIFAR binary distributions.

Images come out as float32 ``[c,h,w]`` tensors scaled to [0,1] (raw byte /
255); any further normalization is the augmentation pipeline's job, so the
loaders stay byte-faithful.  Gzipped files are accepted transparently.
"""

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, DataConsistencyError, FormatError
from .tensor import DTYPE, Tensor

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

CIFAR10_RECORD = 3073  # 1 label byte + 3*32*32 image bytes
CIFAR100_RECORD = 3074  # coarse byte + fine byte + 3*32*32 image bytes

DATASET_STATS = {
    "mnist": dict(classes=10, width=28, height=28, depth=1, train=60000, test=10000),
    "cifar10": dict(classes=10, width=32, height=32, depth=3, train=50000, test=10000),
    "cifar100": dict(classes=100, width=32, height=32, depth=3, train=50000, test=10000),
}


@dataclass
class Sample:
    image: Tensor  # [c,h,w] float32 in [0,1]
    label: int
    coarse_label: Optional[int] = None  # CIFAR-100 superclass, kept but unused


@dataclass
class Dataset:
    name: str  # mnist | cifar10 | cifar100
    train: list
    test: list
    num_classes: int
    class_names: Optional[list] = None


def _read_bytes(path):
    data = Path(path).read_bytes()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def load_mnist(image_file, label_file):
    """Parse an IDX image/label file pair into samples with [1,h,w] images."""
    img = _read_bytes(image_file)
    lab = _read_bytes(label_file)
    if len(img) < 16:
        raise FormatError(f"{image_file}: header truncated ({len(img)} bytes)")
    magic, count, rows, cols = struct.unpack(">IIII", img[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(f"{image_file}: bad magic 0x{magic:08x}")
    if len(lab) < 8:
        raise FormatError(f"{label_file}: header truncated ({len(lab)} bytes)")
    lmagic, lcount = struct.unpack(">II", lab[:8])
    if lmagic != IDX_LABEL_MAGIC:
        raise FormatError(f"{label_file}: bad magic 0x{lmagic:08x}")
    if count != lcount:
        raise DataConsistencyError(
            f"image count {count} != label count {lcount} ({image_file}, {label_file})"
        )
    if len(img) != 16 + count * rows * cols:
        raise FormatError(
            f"{image_file}: expected {16 + count * rows * cols} bytes, got {len(img)}"
        )
    if len(lab) != 8 + count:
        raise FormatError(f"{label_file}: expected {8 + count} bytes, got {len(lab)}")
    pixels = np.frombuffer(img, dtype=np.uint8, offset=16)
    images = pixels.reshape(count, 1, rows, cols).astype(DTYPE) / np.float32(255.0)
    labels = np.frombuffer(lab, dtype=np.uint8, offset=8)
    return [Sample(images[i], int(labels[i])) for i in range(count)]


def load_cifar10(batch_files):
    """Parse CIFAR-10 binary batches: 1 label byte + 3072 channel-major bytes
    per record, giving [3,32,32] images."""
    samples = []
    for path in batch_files:
        data = _read_bytes(path)
        if len(data) == 0 or len(data) % CIFAR10_RECORD != 0:
            raise FormatError(
                f"{path}: length {len(data)} is not a multiple of {CIFAR10_RECORD}"
            )
        n = len(data) // CIFAR10_RECORD
        raw = np.frombuffer(data, dtype=np.uint8).reshape(n, CIFAR10_RECORD)
        labels = raw[:, 0]
        if labels.max() > 9:
            raise FormatError(f"{path}: label {int(labels.max())} out of range 0-9")
        images = raw[:, 1:].reshape(n, 3, 32, 32).astype(DTYPE) / np.float32(255.0)
        samples.extend(Sample(images[i], int(labels[i])) for i in range(n))
    return samples


def load_cifar100(*files):
    """Parse CIFAR-100 binary files: coarse byte, fine byte, then 3072 image
    bytes per record; the fine label is the class label."""
    samples = []
    for path in files:
        data = _read_bytes(path)
        if len(data) == 0 or len(data) % CIFAR100_RECORD != 0:
            raise FormatError(
                f"{path}: length {len(data)} is not a multiple of {CIFAR100_RECORD}"
            )
        n = len(data) // CIFAR100_RECORD
        raw = np.frombuffer(data, dtype=np.uint8).reshape(n, CIFAR100_RECORD)
        coarse = raw[:, 0]
        fine = raw[:, 1]
        if fine.max() > 99:
            raise FormatError(f"{path}: fine label {int(fine.max())} out of range 0-99")
        images = raw[:, 2:].reshape(n, 3, 32, 32).astype(DTYPE) / np.float32(255.0)
        samples.extend(
            Sample(images[i], int(fine[i]), coarse_label=int(coarse[i])) for i in range(n)
        )
    return samples


def _find(data_dir, candidates):
    for rel in candidates:
        p = Path(data_dir) / rel
        if p.exists():
            return p
        if p.with_suffix(p.suffix + ".gz").exists():
            return p.with_suffix(p.suffix + ".gz")
    raise FileNotFoundError(
        f"none of {candidates} found under {data_dir}"
    )


def load_dataset(name, data_dir, limit_train=None, limit_test=None):
    """Locate and load a named dataset from its standard file layout.

    ``limit_*`` keep only the first N samples, copied out of the parent
    buffer so the rest of the file can be garbage-collected.
    """
    if name == "mnist":
        train = load_mnist(
            _find(data_dir, ["train-images-idx3-ubyte", "train-images.idx3-ubyte"]),
            _find(data_dir, ["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"]),
        )
        test = load_mnist(
            _find(data_dir, ["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"]),
            _find(data_dir, ["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"]),
        )
        ds = Dataset("mnist", train, test, 10)
    elif name == "cifar10":
        batch_dir = Path(data_dir)
        if (batch_dir / "cifar-10-batches-bin").is_dir():
            batch_dir = batch_dir / "cifar-10-batches-bin"
        train = load_cifar10(
            [_find(batch_dir, [f"data_batch_{i}.bin"]) for i in range(1, 6)]
        )
        test = load_cifar10([_find(batch_dir, ["test_batch.bin"])])
        ds = Dataset("cifar10", train, test, 10)
    elif name == "cifar100":
        cdir = Path(data_dir)
        if (cdir / "cifar-100-binary").is_dir():
            cdir = cdir / "cifar-100-binary"
        train = load_cifar100(_find(cdir, ["train.bin"]))
        test = load_cifar100(_find(cdir, ["test.bin"]))
        ds = Dataset("cifar100", train, test, 100)
    else:
        raise ConfigError(f"unknown dataset '{name}'")
    if limit_train is not None:
        ds.train = _take(ds.train, limit_train)
    if limit_test is not None:
        ds.test = _take(ds.test, limit_test)
    return ds


def _take(samples, n):
    return [
        Sample(np.array(s.image), s.label, s.coarse_label) for s in samples[: int(n)]
    ]


@dataclass
class StatsCheck:
    name: str
    expected: int
    actual: int

    @property
    def ok(self):
        return self.expected == self.actual

    def __str__(self):
        if self.ok:
            return f"{self.name}: {self.actual} ok"
        return (
            f"{self.name}: expected {self.expected}, got {self.actual}"
            f" (delta {self.actual - self.expected:+d})"
        )


@dataclass
class StatsReport:
    dataset: str
    checks: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c.ok for c in self.checks)

    def __str__(self):
        lines = [f"dataset {self.dataset}: " + ("PASS" if self.passed else "FAIL")]
        lines += [f"  {c}" for c in self.checks]
        return "\n".join(lines)


def validate_stats(ds: Dataset) -> StatsReport:
    """Check class count, image dimensions, and split sizes against the
    published statistics for the named dataset."""
    expected = DATASET_STATS[ds.name]
    report = StatsReport(ds.name)
    add = report.checks.append
    add(StatsCheck("classes", expected["classes"], ds.num_classes))
    first = ds.train[0].image if ds.train else (ds.test[0].image if ds.test else None)
    depth, height, width = first.shape if first is not None else (0, 0, 0)
    odd_shapes = sum(
        1 for split in (ds.train, ds.test) for s in split if s.image.shape != first.shape
    )
    add(StatsCheck("width", expected["width"], width))
    add(StatsCheck("height", expected["height"], height))
    add(StatsCheck("depth", expected["depth"], depth))
    add(StatsCheck("nonuniform_shapes", 0, odd_shapes))
    add(StatsCheck("train_count", expected["train"], len(ds.train)))
    add(StatsCheck("test_count", expected["test"], len(ds.test)))
    labels = {s.label for s in ds.train} | {s.label for s in ds.test}
    in_range = all(0 <= l < expected["classes"] for l in labels)
    add(StatsCheck("labels_in_range", 1, int(in_range)))
    return report


def batches(ds: Dataset, split: str, batch_size: int, shuffle=False, seed=0):
    """Yield ([b,c,h,w] float32, [b] int64 labels) covering the split exactly
    once; a seeded permutation when shuffling, and the final partial batch is
    emitted."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if split not in ("train", "test"):
        raise ConfigError(f"unknown split '{split}'")
    samples = getattr(ds, split)
    order = np.arange(len(samples))
    if shuffle:
        np.random.default_rng(seed).shuffle(order)
    for start in range(0, len(samples), batch_size):
        idx = order[start : start + batch_size]
        images = np.stack([samples[i].image for i in idx])
        labels = np.array([samples[i].label for i in idx], dtype=np.int64)
        yield images, labels
