"""Synthetic datasets, IDX image files and worker partitioning."""

from __future__ import annotations

import enum
import gzip
import struct
from dataclasses import dataclass

import numpy as np

from ..core import InvalidInputError, SeededRng

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DatasetKind(str, enum.Enum):
    LINEAR = "linear"
    LOGISTIC = "logistic"
    BLOBS = "blobs"
    IDX = "idx"


class PartitionMode(str, enum.Enum):
    IID = "iid"
    LABEL_SORTED = "label_sorted"


_DATASET_ALIASES = {
    "linear": DatasetKind.LINEAR,
    "synthetic_linear": DatasetKind.LINEAR,
    "logistic": DatasetKind.LOGISTIC,
    "synthetic_logistic": DatasetKind.LOGISTIC,
    "blobs": DatasetKind.BLOBS,
    "synthetic_blobs": DatasetKind.BLOBS,
    "idx": DatasetKind.IDX,
    "idx_images": DatasetKind.IDX,
    "mnist": DatasetKind.IDX,
}

_PARTITION_ALIASES = {
    "iid": PartitionMode.IID,
    "iid_equal": PartitionMode.IID,
    "label_sorted": PartitionMode.LABEL_SORTED,
    "sorted": PartitionMode.LABEL_SORTED,
    "noniid": PartitionMode.LABEL_SORTED,
    "non_iid": PartitionMode.LABEL_SORTED,
}


def dataset_kind(value) -> DatasetKind:
    if isinstance(value, DatasetKind):
        return value
    try:
        return _DATASET_ALIASES[str(value).strip().lower()]
    except KeyError:
        raise InvalidInputError(f"unknown dataset kind {value!r}") from None


def partition_mode(value) -> PartitionMode:
    if isinstance(value, PartitionMode):
        return value
    try:
        return _PARTITION_ALIASES[str(value).strip().lower()]
    except KeyError:
        raise InvalidInputError(f"unknown partition mode {value!r}") from None


@dataclass(frozen=True)
class DatasetSpec:
    kind: DatasetKind = DatasetKind.BLOBS
    num_examples: int = 6000
    dim: int = 20
    num_classes: int = 10
    noise_scale: float = 1.0
    path: str | None = None
    labels_path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", dataset_kind(self.kind))
        if self.kind is not DatasetKind.IDX:
            if self.num_examples < 1 or self.dim < 1:
                raise InvalidInputError("num_examples and dim must be positive")
            if self.noise_scale < 0:
                raise InvalidInputError("noise_scale must be nonnegative")
        elif not self.path or not self.labels_path:
            raise InvalidInputError("IDX datasets need both an images path and a labels path")


@dataclass(frozen=True)
class PartitionSpec:
    mode: PartitionMode
    n: int

    def __post_init__(self):
        object.__setattr__(self, "mode", partition_mode(self.mode))
        if self.n < 1:
            raise InvalidInputError("need at least one worker")


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    num_classes: int  # 0 for regression

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def is_classification(self) -> bool:
        return self.num_classes > 0

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.num_classes)


def make_dataset(spec: DatasetSpec, rng: SeededRng) -> Dataset:
    """Generate (or load) the full dataset described by ``spec``."""
    n, d = spec.num_examples, spec.dim
    if spec.kind is DatasetKind.IDX:
        ds = load_idx_dataset(spec.path, spec.labels_path)
        if spec.num_examples and spec.num_examples < len(ds):
            ds = ds.subset(np.sort(rng.permutation(len(ds))[: spec.num_examples]))
        return ds
    if spec.kind is DatasetKind.LINEAR:
        X = rng.standard_normal((n, d))
        w_star = rng.standard_normal(d) / np.sqrt(d)
        y = X @ w_star + spec.noise_scale * rng.standard_normal(n)
        return Dataset(X, y, 0)
    if spec.kind is DatasetKind.LOGISTIC:
        X = rng.standard_normal((n, d))
        w_star = 2.0 * rng.standard_normal(d) / np.sqrt(d)
        temp = max(spec.noise_scale, 1e-12)
        prob = 1.0 / (1.0 + np.exp(-(X @ w_star) / temp))
        y = (rng.random(n) < prob).astype(np.int64)
        return Dataset(X, y, 2)
    c = spec.num_classes
    if c < 2:
        raise InvalidInputError("blobs need at least 2 classes")
    centers = rng.standard_normal((c, d))
    y = rng.permutation(np.arange(n) % c).astype(np.int64)
    X = centers[y] + spec.noise_scale * rng.standard_normal((n, d))
    return Dataset(X, y, c)


def train_test_split(ds: Dataset, rng: SeededRng, test_fraction: float = 0.2) -> tuple[Dataset, Dataset]:
    """Fixed held-out split drawn before partitioning."""
    perm = rng.permutation(len(ds))
    n_test = int(round(test_fraction * len(ds)))
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return ds.subset(train_idx), ds.subset(test_idx)


def partition_dataset(ds: Dataset, partition: PartitionSpec, rng: SeededRng) -> list[np.ndarray]:
    """Split example indices into ``partition.n`` disjoint shards covering ``ds``.

    IID: global shuffle, then round-robin. Label-sorted: stable sort by label,
    then contiguous equal-size chunks.
    """
    n = partition.n
    size = len(ds)
    if size < n:
        raise InvalidInputError(f"dataset of {size} examples cannot feed {n} workers")
    if partition.mode is PartitionMode.IID:
        perm = rng.permutation(size)
        return [np.sort(perm[i::n]) for i in range(n)]
    order = np.argsort(ds.y, kind="stable")
    return [chunk for chunk in np.array_split(order, n)]


def _open(path: str):
    with open(path, "rb") as fh:
        head = fh.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def read_idx(path: str) -> np.ndarray:
    """Read an unsigned-byte IDX file (optionally gzipped) into a uint8 array."""
    with _open(path) as fh:
        header = fh.read(4)
        if len(header) < 4:
            raise InvalidInputError(f"{path}: truncated IDX header")
        zero, dtype, ndim = struct.unpack(">HBB", header)
        if zero != 0 or dtype != 0x08:
            raise InvalidInputError(f"{path}: not an unsigned-byte IDX file")
        dims = struct.unpack(f">{ndim}I", fh.read(4 * ndim))
        payload = fh.read()
    count = int(np.prod(dims)) if dims else 0
    if len(payload) < count:
        raise InvalidInputError(f"{path}: expected {count} bytes of data, found {len(payload)}")
    return np.frombuffer(payload[:count], dtype=np.uint8).reshape(dims)


def _magic(path: str) -> int:
    with _open(path) as fh:
        return struct.unpack(">I", fh.read(4))[0]


def load_idx_dataset(images_path: str, labels_path: str) -> Dataset:
    """Images flattened row-major and scaled to [0, 1]; labels as int64."""
    if _magic(images_path) != IDX_IMAGES_MAGIC:
        raise InvalidInputError(f"{images_path}: bad image magic")
    if _magic(labels_path) != IDX_LABELS_MAGIC:
        raise InvalidInputError(f"{labels_path}: bad label magic")
    images = read_idx(images_path)
    labels = read_idx(labels_path).astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise InvalidInputError("image and label counts differ")
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(X, labels, int(labels.max()) + 1 if labels.size else 0)


def write_idx(path: str, array: np.ndarray) -> None:
    """Write a uint8 array as an IDX file (used to build test fixtures)."""
    array = np.asarray(array, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">HBB", 0, 0x08, array.ndim))
        fh.write(struct.pack(f">{array.ndim}I", *array.shape))
        fh.write(array.tobytes())
