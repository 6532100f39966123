"""
Dataset ingestion, class-restricted non-IID partitioning, 8:1:1 splits and
seeded mini-batch iteration.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import FrozenSet, Iterator, List, Sequence, Tuple, Union

import numpy as np

from .errors import ArgumentError, IngestionError, PartitionError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CIFAR_IMAGE_SHAPE = (3, 32, 32)
CIFAR_PIXELS = 3 * 32 * 32
CIFAR10_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6)) + ("test_batch.bin",)
CIFAR100_FILES = ("train.bin", "test.bin")
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """
    Immutable sample pool. ``images`` may be stored compactly (uint8 for real
    datasets); ``scale`` maps stored values into [0, 1].
    """

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    scale: float = 1.0

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ArgumentError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ArgumentError(f"labels must lie in [0, {self.num_classes})")
        self.images.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> Tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def batch(self, indices) -> Tuple[np.ndarray, np.ndarray]:
        """float64 images in [0, 1] and int labels for ``indices``"""
        indices = np.asarray(indices, dtype=np.int64)
        return self.images[indices].astype(np.float64) * self.scale, self.labels[indices]


@dataclass(frozen=True)
class ClientPartition:
    client: int
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seen_classes: FrozenSet[int]

    @property
    def indices(self) -> np.ndarray:
        return np.concatenate([self.train, self.val, self.test])

    @property
    def num_samples(self) -> int:
        return len(self.train) + len(self.val) + len(self.test)


@dataclass(frozen=True)
class BatchPlan:
    """Mini-batch schedule over a client's train split; each epoch is a fresh permutation"""

    indices: np.ndarray
    batch_size: int
    stream: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.batch_size < 1:
            raise ArgumentError(f"batch size must be positive, got {self.batch_size}")

    def num_batches(self) -> int:
        return -(-len(self.indices) // self.batch_size)


def read_cifar_records(path: PathLike, label_bytes: int = 1, label_offset: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Decode one CIFAR binary batch file into uint8 images and labels"""
    path = Path(path)
    if not path.is_file():
        raise IngestionError(path, "file not found")
    raw = np.frombuffer(path.read_bytes(), dtype=np.uint8)
    record = label_bytes + CIFAR_PIXELS
    if raw.size == 0 or raw.size % record:
        raise IngestionError(path, f"size {raw.size} is not a positive multiple of the {record}-byte record")
    rows = raw.reshape(-1, record)
    labels = rows[:, label_offset].astype(np.int64)
    images = rows[:, label_bytes:].reshape((-1,) + CIFAR_IMAGE_SHAPE)
    return images, labels


def _cifar_directory(directory: PathLike, names: Sequence[str], subdir: str) -> Path:
    directory = Path(directory)
    if not (directory / names[0]).exists() and (directory / subdir / names[0]).exists():
        return directory / subdir
    return directory


def load_cifar10(directory: PathLike) -> Dataset:
    directory = _cifar_directory(directory, CIFAR10_FILES, "cifar-10-batches-bin")
    parts = [read_cifar_records(directory / name) for name in CIFAR10_FILES]
    images = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    logger.info(f"Loaded CIFAR-10 from {directory}: {len(labels)} samples")
    return Dataset(images, labels, 10, scale=1.0 / 255)


def load_cifar100(directory: PathLike, label: str = "fine") -> Dataset:
    if label not in ("fine", "coarse"):
        raise ArgumentError(f"label must be 'fine' or 'coarse', got {label!r}")
    directory = _cifar_directory(directory, CIFAR100_FILES, "cifar-100-binary")
    offset = 1 if label == "fine" else 0
    parts = [read_cifar_records(directory / name, label_bytes=2, label_offset=offset) for name in CIFAR100_FILES]
    images = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    logger.info(f"Loaded CIFAR-100 ({label}) from {directory}: {len(labels)} samples")
    return Dataset(images, labels, 100 if label == "fine" else 20, scale=1.0 / 255)


def _read_idx(path: Path, magic: int) -> np.ndarray:
    if not path.is_file():
        raise IngestionError(path, "file not found")
    raw = path.read_bytes()
    if len(raw) < 8:
        raise IngestionError(path, "truncated IDX header")
    found = int.from_bytes(raw[:4], "big")
    if found != magic:
        raise IngestionError(path, f"bad IDX magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = raw[3]
    header = 4 + 4 * ndim
    dims = tuple(int.from_bytes(raw[4 + 4 * i:8 + 4 * i], "big") for i in range(ndim))
    expected = header + int(np.prod(dims))
    if len(raw) != expected:
        raise IngestionError(path, f"size {len(raw)} bytes, header promises {expected}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(image_file: PathLike, label_file: PathLike) -> Dataset:
    images = _read_idx(Path(image_file), IDX_IMAGES_MAGIC)
    labels = _read_idx(Path(label_file), IDX_LABELS_MAGIC).astype(np.int64)
    if len(images) != len(labels):
        raise IngestionError(label_file, f"{len(labels)} labels for {len(images)} images")
    num_classes = int(labels.max()) + 1 if len(labels) else 0
    return Dataset(images[:, np.newaxis, :, :], labels, max(num_classes, 10), scale=1.0 / 255)


def generate_synthetic(num_classes: int, per_class: int, shape: Tuple[int, int, int],
                       noise_sigma: float, seed: int) -> Dataset:
    """
    Each class is a random binary template plus Gaussian pixel noise, clipped
    to [0, 1]. Samples are ordered class by class.
    """
    if num_classes < 1 or per_class < 1:
        raise ArgumentError("num_classes and per_class must be positive")
    if noise_sigma < 0:
        raise ArgumentError(f"noise sigma must be non-negative, got {noise_sigma}")
    rng = np.random.default_rng(seed)
    shape = tuple(shape)
    templates = rng.integers(0, 2, size=(num_classes,) + shape).astype(np.float64)
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    images = templates[labels]
    if noise_sigma > 0:
        images = np.clip(images + rng.normal(0.0, noise_sigma, size=images.shape), 0.0, 1.0)
    return Dataset(np.ascontiguousarray(images), labels, num_classes)


def split_811(indices, labels, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Seeded, class-stratified 8:1:1 cut. Samples of each class are shuffled and
    interleaved by their relative rank, so every contiguous cut keeps each
    class within one sample of its proportional share.
    """
    indices = np.asarray(indices, dtype=np.int64)
    n = len(indices)
    if n < 10:
        raise PartitionError(f"an 8:1:1 split needs at least 10 samples, got {n}")
    labels = np.asarray(labels)[indices]
    keys = np.empty(n)
    order = rng.permutation(n)
    for cls in np.unique(labels):
        members = order[labels[order] == cls]
        keys[members] = (np.arange(len(members)) + 0.5) / len(members)
    interleaved = indices[np.lexsort((labels, keys))]
    n_val = int(round(n * 0.1))
    n_test = int(round(n * 0.1))
    n_train = n - n_val - n_test
    return (
        interleaved[:n_train],
        interleaved[n_train:n_train + n_val],
        interleaved[n_train + n_val:],
    )


def partition_noniid(dataset: Dataset, num_clients: int, classes_per_client: int,
                     rng: np.random.Generator) -> List[ClientPartition]:
    """
    Give every client exactly ``classes_per_client`` classes, walking a seeded
    class permutation round-robin, then split each class's samples evenly
    among the clients holding it.
    """
    num_classes = dataset.num_classes
    if num_clients < 1:
        raise ArgumentError(f"need at least one client, got {num_clients}")
    if not 1 <= classes_per_client <= num_classes:
        raise PartitionError(f"classes per client must lie in [1, {num_classes}], got {classes_per_client}")

    permutation = rng.permutation(num_classes)
    client_classes = [
        [int(permutation[(k * classes_per_client + i) % num_classes]) for i in range(classes_per_client)]
        for k in range(num_clients)
    ]
    holders = {c: [k for k in range(num_clients) if c in client_classes[k]] for c in range(num_classes)}

    shares: List[List[np.ndarray]] = [[] for _ in range(num_clients)]
    for cls in range(num_classes):
        if not holders[cls]:
            continue
        members = np.flatnonzero(dataset.labels == cls)
        if len(members) < len(holders[cls]):
            raise PartitionError(
                f"class {cls} has {len(members)} samples for {len(holders[cls])} clients"
            )
        members = members[rng.permutation(len(members))]
        for client, part in zip(holders[cls], np.array_split(members, len(holders[cls]))):
            shares[client].append(part)

    partitions = []
    for k in range(num_clients):
        indices = np.sort(np.concatenate(shares[k]))
        train, val, test = split_811(indices, dataset.labels, rng)
        partitions.append(ClientPartition(k, train, val, test, frozenset(client_classes[k])))
    logger.debug(f"Partitioned {len(dataset)} samples over {num_clients} clients, {classes_per_client} classes each")
    return partitions


def iter_batches(plan: BatchPlan, dataset: Dataset, rng: np.random.Generator) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """One epoch of ``(images, labels)`` batches; the last batch may be short"""
    order = plan.indices[rng.permutation(len(plan.indices))]
    for start in range(0, len(order), plan.batch_size):
        yield dataset.batch(order[start:start + plan.batch_size])


def audit_partitions(dataset: Dataset, partitions: Sequence[ClientPartition], classes_per_client: int) -> List[str]:
    """Problems found by an exhaustive scan of the partition; empty when sound"""
    problems = []
    seen = set()
    for part in partitions:
        for split in (part.train, part.val, part.test):
            overlap = seen.intersection(split.tolist())
            if overlap:
                problems.append(f"client {part.client}: {len(overlap)} samples already assigned")
            seen.update(split.tolist())
        classes = set(dataset.labels[part.indices].tolist())
        if len(part.seen_classes) != classes_per_client or not classes <= part.seen_classes:
            problems.append(f"client {part.client}: classes {sorted(classes)} vs assigned {sorted(part.seen_classes)}")
        n = part.num_samples
        targets = (n - 2 * int(round(n * 0.1)), int(round(n * 0.1)), int(round(n * 0.1)))
        sizes = (len(part.train), len(part.val), len(part.test))
        if any(abs(s - t) > 1 for s, t in zip(sizes, targets)):
            problems.append(f"client {part.client}: split sizes {sizes} are not 8:1:1")
    return problems
