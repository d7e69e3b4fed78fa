"""Dataset loading, splitting, sharding and mini-batch iteration.

All randomness goes through :func:`rng_for`, which derives an independent
``numpy`` generator from a base seed plus integer keys.  Trainers and the
centralized oracle call it with the same keys, so both see identical shuffles.
"""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DataError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus integer class labels."""

    X: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y).astype(np.int64).reshape(-1)
        if X.ndim != 2:
            raise DataError(f"features must be a 2-D matrix, got shape {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise DataError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise DataError(f"labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.X.shape[0]

    @property
    def n_features(self):
        return self.X.shape[1]

    @property
    def label_kind(self):
        return "binary" if self.n_classes == 2 else "k-class"

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.X[indices], self.y[indices], self.n_classes)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            for row, label in zip(self.X, self.y):
                writer.writerow([repr(float(v)) for v in row] + [int(label)])


def concat(parts: Sequence[Dataset]) -> Dataset:
    if not parts:
        raise DataError("nothing to concatenate")
    return Dataset(
        np.concatenate([p.X for p in parts]),
        np.concatenate([p.y for p in parts]),
        max(p.n_classes for p in parts),
    )


def load_csv(path, n_features=None, n_classes=None, header=False, label_column=-1) -> Dataset:
    """Read a numeric CSV, label in ``label_column`` (last by default).

    Rows keep file order; ``.gz`` files are decompressed on the fly.  Parse
    failures raise :class:`DataError` with the 1-based line number.
    """
    rows, labels = [], []
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rt", newline="") as fh:
        for lineno, record in enumerate(csv.reader(fh), start=1):
            if header and lineno == 1:
                continue
            if not record or all(not cell.strip() for cell in record):
                continue
            try:
                values = [float(cell) for cell in record]
            except ValueError:
                bad = next(c for c in record if not _is_float(c))
                raise DataError(f"non-numeric cell {bad!r}", line=lineno) from None
            label = values.pop(label_column)
            if label != int(label) or label < 0:
                raise DataError(f"label {label!r} is not a class index", line=lineno)
            if n_features is not None and len(values) != n_features:
                raise DataError(f"expected {n_features} features, found {len(values)}", line=lineno)
            if rows and len(values) != len(rows[0]):
                raise DataError(f"expected {len(rows[0])} features, found {len(values)}", line=lineno)
            rows.append(values)
            labels.append(int(label))
    if not rows:
        raise DataError(f"{path}: no data rows")
    y = np.array(labels, dtype=np.int64)
    if n_classes is None:
        n_classes = max(2, int(y.max()) + 1)
    elif y.max() >= n_classes:
        raise DataError(f"label {int(y.max())} outside declared {n_classes} classes")
    return Dataset(np.array(rows, dtype=np.float64), y, n_classes)


def _is_float(cell):
    try:
        float(cell)
    except ValueError:
        return False
    return True


def _open_maybe_gz(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx_images(path) -> np.ndarray:
    """``(N, rows, cols)`` uint8 array from an IDX image file (optionally gzipped)."""
    with _open_maybe_gz(path) as fh:
        head = fh.read(16)
        if len(head) < 16:
            raise DataError(f"{path}: truncated IDX header")
        magic, n, rows, cols = struct.unpack(">IIII", head)
        if magic != IDX_IMAGES_MAGIC:
            raise DataError(f"{path}: bad IDX image magic {magic:#010x}")
        body = fh.read()
    if len(body) != n * rows * cols:
        raise DataError(f"{path}: expected {n * rows * cols} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    with _open_maybe_gz(path) as fh:
        head = fh.read(8)
        if len(head) < 8:
            raise DataError(f"{path}: truncated IDX header")
        magic, n = struct.unpack(">II", head)
        if magic != IDX_LABELS_MAGIC:
            raise DataError(f"{path}: bad IDX label magic {magic:#010x}")
        body = fh.read()
    if len(body) != n:
        raise DataError(f"{path}: expected {n} labels, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).astype(np.int64)


def write_idx(images_path, labels_path, images, labels):
    images = np.asarray(images, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        fh.write(np.asarray(labels, dtype=np.uint8).tobytes())


def load_idx(images_path, labels_path, limit=None, seed=None) -> Dataset:
    """MNIST-style IDX pair as a flat-pixel dataset scaled to [0, 1].

    With ``limit``, keeps the first ``limit`` rows after an optional seeded
    shuffle.
    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    order = np.arange(images.shape[0])
    if seed is not None:
        order = np.random.default_rng(seed).permutation(order)
    if limit is not None:
        order = order[:limit]
    X = images[order].reshape(len(order), -1) / 255.0
    return Dataset(X, labels[order], 10)


def rng_for(seed, *keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def stratified_split(ds: Dataset, test_fraction: float, seed: int):
    """Per-class random split; each class contributes ``round(size * fraction)`` test rows.

    Both halves keep the original row order.
    """
    if not 0.0 < test_fraction < 1.0:
        raise DataError(f"test fraction must be in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    test_idx = []
    for cls in np.unique(ds.y):
        members = np.flatnonzero(ds.y == cls)
        n_test = int(np.floor(len(members) * test_fraction + 0.5))
        test_idx.append(rng.permutation(members)[:n_test])
    test_idx = np.sort(np.concatenate(test_idx))
    if len(test_idx) == 0 or len(test_idx) == len(ds):
        raise DataError("split leaves the train or test side empty")
    train_mask = np.ones(len(ds), dtype=bool)
    train_mask[test_idx] = False
    return ds.subset(np.flatnonzero(train_mask)), ds.subset(test_idx)


@dataclass(frozen=True)
class ShardPlan:
    n_trainers: int
    seed: int
    assignment: tuple  # one index array per trainer

    def shards(self, ds: Dataset):
        return [ds.subset(idx) for idx in self.assignment]


def partition(train: Dataset, n_trainers: int, seed: int) -> ShardPlan:
    """Shuffle row indices and deal them into near-equal contiguous shards."""
    if n_trainers < 1:
        raise DataError("need at least one trainer")
    if n_trainers > len(train):
        raise DataError(f"{n_trainers} trainers but only {len(train)} rows")
    perm = np.random.default_rng(seed).permutation(len(train))
    parts = tuple(np.sort(p) for p in np.array_split(perm, n_trainers))
    return ShardPlan(n_trainers, seed, parts)


class MiniBatch(NamedTuple):
    X: np.ndarray
    y: np.ndarray


def batches(shard: Dataset, batch_size: int, epoch_seed=None, shuffle=True):
    """Ordered mini-batches covering the shard once; the last may be short.

    ``epoch_seed`` is an int or a :class:`numpy.random.Generator`.
    """
    if batch_size < 1:
        raise DataError("batch size must be >= 1")
    n = len(shard)
    if n == 0:
        raise DataError("cannot batch an empty shard")
    if shuffle:
        rng = epoch_seed if isinstance(epoch_seed, np.random.Generator) else np.random.default_rng(epoch_seed)
        order = rng.permutation(n)
    else:
        order = np.arange(n)
    return [
        MiniBatch(shard.X[order[i : i + batch_size]], shard.y[order[i : i + batch_size]])
        for i in range(0, n, batch_size)
    ]


# Stream tags keep shuffle, dropout and peer-choice randomness independent.
_SHUFFLE, _DROPOUT, _PEER = 1, 2, 3


def shuffle_rng(seed, trainer_id, round_index, local_epoch) -> np.random.Generator:
    """Generator for the batch order of one local epoch of one relay round."""
    return rng_for(seed, _SHUFFLE, trainer_id, round_index, local_epoch)


def dropout_seed(seed, trainer_id, round_index, local_epoch, step) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), _DROPOUT, trainer_id, round_index, local_epoch, step])


def peer_rng(seed, trainer_id) -> np.random.Generator:
    return rng_for(seed, _PEER, trainer_id)


def standardize(train: Dataset, *others: Dataset):
    """Z-score features with statistics from ``train``; returns the rescaled datasets in order."""
    from sklearn.preprocessing import StandardScaler

    scaler = StandardScaler().fit(train.X)
    return tuple(Dataset(scaler.transform(d.X), d.y, d.n_classes) for d in (train, *others))
