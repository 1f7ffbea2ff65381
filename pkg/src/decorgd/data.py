"""Datasets: CIFAR binary readers, correlated-Gaussian synthesis and seeded batching."""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np

CIFAR_PIXELS = 3 * 32 * 32
CIFAR_SHAPE = (3, 32, 32)
CIFAR_TRAIN_COUNT = 50_000
CIFAR_TEST_COUNT = 10_000
VALIDATION_COUNT = 10_000  # held out of the CIFAR training set for model selection


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    class_count: int
    split: str = "train"

    def __post_init__(self):
        if self.X.shape[0] != self.Y.shape[0]:
            raise DatasetError(f"X has {self.X.shape[0]} samples, Y has {self.Y.shape[0]}")
        if self.Y.ndim != 2 or self.Y.shape[1] != self.class_count:
            raise DatasetError(f"Y must be (samples, {self.class_count}) one-hot")
        if len(self) and not np.allclose(self.Y.sum(axis=1), 1.0):
            raise DatasetError("label rows must sum to 1")
        if not np.all(np.isfinite(self.X)):
            raise DatasetError("features must be finite")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.Y, axis=1)

    @property
    def sample_shape(self) -> tuple:
        return self.X.shape[1:]

    def subset(self, idx, split: str | None = None) -> "Dataset":
        return replace(self, X=self.X[idx], Y=self.Y[idx], split=split or self.split)


def one_hot(labels: np.ndarray, class_count: int) -> np.ndarray:
    Y = np.zeros((len(labels), class_count))
    Y[np.arange(len(labels)), labels] = 1.0
    return Y


# -- CIFAR binary --------------------------------------------------------------

def read_cifar_file(path, label_bytes: int = 1, class_count: int = 10,
                    split: str = "train") -> Dataset:
    """Parse one CIFAR binary file into ``(N, 3, 32, 32)`` features in ``[0, 1]``.

    Each record is ``label_bytes`` label bytes (the last one is used, i.e. the
    fine label for CIFAR-100) followed by the R, G and B planes, row-major.
    """
    record = label_bytes + CIFAR_PIXELS
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % record:
        raise DatasetError(
            f"{path}: size {raw.size} bytes is not a multiple of the {record}-byte record")
    raw = raw.reshape(-1, record)
    labels = raw[:, label_bytes - 1].astype(np.int64)
    if labels.size and labels.max() >= class_count:
        raise DatasetError(f"{path}: corrupt file, label {labels.max()} >= {class_count}")
    X = raw[:, label_bytes:].reshape((-1,) + CIFAR_SHAPE).astype(np.float64) / 255.0
    return Dataset(X=X, Y=one_hot(labels, class_count), class_count=class_count, split=split)


def write_cifar_file(path, ds: Dataset, label_bytes: int = 1) -> None:
    """Inverse of :func:`read_cifar_file`; coarse labels are written as 0."""
    n = len(ds)
    pixels = np.clip(np.rint(ds.X.reshape(n, -1) * 255.0), 0, 255).astype(np.uint8)
    labels = np.zeros((n, label_bytes), dtype=np.uint8)
    labels[:, -1] = ds.labels
    np.concatenate([labels, pixels], axis=1).tofile(path)


def _concat(parts: list, split: str) -> Dataset:
    return Dataset(X=np.concatenate([p.X for p in parts]), Y=np.concatenate([p.Y for p in parts]),
                   class_count=parts[0].class_count, split=split)


def _require(path, names):
    missing = [n for n in names if not os.path.isfile(os.path.join(path, n))]
    if missing:
        raise DatasetError(f"{path}: missing {', '.join(missing)}")


def load_cifar10(path) -> tuple[Dataset, Dataset]:
    """``(train, test)`` from ``data_batch_1..5.bin`` and ``test_batch.bin``."""
    names = [f"data_batch_{i}.bin" for i in range(1, 6)]
    _require(path, names + ["test_batch.bin"])
    train = _concat([read_cifar_file(os.path.join(path, n)) for n in names], "train")
    test = read_cifar_file(os.path.join(path, "test_batch.bin"), split="test")
    return train, test


def load_cifar100(path) -> tuple[Dataset, Dataset]:
    """``(train, test)`` from ``train.bin`` and ``test.bin`` using fine labels."""
    _require(path, ["train.bin", "test.bin"])
    train = read_cifar_file(os.path.join(path, "train.bin"), 2, 100, "train")
    test = read_cifar_file(os.path.join(path, "test.bin"), 2, 100, "test")
    return train, test


# -- synthetic -----------------------------------------------------------------

def rho_covariance(dim: int, rho: float, kind: str = "toeplitz") -> np.ndarray:
    """``rho^|i-j|`` (``toeplitz``) or constant off-diagonal ``rho`` (``equi``)."""
    if kind == "toeplitz":
        idx = np.arange(dim)
        return rho ** np.abs(idx[:, None] - idx[None, :])
    if kind == "equi":
        return (1 - rho) * np.eye(dim) + rho * np.ones((dim, dim))
    raise ValueError(f"unknown covariance kind {kind!r}")


def _covariance_factor(cov: np.ndarray) -> np.ndarray:
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T):
        raise DatasetError("covariance must be a symmetric matrix")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        evals, evecs = np.linalg.eigh(cov)
        if evals.min() < -1e-10 * max(1.0, evals.max()):
            raise DatasetError("covariance is not positive semi-definite") from None
        return evecs * np.sqrt(np.clip(evals, 0, None))


def synthetic_correlated(n_samples: int, dim: int, covariance, teacher_seed: int,
                         class_count: int = 10, sample_seed: int | None = None,
                         split: str = "train") -> Dataset:
    """Gaussian inputs ``x = L z`` with ``L L^T = covariance`` and teacher labels.

    Labels are ``argmax(T z)`` for a random linear teacher ``T`` acting on the
    whitened ``z``, so the task is linearly learnable whatever the correlation.
    ``sample_seed`` defaults to ``teacher_seed + 1``.
    """
    cov = np.asarray(covariance, dtype=np.float64)
    if cov.shape != (dim, dim):
        raise DatasetError(f"covariance must be {dim}x{dim}")
    L = _covariance_factor(cov)
    T = np.random.default_rng([teacher_seed, 0]).standard_normal((class_count, dim))
    seed = teacher_seed + 1 if sample_seed is None else sample_seed
    z = np.random.default_rng([seed, 1]).standard_normal((n_samples, dim))
    labels = np.argmax(z @ T.T, axis=1)
    return Dataset(X=z @ L.T, Y=one_hot(labels, class_count), class_count=class_count,
                   split=split)


# -- batching ------------------------------------------------------------------

@dataclass(frozen=True)
class BatchPlan:
    batch_size: int = 256
    seed: int = 0
    drop_last: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise DatasetError("batch_size must be >= 1")


def epoch_order(n: int, plan: BatchPlan, epoch: int) -> np.ndarray:
    return np.random.default_rng([plan.seed, epoch]).permutation(n)


def to_network_layout(X: np.ndarray, Y: np.ndarray):
    """``(B, n)`` features become ``(n, B)`` columns; images stay ``(B, C, H, W)``."""
    Xb = X.T if X.ndim == 2 else X
    return np.ascontiguousarray(Xb), np.ascontiguousarray(Y.T)


def batches(ds: Dataset, plan: BatchPlan, epoch: int = 0) -> Iterator[tuple]:
    """Shuffled ``(X, Y)`` batches in network layout; the order depends only on ``(seed, epoch)``."""
    order = epoch_order(len(ds), plan, epoch)
    bs = plan.batch_size
    stop = len(order) - len(order) % bs if plan.drop_last else len(order)
    for start in range(0, stop, bs):
        idx = order[start:start + bs]
        yield to_network_layout(ds.X[idx], ds.Y[idx])


def train_val_split(ds: Dataset, val_count: int, seed: int = 0) -> tuple[Dataset, Dataset]:
    if not 0 <= val_count < len(ds):
        raise DatasetError(f"val_count={val_count} must be in [0, {len(ds)})")
    order = np.random.default_rng([seed, 2]).permutation(len(ds))
    val_idx = np.sort(order[:val_count])
    train_idx = np.sort(order[val_count:])
    return ds.subset(train_idx, ds.split), ds.subset(val_idx, "val")


# -- container -----------------------------------------------------------------

DATASET_MAGIC = b"DCDS"


def _write_array(parts: list, arr: np.ndarray):
    parts.append(struct.pack("<I", arr.ndim))
    parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_array(buf: bytes, off: int):
    (ndim,) = struct.unpack_from("<I", buf, off)
    shape = struct.unpack_from(f"<{ndim}I", buf, off + 4)
    off += 4 + 4 * ndim
    count = int(np.prod(shape)) if ndim else 1
    arr = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(shape)
    return arr.astype(np.float64), off + 8 * count


def save_dataset(path, ds: Dataset) -> None:
    """Binary container: magic, version u32, class count u32, split tag, then X and Y."""
    tag = ds.split.encode()
    parts = [DATASET_MAGIC, struct.pack("<III", 1, ds.class_count, len(tag)), tag]
    _write_array(parts, ds.X)
    _write_array(parts, ds.Y)
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != DATASET_MAGIC:
        raise DatasetError(f"{path}: not a dataset container")
    version, classes, tag_len = struct.unpack_from("<III", buf, 4)
    if version != 1:
        raise DatasetError(f"{path}: unsupported version {version}")
    off = 16
    split = buf[off:off + tag_len].decode()
    X, off = _read_array(buf, off + tag_len)
    Y, off = _read_array(buf, off)
    return Dataset(X=X, Y=Y, class_count=classes, split=split)
