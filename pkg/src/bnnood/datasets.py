"""Synthetic datasets, IDX ingestion and SplitMNIST task construction.

All generators are pure functions of ``(seed, parameters)``; see
:mod:`bnnood.rng` for the stream definition.
"""

from __future__ import annotations

import csv
import gzip
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .rng import make_rng

# stream tags keep generators independent when called with the same seed
_GMM, _RINGS, _REG1D, _PERIODIC, _CL = 1, 2, 3, 4, 5

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DatasetError(ValueError):
    """Invalid generator arguments or dataset contents."""


class IdxError(DatasetError):
    """Base class for malformed IDX files."""


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


@dataclass
class RegressionDataset:
    X: np.ndarray
    y: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        if self.X.ndim != 2 or self.X.shape[1] < 1:
            raise DatasetError(f"X must be an n x d matrix, got shape {self.X.shape}")
        if self.y.shape != (self.X.shape[0],):
            raise DatasetError(f"y has shape {self.y.shape}, expected ({self.X.shape[0]},)")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise DatasetError("dataset contains non-finite values")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return self.n

    def subset(self, mask) -> "RegressionDataset":
        return RegressionDataset(self.X[mask], self.y[mask], dict(self.meta))


@dataclass
class ImageSet:
    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 2 or self.images.shape[0] != self.labels.shape[0]:
            raise DatasetError("images must be n x p with one label per row")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise DatasetError("pixel intensities must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() > 9):
            raise DatasetError("labels must lie in 0..9")

    def __len__(self):
        return self.labels.shape[0]


def _require_even(n: int):
    if n < 2 or n % 2:
        raise DatasetError(f"n must be an even count >= 2, got {n}")


def gen_gmm(seed: int, n: int = 20) -> RegressionDataset:
    """Two isotropic Gaussians at (-2,-2) and (2,2), covariance 0.5*I.

    The first ``n/2`` rows come from the first component (target -1), the
    rest from the second (target +1).
    """
    _require_even(n)
    rng = make_rng(seed, _GMM)
    half = n // 2
    means = np.array([[-2.0, -2.0], [2.0, 2.0]])
    X = np.repeat(means, half, axis=0) + np.sqrt(0.5) * rng.standard_normal((n, 2))
    y = np.repeat([-1.0, 1.0], half)
    return RegressionDataset(X, y, {"name": "gmm", "seed": seed, "means": means.tolist(),
                                    "cov_scale": 0.5})


def gen_two_rings(seed: int, n: int = 50, inner=(3.0, 4.0), outer=(8.0, 9.0)) -> RegressionDataset:
    """Area-uniform samples from two centred annuli; inner ring -1, outer ring +1."""
    _require_even(n)
    rng = make_rng(seed, _RINGS)
    half = n // 2
    parts = []
    for r_lo, r_hi in (inner, outer):
        r = np.sqrt(rng.uniform(r_lo ** 2, r_hi ** 2, half))
        phi = rng.uniform(0.0, 2.0 * np.pi, half)
        parts.append(np.column_stack([r * np.cos(phi), r * np.sin(phi)]))
    X = np.vstack(parts)
    y = np.repeat([-1.0, 1.0], half)
    return RegressionDataset(X, y, {"name": "rings", "seed": seed, "inner": list(inner),
                                    "outer": list(outer)})


def regression_1d_target(x):
    x = np.asarray(x, dtype=np.float64)
    return 2.0 * np.sin(x) + np.sin(np.sqrt(2.0) * x) + np.sin(np.sqrt(3.0) * x)


REG1D_INTERVALS = ((1.0, 1.3), (3.5, 3.8), (5.2, 5.5))


def gen_1d_regression(seed: int, n: int = 20, noise_std: float = 0.2) -> RegressionDataset:
    """Three-interval 1D regression task with f(x)=2sin x + sin(sqrt2 x) + sin(sqrt3 x)."""
    if n < 3:
        raise DatasetError("n must be at least 3")
    rng = make_rng(seed, _REG1D)
    iv = np.asarray(REG1D_INTERVALS)
    which = rng.integers(0, len(iv), n)
    x = rng.uniform(iv[which, 0], iv[which, 1])
    y = regression_1d_target(x) + noise_std * rng.standard_normal(n)
    return RegressionDataset(x, y, {"name": "reg1d", "seed": seed, "noise_std": noise_std,
                                    "intervals": [list(t) for t in REG1D_INTERVALS]})


# noise std 0.3; at std 3 every bounded risk saturates near 1
PERIODIC_NOISE_STD = 0.3
PERIODIC_RANGE = (0.0, 12.5)


def gen_periodic_1d(seed: int, n: int = 35, noise_std: float = PERIODIC_NOISE_STD,
                    stream: int = 0) -> RegressionDataset:
    """sin(x) plus Gaussian noise, x uniform on [0, 12.5].

    ``stream`` selects an independent draw for the same seed, used for
    withheld test sets.
    """
    if n < 1:
        raise DatasetError("n must be positive")
    rng = make_rng(seed, _PERIODIC, stream)
    x = rng.uniform(*PERIODIC_RANGE, n)
    y = np.sin(x) + noise_std * rng.standard_normal(n)
    return RegressionDataset(x, y, {"name": "periodic", "seed": seed, "noise_std": noise_std,
                                    "stream": stream})


CL_DOMAIN = (0.0, 6.0)
CL_SPLIT = 3.0


def gen_cl_tasks(seed: int, n: int = 40, noise_std: float = 0.2):
    """Two continual-learning tasks: the 1D regression function on [0, 6], split at x=3.

    Returns ``(task1, task2)``; task 1 holds every point left of the split.
    """
    if n < 2:
        raise DatasetError("n must be at least 2")
    rng = make_rng(seed, _CL)
    x = np.sort(rng.uniform(*CL_DOMAIN, n))
    y = regression_1d_target(x) + noise_std * rng.standard_normal(n)
    left = x < CL_SPLIT
    meta = {"name": "cl", "seed": seed, "split": CL_SPLIT, "noise_std": noise_std}
    return (RegressionDataset(x[left], y[left], dict(meta, task=1)),
            RegressionDataset(x[~left], y[~left], dict(meta, task=2)))


DATASETS = {
    "gmm": gen_gmm,
    "rings": gen_two_rings,
    "reg1d": gen_1d_regression,
    "periodic": gen_periodic_1d,
}


# --------------------------------------------------------------------------
# IDX files

def _open(path):
    path = os.fspath(path)
    with (gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")) as fh:
        return fh.read()


def read_idx(path, expected_magic: int | None = None) -> np.ndarray:
    """Parse an unsigned-byte IDX file into an array of its declared shape."""
    raw = _open(path)
    if len(raw) < 4:
        raise IdxTruncatedError(f"{path}: file shorter than the IDX magic")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic not in (IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC) or (
            expected_magic is not None and magic != expected_magic):
        raise IdxMagicError(f"{path}: bad IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{path}: truncated IDX header")
    shape = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(shape))
    if len(raw) - header < count:
        item = max(count // max(shape[0], 1), 1)
        raise IdxTruncatedError(
            f"{path}: header declares {shape[0]} items but payload holds "
            f"{(len(raw) - header) // item}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(shape)


def write_idx(path, data: np.ndarray):
    data = np.asarray(data)
    if data.dtype != np.uint8:
        raise DatasetError("IDX writer only supports unsigned bytes")
    magic = 0x00000800 | data.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{data.ndim}I", *data.shape))
        fh.write(np.ascontiguousarray(data).tobytes())


def load_idx(images_path, labels_path) -> ImageSet:
    """Load an IDX3 image file and its IDX1 label file; pixels are scaled to [0, 1]."""
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            f"{images_path} holds {images.shape[0]} images but {labels_path} "
            f"holds {labels.shape[0]} labels")
    flat = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return ImageSet(flat, labels.astype(np.int64))


def save_idx(image_set: ImageSet, images_path, labels_path, side: int = 28):
    """Write an ImageSet back to IDX3/IDX1 (pixels rounded to bytes)."""
    n = len(image_set)
    pix = np.rint(image_set.images * 255.0).astype(np.uint8)
    if pix.shape[1] == side * side:
        pix = pix.reshape(n, side, side)
    write_idx(images_path, pix)
    write_idx(labels_path, image_set.labels.astype(np.uint8))


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def load_idx_dir(directory, split: str) -> ImageSet:
    """Load the standard MNIST-layout file pair (optionally gzipped) from a directory."""
    paths = []
    for name in MNIST_FILES[split]:
        p = os.path.join(directory, name)
        if not os.path.exists(p) and os.path.exists(p + ".gz"):
            p += ".gz"
        if not os.path.exists(p):
            raise FileNotFoundError(p)
        paths.append(p)
    return load_idx(*paths)


def make_splitmnist_task(images: ImageSet, task: int, n_train: int | None = 1000) -> RegressionDataset:
    """Binary digit-pair task (2t, 2t+1) as a +-1 regression problem.

    The first ``n_train`` matching rows are kept in file order; ``None``
    keeps every match (used for the full-size test sets).
    """
    if task not in range(5):
        raise DatasetError(f"task must be in 0..4, got {task}")
    lo, hi = 2 * task, 2 * task + 1
    idx = np.flatnonzero((images.labels == lo) | (images.labels == hi))
    if n_train is not None:
        if n_train > idx.size:
            raise DatasetError(f"task {task} has only {idx.size} samples, {n_train} requested")
        idx = idx[:n_train]
    y = np.where(images.labels[idx] == lo, -1.0, 1.0)
    return RegressionDataset(images.images[idx], y,
                             {"name": f"splitmnist-{task}", "digits": [lo, hi]})


def splitmnist_rest(images: ImageSet, task: int) -> np.ndarray:
    """Images of every digit outside task ``task`` (the SplitMNIST OOD set)."""
    lo, hi = 2 * task, 2 * task + 1
    keep = (images.labels != lo) & (images.labels != hi)
    return images.images[keep]


# --------------------------------------------------------------------------
# CSV dumps

def save_csv(ds: RegressionDataset, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x_{j}" for j in range(ds.d)] + ["y"])
        for xi, yi in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])


def load_csv(path, name: str | None = None) -> RegressionDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or rows[0][-1] != "y":
        raise DatasetError(f"{path}: last CSV column must be 'y'")
    header, body = rows[0], rows[1:]
    for i, row in enumerate(body, 2):
        if len(row) != len(header):
            raise DatasetError(f"{path}:{i}: expected {len(header)} fields, got {len(row)}")
    try:
        arr = np.array(body, dtype=np.float64).reshape(len(body), len(header))
    except ValueError as e:
        raise DatasetError(f"{path}: {e}") from None
    return RegressionDataset(arr[:, :-1], arr[:, -1], {"name": name or os.path.basename(path)})
