"""Dataset ingestion: cached public datasets with a deterministic synthetic fallback.

All splits are held in memory as float32 image tensors (N, C, H, W) with int64
labels. When the requested public dataset is not present in the cache directory
and cannot be downloaded, a deterministic synthetic 10-class set is generated
instead and flagged so reports can surface the substitution.
"""

from __future__ import annotations

import gzip
import os
import pickle
import tarfile
import urllib.request
from dataclasses import dataclass

import numpy as np

from .errors import NNSplitterError

CACHE_ENV_VAR = "NNSPLITTER_DATA_DIR"

_FASHION_URLS = {
    "train-images-idx3-ubyte.gz": "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz": "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz": "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz": "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/t10k-labels-idx1-ubyte.gz",
}
_CIFAR_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-python.tar.gz"


@dataclass
class DatasetSplit:
    """Train/eval arrays plus the class count; eval is disjoint from train."""

    train_inputs: np.ndarray
    train_labels: np.ndarray
    eval_inputs: np.ndarray
    eval_labels: np.ndarray
    num_classes: int
    name: str = "synthetic"
    synthetic: bool = True

    def __post_init__(self):
        for labels in (self.train_labels, self.eval_labels):
            if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
                raise NNSplitterError("labels outside [0, num_classes)")

    @property
    def image_size(self) -> int:
        return self.train_inputs.shape[-1]

    @property
    def in_channels(self) -> int:
        return self.train_inputs.shape[1]

    def subset(self, fraction: float, seed: int) -> "DatasetSplit":
        """Class-stratified subset of the training split (eval untouched)."""
        rng = np.random.default_rng(seed)
        keep: list[np.ndarray] = []
        for cls in range(self.num_classes):
            idx = np.flatnonzero(self.train_labels == cls)
            take = int(round(len(idx) * fraction))
            keep.append(rng.permutation(idx)[:take])
        sel = np.sort(np.concatenate(keep)) if keep else np.array([], dtype=np.int64)
        return DatasetSplit(
            self.train_inputs[sel], self.train_labels[sel],
            self.eval_inputs, self.eval_labels,
            self.num_classes, name=self.name, synthetic=self.synthetic,
        )


def default_cache_dir() -> str:
    return os.environ.get(CACHE_ENV_VAR, os.path.expanduser("~/.cache/nnsplitter"))


def _smooth(field2d: np.ndarray, passes: int = 2) -> np.ndarray:
    # cheap separable box blur, keeps the generator dependency-free
    out = field2d
    for _ in range(passes):
        out = (np.roll(out, 1, 0) + out + np.roll(out, -1, 0)) / 3.0
        out = (np.roll(out, 1, 1) + out + np.roll(out, -1, 1)) / 3.0
    return out


def synthetic_split(
    seed: int,
    num_train: int = 8000,
    num_eval: int = 1000,
    num_classes: int = 10,
    image_size: int = 28,
    noise: float = 1.0,
    max_shift: int = 6,
) -> DatasetSplit:
    """Deterministic 10-class image set: shifted low-frequency class templates
    under heavy additive noise. Hard enough that small training fractions do
    not suffice, while full training reaches high accuracy."""
    rng = np.random.default_rng(seed)
    templates = []
    for _ in range(num_classes):
        t = _smooth(rng.standard_normal((image_size, image_size)), passes=3)
        t = t / (np.abs(t).max() + 1e-12)
        templates.append(t.astype(np.float32))

    def make(n: int, label_rng: np.random.Generator):
        labels = label_rng.integers(0, num_classes, size=n)
        imgs = np.empty((n, 1, image_size, image_size), dtype=np.float32)
        for i, y in enumerate(labels):
            dx, dy = label_rng.integers(-max_shift, max_shift + 1, size=2)
            base = np.roll(np.roll(templates[y], dx, axis=0), dy, axis=1)
            amp = label_rng.uniform(0.7, 1.3)
            imgs[i, 0] = amp * base + noise * label_rng.standard_normal(
                (image_size, image_size)
            )
        return imgs.astype(np.float32), labels.astype(np.int64)

    train_x, train_y = make(num_train, np.random.default_rng(seed + 1))
    eval_x, eval_y = make(num_eval, np.random.default_rng(seed + 2))
    return DatasetSplit(train_x, train_y, eval_x, eval_y, num_classes,
                        name="synthetic", synthetic=True)


def _read_idx_images(path: str) -> np.ndarray:
    with gzip.open(path, "rb") as fh:
        data = fh.read()
    n = int.from_bytes(data[4:8], "big")
    rows = int.from_bytes(data[8:12], "big")
    cols = int.from_bytes(data[12:16], "big")
    arr = np.frombuffer(data, dtype=np.uint8, offset=16).reshape(n, 1, rows, cols)
    return (arr.astype(np.float32) / 255.0 - 0.2860) / 0.3530


def _read_idx_labels(path: str) -> np.ndarray:
    with gzip.open(path, "rb") as fh:
        data = fh.read()
    return np.frombuffer(data, dtype=np.uint8, offset=8).astype(np.int64)


def _try_download(url: str, dest: str) -> bool:
    try:
        urllib.request.urlretrieve(url, dest)  # noqa: S310
        return True
    except Exception:
        if os.path.exists(dest):
            os.remove(dest)
        return False


def _load_fashion_mnist(cache_dir: str, num_train: int | None, num_eval: int | None):
    root = os.path.join(cache_dir, "fashion-mnist")
    os.makedirs(root, exist_ok=True)
    paths = {}
    for name, url in _FASHION_URLS.items():
        dest = os.path.join(root, name)
        if not os.path.exists(dest) and not _try_download(url, dest):
            return None
        paths[name] = dest
    train_x = _read_idx_images(paths["train-images-idx3-ubyte.gz"])
    train_y = _read_idx_labels(paths["train-labels-idx1-ubyte.gz"])
    eval_x = _read_idx_images(paths["t10k-images-idx3-ubyte.gz"])
    eval_y = _read_idx_labels(paths["t10k-labels-idx1-ubyte.gz"])
    if num_train:
        train_x, train_y = train_x[:num_train], train_y[:num_train]
    if num_eval:
        eval_x, eval_y = eval_x[:num_eval], eval_y[:num_eval]
    return DatasetSplit(train_x, train_y, eval_x, eval_y, 10,
                        name="fashion_mnist", synthetic=False)


def _load_cifar10(cache_dir: str, num_train: int | None, num_eval: int | None):
    root = os.path.join(cache_dir, "cifar-10")
    os.makedirs(root, exist_ok=True)
    tar_path = os.path.join(root, "cifar-10-python.tar.gz")
    extracted = os.path.join(root, "cifar-10-batches-py")
    if not os.path.isdir(extracted):
        if not os.path.exists(tar_path) and not _try_download(_CIFAR_URL, tar_path):
            return None
        with tarfile.open(tar_path, "r:gz") as tf:
            tf.extractall(root)

    def read_batch(name):
        with open(os.path.join(extracted, name), "rb") as fh:
            d = pickle.load(fh, encoding="bytes")
        x = d[b"data"].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
        return (x - 0.4734) / 0.2516, np.asarray(d[b"labels"], dtype=np.int64)

    xs, ys = zip(*[read_batch(f"data_batch_{i}") for i in range(1, 6)])
    train_x, train_y = np.concatenate(xs), np.concatenate(ys)
    eval_x, eval_y = read_batch("test_batch")
    if num_train:
        train_x, train_y = train_x[:num_train], train_y[:num_train]
    if num_eval:
        eval_x, eval_y = eval_x[:num_eval], eval_y[:num_eval]
    return DatasetSplit(train_x, train_y, eval_x, eval_y, 10,
                        name="cifar10", synthetic=False)


def load_dataset(
    name: str,
    cache_dir: str | None = None,
    seed: int = 0,
    num_train: int | None = None,
    num_eval: int | None = None,
) -> DatasetSplit:
    """Load a dataset by name, falling back to the synthetic set when the
    public data is unavailable offline (the returned split is flagged)."""
    cache_dir = cache_dir or default_cache_dir()
    if name == "synthetic":
        return synthetic_split(seed, num_train=num_train or 8000,
                               num_eval=num_eval or 1000)
    if name == "fashion_mnist":
        split = _load_fashion_mnist(cache_dir, num_train, num_eval)
    elif name == "cifar10":
        split = _load_cifar10(cache_dir, num_train, num_eval)
    else:
        raise NNSplitterError(f"unknown dataset '{name}'")
    if split is None:
        split = synthetic_split(seed, num_train=num_train or 8000,
                                num_eval=num_eval or 1000)
        split.name = f"{name}->synthetic"
    return split
