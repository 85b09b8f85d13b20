"""Synthetic task generators, IDX loading and mini-batch iteration."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import SeededRng, derive_seed

# Every constant of the synthetic generators; echoed into run results.
SYNTHETIC_CONFIG = {
    "linear": {"n": 200, "box": 1.0, "margin": 0.05},
    "xor": {"n": 400, "box": 1.0, "margin": 0.05},
    "circles": {"n": 800, "inner_radius": 0.5, "outer_min": 0.6, "outer_max": 1.0},
    "checkerboard": {"n": 800, "box": 2.0, "margin": 0.05},
    "polynomial": {"n": 400, "x_range": 3.0, "coeffs": [1.0, 0.0, -2.0, 1.0], "noise_std": 0.3},
}

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
PIXEL_MEAN = 0.5
PIXEL_STD = 0.5
DATA_DIR_ENV = "PRP_DATA_DIR"

FULL_BATCH = "full"


@dataclass
class Dataset:
    """One split of a task.

    ``targets`` is an (n, k) float matrix for binary, regression and
    reconstruction tasks and an (n,) integer vector of class indices for
    multiclass tasks.
    """

    name: str
    task: str  # binary | multiclass | regression | reconstruction
    inputs: np.ndarray
    targets: np.ndarray
    n_classes: int | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError(
                f"{self.name}: {self.inputs.shape[0]} inputs but {self.targets.shape[0]} targets"
            )
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError(f"{self.name}: inputs contain non-finite values")
        if self.task == "multiclass":
            if self.targets.size and (self.targets.min() < 0 or self.targets.max() >= self.n_classes):
                raise ValueError(f"{self.name}: class index outside [0, {self.n_classes})")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def d_in(self) -> int:
        return self.inputs.shape[1]

    def take(self, idx) -> "Dataset":
        extras = {
            k: v[idx] if isinstance(v, np.ndarray) and v.ndim and len(v) == len(self) else v
            for k, v in self.extras.items()
        }
        return Dataset(self.name, self.task, self.inputs[idx], self.targets[idx], self.n_classes, extras)


def _rejection_sample(rng: SeededRng, n: int, draw, accept) -> np.ndarray:
    """Draw candidate blocks until ``n`` accepted rows exist; keeps draw order."""
    out = []
    have = 0
    while have < n:
        cand = draw(max(2 * (n - have), 16))
        cand = cand[accept(cand)]
        out.append(cand)
        have += len(cand)
    return np.concatenate(out)[:n]


def _uniform_box(rng: SeededRng, half_width: float):
    return lambda m: (2.0 * rng.uniform(2 * m) - 1.0).reshape(m, 2) * half_width


def _binary(name, x, labels) -> Dataset:
    return Dataset(name, "binary", x, labels.astype(np.float64).reshape(-1, 1), n_classes=2)


def linear_normal(seed: int) -> np.ndarray:
    """Unit normal of the separating line used by ``gen_linear`` for this seed."""
    theta = 2.0 * np.pi * SeededRng(derive_seed(seed, 0)).uniform(1)[0]
    return np.array([np.cos(theta), np.sin(theta)])


def gen_linear(n: int = 200, seed: int = 0) -> Dataset:
    """Uniform points on [-1, 1]^2 labelled by a seeded line through the origin.

    Points closer than the margin to the line are redrawn. If every point
    lands on one side, the last one is mirrored so both classes exist.
    """
    if n < 2:
        raise ValueError("linear task needs n >= 2")
    cfg = SYNTHETIC_CONFIG["linear"]
    normal = linear_normal(seed)
    rng = SeededRng(derive_seed(seed, 1))
    x = _rejection_sample(rng, n, _uniform_box(rng, cfg["box"]), lambda c: np.abs(c @ normal) >= cfg["margin"])
    side = x @ normal > 0
    if side.all() or not side.any():
        # guarantee both classes: mirror the last point through the origin
        x[-1] = -x[-1]
    return _binary("linear", x, x @ normal > 0)


def gen_xor(n: int = 400, seed: int = 0) -> Dataset:
    """Quadrant parity: class 1 where the coordinates have opposite signs."""
    if n < 4:
        raise ValueError("xor task needs n >= 4")
    cfg = SYNTHETIC_CONFIG["xor"]
    rng = SeededRng(seed)
    x = _rejection_sample(
        rng, n, _uniform_box(rng, cfg["box"]), lambda c: np.all(np.abs(c) >= cfg["margin"], axis=1)
    )
    return _binary("xor", x, np.sign(x[:, 0]) != np.sign(x[:, 1]))


def gen_circles(n: int = 800, seed: int = 0) -> Dataset:
    """Inner disk (class 0) against a surrounding annulus (class 1), half each, area-uniform."""
    if n < 8:
        raise ValueError("circles task needs n >= 8")
    cfg = SYNTHETIC_CONFIG["circles"]
    rng = SeededRng(seed)
    n0 = n // 2
    n1 = n - n0
    r_in = cfg["inner_radius"] * np.sqrt(rng.uniform(n0))
    lo, hi = cfg["outer_min"] ** 2, cfg["outer_max"] ** 2
    r_out = np.sqrt(lo + (hi - lo) * rng.uniform_open(n1))
    radius = np.concatenate([r_in, r_out])
    theta = 2.0 * np.pi * rng.uniform(n)
    labels = np.concatenate([np.zeros(n0), np.ones(n1)])
    x = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
    order = rng.permutation(n)
    return _binary("circles", x[order], labels[order])


def gen_checkerboard(n: int = 800, seed: int = 0) -> Dataset:
    """Unit cells on [-2, 2]^2 coloured by the parity of floor(x0) + floor(x1)."""
    if n < 8:
        raise ValueError("checkerboard task needs n >= 8")
    cfg = SYNTHETIC_CONFIG["checkerboard"]
    rng = SeededRng(seed)

    def away_from_edges(c):
        frac = c - np.floor(c)
        return np.all(np.minimum(frac, 1.0 - frac) >= cfg["margin"], axis=1)

    x = _rejection_sample(rng, n, _uniform_box(rng, cfg["box"]), away_from_edges)
    labels = (np.floor(x[:, 0]) + np.floor(x[:, 1])).astype(np.int64) % 2
    return _binary("checkerboard", x, labels == 1)


def polynomial_curve(x):
    c = SYNTHETIC_CONFIG["polynomial"]["coeffs"]
    x = np.asarray(x, dtype=np.float64)
    return ((c[0] * x + c[1]) * x + c[2]) * x + c[3]


def gen_polynomial(n: int = 400, seed: int = 0) -> Dataset:
    """``y = x^3 - 2x + 1 + noise`` on [-3, 3].

    ``inputs``/``targets`` hold the standardized view used for training; the
    raw values and the scaling constants live in ``extras``.
    """
    if n < 2:
        raise ValueError("polynomial task needs n >= 2")
    cfg = SYNTHETIC_CONFIG["polynomial"]
    rng = SeededRng(seed)
    x = (2.0 * rng.uniform(n) - 1.0) * cfg["x_range"]
    y = polynomial_curve(x) + cfg["noise_std"] * rng.standard_normal(n)
    xm, xs = x.mean(), x.std()
    ym, ys = y.mean(), y.std()
    return Dataset(
        "polynomial",
        "regression",
        ((x - xm) / xs).reshape(-1, 1),
        ((y - ym) / ys).reshape(-1, 1),
        extras={
            "raw_x": x.reshape(-1, 1),
            "raw_y": y.reshape(-1, 1),
            "scaling": np.array([xm, xs, ym, ys]),
        },
    )


GENERATORS = {
    "linear": gen_linear,
    "xor": gen_xor,
    "circles": gen_circles,
    "checkerboard": gen_checkerboard,
    "polynomial": gen_polynomial,
}


class IdxError(ValueError):
    pass


class BadMagicError(IdxError):
    pass


class TruncatedFileError(IdxError):
    pass


class CountMismatchError(IdxError):
    pass


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path, expected_magic: int) -> np.ndarray:
    """Raw uint8 array from an IDX file (big-endian header, then bytes)."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise BadMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: header truncated")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise TruncatedFileError(f"{path}: expected {count} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    with open(path, "wb") as fh:
        fh.write(struct.pack(f">I{array.ndim}I", magic, *array.shape))
        fh.write(array.tobytes())


def normalize_pixels(pixels) -> np.ndarray:
    return (np.asarray(pixels, dtype=np.float64) / 255.0 - PIXEL_MEAN) / PIXEL_STD


def denormalize_pixels(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64) * PIXEL_STD + PIXEL_MEAN
    return np.clip(np.rint(v * 255.0), 0, 255).astype(np.uint8)


def load_idx(images_path, labels_path, name: str = "mnist", task: str = "multiclass") -> Dataset:
    """Load an image/label IDX pair, flatten and normalize to mean 0.5, std 0.5.

    For ``task="reconstruction"`` the targets are the unnormalized [0, 1]
    pixel intensities of the same images.
    """
    images = read_idx(images_path, IMAGE_MAGIC)
    labels = read_idx(labels_path, LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatchError(
            f"{images_path} holds {images.shape[0]} images but {labels_path} holds {labels.shape[0]} labels"
        )
    flat = images.reshape(images.shape[0], -1)
    inputs = normalize_pixels(flat)
    extras = {"labels": labels.astype(np.int64), "image_shape": images.shape[1:]}
    if task == "reconstruction":
        return Dataset(name, task, inputs, flat.astype(np.float64) / 255.0, extras=extras)
    return Dataset(name, "multiclass", inputs, labels.astype(np.int64), n_classes=10, extras=extras)


IDX_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_idx_pair(directory, split: str) -> tuple[Path, Path]:
    directory = Path(directory)
    found = []
    for stem in IDX_FILES[split]:
        for candidate in (directory / stem, directory / f"{stem}.gz"):
            if candidate.exists():
                found.append(candidate)
                break
        else:
            raise FileNotFoundError(f"missing {stem}[.gz] in {directory}")
    return found[0], found[1]


def default_data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "data"))


def load_image_dataset(directory, name: str, task: str = "multiclass") -> tuple[Dataset, Dataset]:
    train = load_idx(*find_idx_pair(directory, "train"), name=name, task=task)
    test = load_idx(*find_idx_pair(directory, "test"), name=name, task=task)
    return train, test


def subset(dataset: Dataset, n: int, seed: int) -> Dataset:
    """First ``n`` rows of a seeded permutation."""
    if n >= len(dataset):
        return dataset
    order = SeededRng(seed).permutation(len(dataset))[:n]
    return dataset.take(np.sort(order))


def train_test_split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if len(dataset) == 0:
        raise ValueError("cannot split an empty dataset")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    order = SeededRng(seed).permutation(len(dataset))
    n_test = int(round(test_fraction * len(dataset)))
    return dataset.take(order[n_test:]), dataset.take(order[:n_test])


def batch_iter(n: int, batch_size, seed: int, epoch: int):
    """Index arrays for one epoch.

    ``batch_size == "full"`` (or None) yields ``arange(n)`` once; otherwise a
    permutation seeded by ``(seed, epoch)`` is cut into batches and the final
    partial batch is kept.
    """
    if n <= 0:
        raise ValueError("cannot iterate over an empty dataset")
    if batch_size is None or batch_size == FULL_BATCH:
        yield np.arange(n)
        return
    batch_size = int(batch_size)
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = SeededRng(derive_seed(seed, 0x5EED, epoch)).permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
