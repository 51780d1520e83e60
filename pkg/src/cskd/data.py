"""Datasets, the class-paired batch sampler, augmentation and Mixup."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DimensionError, DomainError, FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Immutable sample array plus integer labels in ``[0, n_classes)``.

    Image data is stored as N x C x H x W; vector data as N x D.
    """

    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int
    class_index: tuple[np.ndarray, ...] = field(init=False, repr=False)
    _position: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        inputs = np.array(self.inputs, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if inputs.shape[0] != labels.shape[0]:
            raise DimensionError(f"{inputs.shape[0]} inputs but {labels.shape[0]} labels")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise DomainError(f"labels must lie in [0, {self.n_classes})")
        inputs.flags.writeable = False
        labels.flags.writeable = False
        index = tuple(np.flatnonzero(labels == c) for c in range(self.n_classes))
        # position of each sample inside its own class list, for partner exclusion
        position = np.empty(labels.size, dtype=np.int64)
        for members in index:
            position[members] = np.arange(members.size)
        position.flags.writeable = False
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_index", index)
        object.__setattr__(self, "_position", position)

    def __len__(self) -> int:
        return self.labels.size

    @property
    def is_spatial(self) -> bool:
        return self.inputs.ndim == 4

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.inputs[indices], self.labels[indices], self.n_classes)


@dataclass(frozen=True)
class PairedBatch:
    x: np.ndarray
    y: np.ndarray
    x_prime: np.ndarray
    indices: np.ndarray
    partner_indices: np.ndarray


@dataclass(frozen=True)
class AugPolicy:
    """Per-sample horizontal flip, then zero-pad by ``pad`` and crop back at a uniform offset."""

    flip_p: float = 0.5
    pad: int = 4

    @property
    def enabled(self) -> bool:
        return self.flip_p > 0 or self.pad > 0


# -- file formats ---------------------------------------------------------------------


def _read_idx(path, magic: int, what: str) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 8:
        raise FormatError(f"{what} file too short for an IDX header", offset=len(blob))
    (found,) = struct.unpack(">I", blob[:4])
    if found != magic:
        raise FormatError(f"{what} file has magic 0x{found:08x}, expected 0x{magic:08x}", offset=0)
    ndim = found & 0xFF
    header = 4 + 4 * ndim
    if len(blob) < header:
        raise FormatError(f"{what} file truncated inside dimension header", offset=len(blob))
    dims = struct.unpack(f">{ndim}I", blob[4:header])
    need = int(np.prod(dims))
    if len(blob) - header < need:
        raise FormatError(
            f"{what} payload truncated: {len(blob) - header} of {need} bytes present", offset=len(blob)
        )
    if len(blob) - header > need:
        raise FormatError(f"{what} file has {len(blob) - header - need} trailing bytes", offset=header + need)
    return np.frombuffer(blob, dtype=np.uint8, count=need, offset=header).reshape(dims)


def load_idx(images_path, labels_path, n_classes: Optional[int] = None) -> Dataset:
    """Read an IDX image/label pair; pixels become reals in [0, 1], shape N x 1 x H x W."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, "image")
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, "label")
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"image count {images.shape[0]} does not match label count {labels.shape[0]}", offset=4)
    inputs = images.astype(np.float64)[:, None, :, :] / 255.0
    labels = labels.astype(np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 0
    return Dataset(inputs, labels, n_classes)


def write_idx(path, array: np.ndarray) -> None:
    """Write unsigned-byte ``array`` as an IDX file (magic chosen from its rank)."""
    array = np.asarray(array, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">I", 0x00000800 | array.ndim))
        f.write(struct.pack(f">{array.ndim}I", *array.shape))
        f.write(array.tobytes())


def load_csv(path, n_classes: Optional[int] = None) -> Dataset:
    """Read ``label,f0,f1,...`` rows into a vector dataset."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[0] != "label" or header[1:] != [f"f{i}" for i in range(len(header) - 1)]:
            raise FormatError(f"{path}: header must be label,f0,f1,..., got {header}")
        labels, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                labels.append(int(row[0]))
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    labels = np.array(labels, dtype=np.int64)
    inputs = np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 1)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 0
    return Dataset(inputs, labels, n_classes)


def save_csv(ds: Dataset, path) -> None:
    flat = ds.inputs.reshape(len(ds), -1)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["label"] + [f"f{i}" for i in range(flat.shape[1])])
        for label, row in zip(ds.labels, flat):
            w.writerow([int(label)] + [repr(float(v)) for v in row])


# -- synthetic data ---------------------------------------------------------------------


def class_centers(n_classes: int, dim: int, radius: float = 3.0) -> np.ndarray:
    """Evenly spaced points on a radius-3 circle in the first two coordinates."""
    angles = 2 * np.pi * np.arange(n_classes) / n_classes
    centers = np.zeros((n_classes, dim))
    if dim == 1:
        centers[:, 0] = np.linspace(-radius, radius, n_classes)
    else:
        centers[:, 0] = radius * np.cos(angles)
        centers[:, 1] = radius * np.sin(angles)
    return centers


def synth_gaussians(
    n_classes: int,
    per_class: int,
    dim: int,
    spread: float,
    seed: int,
    n_samples: Optional[int] = None,
) -> Dataset:
    """Isotropic Gaussian blobs, one per class, around :func:`class_centers`.

    With ``n_samples`` given, labels cycle ``i % n_classes`` over that many
    samples instead of ``per_class`` each (used to hit exact split sizes).
    """
    if n_classes < 2 or per_class < 2 or dim < 1:
        raise DomainError("synth_gaussians needs n_classes >= 2, per_class >= 2, dim >= 1")
    if spread < 0:
        raise DomainError(f"spread must be non-negative, got {spread}")
    if n_samples is None:
        labels = np.repeat(np.arange(n_classes), per_class)
    else:
        labels = np.arange(n_samples) % n_classes
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((labels.size, dim))
    inputs = class_centers(n_classes, dim)[labels] + spread * noise
    return Dataset(inputs, labels, n_classes)


def _mix64(x: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer
    x = x.astype(np.uint64)
    with np.errstate(over="ignore"):
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        x = x ^ (x >> np.uint64(31))
    return x


def hash_split(ds: Dataset, test_fraction: float = 0.2) -> tuple[Dataset, Dataset]:
    """Deterministic train/test split: the lowest-hashing indices go to test."""
    if not 0 < test_fraction < 1:
        raise DomainError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = len(ds)
    n_test = int(round(n * test_fraction))
    order = np.argsort(_mix64(np.arange(n)), kind="stable")
    test = np.sort(order[:n_test])
    train = np.sort(order[n_test:])
    return ds.subset(train), ds.subset(test)


# -- sampling -------------------------------------------------------------------------


def paired_batch(ds: Dataset, indices, rng: np.random.Generator) -> PairedBatch:
    """Pair every sample with a uniformly drawn same-label partner.

    The partner excludes the sample itself unless its class is a singleton.
    """
    indices = np.asarray(indices, dtype=np.int64)
    y = ds.labels[indices]
    partners = np.empty_like(indices)
    draws = rng.random(indices.size)
    for i, (idx, c) in enumerate(zip(indices, y)):
        members = ds.class_index[c]
        if members.size < 2:
            partners[i] = idx
            continue
        r = min(int(draws[i] * (members.size - 1)), members.size - 2)
        if r >= ds._position[idx]:
            r += 1
        partners[i] = members[r]
    return PairedBatch(ds.inputs[indices], y, ds.inputs[partners], indices, partners)


# -- augmentation -------------------------------------------------------------------


def pad_crop(image: np.ndarray, pad: int, top: int, left: int) -> np.ndarray:
    """Zero-pad a C x H x W image by ``pad`` and crop H x W starting at (top, left)."""
    c, h, w = image.shape
    padded = np.pad(image, ((0, 0), (pad, pad), (pad, pad)))
    return padded[:, top : top + h, left : left + w]


def augment(x: np.ndarray, policy: AugPolicy, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise DimensionError(f"augment expects N x C x H x W images, got {x.shape}")
    if not policy.enabled:
        return x.copy()
    out = np.empty_like(x)
    flips = rng.random(x.shape[0]) < policy.flip_p
    offsets = rng.integers(0, 2 * policy.pad + 1, size=(x.shape[0], 2))
    for i in range(x.shape[0]):
        img = x[i, :, :, ::-1] if flips[i] else x[i]
        out[i] = pad_crop(img, policy.pad, *offsets[i]) if policy.pad else img
    return out


# -- mixup --------------------------------------------------------------------------


def one_hot(y, n_classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    out = np.zeros((y.size, n_classes))
    out[np.arange(y.size), y] = 1.0
    return out


def mixup_batch(x1, y1, x2, y2, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Convex combination ``lam * first + (1 - lam) * second`` of inputs and soft labels."""
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"mixup coefficient must lie in [0, 1], got {lam}")
    x1, x2 = np.asarray(x1, dtype=np.float64), np.asarray(x2, dtype=np.float64)
    y1, y2 = np.asarray(y1, dtype=np.float64), np.asarray(y2, dtype=np.float64)
    if x1.shape != x2.shape or y1.shape != y2.shape:
        raise DimensionError(f"mixup operands differ in shape: {x1.shape}/{x2.shape}, {y1.shape}/{y2.shape}")
    if lam == 1.0:
        return x1.copy(), y1.copy()
    if lam == 0.0:
        return x2.copy(), y2.copy()
    return lam * x1 + (1 - lam) * x2, lam * y1 + (1 - lam) * y2
