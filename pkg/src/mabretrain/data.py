"""Dataset loading and synthesis: IDX images, labelled CSV, SEA-style drift streams."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidInputError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    provenance: str = ""
    groups: np.ndarray | None = None  # optional per-sample tag, e.g. drift segment

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise InvalidInputError("features must be (n, d) with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise InvalidInputError("labels must lie in [0, class_count)")
        if not np.all(np.isfinite(self.features)):
            raise InvalidInputError("features contain non-finite values")
        if self.groups is not None:
            self.groups = np.asarray(self.groups, dtype=np.int64)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path, expected_magic: int, ndim: int) -> np.ndarray:
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise FormatError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    n_bytes = int(np.prod(dims))
    if len(raw) - header < n_bytes:
        raise FormatError(f"{path}: truncated payload ({len(raw) - header} of {n_bytes} bytes)")
    if len(raw) - header > n_bytes:
        raise FormatError(f"{path}: {len(raw) - header - n_bytes} trailing bytes after payload")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, class_count: int | None = None) -> Dataset:
    """Parse big-endian IDX image/label files; pixels are scaled to [0, 1]."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    k = class_count if class_count is not None else (int(labels.max()) + 1 if labels.size else 1)
    return Dataset(x, labels.astype(np.int64), k, provenance=f"idx:{Path(images_path).name}")


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array of 1 (labels) or 3 (images) dims in IDX format."""
    a = np.asarray(array)
    if a.dtype != np.uint8 or a.ndim not in (1, 3):
        raise InvalidInputError("write_idx expects a 1-D or 3-D uint8 array")
    magic = IDX_LABELS_MAGIC if a.ndim == 1 else IDX_IMAGES_MAGIC
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(">" + "I" * a.ndim, *a.shape))
        f.write(np.ascontiguousarray(a).tobytes())


def write_digits_idx(directory) -> tuple[Path, Path]:
    """Export scikit-learn's bundled 8x8 digits as an IDX image/label pair."""
    from sklearn.datasets import load_digits

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    images_path = directory / "digits-images-idx3-ubyte"
    labels_path = directory / "digits-labels-idx1-ubyte"
    if not (images_path.exists() and labels_path.exists()):
        d = load_digits()
        pixels = np.rint(d.images * (255.0 / 16.0)).astype(np.uint8)
        write_idx(images_path, pixels)
        write_idx(labels_path, d.target.astype(np.uint8))
    return images_path, labels_path


def load_csv(path, label_column: str, feature_columns=None) -> Dataset:
    """Read a headed CSV of numeric features plus one label column.

    Labels are mapped to ``0..K-1`` in sorted order of their distinct values.
    Features are returned raw; normalize with :func:`zscore` on a training split.
    """
    path = Path(path)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if label_column not in header:
            raise FormatError(f"{path}: label column {label_column!r} not in header {header}")
        if feature_columns is None:
            feature_columns = [h for h in header if h != label_column]
        missing = [c for c in feature_columns if c not in header]
        if missing:
            raise FormatError(f"{path}: feature columns {missing} not in header")
        cols = [header.index(c) for c in feature_columns]
        label_idx = header.index(label_column)
        rows, raw_labels = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}")
            values = []
            for c in cols:
                try:
                    values.append(float(row[c]))
                except ValueError:
                    raise FormatError(f"{path}:{line_no}: non-numeric value {row[c]!r} "
                                      f"in column {header[c]!r}") from None
            rows.append(values)
            raw_labels.append(row[label_idx].strip())
    if not rows:
        raise FormatError(f"{path}: no data rows")
    try:
        keys = sorted(set(raw_labels), key=float)
    except ValueError:
        keys = sorted(set(raw_labels))
    lookup = {k: i for i, k in enumerate(keys)}
    x = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise FormatError(f"{path}: non-finite feature values")
    y = np.array([lookup[v] for v in raw_labels], dtype=np.int64)
    return Dataset(x, y, len(keys), provenance=f"csv:{path.name}")


def zscore(features: np.ndarray, train_rows) -> np.ndarray:
    """Standardize every row with mean/std computed on ``train_rows`` only."""
    ref = features[train_rows]
    mu = ref.mean(axis=0)
    sd = ref.std(axis=0)
    sd[sd == 0] = 1.0
    return (features - mu) / sd


@dataclass(frozen=True)
class DriftSpec:
    """SEA concept stream: one threshold per segment on f1 + f2."""

    n_per_segment: int | tuple = 12500
    thresholds: tuple = (8.0, 9.0, 7.0, 9.5)
    noise: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.noise < 0.5:
            raise InvalidInputError("noise rate must lie in [0, 0.5)")
        if not self.thresholds or not all(np.isfinite(t) for t in self.thresholds):
            raise InvalidInputError("thresholds must be finite and non-empty")

    @property
    def segment_sizes(self) -> list[int]:
        if isinstance(self.n_per_segment, int):
            return [self.n_per_segment] * len(self.thresholds)
        if len(self.n_per_segment) != len(self.thresholds):
            raise InvalidInputError("one segment size per threshold required")
        return [int(n) for n in self.n_per_segment]


def sea_label(features: np.ndarray, threshold: float) -> np.ndarray:
    f = np.atleast_2d(features)
    return (f[:, 0] + f[:, 1] <= threshold).astype(np.int64)


def generate_sea(spec: DriftSpec, seed: int = 0) -> Dataset:
    """Uniform features on [0, 10]^3, label 1 iff f1 + f2 <= threshold, labels flipped at the noise rate."""
    rng = np.random.default_rng(seed)
    xs, ys, gs = [], [], []
    for seg, (n, theta) in enumerate(zip(spec.segment_sizes, spec.thresholds)):
        x = rng.uniform(0.0, 10.0, size=(n, 3))
        y = sea_label(x, theta)
        flip = rng.random(n) < spec.noise
        xs.append(x)
        ys.append(np.where(flip, 1 - y, y))
        gs.append(np.full(n, seg))
    return Dataset(np.concatenate(xs), np.concatenate(ys), 2, provenance="sea-synthetic",
                   groups=np.concatenate(gs))
