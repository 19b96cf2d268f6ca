"""Dataset loading, synthetic task generation and i.i.d. sharding."""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
OTHER = "__other__"


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    classes: tuple = ()
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(self.features) != len(self.labels):
            raise ValueError(f"{len(self.features)} feature rows but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx, name: str | None = None) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.features[idx], self.labels[idx], name or self.name, self.classes, self.meta)

    def head(self, n: int) -> "Dataset":
        return self.subset(np.arange(min(n, len(self))))


def concat(parts: list[Dataset], name: str = "pooled") -> Dataset:
    return Dataset(
        np.concatenate([p.features for p in parts]),
        np.concatenate([p.labels for p in parts]),
        name,
        parts[0].classes,
    )


@dataclass(frozen=True)
class ShardPlan:
    assignments: tuple[np.ndarray, ...]
    seed: int

    @property
    def m(self) -> int:
        return len(self.assignments)

    def shards(self, d: Dataset) -> list[Dataset]:
        return [d.subset(a, f"{d.name}[{i}]") for i, a in enumerate(self.assignments)]

    def retained(self) -> np.ndarray:
        return np.concatenate(self.assignments)


def pool_images(d: Dataset, factor: int, side: int | None = None) -> Dataset:
    """Average-pool square images stored as flat rows by ``factor`` per axis."""
    side = side or int(round(np.sqrt(d.dim)))
    if side * side != d.dim or side % factor:
        raise ValueError(f"cannot pool {d.dim}-pixel rows by {factor}")
    if factor == 1:
        return d
    s = side // factor
    X = d.features.reshape(-1, s, factor, s, factor).mean(axis=(2, 4)).reshape(len(d), s * s)
    return Dataset(X, d.labels, d.name, d.classes, d.meta)


def split_iid(d: Dataset, m: int, seed: int) -> ShardPlan:
    """Equal-size random shards; the ``len(d) % m`` leftover samples are dropped."""
    if m <= 0 or m > len(d):
        raise ValueError(f"cannot split {len(d)} samples across {m} clients")
    perm = np.random.default_rng(seed).permutation(len(d))
    size = len(d) // m
    return ShardPlan(tuple(perm[i * size : (i + 1) * size] for i in range(m)), seed)


class IdxFormatError(ValueError):
    """Malformed IDX container; ``field`` names the offending header field."""

    def __init__(self, path, field_name, message):
        super().__init__(f"{path}: {field_name}: {message}")
        self.path = str(path)
        self.field = field_name


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise IdxFormatError(path, "payload", f"corrupt gzip stream ({exc})") from None
    return raw


def _idx_header(path, raw, magic, n_dims):
    if len(raw) < 4:
        raise IdxFormatError(path, "magic", "file shorter than the magic number")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IdxFormatError(path, "magic", f"expected 0x{magic:08x}, found 0x{found:08x}")
    end = 4 + 4 * n_dims
    if len(raw) < end:
        raise IdxFormatError(path, "dimensions", "header truncated")
    dims = struct.unpack(">" + "I" * n_dims, raw[4:end])
    expected = int(np.prod(dims))
    if len(raw) - end != expected:
        raise IdxFormatError(path, "payload", f"expected {expected} bytes, found {len(raw) - end}")
    return dims, raw[end:]


def load_idx(images_path, labels_path, name: str = "mnist") -> Dataset:
    """Load an IDX image/label pair (optionally gzipped); pixels scaled to [0, 1]."""
    (n, rows, cols), pixels = _idx_header(images_path, _read_bytes(images_path), IDX_IMAGES_MAGIC, 3)
    (n_labels,), payload = _idx_header(labels_path, _read_bytes(labels_path), IDX_LABELS_MAGIC, 1)
    if n_labels != n:
        raise IdxFormatError(labels_path, "count", f"{n_labels} labels for {n} images")
    X = np.frombuffer(pixels, dtype=np.uint8).reshape(n, rows * cols).astype(float) / 255.0
    y = np.frombuffer(payload, dtype=np.uint8).astype(int)
    if y.size and y.max() > 9:
        raise IdxFormatError(labels_path, "labels", f"label {y.max()} outside 0..9")
    return Dataset(X, y, name, tuple(range(10)))


def load_mnist_dir(root, name: str = "mnist") -> tuple[Dataset, Dataset]:
    """Train/test pair from a directory holding the four standard IDX files."""
    root = Path(root)

    def pick(stem):
        for suffix in (".gz", ""):
            p = root / f"{stem}{suffix}"
            if p.exists():
                return p
        raise FileNotFoundError(root / stem)

    train = load_idx(pick("train-images-idx3-ubyte"), pick("train-labels-idx1-ubyte"), name)
    test = load_idx(pick("t10k-images-idx3-ubyte"), pick("t10k-labels-idx1-ubyte"), name + "-test")
    return train, test


class CsvFormatError(ValueError):
    def __init__(self, path, row, message):
        super().__init__(f"{path}: row {row}: {message}")
        self.path = str(path)
        self.row = row


def _load_schema(schema) -> dict:
    if isinstance(schema, (str, Path)):
        schema = yaml.safe_load(Path(schema).read_text())
    out = {}
    for col, decl in schema.items():
        if isinstance(decl, str):
            decl = {"type": decl}
        if decl.get("type") not in ("numeric", "categorical"):
            raise ValueError(f"column {col!r}: type must be numeric or categorical")
        out[col] = decl
    return out


def load_csv_labeled(path, label_column: str, schema, name: str | None = None) -> Dataset:
    """Load a headed CSV: categoricals one-hot, numerics min-max scaled to [0, 1].

    ``schema`` maps column name to ``"numeric"``, ``"categorical"`` or a dict
    ``{"type": "categorical", "levels": [...]}``. Declared levels get an extra
    ``__other__`` column that catches values not in the list; undeclared
    levels are the sorted distinct values seen. Columns absent from the
    schema (other than the label) are ignored.
    """
    schema = _load_schema(schema)
    with open(path, newline="") as fh:
        reader = csv.reader(fh, skipinitialspace=True)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvFormatError(path, 1, "missing header row") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise CsvFormatError(path, lineno, f"expected {len(header)} fields, found {len(row)}")
            rows.append((lineno, [c.strip() for c in row]))
    if label_column not in header:
        raise ValueError(f"label column {label_column!r} not in header")
    missing = [c for c in schema if c not in header]
    if missing:
        raise ValueError(f"schema columns not in header: {missing}")
    if not rows:
        raise CsvFormatError(path, 2, "no data rows")

    blocks = []
    columns = []
    for col in header:
        if col == label_column or col not in schema:
            continue
        j = header.index(col)
        decl = schema[col]
        values = [r[j] for _, r in rows]
        if decl["type"] == "numeric":
            try:
                v = np.array([float(x) for x in values])
            except ValueError:
                bad = next(i for i, x in enumerate(values) if not _is_float(x))
                raise CsvFormatError(path, rows[bad][0], f"column {col!r}: not a number: {values[bad]!r}") from None
            lo, hi = v.min(), v.max()
            blocks.append(((v - lo) / (hi - lo) if hi > lo else np.zeros_like(v))[:, None])
            columns.append(col)
        else:
            declared = decl.get("levels")
            levels = [str(x) for x in declared] if declared else sorted(set(values))
            index = {lvl: k for k, lvl in enumerate(levels)}
            width = len(levels) + (1 if declared else 0)
            onehot = np.zeros((len(values), width))
            for i, x in enumerate(values):
                onehot[i, index.get(x, len(levels))] = 1.0
            blocks.append(onehot)
            columns += [f"{col}={lvl}" for lvl in levels] + ([f"{col}={OTHER}"] if declared else [])

    j = header.index(label_column)
    raw_labels = [r[j].rstrip(".") for _, r in rows]
    if all(_is_float(x) for x in raw_labels):
        labels = np.array([float(x) for x in raw_labels])
        if np.all(labels == np.round(labels)):
            labels = labels.astype(int)
        classes = tuple(sorted(set(labels.tolist())))
    else:
        classes = tuple(sorted(set(raw_labels)))
        lookup = {c: k for k, c in enumerate(classes)}
        labels = np.array([lookup[x] for x in raw_labels])
    X = np.hstack(blocks) if blocks else np.zeros((len(rows), 0))
    return Dataset(X, labels, name or Path(path).stem, classes, {"columns": columns})


def _is_float(x: str) -> bool:
    try:
        float(x)
    except ValueError:
        return False
    return True


def gen_synthetic_logreg(n: int, dim: int, seed: int, noise: float = 0.1, separation: float = 1.0) -> Dataset:
    """Two-component Gaussian mixture labelled by a fixed linear separator.

    Labels are ``1[x . w_true + b_true > 0]`` with each label flipped
    independently with probability ``noise``.
    """
    if n < 1 or dim < 1:
        raise ValueError("n and dim must be positive")
    rng = np.random.default_rng(seed)
    w_true = rng.normal(size=dim)
    w_true /= np.linalg.norm(w_true)
    b_true = 0.0
    center = separation * w_true
    comp = rng.integers(0, 2, size=n)
    X = rng.normal(size=(n, dim)) + np.where(comp[:, None] == 1, center, -center)
    clean = (X @ w_true + b_true > 0).astype(int)
    flip = rng.random(n) < noise
    y = np.where(flip, 1 - clean, clean)
    return Dataset(X, y, "synthetic-logreg", (0, 1), {"w_true": w_true, "b_true": b_true})
