"""Dataset ingestion (CSV, IDX), normalization, splitting and model files."""

from __future__ import annotations

import csv
import gzip
import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, ParameterError, ParseError
from .nn import DenseLayer
from .numcore import Rng
from .selector import SelectorParams

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MODEL_FORMAT = "concrete-autoencoder-model"
MODEL_VERSION = 1
DEFAULT_FRACTIONS = (0.72, 0.08, 0.20)


@dataclass
class Normalization:
    """Per-feature affine map fitted on a training split.

    ``kind`` is ``minmax`` (to [0, 1], clamped), ``zscore`` or ``none``.
    Constant features map to 0 under both fitted kinds.
    """

    kind: str
    offset: np.ndarray
    scale: np.ndarray  # 0 for constant features

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "none":
            return x.copy()
        safe = np.where(self.scale > 0, self.scale, 1.0)
        out = np.where(self.scale > 0, (x - self.offset) / safe, 0.0)
        if self.kind == "minmax":
            np.clip(out, 0.0, 1.0, out=out)
        return out

    def invert(self, z, columns=None):
        cols = slice(None) if columns is None else np.asarray(columns)
        if self.kind == "none":
            return np.asarray(z, dtype=np.float64).copy()
        return self.offset[cols] + np.asarray(z, dtype=np.float64) * self.scale[cols]

    def subset(self, columns):
        cols = np.asarray(columns)
        return Normalization(self.kind, self.offset[cols], self.scale[cols])

    def to_dict(self):
        return {"kind": self.kind, "offset": self.offset.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(data["kind"], np.array(data["offset"], dtype=np.float64),
                   np.array(data["scale"], dtype=np.float64))


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray | None = None
    feature_names: list = field(default_factory=list)
    normalization: Normalization | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DataError(f"features must be 2-D, got {self.features.shape}")
        if not self.feature_names:
            self.feature_names = [f"f{j}" for j in range(self.features.shape[1])]
        if len(self.feature_names) != self.features.shape[1]:
            raise DataError(f"{len(self.feature_names)} names for {self.features.shape[1]} features")
        if self.labels is not None:
            self.labels = np.asarray(self.labels).astype(np.intp)
            if self.labels.shape != (self.features.shape[0],):
                raise DataError(f"{self.labels.shape[0]} labels for {self.features.shape[0]} rows")

    def __len__(self):
        return self.features.shape[0]

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]

    def take(self, rows):
        rows = np.asarray(rows, dtype=np.intp)
        labels = None if self.labels is None else self.labels[rows]
        return replace(self, features=self.features[rows], labels=labels)


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_csv(path, has_header=None, label_column=None) -> Dataset:
    """Read a comma-separated numeric table.

    ``has_header=None`` treats the first row as a header when any of its cells
    is non-numeric.  ``label_column`` (name or integer position) is split off
    as integer class labels.
    """
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        numbered = [(reader.line_num, r) for r in reader if r]
    if not numbered:
        raise ParseError(f"{path}: empty file")
    rows = [r for _, r in numbered]
    if has_header is None:
        has_header = not all(_is_number(c) for c in rows[0])
    header = [c.strip() for c in rows[0]] if has_header else None
    body = numbered[1:] if has_header else numbered
    width = len(rows[0])
    data = np.empty((len(body), width))
    for i, (line, row) in enumerate(body):
        if len(row) != width:
            raise ParseError(f"{path}: line {line} has {len(row)} fields, expected {width}")
        for j, cell in enumerate(row):
            try:
                data[i, j] = float(cell)
            except ValueError:
                raise ParseError(f"{path}: non-numeric value {cell!r} at row {i + 1}, "
                                 f"column {j + 1} (line {line})") from None
    if not np.all(np.isfinite(data)):
        raise ParseError(f"{path}: NaN or infinite values (drop incomplete rows first)")
    names = header or [f"f{j}" for j in range(width)]
    labels = None
    if label_column is not None:
        if isinstance(label_column, str) and not label_column.lstrip("-").isdigit():
            if header is None or label_column not in header:
                raise DataError(f"{path}: no label column named {label_column!r}")
            col = header.index(label_column)
        else:
            col = int(label_column)
            if not -width <= col < width:
                raise DataError(f"{path}: label column {col} out of range")
            col %= width
        raw = data[:, col]
        if np.any(raw != np.round(raw)) or np.any(raw < 0):
            raise DataError(f"{path}: labels must be non-negative integers")
        labels = raw.astype(np.intp)
        keep = [j for j in range(width) if j != col]
        data = data[:, keep]
        names = [names[j] for j in keep]
    return Dataset(data, labels, list(names))


def _atomic_write(path, write_fn, mode="w"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        kwargs = {"newline": ""} if "b" not in mode else {}
        with os.fdopen(fd, mode, **kwargs) as f:
            write_fn(f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_csv(path, matrix, header=None):
    """Write a numeric table with round-trip-exact (``repr``) formatting."""
    matrix = np.asarray(matrix, dtype=np.float64)

    def write(f):
        w = csv.writer(f, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        for row in matrix:
            w.writerow([repr(float(v)) for v in row])

    _atomic_write(path, write)


def _open_maybe_gzip(path):
    with open(path, "rb") as f:
        head = f.read(2)
    return gzip.open(path, "rb") if head == b"\x1f\x8b" else open(path, "rb")


def _read_idx(path, magic):
    with _open_maybe_gzip(path) as f:
        payload = f.read()
    if len(payload) < 8:
        raise FormatError(f"{path}: too short for an IDX header")
    found, = struct.unpack(">I", payload[:4])
    if found != magic:
        raise FormatError(f"{path}: magic {found:#010x}, expected {magic:#010x}")
    ndim = found & 0xFF
    header_len = 4 + 4 * ndim
    if len(payload) < header_len:
        raise FormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", payload[4:header_len])
    expected = math.prod(dims)
    body = payload[header_len:]
    if len(body) != expected:
        raise FormatError(f"{path}: header promises {expected} bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path=None) -> Dataset:
    """MNIST-style IDX files (optionally gzipped); pixels scaled by 1/255."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC)
    n, rows, cols = images.shape
    features = images.reshape(n, rows * cols).astype(np.float64) / 255.0
    labels = None
    if labels_path is not None:
        labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
        if labels.shape[0] != n:
            raise FormatError(f"{n} images but {labels.shape[0]} labels")
    names = [f"px_{r}_{c}" for r in range(rows) for c in range(cols)]
    return Dataset(features, labels, names)


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple = DEFAULT_FRACTIONS
    seed: int = 0

    def __post_init__(self):
        if len(self.fractions) != 3 or any(f < 0 for f in self.fractions):
            raise ParameterError(f"need three non-negative fractions, got {self.fractions}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ParameterError(f"fractions must sum to 1, got {sum(self.fractions)}")


def split_sizes(n, fractions):
    val = math.floor(fractions[1] * n + 1e-9)
    test = math.floor(fractions[2] * n + 1e-9)
    return n - val - test, val, test


def split(dataset: Dataset, spec: SplitSpec = SplitSpec()):
    """Seeded shuffle, then contiguous (train, val, test) slices.

    Validation and test sizes are floored; the remainder goes to train.
    """
    sizes = split_sizes(dataset.n, spec.fractions)
    for name, frac, size in zip(("train", "validation", "test"), spec.fractions, sizes):
        if frac > 0 and size == 0:
            raise DataError(f"{dataset.n} rows are too few for a non-empty {name} split")
    perm = Rng(spec.seed).permutation(dataset.n)
    a, b = sizes[0], sizes[0] + sizes[1]
    return dataset.take(perm[:a]), dataset.take(perm[a:b]), dataset.take(perm[b:])


def subsample_split(dataset: Dataset, n_fit: int, val_fraction=0.1, seed=0):
    """Use ``n_fit`` shuffled rows for train+validation and the rest for test.

    This is the small-budget protocol for large image sets: e.g. 6000 rows
    split 90/10 into train/validation, everything else held out.
    """
    if not 0 < n_fit < dataset.n:
        raise DataError(f"n_fit must be in (0, {dataset.n}), got {n_fit}")
    perm = Rng(seed).permutation(dataset.n)
    n_val = math.floor(val_fraction * n_fit + 1e-9)
    n_train = n_fit - n_val
    return (dataset.take(perm[:n_train]), dataset.take(perm[n_train:n_fit]),
            dataset.take(perm[n_fit:]))


def fit_normalization(x, kind="minmax") -> Normalization:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        raise DataError("cannot fit normalization on an empty split")
    d = x.shape[1]
    if kind == "none":
        return Normalization(kind, np.zeros(d), np.ones(d))
    if kind == "minmax":
        lo = x.min(axis=0)
        return Normalization(kind, lo, x.max(axis=0) - lo)
    if kind == "zscore":
        return Normalization(kind, x.mean(axis=0), x.std(axis=0))
    raise ParameterError(f"unknown normalization {kind!r}")


def normalize_fit_apply(train: Dataset, *others: Dataset, kind="minmax"):
    """Fit on ``train`` and apply to it and every other split.

    Returns ``(train, *others, record)``.
    """
    record = fit_normalization(train.features, kind)
    out = [replace(ds, features=record.apply(ds.features), normalization=record)
           for ds in (train, *others)]
    return (*out, record)


# -- model files -----------------------------------------------------------

def model_to_dict(model) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "mode": model.mode,
        "d": model.d,
        "k": model.k,
        "n_classes": model.n_classes,
        "alpha": model.selector.alpha.tolist(),
        "decoder": {
            "hidden_sizes": list(model.decoder_spec.hidden_sizes),
            "layers": [{"activation": layer.activation, "weights": layer.weights.tolist(),
                        "bias": layer.bias.tolist()} for layer in model.layers],
        },
        "feature_names": model.feature_names,
        "normalization": model.normalization,
    }


def model_from_dict(data):
    from .cae import CaeModel

    if not isinstance(data, dict) or data.get("format") != MODEL_FORMAT:
        raise FormatError("not a concrete autoencoder model file")
    if data.get("version") != MODEL_VERSION:
        raise FormatError(f"model version {data.get('version')!r}, expected {MODEL_VERSION}")
    try:
        selector = SelectorParams(np.array(data["alpha"], dtype=np.float64))
        layers = [DenseLayer(np.array(l["weights"], dtype=np.float64),
                             np.array(l["bias"], dtype=np.float64), l["activation"])
                  for l in data["decoder"]["layers"]]
        model = CaeModel(selector, layers, data["mode"], data.get("feature_names"),
                         data.get("n_classes"), data.get("normalization"))
    except ValueError as exc:
        raise ParseError(f"unreadable number in model file: {exc}") from exc
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed model file: {exc}") from exc
    if model.d != data["d"] or model.k != data["k"] or layers[0].in_dim != model.k:
        raise FormatError("model dimensions are inconsistent")
    for p in model.parameters():
        if not np.all(np.isfinite(p)):
            raise ParseError("model contains non-finite parameters")
    return model


def save_model(model, path):
    text = json.dumps(model_to_dict(model), indent=1, allow_nan=False) + "\n"
    _atomic_write(path, lambda f: f.write(text))


def load_model(path):
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(data)
