"""Labelled datasets: CSV ingestion and emission, class-balanced splits, and a
synthetic two-Gaussian generator with a sparse ground-truth precision."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from fwda.errors import (
    CsvShapeError,
    CsvValueError,
    InsufficientSamples,
    InvalidSpec,
    IoError,
    LabelError,
    ShapeError,
)


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple = None

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim == 1 and features.size == 0:
            features = features.reshape(0, 0)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if features.ndim != 2:
            raise ShapeError(f"features must be an n x p matrix, got shape {features.shape}")
        if features.shape[0] != labels.shape[0]:
            raise ShapeError(f"{features.shape[0]} feature rows but {labels.shape[0]} labels")
        if not np.all(np.isin(labels, (-1, 1))):
            raise LabelError(f"labels must be -1 or +1, got {sorted(set(labels.tolist()) - {-1, 1})}")
        names = self.feature_names
        if names is not None:
            names = tuple(str(n) for n in names)
            if len(names) != features.shape[1]:
                raise ShapeError(f"{len(names)} feature names for {features.shape[1]} columns")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[indices], self.labels[indices], self.feature_names)

    def class_indices(self, label):
        return np.flatnonzero(self.labels == label)


def _is_number(cell):
    try:
        float(cell)
    except ValueError:
        return False
    return True


def _parse_label(value, line):
    try:
        num = float(value)
    except ValueError:
        raise LabelError(f"line {line}: label {value!r} is not numeric") from None
    if num == 1:
        return 1
    if num in (0, -1):
        return -1
    raise LabelError(f"line {line}: label {value!r} is not one of -1, 0, +1")


def load_csv(path, label_column="label"):
    """Read a comma-separated file of features plus one label column.

    The first row is taken as a header when any of its cells is not
    numeric. ``label_column`` is a header name or a zero-based index
    (negative indices count from the end). Labels may be encoded as
    ``{-1, +1}`` or ``{0, 1}``.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [row for row in csv.reader(fh)]
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    numbered = [(i + 1, row) for i, row in enumerate(rows) if row and any(c.strip() for c in row)]
    if not numbered:
        raise CsvShapeError(1, "at least 1", 0)
    header = None
    first_line, first = numbered[0]
    if not all(_is_number(c) for c in first):
        header = [c.strip() for c in first]
        numbered = numbered[1:]
    width = len(header) if header is not None else len(first)

    if isinstance(label_column, str) and not _lstrip_int(label_column):
        if header is None or label_column not in header:
            raise ShapeError(f"label column {label_column!r} not found in header")
        label_idx = header.index(label_column)
    else:
        label_idx = int(label_column)
        if label_idx < 0:
            label_idx += width
        if not 0 <= label_idx < width:
            raise ShapeError(f"label column index {label_column} out of range for {width} columns")

    feature_cols = [c for c in range(width) if c != label_idx]
    features = np.empty((len(numbered), len(feature_cols)))
    labels = np.empty(len(numbered), dtype=np.int64)
    for r, (line, row) in enumerate(numbered):
        if len(row) != width:
            raise CsvShapeError(line, width, len(row))
        for out_c, c in enumerate(feature_cols):
            try:
                features[r, out_c] = float(row[c])
            except ValueError:
                raise CsvValueError(line, c, row[c]) from None
        labels[r] = _parse_label(row[label_idx].strip(), line)
    names = [header[c] for c in feature_cols] if header is not None else None
    return LabeledDataset(features, labels, names)


def _lstrip_int(text):
    try:
        int(text)
    except ValueError:
        return False
    return True


def save_csv(data, path):
    """Write ``data`` with a header row; floats use the shortest repr that round-trips."""
    names = data.feature_names or tuple(f"f{j}" for j in range(data.dim))
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([*names, "label"])
            for row, label in zip(data.features, data.labels):
                writer.writerow([repr(float(v)) for v in row] + [str(int(label))])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def banded_precision(p, rho=0.4):
    """Tridiagonal precision with unit diagonal and ``rho`` on the first off-diagonals."""
    theta = np.eye(p)
    idx = np.arange(p - 1)
    theta[idx, idx + 1] = rho
    theta[idx + 1, idx] = rho
    return theta


@dataclass(frozen=True)
class SyntheticSpec:
    dim: int
    n_per_class: int
    mean_separation: float = 3.0
    seed: int = 0
    rho: float = 0.4
    true_precision: np.ndarray = field(default=None, repr=False)

    def precision(self):
        if self.true_precision is None:
            return banded_precision(self.dim, self.rho)
        return np.asarray(self.true_precision, dtype=np.float64)


@dataclass(frozen=True)
class SyntheticTask:
    data: LabeledDataset
    true_precision: np.ndarray
    pos_mean: np.ndarray
    neg_mean: np.ndarray

    def bayes_accuracy(self):
        """Accuracy of the optimal rule for two equal-weight Gaussians with shared covariance."""
        diff = self.pos_mean - self.neg_mean
        mahalanobis = math.sqrt(float(diff @ self.true_precision @ diff))
        return float(norm.cdf(mahalanobis / 2))


def _validate(spec, theta):
    if spec.dim < 1 or spec.n_per_class < 0:
        raise InvalidSpec("dim must be positive and n_per_class nonnegative")
    if spec.mean_separation < 0:
        raise InvalidSpec(f"mean_separation must be nonnegative, got {spec.mean_separation}")
    if theta.shape != (spec.dim, spec.dim) or not np.allclose(theta, theta.T):
        raise InvalidSpec("true_precision must be a symmetric dim x dim matrix")
    try:
        return np.linalg.cholesky(theta)
    except np.linalg.LinAlgError:
        raise InvalidSpec("true_precision is not positive definite") from None


def generate_synthetic(spec):
    """Draw ``n_per_class`` points from each of ``N(+-(delta/2) e_1, theta*^-1)``.

    Positives come first, then negatives. Returns a :class:`SyntheticTask`
    carrying the ground truth alongside the dataset.
    """
    theta = spec.precision()
    chol = _validate(spec, theta)
    p = spec.dim
    u = np.zeros(p)
    u[0] = 1.0
    pos_mean = 0.5 * spec.mean_separation * u
    neg_mean = -pos_mean
    rng = np.random.default_rng(spec.seed)
    z = rng.standard_normal((2 * spec.n_per_class, p))
    # theta* = C C^T, so C^-T z has covariance theta*^-1
    noise = np.linalg.solve(chol.T, z.T).T
    n = spec.n_per_class
    features = noise + np.vstack([np.tile(pos_mean, (n, 1)), np.tile(neg_mean, (n, 1))])
    labels = np.concatenate([np.ones(n, dtype=np.int64), -np.ones(n, dtype=np.int64)])
    return SyntheticTask(LabeledDataset(features.reshape(2 * n, p), labels), theta, pos_mean, neg_mean)


def train_test_split(data, n_train_per_class, n_test_per_class=200, seed=0):
    """Class-balanced disjoint train/test subsets, deterministic in ``seed``.

    Rows keep their original relative order inside each returned subset.
    """
    rng = np.random.default_rng(seed)
    train, test = [], []
    need = n_train_per_class + n_test_per_class
    for label in (1, -1):
        members = data.class_indices(label)
        if members.size < need:
            raise InsufficientSamples(f"class {label:+d}: have {members.size}, need {need}")
        picked = rng.permutation(members)
        train.append(picked[:n_train_per_class])
        test.append(picked[n_train_per_class:need])
    return data.subset(np.sort(np.concatenate(train))), data.subset(np.sort(np.concatenate(test)))


def load_features(path, drop_column=None):
    """Read an unlabelled feature matrix, optionally dropping one column.

    ``drop_column`` may name a header column or give an index; a name that
    is absent from the header is ignored, so the same call handles files
    with and without a label column.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [(i + 1, row) for i, row in enumerate(csv.reader(fh)) if row and any(c.strip() for c in row)]
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if not rows:
        return np.empty((0, 0))
    header = None
    if not all(_is_number(c) for c in rows[0][1]):
        header = [c.strip() for c in rows[0][1]]
        rows = rows[1:]
    width = len(header) if header is not None else len(rows[0][1]) if rows else 0
    drop = None
    if drop_column is not None:
        if isinstance(drop_column, str) and not _lstrip_int(drop_column):
            if header is not None and drop_column in header:
                drop = header.index(drop_column)
        else:
            drop = int(drop_column) % width
    keep = [c for c in range(width) if c != drop]
    out = np.empty((len(rows), len(keep)))
    for r, (line, row) in enumerate(rows):
        if len(row) != width:
            raise CsvShapeError(line, width, len(row))
        for out_c, c in enumerate(keep):
            try:
                out[r, out_c] = float(row[c])
            except ValueError:
                raise CsvValueError(line, c, row[c]) from None
    return out
