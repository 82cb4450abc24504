"""Tabular ingestion for Galaxy Zoo style morphology tables.

Rows carry per-galaxy vote fractions plus three boolean flag columns
(spiral, elliptical, uncertain).  The flags are collapsed into a single
integer class label and excluded from the feature matrix.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionError, EmptyInputError, SchemaError

FORMAT_VERSION = 1

SPIRAL, ELLIPTICAL, UNCERTAIN = 0, 1, 2
CLASS_NAMES = ("spiral", "elliptical", "uncertain")
NUM_CLASSES = 3

DEFAULT_ID_COLUMN = "objid"
DEFAULT_FEATURE_COLUMNS = (
    "spectra",
    "p_el",
    "p_cw",
    "p_acw",
    "p_edge",
    "p_dk",
    "p_mg",
    "p_cs",
    "p_el_debiased",
    "p_cs_debiased",
)
DEFAULT_FLAG_COLUMNS = ("spiral", "elliptical", "uncertain")
# Columns the flags are thresholded from; using them as features leaks the label.
DEFAULT_LEAKAGE_COLUMNS = DEFAULT_FEATURE_COLUMNS[1:]

_TRUE = {"1", "1.0", "true", "t", "yes", "y"}
_FALSE = {"0", "0.0", "false", "f", "no", "n", ""}


@dataclass(frozen=True)
class Schema:
    """Column mapping for ingestion.

    ``flag_columns`` is ordered (spiral, elliptical, uncertain).  Header
    matching is case-insensitive so the upper-case names used by the
    public Galaxy Zoo tables map onto the defaults.  ``bounded_columns``
    are checked to lie in [0, 1]; out-of-range rows are rejected.
    """

    feature_columns: tuple[str, ...] = DEFAULT_FEATURE_COLUMNS
    flag_columns: tuple[str, str, str] = DEFAULT_FLAG_COLUMNS
    id_column: str | None = DEFAULT_ID_COLUMN
    bounded_columns: tuple[str, ...] = ()
    leakage_columns: tuple[str, ...] = DEFAULT_LEAKAGE_COLUMNS
    fill_missing_label: int | None = None

    def __post_init__(self):
        if not self.feature_columns:
            raise SchemaError("schema needs at least one feature column")
        if len(self.flag_columns) != 3:
            raise SchemaError("flag_columns must name exactly three columns")
        overlap = set(map(str.lower, self.feature_columns)) & set(map(str.lower, self.flag_columns))
        if overlap:
            raise SchemaError(f"flag columns cannot be features: {sorted(overlap)}")
        if self.fill_missing_label not in (None, UNCERTAIN, 3):
            raise SchemaError("fill_missing_label must be 2 or 3")

    @property
    def missing_label(self) -> int:
        return UNCERTAIN if self.fill_missing_label is None else self.fill_missing_label

    @property
    def num_classes(self) -> int:
        return 4 if self.missing_label == 3 else NUM_CLASSES

    @classmethod
    def from_dict(cls, data: Mapping) -> "Schema":
        flags = data.get("flag_columns", DEFAULT_FLAG_COLUMNS)
        if isinstance(flags, Mapping):
            try:
                flags = tuple(flags[name] for name in CLASS_NAMES)
            except KeyError as exc:
                raise SchemaError(f"flag_columns mapping lacks key {exc.args[0]!r}") from None
        kwargs = {
            "feature_columns": tuple(data.get("feature_columns", DEFAULT_FEATURE_COLUMNS)),
            "flag_columns": tuple(flags),
            "id_column": data.get("id_column", DEFAULT_ID_COLUMN),
            "bounded_columns": tuple(data.get("bounded_columns", ())),
            "leakage_columns": tuple(data.get("leakage_columns", DEFAULT_LEAKAGE_COLUMNS)),
            "fill_missing_label": data.get("fill_missing_label"),
        }
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path: str | Path) -> "Schema":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def leaky_features(self) -> list[str]:
        leak = {c.lower() for c in self.leakage_columns}
        return [c for c in self.feature_columns if c.lower() in leak]


@dataclass(frozen=True)
class RawRecord:
    object_id: int
    values: Mapping[str, float]
    flag_spiral: bool
    flag_elliptical: bool
    flag_uncertain: bool


def derive_label(record: RawRecord, missing_label: int = UNCERTAIN) -> int:
    """Collapse the three morphology flags into a class index.

    Exactly one flag set gives that class.  No flag set gives
    ``missing_label``; several flags set is ambiguous and gives Uncertain.
    """
    flags = (bool(record.flag_spiral), bool(record.flag_elliptical), bool(record.flag_uncertain))
    n_set = sum(flags)
    if n_set == 1:
        return flags.index(True)
    if n_set == 0:
        return missing_label
    return UNCERTAIN


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix, integer labels and column names. Immutable."""

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...]
    ids: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, len(self.feature_names))
        if X.ndim != 2:
            raise DimensionError(f"features must be 2-D, got shape {X.shape}")
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise DimensionError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if len(self.feature_names) != X.shape[1]:
            raise DimensionError(
                f"{len(self.feature_names)} feature names for {X.shape[1]} columns"
            )
        if not np.all(np.isfinite(X)):
            raise ValueError("features contain NaN or infinite entries")
        if np.any(y < 0):
            raise ValueError("labels must be non-negative")
        object.__setattr__(self, "features", _readonly(X))
        object.__setattr__(self, "labels", _readonly(y))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if self.ids is not None:
            ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
            if ids.shape[0] != y.shape[0]:
                raise DimensionError("ids length does not match row count")
            object.__setattr__(self, "ids", _readonly(ids))

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: Sequence[int] | np.ndarray) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(
            self.features[idx],
            self.labels[idx],
            self.feature_names,
            None if self.ids is None else self.ids[idx],
        )

    def with_features(self, features: np.ndarray) -> "Dataset":
        return Dataset(features, self.labels, self.feature_names, self.ids)


@dataclass
class IngestReport:
    rows_read: int = 0
    rows_rejected: int = 0
    class_counts: list[int] = field(default_factory=list)
    rejected: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "rows_read": self.rows_read,
            "rows_rejected": self.rows_rejected,
            "class_counts": list(self.class_counts),
            "rejected": list(self.rejected),
        }


def _parse_flag(text: str) -> bool:
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ValueError(f"unrecognised flag value {text!r}")


def _parse_real(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {text!r}")
    return value


def parse_csv(path: str | Path, schema: Schema | None = None) -> tuple[Dataset, IngestReport]:
    """Read a morphology table and derive labels from its flag columns.

    Rows with unparseable or non-finite numerics, bad flag values,
    out-of-range bounded columns or duplicate ids are dropped and listed
    in the returned report (``line`` is the 1-based file line).
    """
    schema = schema or Schema()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyInputError(f"{path}: file is empty")
        position = {name.strip().lower(): i for i, name in enumerate(header)}

        def column(name: str) -> int:
            try:
                return position[name.lower()]
            except KeyError:
                raise SchemaError(f"missing required column '{name}'") from None

        feat_idx = [column(c) for c in schema.feature_columns]
        flag_idx = [column(c) for c in schema.flag_columns]
        id_idx = column(schema.id_column) if schema.id_column else None
        bounded = {c.lower() for c in schema.bounded_columns}
        bounded_pos = [j for j, c in enumerate(schema.feature_columns) if c.lower() in bounded]

        report = IngestReport()
        rows, labels, ids = [], [], []
        seen_ids: set[int] = set()
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            report.rows_read += 1
            try:
                if len(row) != len(header):
                    raise ValueError(f"expected {len(header)} fields, got {len(row)}")
                values = [_parse_real(row[i]) for i in feat_idx]
                for j in bounded_pos:
                    if not 0.0 <= values[j] <= 1.0:
                        raise ValueError(f"{schema.feature_columns[j]}={values[j]} outside [0, 1]")
                flags = [_parse_flag(row[i]) for i in flag_idx]
                if id_idx is None:
                    object_id = report.rows_read - 1
                else:
                    object_id = int(row[id_idx].strip())
                if object_id in seen_ids:
                    raise ValueError(f"duplicate object id {object_id}")
            except ValueError as exc:
                report.rows_rejected += 1
                report.rejected.append({"line": line_no, "reason": str(exc)})
                continue
            seen_ids.add(object_id)
            record = RawRecord(object_id, dict(zip(schema.feature_columns, values)), *flags)
            rows.append(values)
            labels.append(derive_label(record, schema.missing_label))
            ids.append(object_id)

    if report.rows_read == 0:
        raise EmptyInputError(f"{path}: no data rows")
    features = np.array(rows, dtype=np.float64).reshape(len(rows), len(feat_idx))
    dataset = Dataset(features, np.array(labels, dtype=np.int64), schema.feature_columns, np.array(ids, dtype=np.int64))
    report.class_counts = class_distribution(dataset, schema.num_classes).tolist()
    return dataset, report


def write_csv(dataset: Dataset, path: str | Path, schema: Schema | None = None) -> None:
    """Write ``dataset`` in the ingestion layout; labels become one-hot flags.

    Values are written with ``repr`` so a re-parse is bit-exact.  A label
    without a flag (the compat class 3) is written with all flags cleared.
    """
    schema = schema or Schema()
    if len(schema.feature_columns) != dataset.n_features:
        raise DimensionError(
            f"schema has {len(schema.feature_columns)} feature columns, dataset has {dataset.n_features}"
        )
    ids = dataset.ids if dataset.ids is not None else np.arange(len(dataset))
    header = ([schema.id_column] if schema.id_column else []) + list(schema.feature_columns) + list(schema.flag_columns)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(dataset)):
            label = int(dataset.labels[i])
            flags = [int(label == c) for c in range(3)]
            prefix = [int(ids[i])] if schema.id_column else []
            writer.writerow(prefix + [repr(float(v)) for v in dataset.features[i]] + flags)


@dataclass(frozen=True, eq=False)
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _readonly(np.asarray(self.mean, dtype=np.float64)))
        object.__setattr__(self, "std", _readonly(np.asarray(self.std, dtype=np.float64)))
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise DimensionError("mean and std must be 1-D vectors of equal length")
        if np.any(self.std <= 0):
            raise ValueError("standard deviations must be positive")

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, data: Mapping) -> "StandardizationStats":
        return cls(np.array(data["mean"], dtype=np.float64), np.array(data["std"], dtype=np.float64))


def fit_standardization(features: np.ndarray) -> StandardizationStats:
    """Population mean/std per column. Constant columns get std 1."""
    X = np.asarray(features, dtype=np.float64)
    if X.shape[0] == 0:
        raise EmptyInputError("cannot standardize an empty dataset")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    constant = np.ptp(X, axis=0) == 0
    # exact centre for constant columns so they map to exact zeros
    mean[constant] = X[0, constant]
    std[constant] = 1.0
    return StandardizationStats(mean, std)


def apply_standardization(dataset: Dataset, stats: StandardizationStats) -> Dataset:
    if stats.mean.shape[0] != dataset.n_features:
        raise DimensionError(
            f"stats cover {stats.mean.shape[0]} features, dataset has {dataset.n_features}"
        )
    return dataset.with_features((dataset.features - stats.mean) / stats.std)


def standardize(dataset: Dataset) -> tuple[Dataset, StandardizationStats]:
    stats = fit_standardization(dataset.features)
    return apply_standardization(dataset, stats), stats


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    seed: int = 17

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly between 0 and 1")


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray]:
    """Shuffle ``range(n)`` with numpy's PCG64 generator seeded by
    ``spec.seed`` (``np.random.default_rng(seed).permutation(n)``) and cut it.

    The train size is ``floor(n * fraction + 0.5)`` clamped to [1, n - 1].
    """
    if n < 2:
        raise ValueError(f"need at least 2 rows to split, got {n}")
    n_train = int(math.floor(n * spec.train_fraction + 0.5))
    n_train = min(max(n_train, 1), n - 1)
    perm = np.random.default_rng(spec.seed).permutation(n)
    return perm[:n_train], perm[n_train:]


def split(dataset: Dataset, spec: SplitSpec | None = None) -> tuple[Dataset, Dataset]:
    train_idx, test_idx = split_indices(len(dataset), spec or SplitSpec())
    return dataset.subset(train_idx), dataset.subset(test_idx)


def axis_centers(separation: float, d: int = len(DEFAULT_FEATURE_COLUMNS), num_classes: int = NUM_CLASSES) -> np.ndarray:
    """Class centres on scaled coordinate axes, pairwise ``separation`` apart."""
    if d < num_classes:
        raise DimensionError("need d >= number of classes for axis centres")
    centers = np.zeros((num_classes, d))
    centers[np.arange(num_classes), np.arange(num_classes)] = separation / math.sqrt(2.0)
    return centers


def generate_synthetic(
    n: int,
    class_centers: np.ndarray,
    spread: float,
    seed: int,
    feature_names: Iterable[str] | None = None,
) -> Dataset:
    """Isotropic Gaussian blobs, one per centre row.

    Row ``i`` belongs to class ``i % n_classes`` so class sizes differ by at
    most one.
    """
    centers = np.asarray(class_centers, dtype=np.float64)
    if centers.ndim != 2:
        raise DimensionError("class_centers must be a (classes x d) matrix")
    n_classes, d = centers.shape
    if n < n_classes:
        raise ValueError(f"n must be at least {n_classes}")
    if not spread > 0:
        raise ValueError("spread must be positive")
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j}" for j in range(d))
    labels = np.arange(n) % n_classes
    noise = np.random.default_rng(seed).standard_normal((n, d))
    features = centers[labels] + spread * noise
    return Dataset(features, labels, names, np.arange(n))


def class_distribution(dataset: Dataset, num_classes: int = NUM_CLASSES) -> np.ndarray:
    top = int(dataset.labels.max()) + 1 if len(dataset) else 0
    return np.bincount(dataset.labels, minlength=max(num_classes, top))
