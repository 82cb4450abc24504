"""Accuracy, confusion matrices, permutation importance and model comparison."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .dataset import NUM_CLASSES, Dataset
from .errors import DimensionError

FORMAT_VERSION = 1


def _labels_pair(predicted, actual) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predicted, dtype=np.int64).reshape(-1)
    a = np.asarray(actual, dtype=np.int64).reshape(-1)
    if p.shape != a.shape:
        raise DimensionError(f"{p.size} predictions for {a.size} labels")
    return p, a


def accuracy(predicted, actual) -> float:
    p, a = _labels_pair(predicted, actual)
    if p.size == 0:
        raise ValueError("accuracy of an empty prediction set is undefined")
    return float(np.count_nonzero(p == a) / p.size)


def confusion_matrix(predicted, actual, num_classes: int = NUM_CLASSES) -> np.ndarray:
    """Rows are actual classes, columns predicted classes."""
    p, a = _labels_pair(predicted, actual)
    if p.size and (min(p.min(), a.min()) < 0 or max(p.max(), a.max()) >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (a, p), 1)
    return cm


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray
    n_evaluated: int

    @classmethod
    def from_predictions(cls, predicted, actual, num_classes: int = NUM_CLASSES) -> "EvalReport":
        cm = confusion_matrix(predicted, actual, num_classes)
        return cls(accuracy(predicted, actual), cm, int(cm.sum()))

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "n_evaluated": self.n_evaluated,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "EvalReport":
        return cls(float(data["accuracy"]), np.array(data["confusion"], dtype=np.int64), int(data["n_evaluated"]))


@dataclass
class ImportanceReport:
    feature_names: list[str]
    importances: list[float]
    repeats: int
    seed: int
    baseline_accuracy: float

    def to_dict(self) -> dict:
        return {
            "baseline_accuracy": self.baseline_accuracy,
            "repeats": self.repeats,
            "seed": self.seed,
            "importances": dict(zip(self.feature_names, self.importances)),
        }


def permutation_importance(
    predict: Callable[[np.ndarray], np.ndarray],
    test: Dataset,
    repeats: int = 5,
    seed: int = 17,
) -> ImportanceReport:
    """Mean accuracy drop when one feature column is shuffled.

    The shuffle for (feature j, repeat r) is drawn from a generator seeded
    by ``SeedSequence([seed, j, r])``.
    """
    if len(test) == 0:
        raise ValueError("permutation importance needs a non-empty test set")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    X = test.features
    base = accuracy(predict(X), test.labels)
    importances = []
    for j in range(test.n_features):
        drops = []
        for r in range(repeats):
            rng = np.random.default_rng(np.random.SeedSequence([seed, j, r]))
            shuffled = X.copy()
            shuffled[:, j] = X[rng.permutation(len(test)), j]
            drops.append(base - accuracy(predict(shuffled), test.labels))
        importances.append(float(np.mean(drops)))
    return ImportanceReport(list(test.feature_names), importances, repeats, seed, base)


@dataclass
class ModelResult:
    name: str
    test: EvalReport
    train_accuracy: float | None = None
    best_search_accuracy: float | None = None

    def to_dict(self) -> dict:
        return {
            "model": self.name,
            "train_accuracy": self.train_accuracy,
            "test_accuracy": self.test.accuracy,
            "best_accuracy": self.best_search_accuracy,
            "test": self.test.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelResult":
        return cls(data["model"], EvalReport.from_dict(data["test"]), data.get("train_accuracy"), data.get("best_accuracy"))


@dataclass
class ComparisonReport:
    """Side-by-side train / test / best-search accuracies; no winner is picked."""

    models: list[ModelResult] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def table(self) -> list[dict]:
        return [
            {
                "model": m.name,
                "train_accuracy": m.train_accuracy,
                "test_accuracy": m.test.accuracy,
                "best_accuracy": m.best_search_accuracy,
            }
            for m in self.models
        ]

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "table": self.table(),
            "models": [m.to_dict() for m in self.models],
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ComparisonReport":
        return cls([ModelResult.from_dict(m) for m in data["models"]], list(data.get("warnings", [])))


def compare_models(results: Sequence[ModelResult], warnings: Sequence[str] = ()) -> ComparisonReport:
    if not results:
        raise ValueError("need at least one model result")
    names = [r.name for r in results]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ValueError(f"duplicate model identifiers: {dupes}")
    return ComparisonReport(list(results), list(warnings))
