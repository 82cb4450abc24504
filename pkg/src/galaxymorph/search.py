"""Result container and fold helpers shared by the KNN grid search and the
MLP randomized search."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = 1


@dataclass
class SearchResult:
    """Scores for every evaluated candidate plus the selected one.

    ``candidates`` holds one dict per candidate with at least ``params`` and
    ``score``.  ``higher_is_better`` is False when selecting by MSE.
    """

    metric: str
    candidates: list[dict]
    best_index: int
    higher_is_better: bool = True
    skipped: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    fold_runs: list[dict] = field(default_factory=list)

    @property
    def best(self) -> dict:
        return self.candidates[self.best_index]

    @property
    def best_params(self) -> dict:
        return self.best["params"]

    @property
    def best_score(self) -> float:
        return self.best["score"]

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "metric": self.metric,
            "higher_is_better": self.higher_is_better,
            "best_index": self.best_index,
            "best": self.best,
            "candidates": self.candidates,
            "skipped": self.skipped,
            "warnings": self.warnings,
            "fold_runs": self.fold_runs,
        }


def select_best(scores: list[float], higher_is_better: bool = True) -> int:
    """Index of the best score; the earliest candidate wins ties."""
    if not scores:
        raise ValueError("no scores to select from")
    arr = np.asarray(scores, dtype=np.float64)
    return int(np.argmax(arr) if higher_is_better else np.argmin(arr))


def kfold_indices(n: int, folds: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled k-fold partition: each row lands in exactly one validation fold."""
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if n < folds:
        raise ValueError(f"cannot make {folds} folds from {n} rows")
    perm = np.random.default_rng(seed).permutation(n)
    parts = np.array_split(perm, folds)
    out = []
    for i, val in enumerate(parts):
        train = np.concatenate([p for j, p in enumerate(parts) if j != i])
        out.append((train, val))
    return out
