"""Exact k-nearest-neighbour classification under the Euclidean metric.

Neighbour order is total: ascending distance, then ascending training
index.  Vote ties go to the smallest class index.  With that ordering the
first ``k`` entries of a ``k_max`` neighbour list are exactly the ``k``
neighbour list, which is what lets a single precomputed graph serve every
``k`` of a grid search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import NUM_CLASSES, Dataset, SplitSpec, split
from .errors import DimensionError
from .search import SearchResult

FORMAT_VERSION = 1
METRIC = "euclidean"

# Entries per block: large for the BLAS path, cache-sized for elementwise work.
_BLOCK_ENTRIES = 1 << 21
_CACHE_ENTRIES = 1 << 15
# Relative bound on |Gram-form d^2 - exact d^2|, far above the float64 error.
_PRUNE_SLACK = 1e-10


def euclidean_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    diff = a - b
    return math.sqrt(float(np.dot(diff, diff)))


def _accumulate_sq(a: np.ndarray, b: np.ndarray, acc: np.ndarray, tmp: np.ndarray) -> None:
    """acc = sum_r (a[..., r] - b[..., r])**2, summed left to right over r."""
    acc[...] = 0.0
    for r in range(a.shape[-1]):
        np.subtract(a[..., r], b[..., r], out=tmp)
        np.multiply(tmp, tmp, out=tmp)
        acc += tmp


def pairwise_distances(queries: np.ndarray, train: np.ndarray) -> np.ndarray:
    """(m, n) Euclidean distances.

    Squared differences are accumulated one coordinate at a time, left to
    right, so each entry is the same float whatever the block shape, and
    the same float the pruned path in :meth:`KnnModel.neighbor_graph` and
    a plain scalar loop produce.
    """
    m, n = queries.shape[0], train.shape[0]
    out = np.empty((m, n))
    rows = max(1, _CACHE_ENTRIES // max(n, 1))
    tmp = np.empty((rows, n))
    for s in range(0, m, rows):
        e = min(s + rows, m)
        _accumulate_sq(queries[s:e, None, :], train[None, :, :], out[s:e], tmp[: e - s])
    return np.sqrt(out, out=out)


def _smallest_k(dist: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Per row, indices of the k smallest entries ordered by (value, index)."""
    m, n = dist.shape
    if k == n:
        order = np.argsort(dist, axis=1, kind="stable")
        return order, np.take_along_axis(dist, order, axis=1)
    kth = np.partition(dist, k - 1, axis=1)[:, k - 1 : k]
    mask = dist <= kth
    counts = mask.sum(axis=1)
    idx = np.empty((m, k), dtype=np.intp)
    exact = counts == k
    if exact.any():
        # nonzero walks rows in order and columns ascending
        idx[exact] = np.nonzero(mask[exact])[1].reshape(-1, k)
    for row in np.flatnonzero(~exact):
        cand = np.flatnonzero(mask[row])
        idx[row] = cand[np.argsort(dist[row, cand], kind="stable")][:k]
    d = np.take_along_axis(dist, idx, axis=1)
    order = np.argsort(d, axis=1, kind="stable")
    return np.take_along_axis(idx, order, axis=1), np.take_along_axis(d, order, axis=1)


@dataclass(frozen=True, eq=False)
class NeighborGraph:
    """Row ``i`` lists the ``k_max`` nearest training points of query ``i``."""

    indices: np.ndarray
    distances: np.ndarray

    @property
    def k_max(self) -> int:
        return self.indices.shape[1]


def majority_vote(labels: Sequence[int]) -> int:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("cannot vote over an empty label list")
    return int(np.bincount(labels).argmax())


def _vote_rows(neighbor_labels: np.ndarray, num_classes: int) -> np.ndarray:
    if neighbor_labels.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    counts = np.zeros((neighbor_labels.shape[0], num_classes), dtype=np.int64)
    rows = np.repeat(np.arange(neighbor_labels.shape[0]), neighbor_labels.shape[1])
    np.add.at(counts, (rows, neighbor_labels.ravel()), 1)
    return counts.argmax(axis=1)


@dataclass(frozen=True, eq=False)
class KnnModel:
    """Lazy learner: keeps the full (standardized) training set."""

    features: np.ndarray
    labels: np.ndarray
    k: int = 5
    metric: str = METRIC
    num_classes: int = field(default=NUM_CLASSES)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def _check_queries(self, queries) -> np.ndarray:
        Q = np.asarray(queries, dtype=np.float64)
        if Q.ndim == 1:
            Q = Q.reshape(1, -1) if Q.size else Q.reshape(0, self.d)
        if Q.ndim != 2 or Q.shape[1] != self.d:
            raise DimensionError(f"queries must have {self.d} columns, got shape {Q.shape}")
        return Q

    def _check_k(self, k: int, m: int, exclude_self: bool) -> None:
        limit = self.n - 1 if exclude_self else self.n
        if not 1 <= k <= limit:
            raise ValueError(f"k must lie in [1, {limit}], got {k}")
        if exclude_self and m != self.n:
            raise DimensionError("exclude_self needs the training matrix as queries")

    def scan_neighbors(self, queries, k: int, exclude_self: bool = False) -> NeighborGraph:
        """Baseline: exact distance to every training row, then select."""
        Q = self._check_queries(queries)
        self._check_k(k, Q.shape[0], exclude_self)
        m = Q.shape[0]
        indices = np.empty((m, k), dtype=np.intp)
        distances = np.empty((m, k))
        block = max(1, _BLOCK_ENTRIES // max(self.n, 1))
        for start in range(0, m, block):
            stop = min(start + block, m)
            dist = pairwise_distances(Q[start:stop], self.features)
            if exclude_self:
                dist[np.arange(stop - start), np.arange(start, stop)] = np.inf
            indices[start:stop], distances[start:stop] = _smallest_k(dist, k)
        return NeighborGraph(indices, distances)

    def neighbor_graph(self, queries, k_max: int, exclude_self: bool = False) -> NeighborGraph:
        """Same result as :meth:`scan_neighbors`, bit for bit, but faster.

        Squared distances are first estimated through the Gram form
        ``|q|^2 + |x|^2 - 2 q.x`` (one matrix product).  Any true top-k
        point has an estimate within twice the estimation error of the
        k-th smallest estimate, so every training row under that bound is
        kept and its distance recomputed exactly, in the scan's operation
        order, before the final (distance, index) selection.

        ``exclude_self`` means the queries are the training rows themselves
        (row i is training point i) and a point may not be its own neighbour.
        """
        Q = self._check_queries(queries)
        self._check_k(k_max, Q.shape[0], exclude_self)
        X = self.features
        m = Q.shape[0]
        sq_x = np.einsum("ij,ij->i", X, X)
        sq_x_max = float(sq_x.max()) if self.n else 0.0
        indices = np.empty((m, k_max), dtype=np.intp)
        distances = np.empty((m, k_max))
        block = max(1, _BLOCK_ENTRIES // max(self.n, 1))
        for start in range(0, m, block):
            stop = min(start + block, m)
            Qb = Q[start:stop]
            sq_q = np.einsum("ij,ij->i", Qb, Qb)
            approx = sq_q[:, None] + sq_x[None, :] - 2.0 * (Qb @ X.T)
            if exclude_self:
                approx[np.arange(stop - start), np.arange(start, stop)] = np.inf
            kth = np.partition(approx, k_max - 1, axis=1)[:, k_max - 1]
            bound = kth + 2.0 * _PRUNE_SLACK * (sq_q + sq_x_max)
            rows, cols = np.nonzero(approx <= bound[:, None])
            acc = np.empty(rows.size)
            _accumulate_sq(Qb[rows], X[cols], acc, np.empty(rows.size))
            dist = np.sqrt(acc, out=acc)
            order = np.lexsort((cols, dist, rows))
            counts = np.bincount(rows, minlength=stop - start)
            first = np.concatenate(([0], np.cumsum(counts)[:-1]))
            pick = order[first[:, None] + np.arange(k_max)]
            indices[start:stop] = cols[pick]
            distances[start:stop] = dist[pick]
        return NeighborGraph(indices, distances)

    def kneighbors(self, query, k: int | None = None) -> list[tuple[int, float]]:
        """(index, distance) pairs of the k nearest training rows, ascending."""
        k = self.k if k is None else k
        graph = self.scan_neighbors(np.asarray(query, dtype=np.float64).reshape(1, -1), k)
        return [(int(i), float(d)) for i, d in zip(graph.indices[0], graph.distances[0])]

    def predict(self, queries) -> np.ndarray:
        Q = self._check_queries(queries)
        if Q.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        return self.predict_from_graph(self.neighbor_graph(Q, self.k), self.k)

    def predict_scan(self, queries) -> np.ndarray:
        """Reference prediction through :meth:`scan_neighbors`."""
        Q = self._check_queries(queries)
        if Q.shape[0] == 0:
            return np.zeros(0, dtype=np.int64)
        return self.predict_from_graph(self.scan_neighbors(Q, self.k), self.k)

    def predict_from_graph(self, graph: NeighborGraph, k: int) -> np.ndarray:
        if not 1 <= k <= graph.k_max:
            raise ValueError(f"graph holds {graph.k_max} neighbours, asked for {k}")
        return _vote_rows(self.labels[graph.indices[:, :k]], self.num_classes)

    def summary(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "model": "knn",
            "n": self.n,
            "d": self.d,
            "k": self.k,
            "metric": self.metric,
        }


def fit(train: Dataset, k: int = 5) -> KnnModel:
    n = len(train)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    num_classes = max(NUM_CLASSES, int(train.labels.max()) + 1)
    return KnnModel(train.features, train.labels, k, METRIC, num_classes)


@dataclass(frozen=True)
class GridSearchSpec:
    k_values: tuple[int, ...] = tuple(range(1, 31))
    holdout_fraction: float = 0.25
    seed: int = 17
    validation: Dataset | None = None

    def __post_init__(self):
        object.__setattr__(self, "k_values", tuple(int(k) for k in self.k_values))
        if not self.k_values:
            raise ValueError("k_values must be non-empty")
        if min(self.k_values) < 1:
            raise ValueError("every k must be >= 1")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must lie strictly between 0 and 1")


def grid_search_k(train: Dataset, spec: GridSearchSpec | None = None) -> SearchResult:
    """Validation accuracy for each k; best is the arg-max, smaller k on ties.

    Without an explicit validation set, ``train`` is split by
    ``spec.seed`` into a fit part and a ``holdout_fraction`` validation part.
    Values of k larger than the fit part are skipped and reported.
    """
    spec = spec or GridSearchSpec()
    if spec.validation is not None:
        fit_part, val_part = train, spec.validation
    else:
        fit_part, val_part = split(train, SplitSpec(1.0 - spec.holdout_fraction, spec.seed))
    if len(val_part) == 0:
        raise ValueError("validation partition is empty")

    usable = [k for k in spec.k_values if k <= len(fit_part)]
    skipped = [
        {"params": {"k": k}, "reason": f"k exceeds {len(fit_part)} fitting rows"}
        for k in spec.k_values
        if k > len(fit_part)
    ]
    if not usable:
        raise ValueError("every k in the grid exceeds the fitting set size")

    model = fit(fit_part, max(usable))
    graph = model.neighbor_graph(val_part.features, max(usable))
    candidates = []
    for k in usable:
        pred = model.predict_from_graph(graph, k)
        candidates.append({"params": {"k": k}, "score": float(np.mean(pred == val_part.labels))})

    best_score = max(c["score"] for c in candidates)
    best_k = min(c["params"]["k"] for c in candidates if c["score"] == best_score)
    best_index = next(i for i, c in enumerate(candidates) if c["params"]["k"] == best_k)
    warnings = [f"skipped k={s['params']['k']}: {s['reason']}" for s in skipped]
    return SearchResult("accuracy", candidates, best_index, True, skipped, warnings)
