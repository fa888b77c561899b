"""Comparison classifiers: unsupervised k-means with labels read off a
chosen set, and a plain k-nearest-neighbor voter (with an optional random
stored-subset variant)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .srnn import SrnnModel, assign, kmeans_plusplus, mode_label, pairwise_distances


@dataclass(frozen=True)
class KmeansClassifier:
    """Feature-only k-means whose clusters borrow labels from a label set."""

    model: SrnnModel
    label_source: str  # "trainset" or "validationset"

    @property
    def centroids(self) -> np.ndarray:
        return self.model.centroids

    @property
    def centroid_labels(self) -> np.ndarray:
        return self.model.centroid_labels


def _lloyd(X: np.ndarray, k: int, rng: np.random.Generator, max_iters: int = 300) -> np.ndarray:
    C = kmeans_plusplus(X, k, rng)
    owner = None
    for _ in range(max_iters):
        dist = pairwise_distances(X, C)
        new_owner = np.argmin(dist, axis=1)
        owned = dist[np.arange(X.shape[0]), new_owner]
        for j in range(k):
            members = new_owner == j
            if members.any():
                C[j] = X[members].mean(axis=0)
            else:
                C[j] = X[int(np.argmax(owned))]  # farthest-point repair
        if owner is not None and np.array_equal(owner, new_owner):
            break
        owner = new_owner
    return C


def train_kmeans_classifier(train: Dataset, label_set: Dataset, k: int, seed: int = 0,
                            label_source: str = "trainset") -> KmeansClassifier:
    """Lloyd iterations on features only; each cluster takes the majority
    label of the label_set samples it attracts (class 0 when it gets none)."""
    if k > train.n:
        raise ValueError(f"K={k} exceeds N={train.n}")
    rng = np.random.default_rng(seed)
    C = _lloyd(train.features, k, rng)
    dist = pairwise_distances(label_set.features, C)
    owner = np.argmin(dist, axis=1)
    labels = np.zeros(k, dtype=np.int64)
    for j in range(k):
        members = owner == j
        lab = mode_label(label_set.labels[members], label_set.class_count) if members.any() else None
        labels[j] = 0 if lab is None else lab
    model = SrnnModel(centroids=C, centroid_labels=labels, class_count=train.class_count)
    return KmeansClassifier(model=model, label_source=label_source)


def kmeans_predict_batch(clf: KmeansClassifier, X: np.ndarray) -> np.ndarray:
    return clf.model.centroid_labels[assign(X, clf.model).owner]


@dataclass(frozen=True)
class KnnClassifier:
    """Stored-sample voter; ties go to the lower index (distance) and the
    lower class id (votes)."""

    points: np.ndarray
    labels: np.ndarray
    class_count: int
    k: int

    def __post_init__(self):
        if not (1 <= self.k <= self.points.shape[0]):
            raise ValueError("k must be in [1, N]")


def fit_knn(train: Dataset, k: int, subset_size: int | None = None, seed: int = 0) -> KnnClassifier:
    """Store the training samples (or a seeded random subset of them)."""
    if subset_size is not None:
        rng = np.random.default_rng(seed)
        idx = rng.choice(train.n, size=min(subset_size, train.n), replace=False)
        train = train.subset(np.sort(idx))
    return KnnClassifier(points=train.features, labels=train.labels,
                         class_count=train.class_count, k=k)


def knn_predict(model: KnnClassifier, x: np.ndarray) -> int:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.points.shape[1],):
        raise ValueError("dimension mismatch")
    d = np.sqrt(np.sum((model.points - x) ** 2, axis=1))
    nbrs = np.argsort(d, kind="stable")[: model.k]
    votes = np.bincount(model.labels[nbrs], minlength=model.class_count)
    return int(np.argmax(votes))


def knn_predict_batch(model: KnnClassifier, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    step = max(1, (1 << 22) // max(1, model.points.shape[0]))
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        d = pairwise_distances(X[lo:hi], model.points)
        nbrs = np.argsort(d, axis=1, kind="stable")[:, : model.k]
        for row in range(hi - lo):
            votes = np.bincount(model.labels[nbrs[row]], minlength=model.class_count)
            out[lo + row] = np.argmax(votes)
    return out
