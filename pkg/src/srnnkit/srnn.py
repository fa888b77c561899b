"""Synthetic reduced nearest-neighbor (SRNN) model: K labeled prototypes
classifying by nearest centroid, with an EM-style trainer.

Training is the degenerate case of the regularized trainer in
:mod:`srnnkit.defense` (no radius penalty, infinite confidence ranges,
no pruning), so both models share one optimization engine.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset

MODEL_FORMAT_VERSION = 1

_DEFAULT_MU_GRID = tuple(round(0.1 * i, 1) for i in range(11))


@dataclass(frozen=True)
class SrnnModel:
    """K centroids with class labels; prediction is the nearest centroid's label."""

    centroids: np.ndarray
    centroid_labels: np.ndarray
    class_count: int

    def __post_init__(self):
        C = np.ascontiguousarray(np.asarray(self.centroids, dtype=np.float64))
        y = np.ascontiguousarray(np.asarray(self.centroid_labels, dtype=np.int64))
        if C.ndim != 2 or C.shape[0] < 1:
            raise ValueError("centroids must be a non-empty K x D matrix")
        if not np.all(np.isfinite(C)):
            raise ValueError("centroids must be finite")
        if y.shape != (C.shape[0],):
            raise ValueError("centroid_labels length must equal K")
        if self.class_count < 2 or y.min() < 0 or y.max() >= self.class_count:
            raise ValueError("centroid labels out of range")
        C.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "centroids", C)
        object.__setattr__(self, "centroid_labels", y)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": MODEL_FORMAT_VERSION,
                "K": self.k,
                "D": self.dim,
                "M": self.class_count,
                "centroids": [float(v) for v in self.centroids.ravel()],
                "centroid_labels": [int(v) for v in self.centroid_labels],
            }
        )

    @staticmethod
    def from_json(text: str) -> "SrnnModel":
        doc = json.loads(text)
        k, d = int(doc["K"]), int(doc["D"])
        return SrnnModel(
            centroids=np.array(doc["centroids"], dtype=np.float64).reshape(k, d),
            centroid_labels=np.array(doc["centroid_labels"], dtype=np.int64),
            class_count=int(doc["M"]),
        )


@dataclass(frozen=True)
class Assignment:
    """Nearest-centroid owner index and Euclidean distance per sample."""

    owner: np.ndarray
    distance: np.ndarray


@dataclass(frozen=True)
class TrainConfig:
    """SRNN training configuration.

    The optimizer knobs (mu_grid, sgd_epochs, sgd_step) parameterize the
    shared centroid-update engine; defaults match the defense trainer.
    """

    k: int
    max_em_iters: int = 100
    seed: int = 0
    init: str = "k-means++"
    mu_grid: tuple[float, ...] = _DEFAULT_MU_GRID
    sgd_epochs: int = 50
    sgd_step: float = 0.1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("K must be >= 1")
        if self.max_em_iters < 1:
            raise ValueError("max_em_iters must be >= 1")
        if self.init != "k-means++":
            raise ValueError(f"unknown init method {self.init!r}")


def pairwise_distances(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Exact Euclidean distances, chunked so the broadcast intermediate
    stays cache-resident."""
    X = np.asarray(X, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    n, k = X.shape[0], C.shape[0]
    out = np.empty((n, k), dtype=np.float64)
    step = max(1, (1 << 18) // max(1, k * X.shape[1]))
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        diff = X[lo:hi, None, :] - C[None, :, :]
        out[lo:hi] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return out


def assign(ds: Dataset | np.ndarray, model: SrnnModel) -> Assignment:
    """Nearest-centroid assignment; distance ties go to the lowest index."""
    X = ds.features if isinstance(ds, Dataset) else np.asarray(ds, dtype=np.float64)
    if X.shape[1] != model.dim:
        raise ValueError(f"dimension mismatch: data D={X.shape[1]}, model D={model.dim}")
    dist = pairwise_distances(X, model.centroids)
    owner = np.argmin(dist, axis=1)
    return Assignment(owner=owner, distance=dist[np.arange(X.shape[0]), owner])


def mode_label(labels, class_count: int) -> int | None:
    """Most frequent class id, lowest id on ties; None for empty input."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        return None
    return int(np.argmax(np.bincount(labels, minlength=class_count)))


def kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Spread-out seeding: squared-distance-weighted sampling of k rows."""
    n = X.shape[0]
    if k > n:
        raise ValueError(f"K={k} exceeds N={n}")
    centroids = np.empty((k, X.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = X[first]
    d2 = np.sum((X - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        centroids[j] = X[idx]
        d2 = np.minimum(d2, np.sum((X - centroids[j]) ** 2, axis=1))
    return centroids


def train_srnn(train: Dataset, cfg: TrainConfig, initial_centroids: np.ndarray | None = None) -> SrnnModel:
    """Fit an SRNN by alternating assignment and centroid updates.

    Centroid moves are accepted only when they strictly reduce the 0-1
    training loss, so the loss is non-increasing across iterations and the
    loop stops once assignments stabilize. Deterministic given the seed.
    """
    from .defense import DefenseConfig, _run_em

    if cfg.k > train.n:
        raise ValueError(f"K={cfg.k} exceeds N={train.n}")
    dcfg = DefenseConfig(
        k=cfg.k,
        lam=0.0,
        mu_grid=cfg.mu_grid,
        sgd_epochs=cfg.sgd_epochs,
        sgd_step=cfg.sgd_step,
        max_em_iters=cfg.max_em_iters,
        seed=cfg.seed,
        radii_enabled=False,
        prune_enabled=False,
    )
    state, _history = _run_em(train, dcfg, initial_centroids=initial_centroids)
    return SrnnModel(centroids=state.centroids, centroid_labels=state.labels, class_count=train.class_count)


def predict(model: SrnnModel, x: np.ndarray) -> int:
    """Label of the nearest centroid (lowest index on distance ties)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.dim,):
        raise ValueError(f"dimension mismatch: x has shape {x.shape}, model D={model.dim}")
    d = np.sqrt(np.sum((model.centroids - x) ** 2, axis=1))
    return int(model.centroid_labels[np.argmin(d)])


def predict_batch(model: SrnnModel, X: np.ndarray) -> np.ndarray:
    return model.centroid_labels[assign(X, model).owner]


def error_ratio(model: SrnnModel, ds: Dataset) -> float:
    """Fraction of samples whose prediction disagrees with the label."""
    return float(np.mean(predict_batch(model, ds.features) != ds.labels))


def save_model(model: SrnnModel, path) -> None:
    Path(path).write_text(model.to_json(), encoding="utf-8")


def load_model(path) -> SrnnModel:
    return SrnnModel.from_json(Path(path).read_text(encoding="utf-8"))
