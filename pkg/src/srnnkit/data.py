"""Dataset container, CSV ingestion, deterministic splitting, standardization,
and a seeded Gaussian-mixture generator with ground-truth annotations.

All containers are immutable after construction (arrays are marked
read-only), so they can be shared freely across threads. Randomness always
flows through ``numpy.random.default_rng`` (PCG64) seeded by the caller.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Raised for unreadable, malformed, or inconsistent input data."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Truth:
    """Optional ground-truth sidecar: generating component per sample and/or
    the labels a sample carried before poisoning."""

    cluster_id: np.ndarray | None = None
    original_labels: np.ndarray | None = None

    def __post_init__(self):
        if self.cluster_id is not None:
            object.__setattr__(self, "cluster_id", _frozen(np.asarray(self.cluster_id, dtype=np.int64)))
        if self.original_labels is not None:
            object.__setattr__(self, "original_labels", _frozen(np.asarray(self.original_labels, dtype=np.int64)))

    def subset(self, idx: np.ndarray) -> "Truth":
        return Truth(
            cluster_id=None if self.cluster_id is None else self.cluster_id[idx],
            original_labels=None if self.original_labels is None else self.original_labels[idx],
        )


@dataclass(frozen=True)
class Dataset:
    """N samples with D real features and dense integer class labels.

    labels live in {0..class_count-1}; `label_names` maps dense ids back to
    the original label strings when the data came from a file.
    """

    features: np.ndarray
    labels: np.ndarray
    class_count: int
    truth: Truth | None = None
    label_names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if X.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {X.shape}")
        n, d = X.shape
        if n < 1 or d < 1:
            raise DataError("need at least one sample and one feature")
        if y.shape != (n,):
            raise DataError(f"labels shape {y.shape} does not match N={n}")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain non-finite values")
        if self.class_count < 2:
            raise DataError("fewer than 2 classes")
        if y.min() < 0 or y.max() >= self.class_count:
            raise DataError("labels out of range for class_count")
        if self.truth is not None:
            for name in ("cluster_id", "original_labels"):
                arr = getattr(self.truth, name)
                if arr is not None and arr.shape != (n,):
                    raise DataError(f"truth.{name} length does not match N={n}")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "labels", _frozen(y))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            features=self.features[idx],
            labels=self.labels[idx],
            class_count=self.class_count,
            truth=None if self.truth is None else self.truth.subset(idx),
            label_names=self.label_names,
        )

    def with_labels(self, labels: np.ndarray, truth: Truth | None = None) -> "Dataset":
        """Same features with replaced labels (used when applying flips)."""
        return Dataset(
            features=self.features,
            labels=labels,
            class_count=self.class_count,
            truth=self.truth if truth is None else truth,
            label_names=self.label_names,
        )


@dataclass(frozen=True)
class SplitSpec:
    """Three-way split fractions plus the seed driving the permutation."""

    train_fraction: float
    val_fraction: float
    test_fraction: float
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_fraction, self.val_fraction, self.test_fraction)
        for f in fracs:
            if not (0.0 < f < 1.0):
                raise DataError(f"split fraction {f} outside (0, 1)")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise DataError(f"split fractions sum to {sum(fracs)}, expected 1")


@dataclass(frozen=True)
class Component:
    """One isotropic Gaussian component of a synthetic mixture."""

    mean: tuple[float, ...]
    std: float
    count: int
    label: int


@dataclass(frozen=True)
class MixtureSpec:
    components: tuple[Component, ...]
    seed: int = 0

    def __post_init__(self):
        if not self.components:
            raise DataError("mixture needs at least one component")
        dims = {len(c.mean) for c in self.components}
        if len(dims) != 1:
            raise DataError("components disagree on dimensionality")
        for c in self.components:
            if c.std <= 0:
                raise DataError("component std must be positive")
            if c.count < 1:
                raise DataError("component count must be >= 1")
        labels = sorted({c.label for c in self.components})
        if labels != list(range(len(labels))):
            raise DataError("component labels must form a contiguous id range starting at 0")

    @property
    def class_count(self) -> int:
        return max(c.label for c in self.components) + 1

    def to_json(self) -> str:
        return json.dumps(
            {
                "seed": self.seed,
                "components": [
                    {"mean": list(c.mean), "std": c.std, "count": c.count, "label": c.label}
                    for c in self.components
                ],
            },
            indent=2,
        )

    @staticmethod
    def from_json(text: str) -> "MixtureSpec":
        try:
            doc = json.loads(text)
            comps = tuple(
                Component(mean=tuple(float(v) for v in c["mean"]), std=float(c["std"]),
                          count=int(c["count"]), label=int(c["label"]))
                for c in doc["components"]
            )
            return MixtureSpec(components=comps, seed=int(doc.get("seed", 0)))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad mixture spec: {exc}") from exc


def load_csv(path, label_column, has_header: bool = True) -> Dataset:
    """Load a comma-separated dataset, remapping labels to dense ids.

    label_column selects the label field by header name (requires a header)
    or 0-based position. Labels get ids in order of first appearance; the
    original strings are kept in Dataset.label_names. Non-numeric feature
    cells raise DataError naming the offending file line and column.
    """
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    rows = [r for r in csv.reader(raw.splitlines()) if r]
    if not rows:
        raise DataError(f"{path}: empty file")

    header = None
    if has_header:
        header, rows = rows[0], rows[1:]
        if not rows:
            raise DataError(f"{path}: no data rows")
    if isinstance(label_column, str):
        if header is None:
            raise DataError("label column by name requires a header")
        try:
            label_idx = header.index(label_column)
        except ValueError:
            raise DataError(f"label column {label_column!r} not in header") from None
    else:
        label_idx = int(label_column)

    width = len(rows[0])
    if not (0 <= label_idx < width):
        raise DataError(f"label column index {label_idx} out of range for {width} columns")

    name_to_id: dict[str, int] = {}
    feats, labels = [], []
    for r, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: line {r + 2 if has_header else r + 1} has {len(row)} fields, expected {width}")
        vals = []
        for c, cell in enumerate(row):
            if c == label_idx:
                continue
            try:
                vals.append(float(cell))
            except ValueError:
                line = r + 2 if has_header else r + 1
                col = header[c] if header else str(c)
                raise DataError(f"{path}: non-numeric feature cell {cell!r} at line {line}, column {col}") from None
        key = row[label_idx]
        if key not in name_to_id:
            name_to_id[key] = len(name_to_id)
        labels.append(name_to_id[key])
        feats.append(vals)

    if len(name_to_id) < 2:
        raise DataError("fewer than 2 classes in label column")
    return Dataset(
        features=np.array(feats, dtype=np.float64),
        labels=np.array(labels, dtype=np.int64),
        class_count=len(name_to_id),
        label_names=tuple(name_to_id),
    )


def save_csv(ds: Dataset, path, truth_path=None) -> None:
    """Write the dataset back in the same dialect (header x0..xD-1, label),
    plus an optional truth sidecar (index, cluster_id, original_label)."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(ds.dim)] + ["label"])
        names = ds.label_names
        for x, y in zip(ds.features, ds.labels):
            lab = names[y] if names is not None else int(y)
            w.writerow([repr(float(v)) for v in x] + [lab])
    if truth_path is not None:
        t = ds.truth
        with Path(truth_path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "cluster_id", "original_label"])
            for i in range(ds.n):
                cid = int(t.cluster_id[i]) if t is not None and t.cluster_id is not None else ""
                orig = int(t.original_labels[i]) if t is not None and t.original_labels is not None else ""
                w.writerow([i, cid, orig])


def load_truth(path) -> Truth:
    rows = list(csv.reader(Path(path).read_text(encoding="utf-8").splitlines()))
    body = rows[1:]
    cid = [r[1] for r in body]
    orig = [r[2] for r in body]
    return Truth(
        cluster_id=None if any(v == "" for v in cid) else np.array([int(v) for v in cid]),
        original_labels=None if any(v == "" for v in orig) else np.array([int(v) for v in orig]),
    )


def _largest_remainder_sizes(n: int, fracs: tuple[float, ...]) -> list[int]:
    quotas = [f * n for f in fracs]
    base = [int(np.floor(q)) for q in quotas]
    leftover = n - sum(base)
    remainders = sorted(range(len(fracs)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in remainders[:leftover]:
        base[i] += 1
    return base


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Deterministic three-way split.

    Sizes follow largest-remainder rounding of the fractions; the sample
    permutation is PCG64 seeded with spec.seed, so the partition is a pure
    function of the seed.
    """
    sizes = _largest_remainder_sizes(ds.n, (spec.train_fraction, spec.val_fraction, spec.test_fraction))
    if min(sizes) < 1:
        raise DataError(f"split of N={ds.n} with fractions given leaves an empty part (sizes {sizes})")
    perm = np.random.default_rng(spec.seed).permutation(ds.n)
    a, b = sizes[0], sizes[0] + sizes[1]
    return ds.subset(perm[:a]), ds.subset(perm[a:b]), ds.subset(perm[b:])


@dataclass(frozen=True)
class Scaler:
    """Per-feature affine transform fitted on a training set."""

    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _frozen(np.asarray(self.mean, dtype=np.float64)))
        object.__setattr__(self, "scale", _frozen(np.asarray(self.scale, dtype=np.float64)))

    def transform_features(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale

    def transform(self, ds: Dataset) -> Dataset:
        return Dataset(
            features=self.transform_features(ds.features),
            labels=ds.labels,
            class_count=ds.class_count,
            truth=ds.truth,
            label_names=ds.label_names,
        )


def standardize(train: Dataset) -> tuple[Scaler, Dataset]:
    """Fit per-column mean/std on the training set and transform it.

    Zero-variance columns are centered but left unscaled (scale 1), which
    avoids division by zero without dropping the feature.
    """
    mean = train.features.mean(axis=0)
    sd = train.features.std(axis=0)
    scale = np.where(sd > 0.0, sd, 1.0)
    scaler = Scaler(mean=mean, scale=scale)
    return scaler, scaler.transform(train)


def gen_mixture(spec: MixtureSpec) -> Dataset:
    """Draw an isotropic Gaussian mixture with per-sample ground truth.

    Samples are drawn component by component in spec order from a single
    PCG64 stream, so identical specs give bit-identical datasets. Every
    sample records the generating component in truth.cluster_id.
    """
    rng = np.random.default_rng(spec.seed)
    dim = len(spec.components[0].mean)
    feats, labels, cluster = [], [], []
    for ci, comp in enumerate(spec.components):
        x = rng.normal(loc=np.asarray(comp.mean, dtype=np.float64), scale=comp.std, size=(comp.count, dim))
        feats.append(x)
        labels.append(np.full(comp.count, comp.label, dtype=np.int64))
        cluster.append(np.full(comp.count, ci, dtype=np.int64))
    return Dataset(
        features=np.vstack(feats),
        labels=np.concatenate(labels),
        class_count=spec.class_count,
        truth=Truth(cluster_id=np.concatenate(cluster)),
    )
