"""Regularized SRNN (RSRNN): prototype classifier with per-centroid
confidence radii that detects and excludes poisoned samples during training.

The trainer alternates three phases:

* assignment: samples go to their nearest centroid, each centroid takes the
  majority label of its in-range members;
* update: each centroid is moved by minimizing a clamped pull / hinge push
  surrogate along a slack path, and a candidate replaces the incumbent only
  when its exact objective slice (count loss coupled with the re-solved
  radius term) strictly improves; the radius itself is then re-solved
  exactly over the sorted member distances;
* pruning: impure centroids are cut at a grid of impurity thresholds and the
  cut-off is chosen on a clean validation set, followed by a retrain on the
  cleaned data (fresh restart vs. continuation, lower validation error wins).

Samples farther than their centroid's radius are flagged Malicious, counted
as loss during training, and reported by the detector. The tracked objective
(classification-or-malicious count plus the radius penalty) never increases
across iterations; every improvement is verified on exact counts before it
is applied, which is what makes the trainer a finite, monotone EM scheme.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .srnn import SrnnModel, assign, kmeans_plusplus, mode_label, pairwise_distances

MALICIOUS = -1

MODEL_FORMAT_VERSION = 1

_DEFAULT_MU_GRID = tuple(round(0.1 * i, 1) for i in range(11))
_DEFAULT_PRUNE_GRID = tuple(round(0.20 + 0.05 * i, 2) for i in range(15))

_SINGULARITY_EPS = 1e-12


@dataclass(frozen=True)
class RsrnnModel:
    """SRNN plus per-centroid confidence radii and the penalty coefficients.

    radii may be +inf (the degenerate no-radius model); alpha is recorded for
    provenance, the pruning decision itself runs on the impurity cut-off grid.
    """

    base: SrnnModel
    radii: np.ndarray
    lam: float = 0.01
    alpha: float = 0.0
    chosen_cutoff: float | None = None

    def __post_init__(self):
        r = np.ascontiguousarray(np.asarray(self.radii, dtype=np.float64))
        if r.shape != (self.base.k,):
            raise ValueError("radii length must equal K")
        if np.any(np.isnan(r)) or np.any(r < 0):
            raise ValueError("radii must be >= 0 and not NaN")
        if self.lam < 0 or self.alpha < 0:
            raise ValueError("penalty coefficients must be >= 0")
        r.setflags(write=False)
        object.__setattr__(self, "radii", r)

    def to_json(self) -> str:
        doc = json.loads(self.base.to_json())
        doc["radii"] = [float(v) for v in self.radii]
        doc["lambda"] = float(self.lam)
        doc["chosen_cutoff"] = self.chosen_cutoff
        return json.dumps(doc)

    @staticmethod
    def from_json(text: str) -> "RsrnnModel":
        doc = json.loads(text)
        base = SrnnModel.from_json(text)
        cutoff = doc.get("chosen_cutoff")
        return RsrnnModel(
            base=base,
            radii=np.array(doc["radii"], dtype=np.float64),
            lam=float(doc["lambda"]),
            chosen_cutoff=None if cutoff is None else float(cutoff),
        )


@dataclass(frozen=True)
class ScenarioSets:
    """Per-centroid sample split for the update step.

    pull members are drawn toward the centroid, push members are kept beyond
    a fraction of their rival distance (distance to the closest other
    centroid). Push members whose rival distance is zero carry no signal and
    are dropped at construction.
    """

    s_star: np.ndarray
    s_c_star: np.ndarray
    pull_points: np.ndarray
    push_points: np.ndarray
    pull_distance: np.ndarray
    push_distance: np.ndarray
    rival_distance: np.ndarray

    def __post_init__(self):
        if np.intersect1d(self.s_star, self.s_c_star).size:
            raise ValueError("pull and push sets must be disjoint")
        if np.any(self.rival_distance <= 0):
            raise ValueError("push members must have positive rival distance")


@dataclass(frozen=True)
class DefenseConfig:
    """Knobs of the regularized trainer; defaults are tuned for standardized
    features."""

    k: int
    lam: float = 0.01
    alpha: float = 0.0
    mu_grid: tuple[float, ...] = _DEFAULT_MU_GRID
    sgd_epochs: int = 50
    sgd_step: float = 0.1
    max_em_iters: int = 100
    prune_grid: tuple[float, ...] = _DEFAULT_PRUNE_GRID
    seed: int = 0
    radii_enabled: bool = True
    prune_enabled: bool = True

    def __post_init__(self):
        if self.k < 1 or self.max_em_iters < 1 or self.sgd_epochs < 1:
            raise ValueError("counts must be >= 1")
        if self.lam < 0 or self.alpha < 0:
            raise ValueError("penalties must be >= 0")
        for grid, name in ((self.mu_grid, "mu_grid"), (self.prune_grid, "prune_grid")):
            if any(not (0.0 <= v <= 1.0) for v in grid):
                raise ValueError(f"{name} values must be in [0, 1]")
            if list(grid) != sorted(grid):
                raise ValueError(f"{name} must be ascending")
        if not self.mu_grid:
            raise ValueError("mu_grid must be non-empty")


@dataclass(frozen=True)
class DetectionResult:
    """Indices flagged by the defense, split by the flagging mechanism."""

    pruned_samples: np.ndarray
    out_of_range_samples: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pruned_samples", np.unique(np.asarray(self.pruned_samples, dtype=np.int64)))
        object.__setattr__(self, "out_of_range_samples", np.unique(np.asarray(self.out_of_range_samples, dtype=np.int64)))

    @property
    def detected(self) -> np.ndarray:
        return np.union1d(self.pruned_samples, self.out_of_range_samples)


@dataclass(frozen=True)
class AssignmentStep:
    """Result of one assignment pass: ownership, distances, refreshed labels,
    and the (possibly re-seeded) centroid positions."""

    owner: np.ndarray
    distance: np.ndarray
    centroid_labels: np.ndarray
    centroids: np.ndarray


@dataclass(frozen=True)
class PruneResult:
    model: RsrnnModel
    detection: DetectionResult
    cleaned_train: Dataset
    chosen_cutoff: float | None
    val_errors: tuple[tuple[float | None, int], ...]


@dataclass(frozen=True)
class TrainResult:
    model: RsrnnModel
    detection: DetectionResult
    cleaned_train: Dataset
    objective_history: tuple[tuple[float, ...], ...]
    retrain_mode: str | None
    val_error: int | None


def gini(labels) -> float:
    """Impurity 1 - sum(p_c^2) of a non-empty label multiset."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("gini of an empty cluster is undefined")
    counts = np.bincount(labels)
    p = counts / labels.size
    return float(1.0 - np.sum(p * p))


def optimal_radius(distances, wrong, lam: float) -> tuple[float, float]:
    """Exact confidence-radius solve for one cluster.

    objective(r) = (# wrong members with d <= r) + (# members with d > r)
    + lam * r. The objective is piecewise constant with jumps at member
    distances, so {0} plus the sorted unique distances are the only
    candidates; the smallest candidate attaining the minimum is returned.
    Runs in O(n log n) via one sort and cumulative counts.
    """
    d = np.asarray(distances, dtype=np.float64)
    w = np.asarray(wrong, dtype=bool)
    if d.shape != w.shape:
        raise ValueError("distances and wrong flags must have equal length")
    n = d.size
    if n == 0:
        return 0.0, 0.0
    if np.any(d < 0):
        raise ValueError("distances must be >= 0")
    order = np.argsort(d, kind="stable")
    ds_, ws_ = d[order], w[order]
    cum_wrong = np.cumsum(ws_)
    # last index of each run of equal distances
    last = np.nonzero(np.append(ds_[1:] != ds_[:-1], True))[0]
    cand = ds_[last]
    wrong_in = cum_wrong[last].astype(np.float64)
    out = (n - (last + 1)).astype(np.float64)
    obj = wrong_in + out + lam * cand
    if cand[0] > 0.0:
        cand = np.concatenate(([0.0], cand))
        obj = np.concatenate(([float(n)], obj))
    best = int(np.argmin(obj))
    return float(cand[best]), float(obj[best])


def _inrange_mode_labels(y, owner, owned_dist, radii, k, class_count, old_labels=None):
    """Majority label of in-range members per centroid; falls back to the
    whole cluster when nothing is in range, and to the previous label (or
    class 0) when the cluster is empty."""
    labels = np.empty(k, dtype=np.int64)
    for j in range(k):
        members = owner == j
        if not members.any():
            labels[j] = old_labels[j] if old_labels is not None else 0
            continue
        in_range = members & (owned_dist <= radii[j])
        lab = mode_label(y[in_range], class_count) if in_range.any() else None
        if lab is None:
            lab = mode_label(y[members], class_count)
        labels[j] = lab
    return labels


def _objective(y, labels, radii, owner, owned_dist, lam, radii_enabled) -> float:
    wrong = labels[owner] != y
    mal = owned_dist > radii[owner]
    loss = float(np.sum(wrong | mal))
    if radii_enabled and lam > 0:
        loss += lam * float(np.sum(radii))
    return loss


def assignment_step(train: Dataset, model: RsrnnModel) -> AssignmentStep:
    """Nearest-centroid assignment plus the label refresh.

    A centroid that owns no samples is re-seeded to the sample farthest from
    its current owner (standard repair, keeps K constant); labels are then
    the in-range majority with whole-cluster fallback.
    """
    X, y = train.features, train.labels
    k = model.base.k
    C = model.base.centroids.copy()
    dist = pairwise_distances(X, C)
    owner = np.argmin(dist, axis=1)
    owned = dist[np.arange(X.shape[0]), owner]
    for _ in range(k):
        counts = np.bincount(owner, minlength=k)
        empty = np.nonzero(counts == 0)[0]
        if empty.size == 0:
            break
        j = int(empty[0])
        i_star = int(np.argmax(owned))
        C[j] = X[i_star]
        dist[:, j] = np.sqrt(np.sum((X - C[j]) ** 2, axis=1))
        owner = np.argmin(dist, axis=1)
        owned = dist[np.arange(X.shape[0]), owner]
    labels = _inrange_mode_labels(y, owner, owned, model.radii, k, train.class_count,
                                  old_labels=model.base.centroid_labels)
    return AssignmentStep(owner=owner, distance=owned, centroid_labels=labels, centroids=C)


def classify_scenarios(train: Dataset, model: RsrnnModel, j: int, clusters: np.ndarray) -> ScenarioSets:
    """Split all training samples into pull / push / ignored for centroid j.

    Three binary factors decide the bucket: the sample is misclassified by
    centroid j's label, misclassified by its rival (closest other centroid),
    and out of the rival's confidence range. Samples correct under j that
    would be wrong or flagged elsewhere are pulled; samples wrong under j but
    safe elsewhere are pushed; everything else carries no gradient signal.
    """
    if model.base.k < 2:
        raise ValueError("scenario split needs at least two centroids")
    X, y = train.features, train.labels
    owner = np.asarray(clusters, dtype=np.int64)
    C = model.base.centroids
    d_j = np.sqrt(np.sum((X - C[j]) ** 2, axis=1))

    dist = pairwise_distances(X, C)
    masked = dist.copy()
    masked[:, j] = np.inf
    rival_idx = np.argmin(masked, axis=1)
    # for samples not owned by j the overall owner is also the best rival
    not_j = owner != j
    rival_idx[not_j] = owner[not_j]
    rival_dist = masked[np.arange(X.shape[0]), rival_idx]

    wrong_here = model.base.centroid_labels[j] != y
    wrong_rival = model.base.centroid_labels[rival_idx] != y
    rival_malicious = rival_dist > model.radii[rival_idx]

    pull = (~wrong_here) & (wrong_rival | rival_malicious)
    push = wrong_here & (~wrong_rival) & (~rival_malicious)
    push &= rival_dist > 0.0

    pull_idx = np.nonzero(pull)[0]
    push_idx = np.nonzero(push)[0]
    return ScenarioSets(
        s_star=pull_idx,
        s_c_star=push_idx,
        pull_points=X[pull_idx],
        push_points=X[push_idx],
        pull_distance=d_j[pull_idx],
        push_distance=d_j[push_idx],
        rival_distance=rival_dist[push_idx],
    )


def surrogate_value_and_gradient(c_j: np.ndarray, sets: ScenarioSets, mu: float, r_j: float) -> tuple[float, np.ndarray]:
    """Surrogate loss and its exact subgradient at centroid position c_j.

    Pull members contribute min(d, r_j): attraction while inside the radius,
    a flat zero-gradient plateau outside (suspicious members stop steering
    the centroid). Push members contribute relu(mu * rival - d). Members
    closer than 1e-12 to c_j are excluded from the gradient to avoid the
    r = 0 singularity.
    """
    c_j = np.asarray(c_j, dtype=np.float64)
    value = 0.0
    grad = np.zeros_like(c_j)
    if sets.pull_points.shape[0]:
        diff = c_j - sets.pull_points
        d = np.sqrt(np.sum(diff * diff, axis=1))
        value += float(np.sum(np.minimum(d, r_j)))
        active = (d < r_j) & (d >= _SINGULARITY_EPS)
        if active.any():
            grad += np.sum(diff[active] / d[active, None], axis=0)
    if sets.push_points.shape[0]:
        diff = c_j - sets.push_points
        d = np.sqrt(np.sum(diff * diff, axis=1))
        slack = mu * sets.rival_distance - d
        value += float(np.sum(np.maximum(slack, 0.0)))
        active = (slack > 0) & (d >= _SINGULARITY_EPS)
        if active.any():
            grad -= np.sum(diff[active] / d[active, None], axis=0)
    return value, grad


def _slice_score_for_centroid(X, y, j, yj, r_j, lam, radii_enabled,
                              rival_idx, rival_dist, loss_not_member):
    """Exact per-centroid slice of the tracked objective as a function of
    centroid j's position.

    Membership is nearest-centroid with the lowest-index tie rule; a
    non-member contributes its precomputed rival-side loss. With radii
    enabled the member side is the optimal-radius objective at the candidate
    position (wrong-in-range plus out-of-range counts plus the radius
    penalty), so comparing scores compares the objective after the radius
    re-solve that follows every accepted move. Without radii it is the plain
    misclassification count.
    """

    def at(c):
        d = np.sqrt(np.sum((X - c) ** 2, axis=1))
        member = (d < rival_dist) | ((d == rival_dist) & (j < rival_idx))
        nonmember_loss = float(np.sum(loss_not_member[~member]))
        if radii_enabled:
            _, member_obj = optimal_radius(d[member], y[member] != yj, lam)
        else:
            member_loss = np.where(d <= r_j, y != yj, True)
            member_obj = float(np.sum(member_loss[member]))
        # secondary key: how tightly the candidate represents its members;
        # breaks exact ties so centroids still settle onto their modality
        return (nonmember_loss + member_obj, float(np.sum(d[member])))

    return at


def update_centroid(train: Dataset, model: RsrnnModel, j: int, clusters: np.ndarray,
                    cfg: DefenseConfig) -> tuple[np.ndarray, bool]:
    """Propose a new position for centroid j and accept it only when its
    exact objective slice strictly improves.

    The surrogate is descended for each slack value mu in ascending order,
    warm-starting each stage from the previous one (a continuation path from
    pure attraction to the full push margin). Every stage's endpoint is then
    scored exactly: the misclassified-or-out-of-range count of the samples
    the candidate position would own (with the radius re-solved) plus the
    count loss the remaining samples incur at their other centroids. The
    incumbent wins all ties, which keeps the outer EM loop monotone.
    """
    X, y = train.features, train.labels
    incumbent = model.base.centroids[j].copy()
    if model.base.k < 2:
        return incumbent, False
    sets = classify_scenarios(train, model, j, clusters)
    m = sets.s_star.size + sets.s_c_star.size
    if m == 0:
        return incumbent, False

    r_j = float(model.radii[j])
    dist = pairwise_distances(X, model.base.centroids)
    masked = dist.copy()
    masked[:, j] = np.inf
    rival_idx = np.argmin(masked, axis=1)
    rival_dist = masked[np.arange(X.shape[0]), rival_idx]
    rival_mal = rival_dist > model.radii[rival_idx]
    loss_not_member = rival_mal | (model.base.centroid_labels[rival_idx] != y)
    score = _slice_score_for_centroid(X, y, j, int(model.base.centroid_labels[j]), r_j,
                                      model.lam, cfg.radii_enabled,
                                      rival_idx, rival_dist, loss_not_member)

    candidates = []
    c = incumbent.copy()
    for mu in cfg.mu_grid:
        for t in range(cfg.sgd_epochs):
            _, g = surrogate_value_and_gradient(c, sets, mu, r_j)
            c = c - (cfg.sgd_step / (1.0 + t)) * (g / m)
        candidates.append(c.copy())

    best, best_score, accepted = incumbent, score(incumbent), False
    for cand in candidates:
        s = score(cand)
        if s < best_score:
            best, best_score, accepted = cand, s, True
    return best, accepted


class _EmState:
    """Mutable training state; snapshots are exposed as immutable models."""

    def __init__(self, X, y, class_count, centroids, lam, radii_enabled):
        self.X = X
        self.y = y
        self.class_count = class_count
        self.centroids = centroids
        self.k = centroids.shape[0]
        self.lam = lam
        self.radii_enabled = radii_enabled
        self.dist = pairwise_distances(X, centroids)
        self.owner = np.argmin(self.dist, axis=1)
        self.owned = self.dist[np.arange(X.shape[0]), self.owner]
        self.labels = np.zeros(self.k, dtype=np.int64)
        self.radii = np.full(self.k, np.inf)

    def refresh_column(self, j):
        self.dist[:, j] = np.sqrt(np.sum((self.X - self.centroids[j]) ** 2, axis=1))
        self.owner = np.argmin(self.dist, axis=1)
        self.owned = self.dist[np.arange(self.X.shape[0]), self.owner]

    def init_radii(self):
        if not self.radii_enabled:
            return
        for j in range(self.k):
            members = self.owner == j
            self.radii[j] = float(self.owned[members].max()) if members.any() else 0.0

    def objective(self) -> float:
        return _objective(self.y, self.labels, self.radii, self.owner, self.owned,
                          self.lam, self.radii_enabled)

    def model(self, lam) -> RsrnnModel:
        return RsrnnModel(
            base=SrnnModel(centroids=self.centroids.copy(), centroid_labels=self.labels.copy(),
                           class_count=self.class_count),
            radii=self.radii.copy(),
            lam=lam,
        )


def _repair_empty_guarded(state: _EmState):
    """Re-seed empty centroids to the sample farthest from its owner, but
    only commit a repair that does not increase the tracked objective."""
    for _ in range(state.k):
        counts = np.bincount(state.owner, minlength=state.k)
        empty = np.nonzero(counts == 0)[0]
        if empty.size == 0:
            return
        j = int(empty[0])
        before = state.objective()
        saved = (state.centroids[j].copy(), state.dist[:, j].copy(), state.owner.copy(),
                 state.owned.copy(), state.labels.copy(), state.radii[j])
        i_star = int(np.argmax(state.owned))
        state.centroids[j] = state.X[i_star]
        state.refresh_column(j)
        if state.radii_enabled:
            members = state.owner == j
            state.radii[j] = float(state.owned[members].max()) if members.any() else 0.0
        state.labels = _inrange_mode_labels(state.y, state.owner, state.owned, state.radii,
                                            state.k, state.class_count, old_labels=state.labels)
        if state.objective() > before:
            state.centroids[j] = saved[0]
            state.dist[:, j] = saved[1]
            state.owner = saved[2]
            state.owned = saved[3]
            state.labels = saved[4]
            state.radii[j] = saved[5]
            return


def _run_em(train: Dataset, cfg: DefenseConfig, initial_centroids: np.ndarray | None = None):
    """Shared EM engine. Returns the final state and the per-iteration
    objective history (classification-or-malicious count plus lam * radii)."""
    X, y = train.features, train.labels
    if cfg.k > train.n:
        raise ValueError(f"K={cfg.k} exceeds N={train.n}")
    rng = np.random.default_rng(cfg.seed)
    if initial_centroids is not None:
        C = np.array(initial_centroids, dtype=np.float64, copy=True)
        if C.shape != (cfg.k, train.dim):
            raise ValueError("initial centroids have wrong shape")
    else:
        C = kmeans_plusplus(X, cfg.k, rng)

    state = _EmState(X, y, train.class_count, C, cfg.lam, cfg.radii_enabled)
    # unconditional repair at init: no labels exist yet, so no objective to guard
    for _ in range(state.k):
        counts = np.bincount(state.owner, minlength=state.k)
        empty = np.nonzero(counts == 0)[0]
        if empty.size == 0:
            break
        j = int(empty[0])
        state.centroids[j] = X[int(np.argmax(state.owned))]
        state.refresh_column(j)
    state.init_radii()
    state.labels = _inrange_mode_labels(y, state.owner, state.owned, state.radii,
                                        state.k, train.class_count)
    history = [state.objective()]

    prev_owner = state.owner.copy()
    for _ in range(cfg.max_em_iters):
        labels_before = state.labels.copy()
        radii_before = state.radii.copy()
        centroids_before = state.centroids.copy()

        # assignment step: refresh labels, then guarded empty-cluster repair
        state.labels = _inrange_mode_labels(y, state.owner, state.owned, state.radii,
                                            state.k, train.class_count, old_labels=state.labels)
        _repair_empty_guarded(state)

        for j in range(state.k):
            if state.k >= 2:
                view = state.model(cfg.lam)
                new_c, accepted = update_centroid(train, view, j, state.owner, cfg)
                if accepted:
                    state.centroids[j] = new_c
                    state.refresh_column(j)
            if cfg.radii_enabled:
                members = state.owner == j
                wrong = y[members] != state.labels[j]
                r, _ = optimal_radius(state.dist[members, j], wrong, cfg.lam)
                state.radii[j] = r

        history.append(state.objective())
        # stop only at a full fixed point: stable assignments alone are not
        # enough because step-limited centroid moves keep improving the
        # model for several iterations without changing any ownership
        stable = (np.array_equal(state.owner, prev_owner)
                  and np.array_equal(state.labels, labels_before)
                  and np.array_equal(state.radii, radii_before)
                  and np.array_equal(state.centroids, centroids_before))
        if stable:
            break
        prev_owner = state.owner.copy()
    return state, tuple(history)


def rsrnn_error_count(model: RsrnnModel, ds: Dataset, malicious_as_error: bool = True) -> int:
    """0-1 error count; out-of-range samples count as errors by default."""
    a = assign(ds.features, model.base)
    pred = model.base.centroid_labels[a.owner]
    wrong = pred != ds.labels
    if malicious_as_error:
        wrong = wrong | (a.distance > model.radii[a.owner])
    return int(np.sum(wrong))


def predict_rsrnn(model: RsrnnModel, x: np.ndarray) -> int:
    """Nearest centroid's label when within its confidence radius
    (inclusive), otherwise the distinguished MALICIOUS outcome."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.base.dim,):
        raise ValueError(f"dimension mismatch: x has shape {x.shape}, model D={model.base.dim}")
    d = np.sqrt(np.sum((model.base.centroids - x) ** 2, axis=1))
    j = int(np.argmin(d))
    if d[j] <= model.radii[j]:
        return int(model.base.centroid_labels[j])
    return MALICIOUS


def predict_rsrnn_batch(model: RsrnnModel, X: np.ndarray, fallback: bool = False) -> np.ndarray:
    """Vectorized prediction; with fallback=True out-of-range queries get the
    nearest centroid's label instead of the MALICIOUS flag (detection stays
    the radius test's job)."""
    a = assign(X, model.base)
    pred = model.base.centroid_labels[a.owner].copy()
    if not fallback:
        pred[a.distance > model.radii[a.owner]] = MALICIOUS
    return pred


def out_of_range_indices(model: RsrnnModel, ds: Dataset) -> np.ndarray:
    a = assign(ds.features, model.base)
    return np.nonzero(a.distance > model.radii[a.owner])[0]


def _init_only_model(ds: Dataset, k: int, lam: float, radii_enabled: bool, seed: int) -> RsrnnModel:
    """Seeding plus a single assignment pass; no EM. Used to score pruning
    cut-offs cheaply."""
    rng = np.random.default_rng(seed)
    C = kmeans_plusplus(ds.features, k, rng)
    dist = pairwise_distances(ds.features, C)
    owner = np.argmin(dist, axis=1)
    owned = dist[np.arange(ds.n), owner]
    for _ in range(k):
        counts = np.bincount(owner, minlength=k)
        empty = np.nonzero(counts == 0)[0]
        if empty.size == 0:
            break
        j = int(empty[0])
        C[j] = ds.features[int(np.argmax(owned))]
        dist[:, j] = np.sqrt(np.sum((ds.features - C[j]) ** 2, axis=1))
        owner = np.argmin(dist, axis=1)
        owned = dist[np.arange(ds.n), owner]
    radii = np.full(k, np.inf)
    if radii_enabled:
        for j in range(k):
            members = owner == j
            radii[j] = float(owned[members].max()) if members.any() else 0.0
    labels = _inrange_mode_labels(ds.labels, owner, owned, radii, k, ds.class_count)
    return RsrnnModel(
        base=SrnnModel(centroids=C, centroid_labels=labels, class_count=ds.class_count),
        radii=radii,
        lam=lam,
    )


def prune(model: RsrnnModel, train: Dataset, val: Dataset, cfg: DefenseConfig) -> PruneResult:
    """Impurity-threshold pruning with clean-validation selection.

    For each cut-off, centroids whose member labels have impurity above the
    cut-off are removed together with their members, the remaining capacity
    is re-seeded on the cleaned data (initialization only, no EM), and the
    candidate is scored by validation error with Malicious counted as error.
    The no-pruning candidate always competes, so the selected model never
    validates worse than the input; ties go to the larger cut-off.
    """
    k = model.base.k
    a = assign(train.features, model.base)
    ginis = np.zeros(k)
    for j in range(k):
        members = a.owner == j
        ginis[j] = gini(train.labels[members]) if members.any() else 0.0

    candidates: list[tuple[float | None, RsrnnModel, np.ndarray, Dataset, int]] = []
    for theta in cfg.prune_grid:
        removed = np.nonzero(ginis > theta)[0]
        if removed.size == k:
            continue  # infeasible cut-off, nothing would remain
        if removed.size == 0:
            continue  # identical to the no-pruning candidate
        removed_samples = np.nonzero(np.isin(a.owner, removed))[0]
        keep = np.setdiff1d(np.arange(train.n), removed_samples)
        if keep.size == 0:
            continue
        cleaned = train.subset(keep)
        k_rem = min(k - removed.size, cleaned.n)
        cand = _init_only_model(cleaned, k_rem, cfg.lam, cfg.radii_enabled, cfg.seed)
        err = rsrnn_error_count(cand, val)
        candidates.append((theta, cand, removed_samples, cleaned, err))
    base_err = rsrnn_error_count(model, val)
    candidates.append((None, model, np.empty(0, dtype=np.int64), train, base_err))

    best = candidates[0]
    for cand in candidates[1:]:
        if cand[4] <= best[4]:
            best = cand
    theta, chosen, removed_samples, cleaned, err = best
    detection = DetectionResult(
        pruned_samples=removed_samples,
        out_of_range_samples=out_of_range_indices(chosen, train) if cfg.radii_enabled else np.empty(0, dtype=np.int64),
    )
    chosen = RsrnnModel(base=chosen.base, radii=chosen.radii, lam=chosen.lam,
                        alpha=cfg.alpha, chosen_cutoff=theta)
    return PruneResult(
        model=chosen,
        detection=detection,
        cleaned_train=cleaned,
        chosen_cutoff=theta,
        val_errors=tuple((t, e) for (t, _, _, _, e) in candidates),
    )


def train_rsrnn(train: Dataset, val: Dataset, cfg: DefenseConfig) -> TrainResult:
    """Full defense pipeline: monotone EM, cut-off pruning on the clean
    validation set, then a retrain on the cleaned data choosing between a
    fresh restart and continuing from the surviving centroids."""
    if val is None or val.n == 0:
        raise ValueError("a non-empty clean validation set is required")
    if cfg.k > train.n:
        raise ValueError(f"K={cfg.k} exceeds N={train.n}")

    state, history = _run_em(train, cfg)
    em_model = RsrnnModel(
        base=SrnnModel(centroids=state.centroids, centroid_labels=state.labels,
                       class_count=train.class_count),
        radii=state.radii,
        lam=cfg.lam,
        alpha=cfg.alpha,
    )

    if not cfg.prune_enabled:
        detection = DetectionResult(
            pruned_samples=np.empty(0, dtype=np.int64),
            out_of_range_samples=out_of_range_indices(em_model, train) if cfg.radii_enabled else np.empty(0, dtype=np.int64),
        )
        return TrainResult(model=em_model, detection=detection, cleaned_train=train,
                           objective_history=(history,), retrain_mode=None, val_error=None)

    pruned = prune(em_model, train, val, cfg)
    cleaned = pruned.cleaned_train

    k_restart = min(cfg.k, cleaned.n)
    restart_cfg = _with_k(cfg, k_restart)
    restart_state, restart_hist = _run_em(cleaned, restart_cfg)
    restart_model = RsrnnModel(
        base=SrnnModel(centroids=restart_state.centroids, centroid_labels=restart_state.labels,
                       class_count=train.class_count),
        radii=restart_state.radii, lam=cfg.lam, alpha=cfg.alpha, chosen_cutoff=pruned.chosen_cutoff,
    )

    k_cont = pruned.model.base.k
    cont_cfg = _with_k(cfg, k_cont)
    cont_state, cont_hist = _run_em(cleaned, cont_cfg, initial_centroids=pruned.model.base.centroids)
    cont_model = RsrnnModel(
        base=SrnnModel(centroids=cont_state.centroids, centroid_labels=cont_state.labels,
                       class_count=train.class_count),
        radii=cont_state.radii, lam=cfg.lam, alpha=cfg.alpha, chosen_cutoff=pruned.chosen_cutoff,
    )

    err_restart = rsrnn_error_count(restart_model, val)
    err_cont = rsrnn_error_count(cont_model, val)
    if err_cont <= err_restart:
        final, mode, err, hist2 = cont_model, "continue", err_cont, cont_hist
    else:
        final, mode, err, hist2 = restart_model, "restart", err_restart, restart_hist

    detection = DetectionResult(
        pruned_samples=pruned.detection.pruned_samples,
        out_of_range_samples=out_of_range_indices(final, train) if cfg.radii_enabled else np.empty(0, dtype=np.int64),
    )
    return TrainResult(model=final, detection=detection, cleaned_train=cleaned,
                       objective_history=(history, hist2), retrain_mode=mode, val_error=err)


def _with_k(cfg: DefenseConfig, k: int) -> DefenseConfig:
    return DefenseConfig(
        k=k, lam=cfg.lam, alpha=cfg.alpha, mu_grid=cfg.mu_grid, sgd_epochs=cfg.sgd_epochs,
        sgd_step=cfg.sgd_step, max_em_iters=cfg.max_em_iters, prune_grid=cfg.prune_grid,
        seed=cfg.seed, radii_enabled=cfg.radii_enabled, prune_enabled=cfg.prune_enabled,
    )


def save_rsrnn(model: RsrnnModel, path) -> None:
    Path(path).write_text(model.to_json(), encoding="utf-8")


def load_rsrnn(path) -> RsrnnModel:
    return RsrnnModel.from_json(Path(path).read_text(encoding="utf-8"))


def save_detection(det: DetectionResult, path) -> None:
    """CSV rows (sample_index, reason); pruning wins when a sample was
    flagged by both mechanisms."""
    pruned = set(int(i) for i in det.pruned_samples)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_index", "reason"])
        for i in sorted(set(int(v) for v in det.detected)):
            w.writerow([i, "pruned" if i in pruned else "out_of_range"])


def load_detection(path) -> DetectionResult:
    rows = list(csv.reader(Path(path).read_text(encoding="utf-8").splitlines()))[1:]
    pruned = [int(i) for i, r in rows if r == "pruned"]
    oor = [int(i) for i, r in rows if r == "out_of_range"]
    return DetectionResult(pruned_samples=np.array(pruned, dtype=np.int64),
                           out_of_range_samples=np.array(oor, dtype=np.int64))
