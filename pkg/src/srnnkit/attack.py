"""Budgeted label-flipping attacks against training data.

Three attack families are implemented:

* modality attack: clusters the trainset with a prototype model, prices each
  cluster at half of its size plus one (the flips needed to change its
  majority label), greedily buys the cheapest clusters under a strict budget,
  and flips the bought clusters toward their least frequent label;
* NCAR: uniformly random flips, the classic label-noise baseline;
* NNAR: flips aimed at low-confidence samples near decision boundaries,
  scored by a k-nearest-neighbor vote.

Plans are immutable and validated: flip indices are distinct, every new
label differs from the old one, and budgets are never exceeded.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, NamedTuple

import numpy as np

from .data import Dataset, Truth
from .srnn import SrnnModel, assign, mode_label


class Flip(NamedTuple):
    index: int
    old_label: int
    new_label: int
    cluster_id: int  # -1 when the attack is not cluster based


@dataclass(frozen=True)
class AttackPlan:
    """A set of label flips plus the budget accounting that produced it."""

    kind: str
    flips: tuple[Flip, ...]
    per_cluster_cost: Mapping[int, int]
    selected_clusters: tuple[int, ...]
    budget: int
    seed: int

    def __post_init__(self):
        if len(self.flips) > self.budget:
            raise ValueError("plan exceeds its budget")
        idx = [f.index for f in self.flips]
        if len(set(idx)) != len(idx):
            raise ValueError("flip indices must be distinct")
        if any(f.new_label == f.old_label for f in self.flips):
            raise ValueError("a flip must change the label")
        if self.kind == "modality" and self.selected_clusters:
            total = sum(self.per_cluster_cost[c] for c in self.selected_clusters)
            if not total < self.budget:
                raise ValueError("selected cluster costs must stay strictly under the budget")
        object.__setattr__(self, "per_cluster_cost", dict(self.per_cluster_cost))
        object.__setattr__(self, "selected_clusters", tuple(self.selected_clusters))

    @property
    def flips_used(self) -> int:
        return len(self.flips)

    def flip_indices(self) -> np.ndarray:
        return np.array([f.index for f in self.flips], dtype=np.int64)


def cluster_flip_cost(cluster_labels) -> int:
    """Flips needed to force a new majority: floor(size / 2) + 1."""
    n = len(cluster_labels)
    if n == 0:
        raise ValueError("cost of an empty cluster is undefined")
    return n // 2 + 1


def select_clusters(costs: Mapping[int, int], budget: int, method: str = "greedy") -> list[int]:
    """Pick clusters whose total cost stays strictly under the budget.

    greedy: walk clusters by ascending (cost, id) and stop at the first one
    that would break the constraint. exact: subset-sum dynamic program
    maximizing the total selected cost; never worse than greedy.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    items = sorted(costs.items(), key=lambda kv: (kv[1], kv[0]))
    for _, c in items:
        if c < 1:
            raise ValueError("cluster costs must be >= 1")
    if method == "greedy":
        chosen, total = [], 0
        for cid, c in items:
            if total + c < budget:
                chosen.append(cid)
                total += c
            else:
                break
        return chosen
    if method == "exact":
        cap = budget - 1  # strict inequality: best achievable sum
        if cap < 0:
            return []
        # reachable[s] is true when some prefix subset sums to s;
        # taken[i] remembers whether item i is used to reach each sum
        reachable = np.zeros(cap + 1, dtype=bool)
        reachable[0] = True
        taken = np.zeros((len(items), cap + 1), dtype=bool)
        for i, (_, c) in enumerate(items):
            if c > cap:
                continue
            newly = np.zeros_like(reachable)
            newly[c:] = reachable[:-c] & ~reachable[c:]
            taken[i] = newly
            reachable |= newly
        best = int(np.nonzero(reachable)[0].max())
        chosen = []
        s = best
        for i in range(len(items) - 1, -1, -1):
            if taken[i][s]:
                chosen.append(items[i][0])
                s -= items[i][1]
        return sorted(chosen, key=lambda cid: (costs[cid], cid))
    raise ValueError(f"unknown selection method {method!r}")


def _target_label(counts: np.ndarray) -> int:
    """Least frequent label of a cluster, counting absent classes as zero;
    a pure cluster therefore targets the lowest-id other class."""
    present = np.nonzero(counts > 0)[0]
    if present.size >= 2:
        return int(present[np.argmin(counts[present])])
    absent = np.nonzero(counts == 0)[0]
    return int(absent[0])


def craft_modality_attack(train: Dataset, attacker_model: SrnnModel, budget: int,
                          method: str = "greedy", seed: int = 0) -> AttackPlan:
    """Flip the majority label of the cheapest clusters under the budget.

    Clusters come from assigning the trainset to the attacker's prototypes.
    Within a bought cluster the flips go to the least frequent label and are
    drawn uniformly from the samples not already carrying it; when those run
    out the cluster is already pure in the target, so no further flips are
    needed to move its majority. Linear in N after the attacker model is
    trained, plus a K log K cluster sort.
    """
    rng = np.random.default_rng(seed)
    owner = assign(train, attacker_model).owner
    k = attacker_model.k
    sizes = np.bincount(owner, minlength=k)
    costs = {j: int(sizes[j]) // 2 + 1 for j in range(k) if sizes[j] > 0}
    selected = select_clusters(costs, budget, method=method)

    flips: list[Flip] = []
    for j in selected:
        members = np.nonzero(owner == j)[0]
        counts = np.bincount(train.labels[members], minlength=train.class_count)
        target = _target_label(counts)
        eligible = members[train.labels[members] != target]
        m = min(costs[j], eligible.size)
        chosen = rng.permutation(eligible)[:m]
        for i in chosen:
            flips.append(Flip(index=int(i), old_label=int(train.labels[i]),
                              new_label=target, cluster_id=int(j)))
    return AttackPlan(kind="modality", flips=tuple(flips), per_cluster_cost=costs,
                      selected_clusters=tuple(selected), budget=budget, seed=seed)


def ncar_attack(train: Dataset, budget: int, seed: int = 0) -> AttackPlan:
    """Noise completely at random: uniform samples, uniform other labels."""
    if budget > train.n:
        raise ValueError(f"budget {budget} exceeds N={train.n}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(train.n, size=budget, replace=False)
    flips = []
    for i in idx:
        old = int(train.labels[i])
        new = int(rng.integers(train.class_count - 1))
        if new >= old:
            new += 1
        flips.append(Flip(index=int(i), old_label=old, new_label=new, cluster_id=-1))
    return AttackPlan(kind="ncar", flips=tuple(flips), per_cluster_cost={},
                      selected_clusters=(), budget=budget, seed=seed)


def nnar_attack(train: Dataset, budget: int, k_neighbors: int = 10, seed: int = 0) -> AttackPlan:
    """Noise not at random: target the lowest-confidence samples.

    Confidence is the plurality vote share among a sample's k nearest other
    samples. The budget's lowest-confidence samples (index breaks ties) are
    flipped to the strongest neighbor label different from their own; when
    the neighbors vote only for the sample's own class the new label is
    uniform over the other classes.
    """
    if budget > train.n:
        raise ValueError(f"budget {budget} exceeds N={train.n}")
    if k_neighbors >= train.n:
        raise ValueError("k_neighbors must be smaller than N")
    rng = np.random.default_rng(seed)
    X, y, m = train.features, train.labels, train.class_count
    n = train.n

    confidence = np.empty(n)
    votes = np.empty((n, m), dtype=np.int64)
    step = max(1, (1 << 22) // max(1, n))
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        diff = X[lo:hi, None, :] - X[None, :, :]
        d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        d[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        order = np.argsort(d, axis=1, kind="stable")[:, :k_neighbors]
        for row, nbrs in enumerate(order):
            v = np.bincount(y[nbrs], minlength=m)
            votes[lo + row] = v
            confidence[lo + row] = v.max() / k_neighbors

    flip_order = np.lexsort((np.arange(n), confidence))[:budget]
    flips = []
    for i in flip_order:
        old = int(y[i])
        v = votes[i].copy()
        v[old] = -1  # never flip to the current label
        if v.max() > 0:
            new = int(np.argmax(v))
        else:
            new = int(rng.integers(m - 1))
            if new >= old:
                new += 1
        flips.append(Flip(index=int(i), old_label=old, new_label=new, cluster_id=-1))
    return AttackPlan(kind="nnar", flips=tuple(flips), per_cluster_cost={},
                      selected_clusters=(), budget=budget, seed=seed)


def apply_attack(ds: Dataset, plan: AttackPlan) -> Dataset:
    """Poisoned copy of the dataset: flipped labels, untouched features,
    pre-flip labels recorded in truth.original_labels."""
    labels = ds.labels.copy()
    for f in plan.flips:
        if not (0 <= f.index < ds.n):
            raise ValueError(f"flip index {f.index} out of range")
        if labels[f.index] == f.new_label:
            raise ValueError(f"flip at {f.index} does not change the label")
        labels[f.index] = f.new_label
    truth = Truth(
        cluster_id=None if ds.truth is None else ds.truth.cluster_id,
        original_labels=ds.labels.copy(),
    )
    return ds.with_labels(labels, truth=truth)


class ErrorBoundResult(NamedTuple):
    delta_error: int
    bound: int
    holds: bool


def check_error_bound(train: Dataset, attacker_model: SrnnModel, plan: AttackPlan) -> ErrorBoundResult:
    """Verify that flipping under fixed centroids raises the true-label
    training error count by at most twice the spent cluster cost.

    Only the centroid labels are retrained (majority vote per cluster) on
    the clean and on the poisoned labels; the error delta is measured against
    the true labels. Exact integer arithmetic, no tolerance.
    """
    owner = assign(train, attacker_model).owner
    poisoned = apply_attack(train, plan)
    k = attacker_model.k
    labels_before = np.empty(k, dtype=np.int64)
    labels_after = np.empty(k, dtype=np.int64)
    for j in range(k):
        members = owner == j
        before = mode_label(train.labels[members], train.class_count)
        after = mode_label(poisoned.labels[members], train.class_count)
        fallback = int(attacker_model.centroid_labels[j])
        labels_before[j] = fallback if before is None else before
        labels_after[j] = fallback if after is None else after
    err_before = int(np.sum(labels_before[owner] != train.labels))
    err_after = int(np.sum(labels_after[owner] != train.labels))
    delta = err_after - err_before
    bound = 2 * sum(plan.per_cluster_cost[c] for c in plan.selected_clusters)
    return ErrorBoundResult(delta_error=delta, bound=bound, holds=delta <= bound)


def save_plan(plan: AttackPlan, csv_path, summary_path=None) -> None:
    """CSV of flips plus a JSON summary of the budget accounting."""
    with Path(csv_path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_index", "old_label", "new_label", "cluster_id"])
        for f in plan.flips:
            w.writerow([f.index, f.old_label, f.new_label, f.cluster_id])
    if summary_path is None:
        summary_path = Path(csv_path).with_suffix(".summary.json")
    Path(summary_path).write_text(
        json.dumps(
            {
                "attack_kind": plan.kind,
                "budget": plan.budget,
                "flips_used": plan.flips_used,
                "selected_clusters": [int(c) for c in plan.selected_clusters],
                "seed": plan.seed,
                "per_cluster_cost": {str(c): int(v) for c, v in plan.per_cluster_cost.items()},
            },
            indent=2,
        ),
        encoding="utf-8",
    )


def load_plan(csv_path, summary_path=None) -> AttackPlan:
    if summary_path is None:
        summary_path = Path(csv_path).with_suffix(".summary.json")
    summary = json.loads(Path(summary_path).read_text(encoding="utf-8"))
    rows = list(csv.reader(Path(csv_path).read_text(encoding="utf-8").splitlines()))[1:]
    flips = tuple(Flip(index=int(a), old_label=int(b), new_label=int(c), cluster_id=int(d))
                  for a, b, c, d in rows)
    costs = {int(c): int(v) for c, v in summary.get("per_cluster_cost", {}).items()}
    return AttackPlan(
        kind=summary["attack_kind"],
        flips=flips,
        per_cluster_cost=costs,
        selected_clusters=tuple(int(c) for c in summary["selected_clusters"]),
        budget=int(summary["budget"]),
        seed=int(summary["seed"]),
    )
