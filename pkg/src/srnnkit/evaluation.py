"""Metrics, the synthetic benchmark, the experiment runner, and the
attack-crafting scaling probe.

The experiment pipeline mirrors the two data setups used throughout the
project: a small trainset with an attacker fitted on a larger pool
(setup 1), and both fitted on the same 80% trainset (setup 2). All cells are
pure functions of the configured seed; wall-clock timings live in their own
report section so reports can be compared byte for byte without them.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import attack as atk
from . import baselines as bl
from . import defense as dfs
from . import srnn
from .data import Component, Dataset, MixtureSpec, SplitSpec, gen_mixture, load_csv, split, standardize


def detection_metrics(detected, truth_flipped) -> tuple[float, float]:
    """(recall, tp_ratio) of a detected index set against the truly flipped
    one. Empty truth gives recall 0; an empty detection set gets the vacuous
    tp_ratio 1."""
    detected = np.unique(np.asarray(detected, dtype=np.int64))
    truth = np.unique(np.asarray(truth_flipped, dtype=np.int64))
    hit = np.intersect1d(detected, truth).size
    recall = hit / truth.size if truth.size else 0.0
    tp = hit / detected.size if detected.size else 1.0
    return float(recall), float(tp)


# Fixed 2-D benchmark: four big host components, two small distinct-class
# modalities (the cheap clusters a 10% flip budget can buy), and two tiny
# same-class satellites sitting just beyond their hosts' sample radius (the
# 5% minority modalities the defense must detect when they are flipped).
# The layout is x/y symmetric so standardization keeps it isotropic.
_BENCHMARK_LAYOUT = (
    # (mean, std, mass, label)
    ((8.0, 0.0), 0.55, 0.185, 0),
    ((-8.0, 0.0), 0.55, 0.185, 1),
    ((0.0, 8.0), 0.55, 0.185, 2),
    ((0.0, -8.0), 0.55, 0.185, 3),
    ((8.0, 8.0), 0.50, 0.085, 4),
    ((-8.0, -8.0), 0.50, 0.075, 4),
    ((10.5, 0.0), 0.08, 0.05, 0),
    ((0.0, 10.5), 0.08, 0.05, 2),
)

BENCHMARK_MINORITY_COMPONENTS = (6, 7)
BENCHMARK_COMPONENT_COUNT = len(_BENCHMARK_LAYOUT)
BENCHMARK_CLASS_COUNT = 5


def _mass_counts(masses, n: int) -> list[int]:
    total = float(sum(masses))
    quotas = [m / total * n for m in masses]
    base = [int(np.floor(q)) for q in quotas]
    order = sorted(range(len(masses)), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[: n - sum(base)]:
        base[i] += 1
    return base


def benchmark_mixture(n: int, seed: int) -> MixtureSpec:
    counts = _mass_counts([m for (_, _, m, _) in _BENCHMARK_LAYOUT], n)
    comps = tuple(
        Component(mean=mean, std=std, count=counts[i], label=label)
        for i, (mean, std, _, label) in enumerate(_BENCHMARK_LAYOUT)
    )
    return MixtureSpec(components=comps, seed=seed)


def flip_components_fully(ds: Dataset, components, seed: int = 0) -> atk.AttackPlan:
    """Plan that flips every sample of the given ground-truth components to
    the lowest class id different from the sample's current label."""
    if ds.truth is None or ds.truth.cluster_id is None:
        raise ValueError("full-component flips need ground-truth cluster ids")
    flips = []
    for comp in components:
        members = np.nonzero(ds.truth.cluster_id == comp)[0]
        for i in members:
            old = int(ds.labels[i])
            new = 0 if old != 0 else 1
            flips.append(atk.Flip(index=int(i), old_label=old, new_label=new, cluster_id=int(comp)))
    return atk.AttackPlan(kind="manual_full", flips=tuple(flips), per_cluster_cost={},
                          selected_clusters=(), budget=len(flips), seed=seed)


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one experiment grid."""

    dataset: str = "benchmark"  # "benchmark", "csv:<path>", or "mixture:<path.json>"
    setup: int = 2
    n_samples: int = 2500
    k: int = 8
    rsrnn_k: int | None = None
    knn_k: int = 1
    lam: float = 0.01
    budget_fracs: tuple[float, ...] = (0.1,)
    attacks: tuple[str, ...] = ("none", "modality", "ncar")
    models: tuple[str, ...] = ("srnn", "knn", "kmeans")
    select_method: str = "greedy"
    n_seeds: int = 10
    seed: int = 0
    standardize_features: bool = True
    em_iters: int = 30
    sgd_epochs: int = 25
    label_column: str | int = "label"

    def __post_init__(self):
        if self.setup not in (1, 2):
            raise ValueError("setup must be 1 or 2")
        known_attacks = {"none", "modality", "ncar", "nnar"}
        known_models = {"srnn", "rsrnn", "knn", "kmeans"}
        for a in self.attacks:
            if a not in known_attacks:
                raise ValueError(f"unknown attack {a!r}")
        for m in self.models:
            if m not in known_models:
                raise ValueError(f"unknown model {m!r}")


@dataclass
class ExperimentReport:
    config: dict
    config_hash: str
    cells: list[dict] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def to_json(self, include_timings: bool = True) -> str:
        doc = {
            "config": self.config,
            "config_hash": self.config_hash,
            "cells": self.cells,
            "aggregates": self.aggregates,
            "warnings": self.warnings,
        }
        if include_timings:
            doc["timings"] = self.timings
        return json.dumps(doc, indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        cols = ["attack", "budget_frac", "model", "seed_index", "test_error", "train_error",
                "budget", "flips_used", "detection_recall", "tp_ratio", "chosen_cutoff", "val_error"]
        lines = [",".join(cols)]
        for c in self.cells:
            lines.append(",".join("" if c.get(k) is None else str(c.get(k)) for k in cols))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _config_hash(cfg: ExperimentConfig) -> str:
    text = json.dumps(asdict(cfg), sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:12]


_SETUP_FRACTIONS = {
    # train fraction, validation (8% of the trainset), rest is test
    1: (0.20, 0.016),
    2: (0.80, 0.064),
}


def derive_cell_seeds(base_seed: int, seed_index: int) -> tuple[int, int, int, int]:
    """(data, split, attack, model) seeds for one experiment repetition;
    exposed so cells can be reproduced outside the runner."""
    ss = np.random.SeedSequence(entropy=(base_seed, seed_index))
    a, b, c, d = (int(v) for v in ss.generate_state(4))
    return a, b, c, d


def _load_pool(cfg: ExperimentConfig, data_seed: int) -> Dataset:
    if cfg.dataset == "benchmark":
        return gen_mixture(benchmark_mixture(cfg.n_samples, data_seed))
    if cfg.dataset.startswith("mixture:"):
        spec = MixtureSpec.from_json(Path(cfg.dataset[len("mixture:"):]).read_text(encoding="utf-8"))
        comps = spec.components
        if cfg.n_samples and cfg.n_samples != sum(c.count for c in comps):
            counts = _mass_counts([c.count for c in comps], cfg.n_samples)
            comps = tuple(Component(c.mean, c.std, max(1, counts[i]), c.label) for i, c in enumerate(comps))
        return gen_mixture(MixtureSpec(components=comps, seed=data_seed))
    if cfg.dataset.startswith("csv:"):
        return load_csv(cfg.dataset[len("csv:"):], label_column=cfg.label_column)
    raise ValueError(f"unknown dataset source {cfg.dataset!r}")


def _craft(kind: str, train: Dataset, attacker: srnn.SrnnModel, budget: int,
           cfg: ExperimentConfig, seed: int) -> atk.AttackPlan:
    if kind == "none" or budget == 0:
        return atk.AttackPlan(kind="none", flips=(), per_cluster_cost={},
                              selected_clusters=(), budget=budget, seed=seed)
    if kind == "modality":
        return atk.craft_modality_attack(train, attacker, budget, method=cfg.select_method, seed=seed)
    if kind == "ncar":
        return atk.ncar_attack(train, budget, seed=seed)
    if kind == "nnar":
        return atk.nnar_attack(train, budget, k_neighbors=min(10, train.n - 1), seed=seed)
    raise ValueError(f"unknown attack {kind!r}")


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Run the full attack/model grid over the configured seeds.

    Per seed: draw or load the data pool, split, optionally standardize, fit
    the attacker prototypes (on train plus test for setup 1, train only for
    setup 2), craft and apply each attack, train every victim model on the
    poisoned trainset, and score on the untouched test split.
    """
    report = ExperimentReport(config=asdict(cfg), config_hash=_config_hash(cfg))
    t0 = time.perf_counter()
    for s in range(cfg.n_seeds):
        data_seed, split_seed, attack_seed, model_seed = derive_cell_seeds(cfg.seed, s)
        pool = _load_pool(cfg, data_seed)
        train_frac, val_frac = _SETUP_FRACTIONS[cfg.setup]
        tr, va, te = split(pool, SplitSpec(train_frac, val_frac, 1.0 - train_frac - val_frac, seed=split_seed))
        if cfg.standardize_features:
            scaler, tr = standardize(tr)
            va, te = scaler.transform(va), scaler.transform(te)

        attacker_cfg = srnn.TrainConfig(k=cfg.k, max_em_iters=cfg.em_iters, seed=model_seed,
                                        sgd_epochs=cfg.sgd_epochs)
        if cfg.setup == 1:
            pool_for_attacker = Dataset(
                features=np.vstack([tr.features, te.features]),
                labels=np.concatenate([tr.labels, te.labels]),
                class_count=pool.class_count,
            )
            attacker = srnn.train_srnn(pool_for_attacker, attacker_cfg)
        else:
            attacker = srnn.train_srnn(tr, attacker_cfg)

        for frac in cfg.budget_fracs:
            budget = int(np.floor(frac * tr.n))
            if frac > 0 and budget < 1:
                report.warnings.append(f"seed {s}: budget fraction {frac} yields an empty attack")
            for kind in cfg.attacks:
                plan = _craft(kind, tr, attacker, budget, cfg, attack_seed)
                poisoned = atk.apply_attack(tr, plan)
                truth_flipped = plan.flip_indices()
                for name in cfg.models:
                    t_cell = time.perf_counter()
                    cell = {
                        "attack": kind, "budget_frac": frac, "model": name, "seed_index": s,
                        "budget": budget, "flips_used": plan.flips_used,
                        "detection_recall": None, "tp_ratio": None,
                        "chosen_cutoff": None, "val_error": None,
                    }
                    orig_labels = poisoned.truth.original_labels
                    clean_train = poisoned.with_labels(orig_labels)
                    if name == "srnn":
                        model = srnn.train_srnn(poisoned, srnn.TrainConfig(
                            k=cfg.k, max_em_iters=cfg.em_iters, seed=model_seed, sgd_epochs=cfg.sgd_epochs))
                        cell["test_error"] = srnn.error_ratio(model, te)
                        cell["train_error"] = srnn.error_ratio(model, clean_train)
                    elif name == "knn":
                        model = bl.fit_knn(poisoned, k=cfg.knn_k)
                        cell["test_error"] = float(np.mean(bl.knn_predict_batch(model, te.features) != te.labels))
                        cell["train_error"] = float(np.mean(bl.knn_predict_batch(model, clean_train.features) != clean_train.labels))
                    elif name == "kmeans":
                        model = bl.train_kmeans_classifier(poisoned, poisoned, k=cfg.k, seed=model_seed)
                        cell["test_error"] = float(np.mean(bl.kmeans_predict_batch(model, te.features) != te.labels))
                        cell["train_error"] = float(np.mean(bl.kmeans_predict_batch(model, clean_train.features) != clean_train.labels))
                    elif name == "rsrnn":
                        dcfg = dfs.DefenseConfig(k=cfg.rsrnn_k or cfg.k, lam=cfg.lam, seed=model_seed,
                                                 max_em_iters=cfg.em_iters, sgd_epochs=cfg.sgd_epochs)
                        res = dfs.train_rsrnn(poisoned, va, dcfg)
                        pred = dfs.predict_rsrnn_batch(res.model, te.features, fallback=True)
                        cell["test_error"] = float(np.mean(pred != te.labels))
                        pred_tr = dfs.predict_rsrnn_batch(res.model, clean_train.features, fallback=True)
                        cell["train_error"] = float(np.mean(pred_tr != clean_train.labels))
                        recall, tp = detection_metrics(res.detection.detected, truth_flipped)
                        cell["detection_recall"], cell["tp_ratio"] = recall, tp
                        cell["chosen_cutoff"] = res.model.chosen_cutoff
                        cell["val_error"] = res.val_error
                    report.cells.append(cell)
                    report.timings[f"{kind}|{frac}|{name}|{s}"] = time.perf_counter() - t_cell

    for key_fields in {(c["attack"], c["budget_frac"], c["model"]) for c in report.cells}:
        sub = [c for c in report.cells
               if (c["attack"], c["budget_frac"], c["model"]) == key_fields]
        errs = np.array([c["test_error"] for c in sub])
        agg = {"test_error_mean": float(errs.mean()), "test_error_std": float(errs.std()),
               "n": len(sub)}
        recalls = [c["detection_recall"] for c in sub if c["detection_recall"] is not None]
        if recalls:
            agg["detection_recall_mean"] = float(np.mean(recalls))
            agg["tp_ratio_mean"] = float(np.mean([c["tp_ratio"] for c in sub]))
        report.aggregates["|".join(str(v) for v in key_fields)] = agg
    report.timings["total"] = time.perf_counter() - t0
    return report


@dataclass(frozen=True)
class ScalingProbeResult:
    sizes: tuple[int, ...]
    times: tuple[float, ...]  # per-size minimum over repeats
    all_times: tuple[tuple[float, ...], ...]
    linear_fit_r2: float
    coefficient_of_variation: tuple[float, ...]


def scaling_probe(template: MixtureSpec, sizes, repeats: int = 5, budget_frac: float = 0.1,
                  seed: int = 0) -> ScalingProbeResult:
    """Time attack crafting (attacker training excluded) across dataset
    sizes and fit a line to the minima. At least 4 sizes are required; for a
    constant-size list the fit is undefined (nan) and the per-size
    coefficient of variation carries the signal instead.
    """
    sizes = [int(v) for v in sizes]
    if len(sizes) < 4:
        raise ValueError("scaling probe needs at least 4 sizes")
    proportions = [c.count for c in template.components]
    prepared = []
    for si, n in enumerate(sizes):
        counts = _mass_counts(proportions, n)
        comps = tuple(Component(c.mean, c.std, max(1, counts[i]), c.label)
                      for i, c in enumerate(template.components))
        ds = gen_mixture(MixtureSpec(components=comps, seed=seed + si))
        attacker = srnn.train_srnn(ds, srnn.TrainConfig(
            k=len(comps), max_em_iters=3, seed=seed, sgd_epochs=8, mu_grid=(0.0, 0.5, 1.0)))
        budget = int(np.floor(budget_frac * ds.n))
        atk.craft_modality_attack(ds, attacker, budget, seed=seed)  # warm-up
        prepared.append((ds, attacker, budget))
    # round-robin over sizes so a transient load spike cannot poison every
    # repeat of one size
    runs: list[list[float]] = [[] for _ in sizes]
    for r in range(repeats):
        for si, (ds, attacker, budget) in enumerate(prepared):
            t0 = time.perf_counter()
            atk.craft_modality_attack(ds, attacker, budget, seed=seed + r)
            runs[si].append(time.perf_counter() - t0)
    times_min, all_times, covs = [], [], []
    for per_size in runs:
        arr = np.array(per_size)
        times_min.append(float(arr.min()))
        all_times.append(tuple(float(v) for v in per_size))
        covs.append(float(arr.std() / arr.mean()) if arr.mean() > 0 else 0.0)

    x = np.array(sizes, dtype=np.float64)
    y = np.array(times_min)
    if np.ptp(x) == 0:
        r2 = float("nan")
    else:
        slope, intercept = np.polyfit(x, y, 1)
        resid = y - (slope * x + intercept)
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return ScalingProbeResult(sizes=tuple(sizes), times=tuple(times_min),
                              all_times=tuple(all_times), linear_fit_r2=r2,
                              coefficient_of_variation=tuple(covs))
