"""Command-line front end.

Subcommands wrap one library entry point each: generate synthetic data,
train a prototype model, craft and apply an attack, train the defense,
evaluate a saved model, and run a full experiment grid. Every run prints a
one-line summary and writes its effective configuration next to its outputs
so it can be replayed. Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import attack as atk
from . import defense as dfs
from . import srnn
from .data import DataError, Dataset, MixtureSpec, gen_mixture, load_csv, save_csv, standardize
from .evaluation import ExperimentConfig, benchmark_mixture, detection_metrics, run_experiment

USAGE_ERROR = 1
DATA_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we reserve that for data errors
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


_CONFIG_SCHEMA = {
    "dataset": str, "setup": int, "n_samples": int, "k": int, "rsrnn_k": int, "knn_k": int,
    "lambda": float, "budget_fracs": str, "attacks": str, "models": str, "select": str,
    "n_seeds": int, "seed": int, "standardize": bool, "em_iters": int, "sgd_epochs": int,
    "label_column": str,
}


def _parse_config_file(path: Path) -> dict:
    """Flat key = value file; # starts a comment; unknown keys are rejected."""
    values: dict = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key = value")
        key, _, val = (part.strip() for part in line.partition("="))
        if key not in _CONFIG_SCHEMA:
            raise KeyError(f"{path}:{lineno}: unknown config key {key!r}")
        typ = _CONFIG_SCHEMA[key]
        try:
            if typ is bool:
                values[key] = val.lower() in ("1", "true", "yes", "on")
            else:
                values[key] = typ(val)
        except ValueError:
            raise DataError(f"{path}:{lineno}: cannot parse {val!r} as {typ.__name__}") from None
    return values


def _echo_config(out_dir: Path, name: str, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / name).write_text(json.dumps(payload, indent=2, sort_keys=True, default=str),
                                encoding="utf-8")


def _load_dataset(path: str, label_column) -> Dataset:
    try:
        label_column = int(label_column)
    except (TypeError, ValueError):
        pass
    return load_csv(path, label_column=label_column)


def cmd_generate(args) -> int:
    out = Path(args.out)
    if args.mixture:
        spec = MixtureSpec.from_json(Path(args.mixture).read_text(encoding="utf-8"))
        if args.seed is not None:
            spec = MixtureSpec(components=spec.components, seed=args.seed)
    else:
        spec = benchmark_mixture(args.n, args.seed if args.seed is not None else 0)
    ds = gen_mixture(spec)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(ds, out / "data.csv", truth_path=out / "truth.csv")
    (out / "mixture.json").write_text(spec.to_json(), encoding="utf-8")
    _echo_config(out, "generate.config.json", {"command": "generate", "n": ds.n,
                                               "seed": spec.seed, "mixture": args.mixture})
    print(f"generate: wrote {ds.n} samples, {ds.class_count} classes to {out / 'data.csv'}")
    return 0


def cmd_train(args) -> int:
    ds = _load_dataset(args.infile, args.label_column)
    if args.standardize:
        _, ds = standardize(ds)
    cfg = srnn.TrainConfig(k=args.k, seed=args.seed, max_em_iters=args.em_iters)
    model = srnn.train_srnn(ds, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    srnn.save_model(model, out / "model.json")
    err = srnn.error_ratio(model, ds)
    _echo_config(out, "train.config.json", {"command": "train", "k": args.k, "seed": args.seed,
                                            "em_iters": args.em_iters, "infile": args.infile,
                                            "standardize": args.standardize,
                                            "label_names": ds.label_names})
    print(f"train: K={args.k} train_error={err:.4f} model={out / 'model.json'}")
    return 0


def cmd_attack(args) -> int:
    ds = _load_dataset(args.infile, args.label_column)
    budget = int(np.floor(args.budget_frac * ds.n))
    if args.kind == "modality":
        if not args.attacker:
            print("error: --attacker is required for the modality attack", file=sys.stderr)
            return USAGE_ERROR
        attacker = srnn.load_model(args.attacker)
        plan = atk.craft_modality_attack(ds, attacker, budget, method=args.select, seed=args.seed)
    elif args.kind == "ncar":
        plan = atk.ncar_attack(ds, budget, seed=args.seed)
    else:
        plan = atk.nnar_attack(ds, budget, k_neighbors=args.knn_k, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    atk.save_plan(plan, out)
    if args.apply:
        poisoned = atk.apply_attack(ds, plan)
        save_csv(poisoned, args.apply, truth_path=str(args.apply) + ".truth.csv")
    echo = {"command": "attack", "kind": args.kind, "budget_frac": args.budget_frac,
            "infile": args.infile, "attacker": args.attacker, "select": args.select,
            "knn_k": args.knn_k, "seed": args.seed, "apply": args.apply}
    out.with_suffix(".config.json").write_text(json.dumps(echo, indent=2, sort_keys=True),
                                               encoding="utf-8")
    print(f"attack: kind={args.kind} budget={budget} flips={plan.flips_used} plan={out}")
    return 0


def cmd_defend(args) -> int:
    train = _load_dataset(args.infile, args.label_column)
    val = _load_dataset(args.val, args.label_column)
    cfg = dfs.DefenseConfig(k=args.k, lam=args.lam, seed=args.seed, max_em_iters=args.em_iters)
    res = dfs.train_rsrnn(train, val, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dfs.save_rsrnn(res.model, out / "rsrnn.json")
    dfs.save_detection(res.detection, out / "detection.csv")
    _echo_config(out, "defend.config.json", {"command": "defend", "k": args.k, "lambda": args.lam,
                                             "seed": args.seed, "infile": args.infile, "val": args.val})
    print(f"defend: K={args.k} detected={res.detection.detected.size} "
          f"cutoff={res.model.chosen_cutoff} out={out}")
    return 0


def cmd_eval(args) -> int:
    ds = _load_dataset(args.infile, args.label_column)
    text = Path(args.model).read_text(encoding="utf-8")
    doc = json.loads(text)
    metrics: dict = {"model": args.model, "data": args.infile, "n": ds.n}
    if "radii" in doc:
        model = dfs.RsrnnModel.from_json(text)
        pred = dfs.predict_rsrnn_batch(model, ds.features, fallback=True)
        metrics["error_ratio"] = float(np.mean(pred != ds.labels))
        flagged = dfs.out_of_range_indices(model, ds)
        metrics["flagged_ratio"] = float(flagged.size / ds.n)
        if args.plan:
            truth_flipped = atk.load_plan(args.plan).flip_indices()
            recall, tp = detection_metrics(flagged, truth_flipped)
            metrics["detection_recall"], metrics["tp_ratio"] = recall, tp
    else:
        model = srnn.SrnnModel.from_json(text)
        metrics["error_ratio"] = srnn.error_ratio(model, ds)
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True), encoding="utf-8")
        _echo_config(out, "eval.config.json", {"command": "eval", "model": args.model,
                                               "infile": args.infile})
    print(f"eval: error_ratio={metrics['error_ratio']:.4f} n={ds.n}")
    return 0


def cmd_experiment(args) -> int:
    values = _parse_config_file(Path(args.config)) if args.config else {}
    overrides = {
        "setup": args.setup, "k": args.k, "lambda": args.lam, "seed": args.seed,
        "budget_fracs": args.budget_frac, "attacks": args.attack, "select": args.select,
    }
    for key, val in overrides.items():
        if val is not None:
            values[key] = val

    def _tuple_of(text, conv):
        if isinstance(text, (tuple, list)):
            return tuple(conv(v) for v in text)
        return tuple(conv(v) for v in str(text).split(",") if str(v).strip())

    cfg = ExperimentConfig(
        dataset=values.get("dataset", "benchmark"),
        setup=int(values.get("setup", 2)),
        n_samples=int(values.get("n_samples", 2500)),
        k=int(values.get("k", 8)),
        rsrnn_k=values.get("rsrnn_k"),
        knn_k=int(values.get("knn_k", 1)),
        lam=float(values.get("lambda", 0.01)),
        budget_fracs=_tuple_of(values.get("budget_fracs", "0.1"), float),
        attacks=_tuple_of(values.get("attacks", "none,modality,ncar"), str),
        models=_tuple_of(values.get("models", "srnn,knn,kmeans"), str),
        select_method=values.get("select", "greedy"),
        n_seeds=int(values.get("n_seeds", 10)),
        seed=int(values.get("seed", 0)),
        standardize_features=bool(values.get("standardize", True)),
        em_iters=int(values.get("em_iters", 30)),
        sgd_epochs=int(values.get("sgd_epochs", 25)),
        label_column=values.get("label_column", "label"),
    )
    report = run_experiment(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"report_{report.config_hash}_seed{cfg.seed}"
    (out / f"{stem}.json").write_text(report.to_json(), encoding="utf-8")
    report.write_csv(out / f"{stem}.csv")
    _echo_config(out, f"{stem}.config.json", asdict(cfg))
    print(f"experiment: {len(report.cells)} cells -> {out / (stem + '.json')}")
    return 0


def build_parser() -> _Parser:
    p = _Parser(prog="srnnkit", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a synthetic mixture dataset")
    g.add_argument("--mixture", help="mixture spec JSON; omit for the built-in benchmark")
    g.add_argument("--n", type=int, default=2500, help="sample count for the benchmark preset")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a prototype classifier")
    t.add_argument("--in", dest="infile", required=True)
    t.add_argument("--label-column", default="label")
    t.add_argument("--k", type=int, required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--em-iters", type=int, default=100)
    t.add_argument("--standardize", action="store_true")
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", help="craft a label-flipping plan")
    a.add_argument("--kind", choices=("modality", "ncar", "nnar"), required=True)
    a.add_argument("--budget-frac", type=float, required=True)
    a.add_argument("--in", dest="infile", required=True)
    a.add_argument("--label-column", default="label")
    a.add_argument("--attacker", help="prototype model JSON (modality attack)")
    a.add_argument("--select", choices=("greedy", "exact"), default="greedy")
    a.add_argument("--knn-k", type=int, default=10)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--apply", help="also write the poisoned dataset to this CSV path")
    a.add_argument("--out", required=True, help="plan CSV path")
    a.set_defaults(func=cmd_attack)

    d = sub.add_parser("defend", help="train the radius defense and report detections")
    d.add_argument("--in", dest="infile", required=True)
    d.add_argument("--val", required=True, help="clean validation CSV")
    d.add_argument("--label-column", default="label")
    d.add_argument("--k", type=int, required=True)
    d.add_argument("--lambda", dest="lam", type=float, default=0.01)
    d.add_argument("--em-iters", type=int, default=100)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True, help="output directory")
    d.set_defaults(func=cmd_defend)

    e = sub.add_parser("eval", help="evaluate a saved model on a dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--in", dest="infile", required=True)
    e.add_argument("--label-column", default="label")
    e.add_argument("--plan", help="attack plan CSV; scores the defense model's "
                                  "flagged samples against the plan's flips")
    e.add_argument("--out", help="optional output directory for metrics.json")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("experiment", help="run an attack x model grid")
    x.add_argument("--config", help="flat key = value config file")
    x.add_argument("--setup", type=int, choices=(1, 2))
    x.add_argument("--k", type=int)
    x.add_argument("--lambda", dest="lam", type=float)
    x.add_argument("--seed", type=int)
    x.add_argument("--budget-frac", type=float)
    x.add_argument("--attack", choices=("modality", "ncar", "nnar"))
    x.add_argument("--select", choices=("greedy", "exact"))
    x.add_argument("--out", required=True, help="output directory")
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else USAGE_ERROR
    try:
        return args.func(args)
    except (DataError, FileNotFoundError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
