"""Command-line front end.

Every subcommand writes into ``--out`` (default ``$DIFFCLS_OUTPUT_DIR`` or
``./runs``). A ``FAILED`` marker is created when a run starts and removed
only when it finishes, so an interrupted or crashed run is always marked.
Every artifact carries the resolved config and seed; CSV files carry them in
a ``.meta.json`` sidecar. Wall-clock time is recorded only with ``--timing``
so that reruns stay byte-identical.
"""
from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .binding import BindingTaskKind, PromptFeatureModel, binomial_report, generate_examples
from .calibration import (PlattModel, fit_platt, fit_temperature, platt_confidence,
                          reliability_and_ece, temperature_confidences, TemperatureModel)
from .classifier import (STRATEGIES, ClassifierConfig, classify, classify_dataset, efficiency_curve,
                         substream)
from .diffusion import (Condition, GaussianDenoiser, generate_world_sample, make_clustered_world,
                        make_world)
from .io import load_dataset, load_world, read_json, save_dataset, save_world, write_csv, write_json
from .weighting import WeightingSpec

MAX_EXAMPLES = 4096
FAILED = "FAILED"
DEFAULT_BUDGETS = "1,2,4,8,16,32,64,128,256,512,1024,2000"


class UsageError(Exception):
    pass


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get("DIFFCLS_OUTPUT_DIR") or "runs")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _existing(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def _classifier_config(args) -> ClassifierConfig:
    try:
        weighting = WeightingSpec.parse(args.weighting)
    except (OSError, ValueError) as err:
        raise UsageError(f"--weighting: {err}") from None
    pruning = args.pruning == "on"
    if pruning and args.noise_mode != "shared":
        raise UsageError("--pruning on requires --noise-mode shared")
    try:
        return ClassifierConfig(min_scores=args.min_scores, max_scores=args.max_scores,
                                cutoff_pval=args.cutoff_pval, weighting=weighting,
                                noise_mode=args.noise_mode, pruning=pruning, seed=args.seed,
                                alternative=args.alternative)
    except ValueError as err:
        raise UsageError(str(err)) from None


def _run_meta(args, config: ClassifierConfig | None = None, **extra) -> dict:
    meta = {"command": args.command, "seed": args.seed, "version": __version__}
    for k, v in sorted(vars(args).items()):
        if k in ("func", "command", "out", "timing"):
            continue
        meta.setdefault("args", {})[k] = v
    if config is not None:
        meta["classifier"] = config.to_dict()
        meta["zero_shot"] = config.weighting.zero_shot
    meta.update(extra)
    return meta


def _load_problem(args):
    world = load_world(_existing(args.world, "world file"))
    X, y = load_dataset(_existing(args.data, "dataset"))
    if X.shape[0] and X.shape[1] != world.dim:
        raise UsageError(f"dataset dimension {X.shape[1]} does not match world dimension {world.dim}")
    if X.shape[0] > args.max_examples:
        X, y = X[:args.max_examples], y[:args.max_examples]
    if np.any((y < 0) | (y >= world.n_classes)):
        raise UsageError("dataset labels fall outside the world's classes")
    return world, X, y


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_world(args, out: Path) -> None:
    wrng = substream(args.seed, "world")
    try:
        if args.clusters:
            if args.classes % args.clusters:
                raise UsageError("--classes must be a multiple of --clusters")
            world = make_clustered_world(args.clusters, args.classes // args.clusters, args.dim, args.std,
                                         args.separation, args.cluster_spread, wrng, seed=args.seed)
        else:
            world = make_world(args.classes, args.dim, args.std, args.separation, wrng,
                               spread=args.spread, seed=args.seed)
    except RuntimeError as err:
        raise UsageError(str(err)) from None
    drng = substream(args.seed, "dataset")
    y = drng.integers(0, world.n_classes, args.n)
    X = np.stack([generate_world_sample(world, int(k), drng) for k in y]) if args.n else np.zeros((0, world.dim))
    meta = _run_meta(args)
    save_world(out / "world.json", world, meta)
    save_dataset(out / "dataset.csv", X, y)
    write_json(out / "dataset.csv.meta.json", meta)


def _prediction_record(i, pred, label):
    rec = pred.to_dict()
    rec["index"] = i
    rec["label"] = int(label)
    rec["correct"] = bool(pred.class_id == label)
    return rec


def cmd_classify(args, out: Path) -> None:
    config = _classifier_config(args)
    world, X, y = _load_problem(args)
    model = GaussianDenoiser(world, config.schedule)
    labels = world.conditions()
    t0 = time.perf_counter()
    preds = classify_dataset(X, labels, model, config, workers=args.workers, keep_ledger=args.scores)
    elapsed = time.perf_counter() - t0
    records = [_prediction_record(i, p, y[i]) for i, p in enumerate(preds)]
    calls = [r["model_calls"] for r in records]
    report = {
        "config": _run_meta(args, config),
        "n_examples": len(records),
        "accuracy": float(np.mean([r["correct"] for r in records])) if records else None,
        "mean_calls": float(np.mean(calls)) if calls else None,
        "median_calls": float(statistics.median(calls)) if calls else None,
        "predictions": records,
    }
    if args.timing:
        report["wall_clock_s"] = elapsed
    write_json(out / "report.json", report)
    (out / "predictions.jsonl").write_text(
        "".join(json.dumps(r, sort_keys=True) + "\n" for r in records), encoding="utf-8")
    write_csv(out / "predictions.csv", ["index", "label", "prediction", "n_rounds", "model_calls", "correct"],
              ([r["index"], r["label"], r["class_id"], r["n_rounds"], r["model_calls"], int(r["correct"])]
               for r in records), meta=report["config"])
    if args.scores:
        sdir = out / "scores"
        sdir.mkdir(exist_ok=True)
        for i, p in enumerate(preds):
            write_csv(sdir / f"example_{i:05d}.csv", ["round", "t", "w_t", "class_id", "sq_error"],
                      ([r, float(t), float(w), c, float(e)] for r, t, w, c, e in p.ledger.rows()))
        write_json(sdir / "scores.meta.json", report["config"])


def cmd_efficiency(args, out: Path) -> None:
    config = _classifier_config(args)
    world, X, y = _load_problem(args)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    for s in strategies:
        if s not in STRATEGIES:
            raise UsageError(f"unknown strategy {s!r}; expected one of {', '.join(STRATEGIES)}")
    try:
        budgets = [int(b) for b in args.budgets.split(",") if b.strip()]
    except ValueError:
        raise UsageError("--budgets must be comma-separated integers") from None
    if len(X) == 0:
        raise UsageError("efficiency needs a non-empty dataset")
    model = GaussianDenoiser(world, config.schedule)
    rows = efficiency_curve(X, y, world.conditions(), model, strategies, budgets, config, workers=args.workers)
    write_csv(out / "efficiency.csv", ["strategy", "budget", "accuracy", "mean_calls"],
              ([r.strategy, r.budget, r.accuracy, r.mean_calls] for r in rows),
              meta=_run_meta(args, config, n_examples=len(X)))


def _split(n: int, fraction: float, seed: int):
    if not 0.0 < fraction < 1.0:
        raise UsageError("--split must lie strictly between 0 and 1")
    n_fit = int(round(fraction * n))
    if n_fit < 1 or n_fit >= n:
        raise UsageError(f"--split {fraction} leaves an empty fit or evaluation set for {n} examples")
    order = substream(seed, "splits").permutation(n)
    return np.sort(order[:n_fit]), np.sort(order[n_fit:])


def cmd_calibrate(args, out: Path) -> None:
    run = read_json(_existing(args.run, "classification report"))
    run_cfg = run["config"]["classifier"]
    methods = ["platt", "temperature"] if args.method == "both" else [args.method]
    pruned = bool(run_cfg["pruning"])
    if "temperature" in methods and pruned:
        raise UsageError("temperature scaling needs every class scored to the end and is "
                         "not compatible with the class pruning; use --method platt or an unpruned run")
    recs = run["predictions"]
    if len(recs) < 2:
        raise UsageError("calibration needs at least two classified examples")
    fit_idx, eval_idx = _split(len(recs), args.split, args.seed)
    correct = np.array([r["correct"] for r in recs], dtype=float)
    report = {"config": _run_meta(args, split_sizes=[len(fit_idx), len(eval_idx)], run_config=run["config"]),
              "methods": {}}
    for method in methods:
        if method == "platt":
            n = np.array([r["model_calls"] for r in recs], dtype=float)
            try:
                model = fit_platt(n[fit_idx], correct[fit_idx])
            except ValueError as err:
                raise UsageError(f"Platt fit failed: {err}") from None
            base = PlattModel(tau=float(args.baseline_tau), beta=0.0)
            conf = platt_confidence(model, n[eval_idx])
            base_conf = platt_confidence(base, n[eval_idx])
            params = {"tau": model.tau, "beta": model.beta}
            base_params = {"tau": base.tau, "beta": base.beta}
        else:
            scores = [{int(k): float(v) for k, v in r["scores"].items()} for r in recs]
            labels = [r["label"] for r in recs]
            try:
                model = fit_temperature([scores[i] for i in fit_idx], [labels[i] for i in fit_idx])
            except ValueError as err:
                raise UsageError(f"temperature fit failed: {err}") from None
            _, conf = temperature_confidences([scores[i] for i in eval_idx], model)
            _, base_conf = temperature_confidences([scores[i] for i in eval_idx], TemperatureModel(1.0))
            params = {"tau": model.tau}
            base_params = {"tau": 1.0}
        rel = reliability_and_ece(conf, correct[eval_idx], n_bins=args.bins)
        base_rel = reliability_and_ece(base_conf, correct[eval_idx], n_bins=args.bins)
        report["methods"][method] = {"params": params, "reliability": rel.to_dict(),
                                     "baseline": {"params": base_params, "reliability": base_rel.to_dict()}}
        write_json(out / f"reliability_{method}.json",
                   dict(rel.to_dict(), config=report["config"], params=params))
    write_json(out / "calibration.json", report)


def cmd_binding(args, out: Path) -> None:
    try:
        task = BindingTaskKind.parse(args.task)
    except ValueError as err:
        raise UsageError(f"--task {args.task!r}: {err}. Valid forms: Attr (control), Target|Given "
                         "(binding), A,B (pair) with attributes shape, color, size, position") from None
    examples = generate_examples(task, args.n, args.seed)
    meta = _run_meta(args)
    path = out / "tasks.jsonl"
    path.write_text("".join(e.to_json() + "\n" for e in examples), encoding="utf-8")
    write_json(str(path) + ".meta.json", meta)
    if not args.evaluate:
        return
    if not examples:
        raise UsageError("--evaluate needs --n >= 1")
    config = _classifier_config(args)
    model = PromptFeatureModel(dim=args.feature_dim, std=args.feature_std, bind=args.bind, seed=args.seed)
    picks = []
    for i, ex in enumerate(examples):
        rng = substream(args.seed, "episodes", i)
        if args.scorer == "positive":
            picks.append(ex.positive)
            continue
        if args.scorer == "random":
            picks.append(ex.positive if rng.random() < 0.5 else ex.negative)
            continue
        x0 = model.embed_scene(ex.scene, rng)
        labels = [Condition(0, ex.positive), Condition(1, ex.negative)]
        pred = classify(x0, labels, model, config, rng)
        picks.append(ex.positive if pred.class_id == 0 else ex.negative)
    correct = sum(p == ex.positive for p, ex in zip(picks, examples))
    rep = binomial_report(correct, len(examples))
    write_json(out / "binding_report.json", dict(rep.to_dict(), task=str(task), scorer=args.scorer,
                                                 config=_run_meta(args, config)))


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_classifier_flags(p) -> None:
    g = p.add_argument_group("classifier")
    g.add_argument("--min-scores", type=int, default=20)
    g.add_argument("--max-scores", type=int, default=2000)
    g.add_argument("--cutoff-pval", type=float, default=2e-3)
    g.add_argument("--weighting", default="heuristic:7",
                   help="simple | vdm | heuristic[:lambda] | learned:<file> (default heuristic:7)")
    g.add_argument("--noise-mode", choices=("shared", "independent"), default="shared")
    g.add_argument("--pruning", choices=("on", "off"), default="on")
    g.add_argument("--alternative", choices=("greater", "two-sided"), default="greater")
    g.add_argument("--workers", type=int, default=1)


def _add_problem_flags(p) -> None:
    p.add_argument("--world", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--max-examples", type=int, default=MAX_EXAMPLES,
                   help=f"use at most this many leading rows (default {MAX_EXAMPLES})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffcls", description="Zero-shot classification with conditional denoisers.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="output directory (default $DIFFCLS_OUTPUT_DIR or ./runs)")
        p.add_argument("--timing", action="store_true", help="record wall-clock time in reports")

    p = sub.add_parser("gen-world", help="sample a Gaussian world and a labelled dataset")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--std", type=float, default=1.0)
    p.add_argument("--separation", type=float, required=True,
                   help="minimum pairwise distance between means (between cluster centres with --clusters), in units of std")
    p.add_argument("--spread", type=float, default=None)
    p.add_argument("--clusters", type=int, default=0, help="group classes into this many clusters")
    p.add_argument("--cluster-spread", type=float, default=0.4)
    p.add_argument("--n", type=int, required=True)
    common(p)
    p.set_defaults(func=cmd_gen_world)

    p = sub.add_parser("classify", help="classify a dataset")
    _add_problem_flags(p)
    _add_classifier_flags(p)
    p.add_argument("--scores", action="store_true", help="also write per-example score tables")
    common(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("efficiency", help="accuracy against model calls per strategy")
    _add_problem_flags(p)
    _add_classifier_flags(p)
    p.add_argument("--strategies", default="naive,shared,pruned")
    p.add_argument("--budgets", default=DEFAULT_BUDGETS, help="samples per class (max_scores for pruned)")
    common(p)
    p.set_defaults(func=cmd_efficiency)

    p = sub.add_parser("calibrate", help="fit confidence models on a held-out split of a classify run")
    p.add_argument("--run", required=True, help="report.json written by classify")
    p.add_argument("--method", choices=("platt", "temperature", "both"), default="platt")
    p.add_argument("--split", type=float, default=0.2, help="fraction of examples used for fitting")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--baseline-tau", type=float, default=2000.0,
                   help="tau of the unfitted sigmoid(-n/tau) baseline")
    common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("binding-gen", help="generate attribute-binding prompt pairs")
    p.add_argument("--task", required=True, help="e.g. Shape, Color|Shape, Shape,Size")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--evaluate", action="store_true")
    p.add_argument("--scorer", choices=("features", "positive", "random"), default="features")
    p.add_argument("--feature-dim", type=int, default=64)
    p.add_argument("--feature-std", type=float, default=0.5)
    p.add_argument("--bind", type=float, default=1.0, help="strength of attribute-pair features")
    _add_classifier_flags(p)
    common(p)
    p.set_defaults(func=cmd_binding)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = _out_dir(args)
    marker = out / FAILED
    marker.write_text(f"{args.command}: run started and has not completed\n", encoding="utf-8")
    try:
        args.func(args, out)
    except UsageError as err:
        marker.write_text(f"{args.command}: {err}\n", encoding="utf-8")
        parser.exit(2, f"diffcls {args.command}: error: {err}\n")
    except Exception as err:
        marker.write_text(f"{args.command}: {type(err).__name__}: {err}\n", encoding="utf-8")
        raise
    marker.unlink()
    return 0


if __name__ == "__main__":
    sys.exit(main())
