"""Command-line entry point: ``litefbcn <command> [options]``.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or config error.
"""

import argparse
import csv
import json
import os
import statistics
import sys

import numpy as np

from . import errors
from .analysis import (confusion, efficiency_report, export_manifest_features, format_report, metrics, rm_anova,
                       write_report_csv)
from .checks import TOLERANCE, head_checks, layer_checks
from .config import RunConfig
from .heads import ALIASES, HeadConfig, resolve_reduction
from .model import build_model, load_checkpoint
from .pipeline import CovarianceClassSpec, DatasetManifest, gen_covariance_dataset, stratified_kfold, train_folds

SUMMARY_HEADER = ["fold", "accuracy", "precision", "recall", "f1"]
USAGE_ERRORS = (errors.ConfigError, errors.NonDivisible, errors.NotPositiveDefinite, errors.RtfError,
                errors.LabelOutOfRange, errors.TooFewSamples, errors.ShapeMismatch, FileNotFoundError,
                json.JSONDecodeError, KeyError)


class UsageError(Exception):
    pass


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise errors.ConfigError(f"{path} does not exist") from None


def cmd_gen_data(args):
    raw = _load_json(args.spec)
    if not isinstance(raw, dict):
        raise errors.ConfigError(f"{args.spec}: dataset spec must be a JSON object")
    spec = CovarianceClassSpec.from_dict(raw)
    manifest = gen_covariance_dataset(spec, args.out, args.seed)
    for ci, name in enumerate(manifest.class_names):
        print(f"{name}: {int((manifest.labels == ci).sum())}")
    print(f"total: {len(manifest)} -> {os.path.join(args.out, 'manifest.csv')}")
    return 0


def _resolve_data(cfg, out_dir):
    if cfg.data.manifest:
        manifest = DatasetManifest.read(cfg.data.manifest)
    elif cfg.data.spec:
        spec = CovarianceClassSpec.from_dict(cfg.data.spec)
        manifest = gen_covariance_dataset(spec, os.path.join(out_dir, "data"), cfg.data.seed)
    else:
        raise errors.ConfigError("config needs data.manifest or data.spec (or pass --data)")
    manifest.validate()
    return manifest


def _summary_rows(reports):
    rows = [[str(r.fold)] + [f"{v:.6f}" for v in r.as_row().values()] for r in reports]
    agg = ["mean ± std"]
    for key in SUMMARY_HEADER[1:]:
        vals = [100 * getattr(r, key) for r in reports]
        std = statistics.stdev(vals) if len(vals) > 1 else 0.0
        agg.append(f"{statistics.fmean(vals):.2f} ± {std:.2f}")
    return rows + [agg]


def cmd_crossval(args):
    cfg = RunConfig.load(args.config)
    if args.head:
        gamma = args.gamma if args.gamma is not None else cfg.head.gamma
        cfg.head = HeadConfig(args.head, gamma=gamma, num_classes=cfg.head.num_classes,
                              reducer_bias=cfg.head.reducer_bias)
    elif args.gamma is not None:
        cfg.head.gamma = args.gamma
    if args.folds is not None:
        cfg.eval.folds = args.folds
    if args.data:
        cfg.data.manifest = os.path.abspath(args.data)
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.epochs is not None:
        cfg.train.epochs = args.epochs
    os.makedirs(args.out, exist_ok=True)
    manifest = _resolve_data(cfg, args.out)
    x = manifest.load()
    y = manifest.labels
    backbone = cfg.backbone_spec(x.shape[1:])
    if cfg.head.num_classes is None:
        cfg.head.num_classes = manifest.num_classes
    cfg.backbone = backbone.to_dict()
    if cfg.head.variant == "LiteFBCN":
        resolve_reduction(backbone.out_channels, cfg.head.gamma)
    cfg.write_resolved(os.path.join(args.out, "config.resolved.json"))

    splits = stratified_kfold(y, cfg.eval.folds, cfg.eval.seed, manifest.groups, cfg.eval.group_aware)
    results = train_folds(lambda f: build_model(backbone, cfg.head, seed=cfg.train.seed + f),
                          x, y, splits, cfg.train, out_dir=args.out)
    reports = []
    for res in results:
        cm = confusion(res.test_predictions, res.test_labels, cfg.head.num_classes)
        rep = metrics(cm, fold=res.fold)
        reports.append(rep)
        with open(os.path.join(args.out, f"fold{res.fold}", "metrics.json"), "w") as fh:
            json.dump({"fold": res.fold, "confusion": cm.tolist(), "accuracy": rep.accuracy,
                       "precision": rep.precision, "recall": rep.recall, "f1": rep.f1,
                       "weighted_precision": rep.weighted_precision, "weighted_recall": rep.weighted_recall,
                       "weighted_f1": rep.weighted_f1, "per_class": rep.per_class,
                       "degenerate_classes": rep.degenerate, "best_epoch": res.train.best_epoch},
                      fh, indent=2)
            fh.write("\n")
    rows = _summary_rows(reports)
    with open(os.path.join(args.out, "summary.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_HEADER)
        writer.writerows(rows)
    print(",".join(SUMMARY_HEADER))
    for row in rows:
        print(",".join(row))
    return 0


def read_summary(run_dir, metric="accuracy"):
    path = os.path.join(run_dir, "summary.csv")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if metric not in (reader.fieldnames or []):
            raise errors.ConfigError(f"{path} has no column {metric!r}")
        return [float(row[metric]) for row in reader if row["fold"].isdigit()]


def cmd_compare(args):
    columns = [read_summary(d, args.metric) for d in args.runs]
    counts = {len(c) for c in columns}
    if len(counts) != 1:
        raise errors.ConfigError(f"runs have mismatched fold counts: {[len(c) for c in columns]}")
    if len(args.runs) < 2:
        raise errors.ConfigError("compare needs at least two runs")
    res = rm_anova(np.array(columns).T)
    print(f"metric: {args.metric}  folds: {counts.pop()}  methods: {len(columns)}")
    print(f"F({res.df_treatment}, {res.df_error}) = {res.f:.6g}  p = {res.p:.6g}"
          + ("  [degenerate: zero error variance]" if res.degenerate else ""))
    verdict = "significant" if res.significant else "not significant"
    print(f"verdict at alpha = 0.05: {verdict}")
    return 0


def _bench_configs(backbone, heads, num_classes):
    names = list(ALIASES) if heads == "all" else [h.strip() for h in heads.split(",")]
    configs = []
    for name in names:
        variant = ALIASES.get(name, name)
        if variant == "LiteFBCN":
            for g in (2, 4, 8):
                resolve_reduction(backbone.out_channels, g)
                configs.append((backbone, HeadConfig(variant, gamma=g, num_classes=num_classes)))
        else:
            configs.append((backbone, HeadConfig(variant, num_classes=num_classes)))
    return configs


def cmd_bench(args):
    cfg = RunConfig.load(args.config)
    backbone = cfg.backbone_spec()
    ncls = cfg.head.num_classes or 5
    rows = efficiency_report(_bench_configs(backbone, args.heads, ncls), reps=args.reps, warmup=args.warmup)
    text = format_report(rows)
    print(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_report_csv(rows, os.path.join(args.out, "efficiency.csv"))
        with open(os.path.join(args.out, "efficiency.txt"), "w") as fh:
            fh.write(text + "\n")
        cfg.write_resolved(os.path.join(args.out, "config.resolved.json"))
    return 0


def cmd_grad_check(args):
    cfg = RunConfig.load(args.config)
    backbone = cfg.backbone_spec()
    ncls = cfg.head.num_classes or 3
    ok = True
    print("layer kind (isolated)        max rel error")
    for kind, err in layer_checks(args.seed).items():
        ok &= err < TOLERANCE
        print(f"  {kind:26s} {err:.3e}")
    gamma = cfg.head.gamma if cfg.head.variant == "LiteFBCN" else 2
    reports = head_checks(backbone, ncls, args.samples, gamma, seed=args.seed, corrupt=args.corrupt_grad)
    print("head variant (end to end)    max rel error   checked  kinks")
    kinds = {}
    for variant, rep in reports.items():
        ok &= rep.passed(TOLERANCE)
        print(f"  {variant:26s} {rep.max_rel_error:.3e}       {rep.n_checked:5d}  {rep.n_kinks:5d}")
        for kind, err in rep.per_kind.items():
            kinds[kind] = max(kinds.get(kind, 0.0), err)
    print("layer kind (in models)       max rel error")
    for kind, err in sorted(kinds.items()):
        print(f"  {kind:26s} {err:.3e}")
    print("PASS" if ok else "FAIL", f"(tolerance {TOLERANCE:g})")
    return 0 if ok else 1


def cmd_export_features(args):
    model = load_checkpoint(args.checkpoint)
    manifest = DatasetManifest.read(args.data)
    manifest.validate()
    export_manifest_features(model, manifest, args.out)
    print(f"wrote {len(manifest)} rows to {args.out}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="litefbcn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="write a synthetic covariance dataset")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("crossval", help="stratified k-fold training and evaluation")
    s.add_argument("--config")
    s.add_argument("--folds", type=int)
    s.add_argument("--head", choices=sorted(ALIASES))
    s.add_argument("--gamma", type=int)
    s.add_argument("--data", help="manifest CSV (overrides data.manifest)")
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_crossval)

    s = sub.add_parser("compare", help="repeated-measures ANOVA across crossval runs")
    s.add_argument("--runs", nargs="+", required=True)
    s.add_argument("--metric", default="accuracy", choices=SUMMARY_HEADER[1:])
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("bench", help="parameter / FLOP / latency table")
    s.add_argument("--config")
    s.add_argument("--heads", default="all")
    s.add_argument("--reps", type=int, default=200)
    s.add_argument("--warmup", type=int, default=10)
    s.add_argument("--out")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("grad-check", help="finite-difference gradient verification")
    s.add_argument("--config")
    s.add_argument("--samples", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--corrupt-grad", action="store_true", help="negative control: perturb one analytic gradient")
    s.set_defaults(func=cmd_grad_check)

    s = sub.add_parser("export-features", help="dump head embeddings as CSV")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_features)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except errors.DivergedLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except USAGE_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (errors.LiteFBCNError, ArithmeticError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
