"""Command-line front end for reproducible experiments.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
failure (non-finite loss, failed gradient check). Hyperparameters come
from built-in defaults, overridden by an optional key=value config file,
overridden by explicit flags, in that order.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import evaluation, gradcheck, synthetic
from .config import read_kv
from .errors import IoFailure, MocError, NumericError, SpecInvalid
from .evaluation import MetricsRow, fold_rows
from .meta import read_checkpoint, write_checkpoint
from .bank import parse_bank_arg
from .splits import read_splits, sample_few_shot_splits, write_splits
from .store import BagStore, read_manifest, read_prompts
from .training import TrainConfig, config_from_kv, train, write_report

PROG = "moc"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; route it to our own exit code 1 instead
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key=value config file")
    p.add_argument("--q", type=int, help="nomination size per classifier")
    p.add_argument("--topk", type=int, help="pooling size K")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--bank", help="comma list of classifier ids or short aliases")
    p.add_argument("--fusion", choices=["meta", "sum"])
    p.add_argument("--no-nomination", action="store_const", const=True, dest="no_nomination",
                   help="score every patch instead of the nominated union")


def _build_config(args) -> TrainConfig:
    config = TrainConfig()
    if args.config is not None:
        config = config_from_kv(read_kv(args.config), config, source=str(args.config))
    overrides = {}
    for key in ("q", "topk", "lr", "epochs", "patience", "hidden", "seed",
                "threads", "fusion", "no_nomination"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = str(value)
    if getattr(args, "bank", None) is not None:
        overrides["bank"] = ",".join(parse_bank_arg(args.bank))
    return config_from_kv(overrides, config, source="<flags>")


def _load_dataset(args):
    manifest = read_manifest(args.manifest)
    prompts_path = args.prompts or Path(args.manifest).parent / "prompts.mocp"
    prompts = read_prompts(prompts_path)
    return BagStore(manifest), prompts


def _fold_paths(out_dir: Path, fold: int) -> tuple[Path, Path]:
    return out_dir / f"fold{fold}.mocm", out_dir / f"fold{fold}.report.tsv"


def _print_aggregate(label: str, folds) -> None:
    agg = evaluation.aggregate_folds(folds)
    print(f"{label}: auc={agg.auc_mean:.4f} ± {agg.auc_std:.4f} "
          f"acc={agg.acc_mean:.4f} ± {agg.acc_std:.4f} over {agg.n_folds} folds")


# -- subcommands ---------------------------------------------------------------

def _cmd_synth(args) -> int:
    if args.spec in synthetic.BUILTIN_SPECS:
        spec = synthetic.BUILTIN_SPECS[args.spec]
    elif Path(args.spec).exists():
        spec = synthetic.spec_from_kv(read_kv(args.spec), source=args.spec)
    else:
        raise SpecInvalid(
            f"unknown spec {args.spec!r}: expected one of "
            f"{sorted(synthetic.BUILTIN_SPECS)} or a config file path")
    dataset = synthetic.generate_synthetic(spec, args.seed)
    synthetic.write_dataset(dataset, args.out)
    print(f"synth: {len(dataset.bags)} bags, {spec.classes} classes, dim {spec.dim} -> {args.out}")
    print(f"synth: checksum {synthetic.dataset_checksum(dataset)}")
    return 0


def _cmd_split(args) -> int:
    manifest = read_manifest(args.manifest)
    splits = sample_few_shot_splits(manifest, args.shots, args.folds,
                                    args.val_size, args.test_size, args.seed)
    write_splits(splits, args.out)
    print(f"split: {len(splits)} folds, {args.shots}-shot, "
          f"val {args.val_size} test {args.test_size} -> {args.out}")
    return 0


def _iter_folds(args, splits):
    if args.fold is None:
        return list(splits)
    for split in splits:
        if split.fold_index == args.fold:
            return [split]
    raise _UsageError(f"{PROG}: fold {args.fold} not in split file (0..{len(splits) - 1})")


def _cmd_train(args) -> int:
    config = _build_config(args)
    store, prompts = _load_dataset(args)
    splits = read_splits(args.split_file)
    out_dir = Path(args.out)
    for split in _iter_folds(args, splits):
        meta, report = train(store, prompts, split, config)
        ckpt_path, report_path = _fold_paths(out_dir, split.fold_index)
        write_checkpoint(meta, ckpt_path)
        write_report(report, report_path)
        aucs = report.val_aucs
        best = aucs[report.selected_epoch] if aucs else float("nan")
        print(f"train: fold {split.fold_index} epoch {report.selected_epoch} "
              f"val_auc {best:.4f} -> {ckpt_path}")
    return 0


def _cmd_eval(args) -> int:
    config = _build_config(args)
    store, prompts = _load_dataset(args)
    splits = read_splits(args.split_file)
    shots = splits[0].shots
    folds = []
    for split in _iter_folds(args, splits):
        if config.fusion == "sum":
            meta = None
        else:
            if args.checkpoints is None:
                raise _UsageError(f"{PROG}: --checkpoints is required unless --fusion sum")
            ckpt_path, _ = _fold_paths(Path(args.checkpoints), split.fold_index)
            if not ckpt_path.exists():
                raise IoFailure(f"missing checkpoint {ckpt_path}; run `{PROG} train` first")
            meta = read_checkpoint(ckpt_path)
        metrics, _ = evaluation.evaluate_fold(store, prompts, split, meta, config)
        folds.append(metrics)
        print(f"eval: fold {metrics.fold_index} auc {metrics.auc:.4f} acc {metrics.acc:.4f}")
    method = config.fusion
    _print_aggregate(f"eval[{method}]", folds)
    if args.out:
        header = {"method": method, "shots": shots, "dataset_id": store.manifest.dataset_id,
                  "bank": list(config.bank), "seed": config.seed}
        evaluation.write_metrics(fold_rows(method, shots, folds), args.out, header)
    return 0


def _cmd_zeroshot(args) -> int:
    store, prompts = _load_dataset(args)
    splits = read_splits(args.split_file)
    folds = []
    for split in _iter_folds(args, splits):
        metrics, _ = evaluation.zero_shot_fold(store, prompts, split, args.topk,
                                               threads=args.threads or 1)
        folds.append(metrics)
        print(f"zeroshot: fold {metrics.fold_index} auc {metrics.auc:.4f} acc {metrics.acc:.4f}")
    _print_aggregate("zeroshot", folds)
    if args.out:
        # shots recorded as 0: nothing is trained, so output is shot-independent
        header = {"method": "zeroshot", "topk": args.topk,
                  "dataset_id": store.manifest.dataset_id}
        evaluation.write_metrics(fold_rows("zeroshot", 0, folds), args.out, header)
    return 0


def _cmd_ablate(args) -> int:
    config = _build_config(args)
    store, prompts = _load_dataset(args)
    splits = read_splits(args.split_file)
    subsets = [parse_bank_arg(part) for part in args.subsets.split(";") if part.strip()]
    if not subsets:
        raise _UsageError(f"{PROG}: --subsets is empty")
    rows = evaluation.run_ablation(store, prompts, _iter_folds(args, splits), config,
                                   subsets, include_summation=not args.no_summation)
    lines = ["method\tauc_mean\tauc_std\tacc_mean\tacc_std\tn_folds"]
    for r in rows:
        lines.append(f"{r.method}\t{r.auc_mean!r}\t{r.auc_std!r}"
                     f"\t{r.acc_mean!r}\t{r.acc_std!r}\t{r.n_folds}")
        print(f"ablate: {r.method} auc={r.auc_mean:.4f} ± {r.auc_std:.4f}")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def _cmd_export_scores(args) -> int:
    config = _build_config(args)
    store, prompts = _load_dataset(args)
    meta = read_checkpoint(args.checkpoint) if args.checkpoint else None
    evaluation.export_patch_scores(store.get(args.slide), prompts, meta, config, args.out)
    print(f"export-scores: {args.slide} -> {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    reports = gradcheck.run_all_checks(args.seed or 0, args.instances)
    failed = [r for r in reports if not r.passed]
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        print(f"gradcheck: {r.name} max_rel_err {r.max_rel_err:.3e} "
              f"tol {r.tol:.0e} over {r.n_instances} instances {status}")
    if failed:
        raise gradcheck.GradCheckFailed(
            ", ".join(f"{r.name} {r.max_rel_err:.3e} > {r.tol:.0e}" for r in failed))
    return 0


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("synth", help="generate a synthetic dataset", parents=[], add_help=True)
    p.add_argument("--spec", default="default",
                   help="built-in spec name or key=value spec file (default: default)")
    p.add_argument("--seed", type=int, default=synthetic.DEFAULT_SEED)
    p.add_argument("--out", type=Path, required=True, help="output dataset directory")
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("split", help="sample few-shot fold splits")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--shots", type=int, default=1, help="labeled slides per class")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--val-size", type=int, default=8, dest="val_size")
    p.add_argument("--test-size", type=int, default=16, dest="test_size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="output split file")
    p.set_defaults(fn=_cmd_split)

    p = sub.add_parser("train", help="train the mixing network per fold")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--prompts", type=Path, help="default: prompts.mocp next to the manifest")
    p.add_argument("--split-file", type=Path, required=True, dest="split_file")
    p.add_argument("--fold", type=int, help="train a single fold (default: all)")
    p.add_argument("--out", type=Path, required=True, help="checkpoint output directory")
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="score test slides with trained checkpoints")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--prompts", type=Path)
    p.add_argument("--split-file", type=Path, required=True, dest="split_file")
    p.add_argument("--fold", type=int, help="evaluate a single fold (default: all)")
    p.add_argument("--checkpoints", type=Path, help="directory written by `train`")
    p.add_argument("--out", type=Path, help="metrics file to write")
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("zeroshot", help="baseline without any training")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--prompts", type=Path)
    p.add_argument("--split-file", type=Path, required=True, dest="split_file")
    p.add_argument("--fold", type=int)
    p.add_argument("--topk", type=int, default=TrainConfig.topk)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", type=Path, help="metrics file to write")
    p.set_defaults(fn=_cmd_zeroshot)

    p = sub.add_parser("ablate", help="compare classifier subsets and fusion modes")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--prompts", type=Path)
    p.add_argument("--split-file", type=Path, required=True, dest="split_file")
    p.add_argument("--fold", type=int)
    p.add_argument("--subsets",
                   default="peak;peak,certainty;peak,certainty,divergence;"
                           "peak,certainty,divergence,background",
                   help="semicolon-separated comma lists of classifier ids")
    p.add_argument("--no-summation", action="store_true", dest="no_summation",
                   help="skip the equal-weight summation comparison rows")
    p.add_argument("--out", type=Path, help="ablation table to write")
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_ablate)

    p = sub.add_parser("export-scores", help="per-patch score table for one slide")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--prompts", type=Path)
    p.add_argument("--slide", required=True, help="slide id from the manifest")
    p.add_argument("--checkpoint", type=Path, help="trained meta-learner (optional)")
    p.add_argument("--out", type=Path, required=True, help="CSV to write")
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_export_scores)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.set_defaults(fn=_cmd_gradcheck)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"{PROG}: numeric failure: {exc}", file=sys.stderr)
        return 3
    except MocError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
