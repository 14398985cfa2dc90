"""Command-line pipeline: synthesize, extract features, train, cross-validate,
predict, and score checkpoints.

Every subcommand is a batch step: it reads its inputs, writes its artifacts,
and exits. Defaults mirror the full-scale training recipe (500 epochs, eval
every 10, 256-segment batches, lr 1e-4, 30% validation); desk-scale runs pass
explicit reduced flags.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from domscene.dataset import DatasetManifest, Fold, load_manifest
from domscene.errors import DomsceneError, ManifestError
from domscene.evaluation import (
    compute_report,
    cross_validate,
    predict_segments,
    write_report,
    write_submission,
)
from domscene.features import FeatureConfig, FeatureStore
from domscene.model import load_checkpoint, save_checkpoint
from domscene.synthgen import SynthSpec, generate_corpus
from domscene.training import TrainConfig, train, write_train_log


def _feature_store(args) -> FeatureStore:
    cache = Path(args.features_dir) if args.features_dir else None
    return FeatureStore(Path(args.audio_root), FeatureConfig(), cache_dir=cache)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        eval_every=args.eval_every,
        batch_segments=args.batch_segments,
        learning_rate=args.lr,
        validation_fraction=args.val_fraction,
        seed=args.seed,
    )


def _load(args) -> DatasetManifest:
    return load_manifest(args.meta, getattr(args, "folds", None))


def _find_fold(manifest: DatasetManifest, fold_id: int) -> Fold:
    for fold in manifest.folds:
        if fold.fold_id == fold_id:
            return fold
    have = ", ".join(str(f.fold_id) for f in manifest.folds) or "none"
    raise ManifestError(f"fold {fold_id} not found (available: {have})")


def _cmd_synth(args) -> int:
    spec = SynthSpec(segments_per_class=args.segments_per_class, seed=args.seed)
    manifest = generate_corpus(spec, Path(args.out))
    print(f"synth: wrote {len(manifest.entries)} segments under {args.out}")
    return 0


def _cmd_extract(args) -> int:
    manifest = _load(args)
    store = _feature_store(args)
    extracted = store.warm(manifest.segment_ids())
    cached = len(manifest.entries) - extracted
    print(f"extract: cached {extracted} segments ({cached} already present)")
    return 0


def _cmd_train(args) -> int:
    manifest = _load(args)
    fold = _find_fold(manifest, args.fold_id)
    model, log = train(manifest, fold, _feature_store(args), _train_config(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / f"fold{fold.fold_id}.ckpt")
    write_train_log(log, out / f"fold{fold.fold_id}_train_log.tsv")
    if log.best_epoch is None:
        print(f"train: fold {fold.fold_id} saved without validation (0 epochs)")
    else:
        print(
            f"train: fold {fold.fold_id} best val macro-F1 "
            f"{log.best_score:.4f} at epoch {log.best_epoch}"
        )
    return 0


def _cmd_cv(args) -> int:
    manifest = _load(args)
    result = cross_validate(manifest, _feature_store(args), _train_config(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for fold_id, report, log, model in zip(
        result.fold_ids, result.fold_reports, result.fold_logs, result.models
    ):
        write_report(report, out / f"fold{fold_id}_report.tsv")
        write_train_log(log, out / f"fold{fold_id}_train_log.tsv")
        save_checkpoint(model, out / f"fold{fold_id}.ckpt")
        print(f"cv: fold {fold_id} macro-F1 {report.macro_f1:.4f}")
    write_report(result.pooled, out / "pooled_report.tsv")
    print(
        f"cv: pooled macro-F1 {result.pooled.macro_f1:.4f}, "
        f"mean of folds {result.mean_fold_macro_f1:.4f}"
    )
    return 0


def _cmd_predict(args) -> int:
    manifest = _load(args)
    model = load_checkpoint(args.checkpoint)
    ids = manifest.segment_ids()
    labels, _ = predict_segments(model, _feature_store(args), ids)
    write_submission(list(zip(ids, labels)), args.out)
    print(f"predict: wrote {len(ids)} labels to {args.out}")
    return 0


def _cmd_report(args) -> int:
    manifest = _load(args)
    fold = _find_fold(manifest, args.fold_id)
    model = load_checkpoint(args.checkpoint)
    truth = []
    for sid in fold.test_ids:
        label = manifest.entry(sid).label
        if label is None:
            raise ManifestError(f"segment {sid!r} has no label to score against")
        truth.append(label)
    labels, _ = predict_segments(model, _feature_store(args), fold.test_ids)
    report = compute_report(truth, labels)
    write_report(report, args.out)
    print(f"report: fold {fold.fold_id} macro-F1 {report.macro_f1:.4f}")
    return 0


def _add_data_flags(
    p: argparse.ArgumentParser, *, need_folds: bool, need_features_dir: bool = False
) -> None:
    p.add_argument("--meta", required=True, help="dataset manifest TSV")
    p.add_argument(
        "--folds",
        required=need_folds,
        default=None,
        help="directory holding foldK_train.tsv / foldK_test.tsv splits",
    )
    p.add_argument(
        "--audio-root",
        required=True,
        help="directory the manifest's audio paths are relative to",
    )
    p.add_argument(
        "--features-dir",
        required=need_features_dir,
        default=None,
        help="log-mel cache directory; features are recomputed when omitted",
    )


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--epochs", type=int, default=500, help="training epochs")
    p.add_argument("--eval-every", type=int, default=10, help="epochs between validation passes")
    p.add_argument("--batch-segments", type=int, default=256, help="segments per batch")
    p.add_argument("--lr", type=float, default=1e-4, help="Adam learning rate")
    p.add_argument(
        "--val-fraction", type=float, default=0.30, help="held-out validation share per class"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="domscene",
        description="Multi-channel acoustic scene classification pipeline.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="subcommand")

    def add(name, handler, help_text):
        # help= is %-interpolated by argparse, description= is not
        p = sub.add_parser(
            name,
            help=help_text,
            description=help_text.replace("%%", "%"),
            formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        )
        p.set_defaults(handler=handler)
        return p

    p = add(name="synth", handler=_cmd_synth,
            help_text="Generate a labeled synthetic corpus with fold splits.")
    p.add_argument("--out", required=True, help="corpus output directory")
    p.add_argument("--seed", type=int, default=0, help="corpus seed")
    p.add_argument(
        "--segments-per-class", type=int, default=90, help="corpus size per class"
    )

    p = add(name="extract", handler=_cmd_extract,
            help_text="Cache log-mel features (40 bands, 40 ms frames, 50%% hop, "
                      "50-8000 Hz) for every manifest segment.")
    _add_data_flags(p, need_folds=False, need_features_dir=True)

    p = add(name="train", handler=_cmd_train,
            help_text="Train one fold and write its best checkpoint plus a training log.")
    _add_data_flags(p, need_folds=True)
    p.add_argument("--fold-id", type=int, required=True, help="fold to train")
    p.add_argument("--out", required=True, help="output directory")
    _add_train_flags(p)

    p = add(name="cv", handler=_cmd_cv,
            help_text="Run full cross-validation; write per-fold and pooled reports, "
                      "logs, and checkpoints.")
    _add_data_flags(p, need_folds=True)
    p.add_argument("--out", required=True, help="output directory")
    _add_train_flags(p)

    p = add(name="predict", handler=_cmd_predict,
            help_text="Label every manifest segment with a trained checkpoint.")
    _add_data_flags(p, need_folds=False)
    p.add_argument("--checkpoint", required=True, help="trained model checkpoint")
    p.add_argument("--out", required=True, help="submission TSV path")

    p = add(name="report", handler=_cmd_report,
            help_text="Score a checkpoint on one fold's test split.")
    _add_data_flags(p, need_folds=True)
    p.add_argument("--fold-id", type=int, required=True, help="fold whose test split to score")
    p.add_argument("--checkpoint", required=True, help="trained model checkpoint")
    p.add_argument("--out", required=True, help="report TSV path")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (DomsceneError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
