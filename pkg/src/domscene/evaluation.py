"""Channel fusion, macro-F1 reports, cross-validation, submission files.

A segment is classified by averaging the posteriors of its channels
(one forward pass per channel) and taking the argmax, ties to the
lowest class index.  Reports carry the full confusion matrix plus
per-class precision/recall/F1; macro-F1 is the unweighted mean over
all nine classes, with 0 for a class whose denominator is empty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from domscene.dataset import N_CLASSES, DatasetManifest, Fold, SceneLabel
from domscene.errors import ManifestError, MetricError, ShapeError
from domscene.features import FeatureStore
from domscene.model import SceneClassifier


def fuse_channels(channel_posteriors: np.ndarray) -> np.ndarray:
    """Arithmetic mean of per-channel posterior rows; stays normalized."""
    p = np.asarray(channel_posteriors)
    if p.ndim != 2 or p.shape[0] < 1:
        raise ShapeError(f"fuse_channels: expected (channels, classes), got {p.shape}")
    return p.mean(axis=0)


def classify_segment(model: SceneClassifier, features: np.ndarray):
    """(channels, mel_bands, frames) -> (SceneLabel, fused posterior)."""
    posts = model.forward(np.asarray(features, dtype=model.dtype), train=False)
    fused = fuse_channels(posts)
    return SceneLabel(int(np.argmax(fused))), fused


def predict_segments(
    model: SceneClassifier,
    store: FeatureStore,
    segment_ids,
    chunk_segments: int = 64,
):
    """Batched fused prediction; returns (labels, posteriors (N, classes))."""
    segment_ids = list(segment_ids)
    labels: list[SceneLabel] = []
    fused_rows = []
    for start in range(0, len(segment_ids), chunk_segments):
        chunk = segment_ids[start : start + chunk_segments]
        feats = np.stack([store.get(sid) for sid in chunk])  # (B, C, M, T)
        b, c, m, t = feats.shape
        posts = model.forward(
            feats.reshape(b * c, m, t).astype(model.dtype, copy=False), train=False
        )
        fused = posts.reshape(b, c, -1).mean(axis=1)
        fused_rows.append(fused)
        labels.extend(SceneLabel(int(i)) for i in np.argmax(fused, axis=1))
    return labels, np.concatenate(fused_rows) if fused_rows else np.zeros((0, N_CLASSES))


@dataclass
class EvalReport:
    confusion: np.ndarray  # (9, 9) counts, rows = truth
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    macro_f1: float
    n_segments: int


def macro_average(f1_values) -> float:
    """Unweighted mean of class-wise F1 scores."""
    values = np.asarray(f1_values, dtype=np.float64)
    if values.size == 0:
        raise MetricError("macro average of zero classes")
    return float(values.mean())


def compute_report(truth, predicted) -> EvalReport:
    truth = [int(t) for t in truth]
    predicted = [int(p) for p in predicted]
    if not truth:
        raise MetricError("cannot score an empty prediction set")
    if len(truth) != len(predicted):
        raise MetricError(f"{len(truth)} truth labels vs {len(predicted)} predictions")
    confusion = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for t, p in zip(truth, predicted):
        confusion[t, p] += 1
    tp = np.diag(confusion).astype(np.float64)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        recall = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(2 * tp + fp + fn > 0, 2 * tp / (2 * tp + fp + fn), 0.0)
    return EvalReport(
        confusion=confusion,
        precision=precision,
        recall=recall,
        f1=f1,
        macro_f1=macro_average(f1),
        n_segments=len(truth),
    )


def write_report(report: EvalReport, path) -> None:
    """TSV: one row per class (precision, recall, F1) plus a macro line."""
    lines = ["class\tprecision\trecall\tf1"]
    for label in SceneLabel:
        lines.append(
            f"{label.name}\t{report.precision[label]:.6f}"
            f"\t{report.recall[label]:.6f}\t{report.f1[label]:.6f}"
        )
    lines.append(f"macro_f1\t{report.macro_f1:.6f}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_submission(predictions, path) -> None:
    """TSV lines `audio_path<TAB>label`, in input order."""
    predictions = list(predictions)
    if not predictions:
        raise ManifestError("no predictions to write")
    with open(path, "w", encoding="utf-8") as fh:
        for audio_path, label in predictions:
            name = label.name if isinstance(label, SceneLabel) else SceneLabel(int(label)).name
            fh.write(f"{audio_path}\t{name}\n")


@dataclass
class CVResult:
    fold_ids: list
    fold_reports: list
    fold_logs: list
    models: list
    pooled: EvalReport
    mean_fold_macro_f1: float


def cross_validate(
    manifest: DatasetManifest,
    store: FeatureStore,
    config,
    model_factory=None,
) -> CVResult:
    """Train one model per fold, score each test split, pool all predictions.

    The pooled report concatenates (truth, prediction) pairs across
    folds before scoring; the per-fold macro-F1 mean is also reported.
    """
    from domscene.training import train  # here to avoid a module cycle

    if not manifest.folds:
        raise ManifestError("manifest has no cross-validation folds")
    fold_ids, reports, logs, models = [], [], [], []
    pooled_truth: list[int] = []
    pooled_pred: list[int] = []
    for fold in manifest.folds:
        model, log = train(manifest, fold, store, config, model_factory=model_factory)
        truth = [int(manifest.entry(sid).label) for sid in fold.test_ids]
        pred, _ = predict_segments(model, store, fold.test_ids)
        reports.append(compute_report(truth, pred))
        logs.append(log)
        models.append(model)
        fold_ids.append(fold.fold_id)
        pooled_truth.extend(truth)
        pooled_pred.extend(int(p) for p in pred)
    pooled = compute_report(pooled_truth, pooled_pred)
    return CVResult(
        fold_ids=fold_ids,
        fold_reports=reports,
        fold_logs=logs,
        models=models,
        pooled=pooled,
        mean_fold_macro_f1=macro_average([r.macro_f1 for r in reports]),
    )
