"""Balanced-epoch training with periodic validation and best-model retention.

Each epoch draws an equal number of segments per class (the size of
the smallest class), shuffles them, and walks batches of 256 segments;
every segment contributes all of its channels, so a full batch holds
1024 channel-examples.  Every eval_every epochs the fused macro-F1 on
a held-out stratified validation split is recorded, and the parameters
with the best validation score become the final model (ties keep the
earlier epoch).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from domscene import nn
from domscene.dataset import DatasetManifest, Fold, SceneLabel
from domscene.errors import ConfigError, TrainingError
from domscene.evaluation import compute_report, predict_segments
from domscene.features import FeatureStore
from domscene.model import SceneClassifier


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    eval_every: int = 10
    batch_segments: int = 256
    learning_rate: float = 1e-4
    validation_fraction: float = 0.30
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.eval_every < 1:
            raise ConfigError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.batch_segments < 1:
            raise ConfigError(f"batch_segments must be >= 1, got {self.batch_segments}")
        if not 0 < self.validation_fraction < 1:
            raise ConfigError(
                f"validation_fraction must be in (0, 1), got {self.validation_fraction}"
            )
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")


@dataclass(frozen=True)
class EvalRecord:
    epoch: int
    val_macro_f1: float
    mean_loss: float


@dataclass
class TrainLog:
    records: list[EvalRecord] = field(default_factory=list)
    best_epoch: int | None = None
    best_score: float | None = None


def write_train_log(log: TrainLog, path) -> None:
    lines = ["epoch\tval_macro_f1\tmean_loss"]
    for r in log.records:
        lines.append(f"{r.epoch}\t{r.val_macro_f1:.6f}\t{r.mean_loss:.6f}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def split_train_validation(segment_ids, labels: dict, fraction: float = 0.30, seed=0):
    """Stratified split at segment granularity; returns (train, validation).

    Every class keeps round(n * fraction) segments on the validation
    side, so proportions are within one segment of the fraction.  A
    class with fewer than 2 segments cannot appear on both sides and
    is rejected.
    """
    if not 0 < fraction < 1:
        raise ConfigError(f"fraction must be in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    by_class: dict[int, list] = {}
    for sid in segment_ids:
        by_class.setdefault(int(labels[sid]), []).append(sid)
    train_ids: list = []
    val_ids: list = []
    for cls in sorted(by_class):
        ids = by_class[cls]
        if len(ids) < 2:
            raise TrainingError(
                f"class {SceneLabel(cls).name} has {len(ids)} segment(s); need >= 2 to split"
            )
        n_val = min(max(int(round(len(ids) * fraction)), 1), len(ids) - 1)
        order = rng.permutation(len(ids))
        val_ids.extend(ids[i] for i in order[:n_val])
        train_ids.extend(ids[i] for i in order[n_val:])
    return train_ids, val_ids


def balanced_epoch_sample(segment_ids, labels: dict, rng: np.random.Generator) -> list:
    """Uniform draw of min-class-count segments per class, shuffled."""
    by_class: dict[int, list] = {int(c): [] for c in SceneLabel}
    for sid in segment_ids:
        by_class[int(labels[sid])].append(sid)
    empty = [SceneLabel(c).name for c, ids in by_class.items() if not ids]
    if empty:
        raise TrainingError(f"cannot balance an epoch: no segments for {', '.join(empty)}")
    smallest = min(len(ids) for ids in by_class.values())
    sample: list = []
    for cls in sorted(by_class):
        ids = by_class[cls]
        order = rng.permutation(len(ids))[:smallest]
        sample.extend(ids[i] for i in order)
    order = rng.permutation(len(sample))
    return [sample[i] for i in order]


def _check_flat_histogram(sample, labels) -> None:
    counts: dict[int, int] = {}
    for sid in sample:
        counts[int(labels[sid])] = counts.get(int(labels[sid]), 0) + 1
    if len(set(counts.values())) != 1:
        raise TrainingError(f"epoch sample histogram is not flat: {counts}")


def train(
    manifest: DatasetManifest,
    fold: Fold,
    store: FeatureStore,
    config: TrainConfig,
    model_factory=None,
) -> tuple[SceneClassifier, TrainLog]:
    """Train on one fold's train split; returns (best model, TrainLog)."""
    labels: dict[str, int] = {}
    for sid in fold.train_ids:
        entry = manifest.entry(sid)
        if entry.label is None:
            raise TrainingError(f"segment {sid!r} in the train split is unlabeled")
        labels[sid] = int(entry.label)

    seed_seq = np.random.SeedSequence([config.seed, fold.fold_id])
    init_ss, split_ss, sample_ss, dropout_ss = seed_seq.spawn(4)
    init_rng = np.random.default_rng(init_ss)
    sample_rng = np.random.default_rng(sample_ss)
    dropout_rng = np.random.default_rng(dropout_ss)

    model = model_factory(init_rng) if model_factory else SceneClassifier(rng=init_rng)
    train_ids, val_ids = split_train_validation(
        fold.train_ids, labels, config.validation_fraction, np.random.default_rng(split_ss)
    )
    val_truth = [labels[sid] for sid in val_ids]

    adam = nn.AdamState(learning_rate=config.learning_rate)
    log = TrainLog()
    best_state: dict | None = None

    for epoch in range(1, config.epochs + 1):
        sample = balanced_epoch_sample(train_ids, labels, sample_rng)
        _check_flat_histogram(sample, labels)
        loss_sum = 0.0
        example_count = 0
        for batch_index, start in enumerate(range(0, len(sample), config.batch_segments)):
            chunk = sample[start : start + config.batch_segments]
            feats = np.stack([store.get(sid) for sid in chunk])  # (B, C, M, T)
            b, c, m, t = feats.shape
            x = feats.reshape(b * c, m, t).astype(model.dtype, copy=False)
            targets = np.repeat([labels[sid] for sid in chunk], c)

            posteriors, logits = model.forward(
                x, train=True, rng=dropout_rng, return_logits=True
            )
            shifted = logits - logits.max(axis=1, keepdims=True)
            log_posts = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
            batch_loss = float(-log_posts[np.arange(b * c), targets].mean())
            if not np.isfinite(batch_loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {batch_index}"
                )
            grad_logits = posteriors.copy()
            grad_logits[np.arange(b * c), targets] -= 1
            grad_logits = (grad_logits / (b * c)).astype(model.dtype, copy=False)
            adam_step_grads = model.backward(grad_logits)
            nn.adam_step(model.parameters(), adam_step_grads, adam)
            loss_sum += batch_loss * b * c
            example_count += b * c

        if epoch % config.eval_every == 0 or epoch == config.epochs:
            pred, _ = predict_segments(model, store, val_ids)
            score = compute_report(val_truth, pred).macro_f1
            log.records.append(
                EvalRecord(epoch, score, loss_sum / max(example_count, 1))
            )
            if log.best_score is None or score > log.best_score:
                log.best_score = score
                log.best_epoch = epoch
                best_state = {k: v.copy() for k, v in model.export_state().items()}

    if best_state is not None:
        model.import_state(best_state)
    return model, log
