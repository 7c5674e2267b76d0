"""Mini-batch training with Adadelta, best-accuracy checkpoints and evaluation metrics."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import LabeledDataset
from .errors import DataError, NumericError, OutputUnwritable, VocabularyMismatch
from .nn import (
    AdadeltaState,
    Checkpoint,
    ModelConfig,
    adadelta_step,
    backward,
    bce_loss,
    forward,
    init_params,
    save_checkpoint,
)
from .seq_core import PAD_INDEX, encode

log = logging.getLogger(__name__)

HISTORY_HEADER = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")
EVAL_BATCH = 256


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 50
    epochs: int = 50
    seed: int = 0
    checkpoint_path: str | None = None
    metric: str = "accuracy"
    threshold: float = 0.5
    rho: float = 0.95
    lr: float = 1.0
    eps: float = 1e-6

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.metric != "accuracy":
            raise ValueError("only the accuracy metric is supported")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else float("nan")

    @classmethod
    def from_predictions(cls, labels, predicted) -> "ConfusionMatrix":
        labels = np.asarray(labels).astype(bool)
        predicted = np.asarray(predicted).astype(bool)
        return cls(
            tp=int(np.sum(labels & predicted)),
            fp=int(np.sum(~labels & predicted)),
            tn=int(np.sum(~labels & ~predicted)),
            fn=int(np.sum(labels & ~predicted)),
        )

    def as_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


@dataclass
class Evaluation:
    loss: float
    accuracy: float
    confusion: ConfusionMatrix
    probabilities: np.ndarray = field(repr=False)

    def as_dict(self) -> dict:
        return {"loss": self.loss, "accuracy": self.accuracy, "confusion": self.confusion.as_dict()}


@dataclass
class TrainResult:
    history: list[EpochRecord]
    best: Checkpoint
    final: Checkpoint


def predict_proba(cfg: ModelConfig, params: dict, indices: np.ndarray, batch_size: int = EVAL_BATCH) -> np.ndarray:
    out = np.empty(len(indices))
    for lo in range(0, len(indices), batch_size):
        p, _ = forward(cfg, params, indices[lo : lo + batch_size])
        out[lo : lo + batch_size] = p
    return out


def _check_compatible(model: Checkpoint, ds: LabeledDataset) -> None:
    if ds.vocab != model.vocab:
        raise VocabularyMismatch("dataset and model were built with different vocabularies")
    if ds.max_len != model.config.input_len:
        raise VocabularyMismatch(f"dataset length {ds.max_len} != model input length {model.config.input_len}")


def evaluate(model: Checkpoint, ds: LabeledDataset, threshold: float = 0.5, batch_size: int = EVAL_BATCH) -> Evaluation:
    """Mean BCE, accuracy and confusion matrix; a sample is predicted real iff p >= threshold."""
    _check_compatible(model, ds)
    if len(ds) == 0:
        raise DataError("cannot evaluate an empty dataset")
    p = predict_proba(model.config, model.params, ds.indices, batch_size)
    loss = float(np.mean(bce_loss(p, ds.labels)))
    cm = ConfusionMatrix.from_predictions(ds.labels, p >= threshold)
    return Evaluation(loss, cm.accuracy, cm, p)


def confusion_by_length(ds: LabeledDataset, probabilities: np.ndarray, threshold: float = 0.5, n_bins: int = 4) -> dict[str, ConfusionMatrix]:
    """Confusion matrices grouped by unpadded sequence length (equal-width bins over [1, L])."""
    lengths = np.count_nonzero(ds.indices != PAD_INDEX, axis=1)
    edges = np.linspace(0, ds.max_len, n_bins + 1).round().astype(int)
    out = {}
    for lo, hi in zip(edges[:-1], edges[1:]):
        mask = (lengths > lo) & (lengths <= hi)
        out[f"{lo + 1}-{hi}"] = ConfusionMatrix.from_predictions(ds.labels[mask], probabilities[mask] >= threshold)
    return out


def train(model_cfg: ModelConfig, train_set: LabeledDataset, val_set: LabeledDataset, cfg: TrainConfig) -> TrainResult:
    """Adadelta on batch-mean gradients; checkpoint whenever validation accuracy improves.

    Samples are reshuffled every epoch with a generator seeded by (seed, epoch),
    and the final short batch is kept.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise DataError("training and validation sets must be non-empty")
    if train_set.vocab != val_set.vocab:
        raise VocabularyMismatch("training and validation sets use different vocabularies")
    if len(train_set.vocab) != model_cfg.vocab_size:
        raise VocabularyMismatch(f"vocabulary has {len(train_set.vocab)} codes, model expects {model_cfg.vocab_size}")

    params = init_params(model_cfg, np.random.default_rng(cfg.seed))
    state = AdadeltaState.zeros_like(params, cfg.rho, cfg.lr, cfg.eps)
    model = Checkpoint(model_cfg, params, state, train_set.vocab)
    _check_compatible(model, val_set)
    history: list[EpochRecord] = []
    best: Checkpoint | None = None
    labels = train_set.labels.astype(model_cfg.dtype)

    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_set))
        for lo in range(0, len(order), cfg.batch_size):
            rows = order[lo : lo + cfg.batch_size]
            _, cache = forward(model_cfg, params, train_set.indices[rows])
            grads = backward(model_cfg, params, cache, labels[rows])
            adadelta_step(params, grads, state)

        tr = evaluate(model, train_set, cfg.threshold)
        va = evaluate(model, val_set, cfg.threshold)
        if not (math.isfinite(tr.loss) and math.isfinite(va.loss)):
            raise NumericError(f"non-finite loss at epoch {epoch}")
        record = EpochRecord(epoch, tr.loss, tr.accuracy, va.loss, va.accuracy)
        history.append(record)
        log.info("epoch %d  loss %.4f  acc %.4f  val_loss %.4f  val_acc %.4f", *(
            record.epoch, record.train_loss, record.train_acc, record.val_loss, record.val_acc))

        # ties keep the earlier epoch
        if best is None or va.accuracy > best.val_acc:
            best = _snapshot(model, epoch, va.accuracy)
            if cfg.checkpoint_path:
                save_checkpoint(best, cfg.checkpoint_path)

    final = _snapshot(model, cfg.epochs, history[-1].val_acc)
    return TrainResult(history, best, final)


def _snapshot(model: Checkpoint, epoch: int, val_acc: float) -> Checkpoint:
    s = model.state
    state = AdadeltaState(
        {k: v.copy() for k, v in s.eg2.items()},
        {k: v.copy() for k, v in s.edx2.items()},
        s.rho, s.lr, s.eps, s.steps,
    )
    return Checkpoint(model.config, {k: v.copy() for k, v in model.params.items()}, state, model.vocab, epoch, val_acc)


def predict(model: Checkpoint, tokens: Sequence[str], threshold: float = 0.5) -> tuple[float, int]:
    """Probability that `tokens` is a real protein, and the thresholded label."""
    if len(tokens) < 1:
        raise DataError("empty sequence")
    indices = encode(tokens, model.vocab, model.config.input_len)
    p, _ = forward(model.config, model.params, indices)
    return p, int(p >= threshold)


def write_history_csv(history: Sequence[EpochRecord], path) -> None:
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(HISTORY_HEADER)
            for r in history:
                writer.writerow((r.epoch, repr(r.train_loss), repr(r.train_acc), repr(r.val_loss), repr(r.val_acc)))
    except OSError as exc:
        raise OutputUnwritable(f"cannot write {path}: {exc}") from exc


def read_history_csv(path) -> list[EpochRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if tuple(next(reader, ())) != HISTORY_HEADER:
            raise DataError(f"{path}: unexpected header")
        return [EpochRecord(int(row[0]), *map(float, row[1:])) for row in reader]


def export_history(history: Sequence[EpochRecord], out_csv, out_svg=None) -> None:
    """Metrics CSV plus an SVG with loss and accuracy curves for both splits."""
    if not history:
        raise DataError("empty training history")
    write_history_csv(history, out_csv)
    if out_svg is not None:
        from .plotting import plot_history

        try:
            plot_history(history, out_svg)
        except OSError as exc:
            raise OutputUnwritable(f"cannot write {out_svg}: {exc}") from exc


def default_report_paths(checkpoint_path) -> tuple[Path, Path]:
    base = Path(checkpoint_path)
    stem = base.name.split(".")[0]
    return base.with_name(stem + "_history.csv"), base.with_name(stem + "_history.svg")
