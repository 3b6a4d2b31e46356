"""Loss, optimizer, training loop and evaluation metrics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import SernConfig, SernParams, forward_dialog, init_params
from .numerics import Tensor, backward, log, scale, take, zero_grad
from .text import PAD, EncodedDialog

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-12


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, step: int, loss: float):
        super().__init__(f"loss became {loss} at epoch {epoch}, step {step}")
        self.epoch, self.step, self.loss = epoch, step, loss


def cross_entropy(pred: Tensor, label: int) -> Tensor:
    """``-ln pred[label]`` with the probability clamped at 1e-12."""
    if not 0 <= label < pred.shape[0]:
        raise ValueError(f"label {label} out of range for {pred.shape[0]} classes")
    return scale(log(take(pred, label), floor=LOG_FLOOR), -1.0)


def dialog_loss(params: SernParams, dialog: EncodedDialog) -> tuple[Tensor | None, list[Tensor]]:
    """Summed cross-entropy over the labeled utterances of ``dialog``."""
    probs, _ = forward_dialog(params, dialog)
    total = None
    for p, y in zip(probs, dialog.labels):
        if y < 0:
            continue
        ce = cross_entropy(p, int(y))
        total = ce if total is None else total + ce
    return total, probs


# -- Adam ------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state: AdamState, params: Sequence[Tensor], grads: Sequence[np.ndarray] | None = None) -> AdamState:
    """Bias-corrected Adam update applied in place to ``params``.

    ``grads`` defaults to each parameter's ``grad``.
    """
    if grads is None:
        grads = [p.grad for p in params]
    if len(grads) != len(params):
        raise ValueError(f"{len(grads)} gradients for {len(params)} parameters")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape or m.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


# -- metrics ---------------------------------------------------------------


@dataclass
class ConfusionMatrix:
    """Counts with ground truth along rows and predictions along columns."""

    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts)


def confusion(predictions: Sequence[int], labels: Sequence[int], n_classes: int) -> ConfusionMatrix:
    if len(predictions) != len(labels):
        raise ValueError("predictions and labels differ in length")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (np.asarray(labels, dtype=np.int64), np.asarray(predictions, dtype=np.int64)), 1)
    return ConfusionMatrix(counts)


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


@dataclass
class MetricsReport:
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    macro_precision: float
    macro_recall: float
    macro_f1: float

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
        }


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(num.shape, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def metrics(cm: ConfusionMatrix | np.ndarray) -> MetricsReport:
    """Accuracy plus per-class and macro-averaged precision and recall.

    The macro F1 is the harmonic mean of macro precision and macro recall.
    """
    counts = np.asarray(cm.counts if isinstance(cm, ConfusionMatrix) else cm, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise ValueError("metrics of an empty confusion matrix")
    diag = np.diag(counts)
    recall = _safe_div(diag, counts.sum(axis=1))
    precision = _safe_div(diag, counts.sum(axis=0))
    mp, mr = float(precision.mean()), float(recall.mean())
    return MetricsReport(float(diag.sum() / total), precision, recall, mp, mr, f1_score(mp, mr))


def format_report(report: MetricsReport, cm: ConfusionMatrix, names: Sequence[str]) -> str:
    """Summary metrics followed by the confusion matrix with recall/precision margins."""
    title = [n.capitalize() for n in names]
    lines = [
        f"accuracy\t{report.accuracy:.3f}",
        f"macro_precision\t{report.macro_precision:.3f}",
        f"macro_recall\t{report.macro_recall:.3f}",
        f"macro_f1\t{report.macro_f1:.3f}",
        "",
        "\t" + "\t".join(title) + "\tRecall",
    ]
    for i, name in enumerate(title):
        row = "\t".join(str(int(c)) for c in cm.counts[i])
        lines.append(f"{name}\t{row}\t{report.recall[i]:.3f}")
    lines.append("Precision\t" + "\t".join(f"{p:.3f}" for p in report.precision))
    return "\n".join(lines) + "\n"


# -- training loop -----------------------------------------------------------


def evaluate(params: SernParams, dialogs: Sequence[EncodedDialog]) -> tuple[ConfusionMatrix, list[np.ndarray]]:
    """Confusion counts over labeled utterances and per-dialog predicted ids."""
    n = params.config.n_classes
    cm = ConfusionMatrix(np.zeros((n, n), dtype=np.int64))
    preds = []
    for d in dialogs:
        probs, _ = forward_dialog(params, d)
        pred = np.array([int(np.argmax(p.data)) for p in probs], dtype=np.int64)
        preds.append(pred)
        mask = d.labels >= 0
        cm = cm + confusion(pred[mask], d.labels[mask], n)
    return cm, preds


@dataclass
class TrainResult:
    params: SernParams
    log: list[dict]
    best_epoch: int
    stopped_early: bool = False


def train(
    config: SernConfig,
    train_dialogs: Sequence[EncodedDialog],
    validation_dialogs: Sequence[EncodedDialog],
    epochs: int = 50,
    seed: int = 0,
    patience: int | None = 10,
    lr: float = 5e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    params: SernParams | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Dialog-level Adam training with early stopping on validation macro-F1.

    One dialog per optimizer step, visited in a seeded per-epoch shuffle.
    The returned parameters are those of the best validation epoch; ties
    move the checkpoint forward but do not reset ``patience``. ``patience``
    of ``None`` or ``0`` disables early stopping. ``on_epoch`` receives each
    log row as soon as the epoch is evaluated.
    """
    if not train_dialogs or not validation_dialogs:
        raise ValueError("training needs non-empty train and validation splits")
    if params is None:
        params = init_params(config, seed)
    tensors = params.tensors()
    opt = AdamState(lr, beta1, beta2, eps)
    rng = np.random.default_rng([seed, 2])
    log_rows: list[dict] = []
    best_f1, best_epoch, best_state, wait = -1.0, 0, params.state_dict(), 0
    step = 0
    stopped = False
    for epoch in range(1, epochs + 1):
        total_loss, n_labeled, n_correct = 0.0, 0, 0
        for idx in rng.permutation(len(train_dialogs)):
            dialog = train_dialogs[idx]
            step += 1
            zero_grad(tensors)
            loss, probs = dialog_loss(params, dialog)
            if loss is None:
                continue
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, step, value)
            mask = dialog.labels >= 0
            pred = np.array([int(np.argmax(p.data)) for p in probs])
            n_correct += int((pred[mask] == dialog.labels[mask]).sum())
            n_labeled += int(mask.sum())
            total_loss += value
            backward(loss)
            params.embedding.weight.grad[PAD] = 0.0
            adam_step(opt, tensors)
        cm, _ = evaluate(params, validation_dialogs)
        report = metrics(cm) if cm.total else None
        row = {
            "epoch": epoch,
            "train_loss": total_loss / max(n_labeled, 1),
            "train_accuracy": n_correct / max(n_labeled, 1),
            "val_accuracy": report.accuracy if report else 0.0,
            "val_macro_f1": report.macro_f1 if report else 0.0,
        }
        log_rows.append(row)
        if on_epoch is not None:
            on_epoch(row)
        logger.info("epoch %d loss %.4f val_f1 %.4f", epoch, row["train_loss"], row["val_macro_f1"])
        f1 = row["val_macro_f1"]
        if f1 >= best_f1:
            if f1 > best_f1:
                wait = 0
            else:
                wait += 1
            best_f1, best_epoch, best_state = f1, epoch, params.state_dict()
        else:
            wait += 1
        if patience and wait >= patience:
            stopped = True
            break
    params.load_state_dict(best_state)
    return TrainResult(params, log_rows, best_epoch, stopped)
