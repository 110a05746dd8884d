"""Epoch loop with validation-based early stopping, and test-set evaluation."""

import logging
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from pedk.errors import DataError, TrainingDiverged
from pedk.nn.optim import SGD
from pedk.patching import resize_bilinear

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9


@dataclass
class TrainRun:
    arch: str
    target: str
    epochs: int
    history: list = field(default_factory=list)  # dicts: epoch, train_loss, val_acc
    best_epoch: int = 0
    best_val_acc: Fraction = Fraction(0)
    checkpoint: str = None

    def to_dict(self):
        return {
            "arch": self.arch,
            "target": self.target,
            "epochs": self.epochs,
            "best_epoch": self.best_epoch,
            "best_val_acc": str(self.best_val_acc),
            "checkpoint": self.checkpoint,
            "history": [
                {"epoch": h["epoch"], "train_loss": round(h["train_loss"], 6), "val_acc": str(h["val_acc"])}
                for h in self.history
            ],
        }


@dataclass(frozen=True)
class EvalReport:
    tp: int
    tn: int
    n_pos: int
    n_neg: int

    @property
    def tp_rate(self):
        return Fraction(self.tp, self.n_pos)

    @property
    def tn_rate(self):
        return Fraction(self.tn, self.n_neg)

    @property
    def accuracy(self):
        """Mean of TP and TN rates; equals plain accuracy on balanced sets."""
        return (self.tp_rate + self.tn_rate) / 2

    def to_dict(self):
        return {
            "tp": self.tp, "tn": self.tn, "n_pos": self.n_pos, "n_neg": self.n_neg,
            "tp_rate": str(self.tp_rate), "tn_rate": str(self.tn_rate), "accuracy": str(self.accuracy),
        }


def report_from_predictions(predicted, labels):
    predicted = np.asarray(predicted).astype(bool)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError(f"evaluation needs both classes (got {n_pos} positive, {n_neg} negative)")
    return EvalReport(int((predicted & labels).sum()), int((~predicted & ~labels).sum()), n_pos, n_neg)


def fit_inputs(x, input_side):
    """Rescale a stack of (C, H, W) images to the network input side when needed."""
    x = np.asarray(x, dtype=np.float32)
    if x.shape[-1] == input_side and x.shape[-2] == input_side:
        return x
    return np.stack([resize_bilinear(im, input_side) for im in x])


def accuracy(network, x, y):
    if len(y) == 0:
        raise DataError("cannot compute accuracy on an empty split")
    return Fraction(int((network.predict(x) == y).sum()), len(y))


def evaluate(network, x, y):
    """TP/TN report of ``network`` on a labelled split."""
    if len(y) == 0:
        raise DataError("cannot evaluate on an empty split")
    x = fit_inputs(x, network.meta["input_side"])
    return report_from_predictions(network.predict(x) == 1, y)


def train_with_early_stopping(network, train, validation, config=TrainConfig(), seed=0, target="", arch=""):
    """Train for ``config.epochs`` epochs and restore the best-validation weights.

    ``train`` and ``validation`` are ``(x, y)`` pairs.  Dropout is active during
    the training passes only.  The best epoch is the first one reaching the
    highest validation accuracy.  A non-finite loss raises
    :class:`TrainingDiverged` carrying the partial history.
    """
    side = network.meta["input_side"]
    x_tr, y_tr = fit_inputs(train[0], side), np.asarray(train[1])
    x_va, y_va = fit_inputs(validation[0], side), np.asarray(validation[1])
    if len(y_tr) == 0:
        raise DataError("empty training split")
    rng = np.random.default_rng(seed)
    opt = SGD(network, config.learning_rate, config.momentum)
    run = TrainRun(arch=arch, target=target, epochs=config.epochs)
    best_weights = None
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(y_tr))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = network.loss_and_grads(x_tr[idx], y_tr[idx], train=True, rng=rng)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", run.history)
            try:
                opt.step(grads)
            except TrainingDiverged as exc:
                raise TrainingDiverged(f"{exc} at epoch {epoch}", run.history) from None
            total += loss * len(idx)
        val_acc = accuracy(network, x_va, y_va)
        run.history.append({"epoch": epoch, "train_loss": total / len(y_tr), "val_acc": val_acc})
        log.debug("%s %s epoch %d loss %.4f val %.4f", target, arch, epoch, total / len(y_tr), float(val_acc))
        if best_weights is None or val_acc > run.best_val_acc:
            run.best_epoch, run.best_val_acc = epoch, val_acc
            best_weights = network.get_weights()
    network.set_weights(best_weights)
    return run


def select_best_epoch(val_accuracies):
    """1-based index of the first maximum."""
    if not len(val_accuracies):
        raise ValueError("no epochs recorded")
    return int(np.argmax(np.asarray([float(v) for v in val_accuracies]))) + 1
