"""Heatmaps, data-defined thresholds, per-network decisions and the final vote."""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from pedk.errors import DataError
from pedk.patching import extract_all
from pedk.zoo import PARTS

MODES = ("max", "mean")
THETA_CHOICES = ("zero", "theta_n", "theta_i", "theta_p")
K_RULES = ("1_of_4", "2_of_4", "3_of_4", "4_of_4")


def heatmap(image, network, grid, input_side=None, batch_size=256):
    """Per-pixel count of positively classified windows.

    Every window of ``grid`` is rescaled to the network input, classified by
    argmax, and each positive window adds 1 to all pixels it covers.
    """
    input_side = input_side or network.meta["input_side"]
    patches = extract_all(image, grid, input_side)
    positive = network.predict(patches, batch_size=batch_size) == 1
    return heatmap_from_decisions(grid, positive)


def heatmap_from_decisions(grid, positive):
    h = np.zeros((grid.height, grid.width), dtype=np.int64)
    for rect, hit in zip(grid.rects, positive):
        if hit:
            h[rect.y:rect.y + rect.h, rect.x:rect.x + rect.w] += 1
    return h


def image_statistic(h, mode="max"):
    h = np.asarray(h)
    if mode == "max":
        return float(h.max()) if h.size else 0.0
    if mode == "mean":
        return float(h.mean()) if h.size else 0.0
    raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


@dataclass(frozen=True)
class ThresholdSet:
    theta_p: float
    theta_n: float
    theta_i: float
    mode: str = "max"

    def get(self, choice):
        """Threshold for a column name; ``zero`` is 0.0 (see :func:`network_decision`)."""
        if choice == "zero":
            return 0.0
        return getattr(self, choice)

    def uncertain(self, statistic):
        """True when the statistic falls strictly between theta_n and theta_p."""
        lo, hi = sorted((self.theta_n, self.theta_p))
        return lo < statistic < hi

    def to_dict(self):
        return asdict(self)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"thresholds sidecar not found: {path} (run the 'thresholds' command first)")
        return cls(**json.loads(path.read_text()))


def thresholds_from_statistics(pos_stats, neg_stats, mode="max"):
    """theta_p, theta_n, theta_i as means of per-image statistics."""
    pos = np.asarray(pos_stats, dtype=np.float64)
    neg = np.asarray(neg_stats, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise DataError("threshold estimation needs non-empty positive and negative sets")
    return ThresholdSet(
        theta_p=float(pos.mean()),
        theta_n=float(neg.mean()),
        theta_i=float(np.concatenate([pos, neg]).mean()),
        mode=mode,
    )


def estimate_thresholds(network, positives, negatives, grid, mode="max", input_side=None):
    """Thresholds of one part network from whole images of each class."""
    if len(positives) == 0 or len(negatives) == 0:
        raise DataError("threshold estimation needs non-empty positive and negative sets")
    pos = [image_statistic(heatmap(x, network, grid, input_side), mode) for x in positives]
    neg = [image_statistic(heatmap(x, network, grid, input_side), mode) for x in negatives]
    return thresholds_from_statistics(pos, neg, mode)


def network_decision(statistic, theta, zero_mode=False):
    """Positive iff ``statistic >= theta``.

    ``zero_mode`` is the theta = 0 column of the sweep: positive iff any
    window fired (``statistic > 0``).
    """
    if zero_mode:
        return statistic > 0
    return statistic >= theta


def decide(statistics, thresholds, choice):
    """Vectorized decisions for one network over many images at a sweep column.

    Named thresholds are floored at the zero column (positive also requires
    ``statistic > 0``) so the four columns stay ordered even when a threshold
    estimates to exactly 0.
    """
    s = np.asarray(statistics, dtype=np.float64)
    if choice == "zero":
        return s > 0
    return (s >= thresholds.get(choice)) & (s > 0)


@dataclass(frozen=True)
class VoteConfig:
    rule: str = "2_of_4"
    weights: tuple = None
    threshold: float = 0.5

    def __post_init__(self):
        if self.rule not in K_RULES + ("weighted",):
            raise ValueError(f"unknown rule {self.rule!r}")
        if self.rule == "weighted":
            if self.weights is None:
                raise ValueError("weighted rule requires weights")
            w = np.asarray(self.weights, dtype=np.float64)
            if w.shape != (4,) or (w < 0).any() or w.sum() <= 0:
                raise ValueError(f"weights must be 4 non-negative numbers with positive sum, got {self.weights}")
            object.__setattr__(self, "weights", tuple(float(v) for v in w / w.sum()))

    @property
    def k(self):
        return int(self.rule[0]) if self.rule in K_RULES else None


def aggregate(decisions, cfg):
    """Final verdict from four network decisions ordered barrel, magazine, receiver, stock.

    Accepts a single length-4 vector or an (n, 4) matrix.
    """
    d = np.asarray(decisions, dtype=np.float64)
    if d.shape[-1] != 4:
        raise ValueError(f"expected 4 decisions, got shape {d.shape}")
    if cfg.rule == "weighted":
        out = d @ np.asarray(cfg.weights) >= cfg.threshold
    else:
        out = d.sum(axis=-1) >= cfg.k
    return bool(out) if out.ndim == 0 else out


def accuracy_weights(accuracies, eps=1e-12):
    """Vote weights proportional to validation accuracies; zeros are lifted to ``eps``."""
    a = np.asarray(accuracies, dtype=np.float64)
    if a.shape != (4,):
        raise ValueError(f"expected 4 accuracies, got {a.shape}")
    if np.all(a <= 0):
        raise ValueError("all accuracies are zero")
    a = np.where(a > 0, a, eps)
    return tuple(float(v) for v in a / a.sum())


def part_order():
    return [p.value for p in PARTS]
