"""Accuracy at three label granularities, calibration error, and Brier score.

The seven affordance categories collapse two ways: a three-way view
(positive / exception / negative, merging categories 1-5) and a binary view
(positive / negative, counting every exception as negative).  "Mean
accuracy" is macro-averaged per-class recall over the classes that actually
occur in the labels; micro (plain) accuracy is reported alongside it.

Expected calibration error partitions confidences into equal-width bins
over (0, 1] and takes the count-weighted average of |accuracy - confidence|
per bin.  The confidence of a prediction is the largest entry of its mean
probability vector.  The Brier score is the mean squared distance between
the probability vector and the label's one-hot vector, summed over classes,
so it ranges over [0, 2]: 0 for confident-correct, 2 for confident-wrong.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InvalidInputError

NUM_CATEGORIES = 7

# category 0 is firmly positive, 1..5 are exception kinds, 6 firmly negative
_SEVEN_TO_THREE = (0, 1, 1, 1, 1, 1, 2)
_SEVEN_TO_BINARY = (0, 1, 1, 1, 1, 1, 1)

THREE_CLASS_NAMES = ("positive", "exception", "negative")
BINARY_CLASS_NAMES = ("positive", "negative")


class Granularity(Enum):
    SEVEN = "seven"
    THREE = "three"
    BINARY = "binary"


def remap(label: int, granularity: Granularity) -> int:
    """Collapse a seven-way category into the requested granularity."""
    if not 0 <= label < NUM_CATEGORIES:
        raise InvalidInputError(
            f"label {label} outside the category range 0..{NUM_CATEGORIES - 1}"
        )
    if granularity is Granularity.SEVEN:
        return label
    if granularity is Granularity.THREE:
        return _SEVEN_TO_THREE[label]
    return _SEVEN_TO_BINARY[label]


def _remap_all(values, granularity: Granularity) -> np.ndarray:
    return np.array([remap(int(v), granularity) for v in values], dtype=np.int64)


def mean_accuracy(predictions, labels, granularity: Granularity) -> float:
    """Macro-averaged per-class recall after remapping both sides.

    Classes absent from the labels do not enter the macro mean.
    """
    predictions = list(predictions)
    labels = list(labels)
    if len(predictions) != len(labels):
        raise InvalidInputError(
            f"{len(predictions)} predictions vs {len(labels)} labels"
        )
    if not labels:
        raise InvalidInputError("need at least one labeled sample")
    preds = _remap_all(predictions, granularity)
    labs = _remap_all(labels, granularity)
    recalls = []
    for cls in np.unique(labs):
        members = labs == cls
        recalls.append(np.mean(preds[members] == cls))
    return float(np.mean(recalls))


def micro_accuracy(predictions, labels, granularity: Granularity) -> float:
    """Plain fraction of correct predictions after remapping."""
    preds = _remap_all(predictions, granularity)
    labs = _remap_all(labels, granularity)
    if preds.shape != labs.shape or preds.size == 0:
        raise InvalidInputError("predictions and labels must be equal-length, non-empty")
    return float(np.mean(preds == labs))


@dataclass(frozen=True)
class CalibrationBins:
    """Per-bin statistics over the equal-width partition of (0, 1]."""

    num_bins: int
    counts: tuple[int, ...]
    accuracy: tuple[float, ...]   # 0.0 for empty bins
    confidence: tuple[float, ...]

    @property
    def centers(self) -> tuple[float, ...]:
        return tuple((i + 0.5) / self.num_bins for i in range(self.num_bins))

    def rows(self) -> list[dict]:
        return [
            {
                "bin_center": center,
                "acc": acc,
                "conf": conf,
                "count": count,
            }
            for center, acc, conf, count in zip(
                self.centers, self.accuracy, self.confidence, self.counts
            )
        ]


def ece(confidences, correct, num_bins: int = 10) -> tuple[float, CalibrationBins]:
    """Expected calibration error plus the reliability-diagram bins.

    Bin l covers ((l-1)/L, l/L]; empty bins contribute nothing.
    """
    if num_bins < 1:
        raise InvalidInputError(f"num_bins must be >= 1, got {num_bins}")
    conf = np.asarray(confidences, dtype=np.float64)
    hits = np.asarray(correct, dtype=bool)
    if conf.ndim != 1 or conf.shape != hits.shape:
        raise InvalidInputError("confidences and correctness must be equal-length 1-D")
    if conf.size == 0:
        raise InvalidInputError("need at least one prediction")
    if np.any(conf <= 0.0) or np.any(conf > 1.0 + 1e-9):
        raise InvalidInputError("confidences must lie in (0, 1]")
    conf = np.minimum(conf, 1.0)

    upper_edges = np.linspace(0.0, 1.0, num_bins + 1)[1:]
    bin_index = np.searchsorted(upper_edges, conf, side="left")

    counts, accs, confs = [], [], []
    total_gap = 0.0
    n = conf.size
    for b in range(num_bins):
        members = bin_index == b
        count = int(np.sum(members))
        if count == 0:
            counts.append(0)
            accs.append(0.0)
            confs.append(0.0)
            continue
        acc = float(np.mean(hits[members]))
        avg_conf = float(np.mean(conf[members]))
        counts.append(count)
        accs.append(acc)
        confs.append(avg_conf)
        total_gap += (count / n) * abs(acc - avg_conf)
    bins = CalibrationBins(
        num_bins=num_bins,
        counts=tuple(counts),
        accuracy=tuple(accs),
        confidence=tuple(confs),
    )
    return float(total_gap), bins


def brier(mean_probs, labels) -> float:
    """Mean squared distance to the one-hot label, summed over classes."""
    probs = np.asarray(mean_probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2:
        raise InvalidInputError(f"mean_probs must be (N, R), got shape {probs.shape}")
    if labels.shape != (probs.shape[0],):
        raise InvalidInputError(
            f"{probs.shape[0]} probability vectors vs {labels.shape[0]} labels"
        )
    if probs.shape[0] == 0:
        raise InvalidInputError("need at least one prediction")
    if np.any(probs < -1e-12) or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise InvalidInputError("every row of mean_probs must be a probability vector")
    if np.any(labels < 0) or np.any(labels >= probs.shape[1]):
        raise InvalidInputError("labels out of range for the probability vectors")
    onehot = np.zeros_like(probs)
    onehot[np.arange(labels.size), labels] = 1.0
    return float(np.mean(np.sum((probs - onehot) ** 2, axis=1)))


@dataclass(frozen=True)
class CalibrationReport:
    """Everything the metrics command reports for one prediction set."""

    sample_count: int
    ece: float
    brier: float
    macro_acc_seven: float
    macro_acc_three: float
    macro_acc_binary: float
    micro_acc_seven: float
    micro_acc_three: float
    micro_acc_binary: float
    bins: CalibrationBins

    def to_json_dict(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "ece": self.ece,
            "brier": self.brier,
            "macro_acc_seven": self.macro_acc_seven,
            "macro_acc_three": self.macro_acc_three,
            "macro_acc_binary": self.macro_acc_binary,
            "micro_acc_seven": self.micro_acc_seven,
            "micro_acc_three": self.micro_acc_three,
            "micro_acc_binary": self.micro_acc_binary,
            "bins": {
                "num_bins": self.bins.num_bins,
                "counts": list(self.bins.counts),
                "accuracy": list(self.bins.accuracy),
                "confidence": list(self.bins.confidence),
            },
        }


def evaluate_predictions(mean_probs, labels, num_bins: int = 10) -> CalibrationReport:
    """Score mean probability vectors against seven-way category labels."""
    probs = np.asarray(mean_probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise InvalidInputError("need (N, R) probabilities and N labels")
    if probs.shape[1] > NUM_CATEGORIES:
        raise InvalidInputError(
            f"probability vectors have {probs.shape[1]} classes, beyond the "
            f"{NUM_CATEGORIES}-category affordance space"
        )
    preds = np.argmax(probs, axis=1)
    confidences = np.max(probs, axis=1)
    correct = preds == labels
    ece_value, bins = ece(confidences, correct, num_bins)
    return CalibrationReport(
        sample_count=int(labels.size),
        ece=ece_value,
        brier=brier(probs, labels),
        macro_acc_seven=mean_accuracy(preds, labels, Granularity.SEVEN),
        macro_acc_three=mean_accuracy(preds, labels, Granularity.THREE),
        macro_acc_binary=mean_accuracy(preds, labels, Granularity.BINARY),
        micro_acc_seven=micro_accuracy(preds, labels, Granularity.SEVEN),
        micro_acc_three=micro_accuracy(preds, labels, Granularity.THREE),
        micro_acc_binary=micro_accuracy(preds, labels, Granularity.BINARY),
        bins=bins,
    )


def reliability_csv(bins: CalibrationBins) -> str:
    """CSV body for the reliability diagram: bin_center, acc, conf, count."""
    lines = ["bin_center,acc,conf,count"]
    for row in bins.rows():
        lines.append(
            f"{row['bin_center']!r},{row['acc']!r},{row['conf']!r},{row['count']}"
        )
    return "\n".join(lines) + "\n"
