"""Split conformal prediction: scores, calibration, sets, coverage metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import EmptyCalibration, EmptySet, KOutOfRange, LengthMismatch


@dataclass(frozen=True)
class ConformalThreshold:
    """Calibrated score threshold; ``q_hat`` is ``math.inf`` when the
    required rank exceeds the number of calibration scores."""

    q_hat: float
    alpha: float
    l: int


@dataclass(frozen=True)
class PredictionSet:
    """An ordered label subset with its provenance.

    ``forced`` marks conformal sets that came back empty and were replaced
    by the classifier argmax singleton, so metrics can exclude them.
    """

    labels: tuple[int, ...]
    n_labels: int
    source: str
    forced: bool = False

    def __post_init__(self) -> None:
        if not self.labels:
            raise EmptySet("prediction sets must be nonempty")
        if any(not 0 <= y < self.n_labels for y in self.labels):
            raise EmptySet(f"labels {self.labels} outside [0, {self.n_labels})")
        if list(self.labels) != sorted(set(self.labels)):
            raise EmptySet("labels must be strictly ascending")

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: int) -> bool:
        return label in self.labels

    def mask(self) -> np.ndarray:
        """Boolean membership mask over the full label space."""
        out = np.zeros(self.n_labels, dtype=bool)
        out[list(self.labels)] = True
        return out


@dataclass(frozen=True)
class CoverageReport:
    marginal_coverage: float
    per_class_coverage: tuple[float, ...]
    mean_set_size: float


def score(probs: np.ndarray, label: int) -> float:
    """Nonconformity of a label: one minus its predicted probability."""
    return float(1.0 - probs[label])


def calibrate(cal_scores, alpha: float) -> ConformalThreshold:
    """Pick the calibration-score quantile that guarantees 1 - alpha coverage.

    The threshold is the r-th smallest score with r = ceil((l+1)(1-alpha)),
    or infinity when r exceeds l.  The rank is computed in exact rational
    arithmetic so float rounding can never shift it across an integer.
    """
    scores = np.asarray(cal_scores, dtype=np.float64)
    l = len(scores)
    if l == 0:
        raise EmptyCalibration("need at least one calibration score")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    rank = math.ceil(Fraction(l + 1) * (1 - Fraction(alpha)))
    if rank > l:
        q_hat = math.inf
    else:
        q_hat = float(np.sort(scores)[rank - 1])
    return ConformalThreshold(q_hat=q_hat, alpha=alpha, l=l)


def predict_set(probs: np.ndarray, threshold: ConformalThreshold) -> PredictionSet:
    """Labels whose nonconformity score is within the calibrated threshold.

    An empty result is replaced by the classifier argmax singleton and
    flagged ``forced``; an infinite threshold yields the full label space.
    """
    n = len(probs)
    if math.isinf(threshold.q_hat):
        return PredictionSet(labels=tuple(range(n)), n_labels=n, source="conformal")
    keep = [y for y in range(n) if 1.0 - probs[y] <= threshold.q_hat]
    if keep:
        return PredictionSet(labels=tuple(keep), n_labels=n, source="conformal")
    top = int(np.argmax(probs))
    return PredictionSet(labels=(top,), n_labels=n, source="conformal", forced=True)


def topk_set(probs: np.ndarray, k: int) -> PredictionSet:
    """The k most probable labels, ties broken toward lower indices."""
    n = len(probs)
    if not 1 <= k <= n:
        raise KOutOfRange(f"k must lie in [1, {n}], got {k}")
    order = np.argsort(-np.asarray(probs), kind="stable")
    labels = tuple(sorted(int(y) for y in order[:k]))
    return PredictionSet(labels=labels, n_labels=n, source=f"topk({k})")


def full_set(n: int) -> PredictionSet:
    return PredictionSet(labels=tuple(range(n)), n_labels=n, source="full")


def coverage(sets: list[PredictionSet], true_labels) -> CoverageReport:
    """Empirical marginal and per-class coverage plus mean set size."""
    labels = np.asarray(true_labels, dtype=np.int64)
    if len(sets) != len(labels):
        raise LengthMismatch(f"{len(sets)} sets vs {len(labels)} labels")
    if len(sets) == 0:
        raise LengthMismatch("need at least one set")
    n = sets[0].n_labels
    hits = np.zeros(n, dtype=np.int64)
    totals = np.zeros(n, dtype=np.int64)
    size_sum = 0
    for prediction_set, label in zip(sets, labels):
        totals[label] += 1
        if int(label) in prediction_set:
            hits[label] += 1
        size_sum += len(prediction_set)
    per_class = tuple(
        float(hits[y]) / totals[y] if totals[y] else math.nan for y in range(n)
    )
    return CoverageReport(
        marginal_coverage=float(hits.sum()) / len(sets),
        per_class_coverage=per_class,
        mean_set_size=size_sum / len(sets),
    )
