"""Expert confusion models and simulated predictions.

An expert is modeled by a row-stochastic confusion matrix C where
``C[y][p]`` is the probability of predicting ``p`` when the true label is
``y``.  Two simulators are supported:

* oracle: predictions are drawn from the confusion row of the true label;
  set-restricted final predictions renormalize that row over the set.
* empirical: an anchor label is drawn from the instance's observed
  annotation distribution, and that label's confusion row (restricted to
  the set) weights the final draw.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .conformal import PredictionSet
from .data import AnnotationTable, ClassifierOutputs, _open_text
from .errors import DataError, MalformedRow, NoAnnotations
from .seeding import sample_index

ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class ConfusionMatrix:
    """Row-stochastic n x n matrix; rows are true labels."""

    matrix: np.ndarray
    smoothing: float

    def __post_init__(self) -> None:
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DataError(f"confusion matrix must be square, got {m.shape}")
        if np.any(m < 0) or np.any(m > 1):
            raise DataError("confusion entries must lie in [0, 1]")
        if np.any(np.abs(m.sum(axis=1) - 1.0) > ROW_SUM_TOL):
            raise DataError("confusion rows must sum to 1")

    @property
    def n_labels(self) -> int:
        return self.matrix.shape[0]

    def diagonal_mass(self) -> float:
        """Mean diagonal entry; the expert's label-averaged accuracy."""
        return float(np.trace(self.matrix)) / self.n_labels


@dataclass(frozen=True)
class ExpertPool:
    expert_ids: tuple[str, ...]
    matrices: tuple[ConfusionMatrix, ...]

    def __post_init__(self) -> None:
        if len(self.expert_ids) != len(self.matrices) or not self.matrices:
            raise DataError("pool needs one matrix per expert id, at least one")
        n = self.matrices[0].n_labels
        if any(m.n_labels != n for m in self.matrices):
            raise DataError("all pool matrices must share one label space")

    @property
    def h(self) -> int:
        return len(self.matrices)

    @property
    def n_labels(self) -> int:
        return self.matrices[0].n_labels

    def take(self, m: int) -> "ExpertPool":
        """The sub-pool of the first m experts."""
        return ExpertPool(self.expert_ids[:m], self.matrices[:m])


def estimate_confusion(
    table: AnnotationTable,
    outputs: ClassifierOutputs,
    ids,
    smoothing: float = 1.0,
) -> ConfusionMatrix:
    """Maximum-likelihood confusion estimate with additive smoothing.

    Counts (true label, annotated label) pairs over the given instance ids,
    then normalizes each row as (count + smoothing) / (total + smoothing*n).
    Rows never observed with smoothing 0 fall back to uniform.
    """
    if smoothing < 0:
        raise ValueError("smoothing must be nonnegative")
    wanted = set(ids)
    n = table.n_labels
    counts = np.zeros((n, n), dtype=np.float64)
    matched = 0
    for instance_id, label in zip(table.instance_ids, table.labels):
        if instance_id in wanted:
            counts[outputs.true_labels[outputs.row(instance_id)], label] += 1
            matched += 1
    if matched == 0:
        raise NoAnnotations("no annotation rows among the given instance ids")
    row_totals = counts.sum(axis=1, keepdims=True)
    matrix = np.empty_like(counts)
    for y in range(n):
        total = row_totals[y, 0]
        if total == 0 and smoothing == 0:
            matrix[y] = 1.0 / n
        else:
            matrix[y] = (counts[y] + smoothing) / (total + smoothing * n)
    return ConfusionMatrix(matrix=matrix, smoothing=smoothing)


def empirical_distribution(table: AnnotationTable, instance_id: str) -> np.ndarray:
    """Normalized annotation histogram for one instance."""
    counts = table.counts(instance_id)
    total = counts.sum()
    if total == 0:
        raise NoAnnotations(f"instance {instance_id!r} has no annotations")
    return counts / total


def build_pool(
    base: ConfusionMatrix,
    h: int,
    jitter: float | None = None,
    rng: np.random.Generator | None = None,
) -> ExpertPool:
    """Replicate a base confusion matrix into a pool of h experts.

    With ``jitter`` set, each expert's rows are independent Dirichlet draws
    concentrated around the base rows (concentration = jitter * row), giving
    a heterogeneous pool with the base as its mean.  Without it all experts
    share the base matrix exactly.
    """
    if h < 1:
        raise ValueError("pool size must be at least 1")
    ids = tuple(f"e{i}" for i in range(h))
    if not jitter:
        return ExpertPool(ids, tuple(base for _ in range(h)))
    if rng is None:
        raise ValueError("jitter requires an rng")
    matrices = []
    for _ in range(h):
        rows = np.vstack(
            [rng.dirichlet(np.maximum(jitter * row, 1e-9)) for row in base.matrix]
        )
        rows /= rows.sum(axis=1, keepdims=True)
        matrices.append(ConfusionMatrix(matrix=rows, smoothing=base.smoothing))
    return ExpertPool(ids, tuple(matrices))


def initial_prediction(
    mode: str,
    confusion: ConfusionMatrix,
    true_label: int,
    psi: np.ndarray | None,
    rng: np.random.Generator,
) -> int:
    """Draw an expert's unrestricted first guess over the full label space."""
    if mode == "oracle":
        return sample_index(confusion.matrix[true_label], rng)
    if mode == "empirical":
        if psi is None:
            raise NoAnnotations("empirical mode needs an annotation distribution")
        return sample_index(psi, rng)
    raise ValueError(f"unknown simulator mode {mode!r}")


def _restricted_draw(row: np.ndarray, pset: PredictionSet, rng: np.random.Generator) -> int:
    labels = list(pset.labels)
    weights = row[labels]
    total = weights.sum()
    if total <= 0:
        weights = np.ones(len(labels))
    return labels[sample_index(weights, rng)]


def final_prediction_oracle(
    confusion: ConfusionMatrix,
    true_label: int,
    pset: PredictionSet,
    rng: np.random.Generator,
) -> int:
    """Draw a set-restricted prediction from the true label's confusion row.

    Weights are the row entries at the set's labels, renormalized; a
    zero-mass restriction falls back to uniform over the set.
    """
    return _restricted_draw(confusion.matrix[true_label], pset, rng)


def final_prediction_empirical(
    psi: np.ndarray,
    confusion: ConfusionMatrix,
    pset: PredictionSet,
    rng: np.random.Generator,
) -> int:
    """Draw an anchor label from psi, then a set-restricted prediction
    weighted by the anchor's confusion row."""
    anchor = sample_index(psi, rng)
    return _restricted_draw(confusion.matrix[anchor], pset, rng)


def write_confusion(confusion: ConfusionMatrix, path: str) -> None:
    """Export as CSV: an ``n`` line, a header, then row,col,value triples."""
    n = confusion.n_labels
    with _open_text(path, "w") as handle:
        writer = csv.writer(handle)
        writer.writerow(["n", n])
        writer.writerow(["row", "col", "value"])
        for y in range(n):
            for p in range(n):
                writer.writerow([y, p, repr(float(confusion.matrix[y, p]))])


def read_confusion(path: str) -> ConfusionMatrix:
    """Import a matrix written by :func:`write_confusion`.

    The smoothing used at estimation time is not persisted; the imported
    matrix carries ``smoothing=0.0``.
    """
    with _open_text(path, "r") as handle:
        reader = csv.reader(handle)
        first = next(reader, None)
        if not first or first[0] != "n":
            raise MalformedRow(f"{path}: expected an 'n' line, got {first!r}")
        n = int(first[1])
        header = next(reader, None)
        if header != ["row", "col", "value"]:
            raise MalformedRow(f"{path}: bad header {header!r}")
        matrix = np.full((n, n), np.nan)
        for lineno, row in enumerate(reader, start=3):
            if not row:
                continue
            if len(row) != 3:
                raise MalformedRow(f"{path}:{lineno}: expected 3 columns")
            matrix[int(row[0]), int(row[1])] = float(row[2])
    if np.any(np.isnan(matrix)):
        raise MalformedRow(f"{path}: missing entries")
    return ConfusionMatrix(matrix=matrix, smoothing=0.0)
