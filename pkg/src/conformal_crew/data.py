"""Input tables and seeded dataset splits.

Two CSV formats are ingested (both may be gzip-compressed, detected by a
``.gz`` suffix):

* probability table, header ``instance_id,true_label,p0,p1,...,p{n-1}``
* annotation table, header ``instance_id,expert_id,label``
"""

from __future__ import annotations

import csv
import gzip
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    DegenerateSplit,
    DuplicateId,
    LabelOutOfRange,
    MalformedRow,
    NonStochasticRow,
    ProbabilityOutOfRange,
    UnknownInstance,
)

PROB_SUM_TOL = 1e-6


@dataclass(frozen=True)
class ClassifierOutputs:
    """Per-instance softmax vectors and true labels."""

    ids: tuple[str, ...]
    true_labels: np.ndarray
    probs: np.ndarray
    _row_of: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.probs.ndim != 2 or self.probs.shape[0] != len(self.ids):
            raise DataError("probs must be one row per instance id")
        if self.probs.shape[1] < 2:
            raise DataError("need at least 2 classes")
        if len(self.true_labels) != len(self.ids):
            raise DataError("true_labels length mismatch")
        if np.any(self.probs < 0) or np.any(self.probs > 1):
            raise ProbabilityOutOfRange("probability entries must lie in [0, 1]")
        sums = self.probs.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > PROB_SUM_TOL):
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise NonStochasticRow(
                f"probs for {self.ids[bad]!r} sum to {sums[bad]:.8f}"
            )
        n = self.probs.shape[1]
        if np.any(self.true_labels < 0) or np.any(self.true_labels >= n):
            raise LabelOutOfRange(f"true labels must lie in [0, {n})")
        row_of = {}
        for r, instance_id in enumerate(self.ids):
            if instance_id in row_of:
                raise DuplicateId(f"duplicate instance id {instance_id!r}")
            row_of[instance_id] = r
        object.__setattr__(self, "_row_of", row_of)

    @property
    def n_labels(self) -> int:
        return self.probs.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def row(self, instance_id: str) -> int:
        """Row index for an instance id."""
        try:
            return self._row_of[instance_id]
        except KeyError:
            raise UnknownInstance(f"unknown instance id {instance_id!r}") from None


@dataclass(frozen=True)
class AnnotationTable:
    """Raw annotation rows plus per-instance label count vectors."""

    instance_ids: tuple[str, ...]
    expert_ids: tuple[str, ...]
    labels: np.ndarray
    n_labels: int
    _counts: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not (len(self.instance_ids) == len(self.expert_ids) == len(self.labels)):
            raise DataError("annotation columns must have equal length")
        if len(self.labels) and (
            np.any(self.labels < 0) or np.any(self.labels >= self.n_labels)
        ):
            raise LabelOutOfRange(f"labels must lie in [0, {self.n_labels})")
        counts: dict[str, np.ndarray] = {}
        for instance_id, label in zip(self.instance_ids, self.labels):
            vec = counts.get(instance_id)
            if vec is None:
                vec = np.zeros(self.n_labels, dtype=np.int64)
                counts[instance_id] = vec
            vec[label] += 1
        object.__setattr__(self, "_counts", counts)

    def __len__(self) -> int:
        return len(self.instance_ids)

    @property
    def annotated_ids(self) -> set[str]:
        return set(self._counts)

    def counts(self, instance_id: str) -> np.ndarray:
        """Label count vector H for one instance (zeros if unannotated)."""
        vec = self._counts.get(instance_id)
        if vec is None:
            return np.zeros(self.n_labels, dtype=np.int64)
        return vec.copy()


@dataclass(frozen=True)
class Split:
    """Disjoint calibration / estimation / test id partitions."""

    cal_ids: tuple[str, ...]
    est_ids: tuple[str, ...]
    test_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        parts = (self.cal_ids, self.est_ids, self.test_ids)
        if any(len(p) == 0 for p in parts):
            raise DegenerateSplit("every split part must be nonempty")
        total = sum(len(p) for p in parts)
        if len(set(self.cal_ids) | set(self.est_ids) | set(self.test_ids)) != total:
            raise DataError("split parts must be pairwise disjoint")

    @property
    def l(self) -> int:
        return len(self.cal_ids)


def _open_text(path: str, mode: str):
    if str(path).endswith(".gz"):
        return io.TextIOWrapper(gzip.open(path, mode + "b"), encoding="utf-8", newline="")
    return open(path, mode, encoding="utf-8", newline="")


def parse_probs(path: str) -> ClassifierOutputs:
    """Read and validate a classifier probability table."""
    try:
        handle = _open_text(path, "r")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or len(header) < 4 or header[:2] != ["instance_id", "true_label"]:
            raise MalformedRow(f"{path}: bad header {header!r}")
        n = len(header) - 2
        expected = [f"p{j}" for j in range(n)]
        if header[2:] != expected:
            raise MalformedRow(f"{path}: probability columns must be p0..p{n - 1}")
        ids: list[str] = []
        labels: list[int] = []
        rows: list[list[float]] = []
        seen: set[str] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n + 2:
                raise MalformedRow(f"{path}:{lineno}: expected {n + 2} columns, got {len(row)}")
            instance_id = row[0]
            if instance_id in seen:
                raise DuplicateId(f"{path}:{lineno}: duplicate instance id {instance_id!r}")
            seen.add(instance_id)
            try:
                label = int(row[1])
                probs = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise MalformedRow(f"{path}:{lineno}: {exc}") from None
            if not 0 <= label < n:
                raise LabelOutOfRange(f"{path}:{lineno}: true label {label} outside [0, {n})")
            if any(p < 0 or p > 1 for p in probs):
                raise ProbabilityOutOfRange(f"{path}:{lineno}: probability outside [0, 1]")
            if abs(sum(probs) - 1.0) > PROB_SUM_TOL:
                raise NonStochasticRow(f"{path}:{lineno}: probabilities sum to {sum(probs):.8f}")
            ids.append(instance_id)
            labels.append(label)
            rows.append(probs)
    if not ids:
        raise DataError(f"{path}: no data rows")
    return ClassifierOutputs(
        ids=tuple(ids),
        true_labels=np.asarray(labels, dtype=np.int64),
        probs=np.asarray(rows, dtype=np.float64),
    )


def parse_annotations(path: str, outputs: ClassifierOutputs) -> AnnotationTable:
    """Read and validate an annotation table against loaded outputs."""
    n = outputs.n_labels
    try:
        handle = _open_text(path, "r")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header != ["instance_id", "expert_id", "label"]:
            raise MalformedRow(f"{path}: bad header {header!r}")
        instance_ids: list[str] = []
        expert_ids: list[str] = []
        labels: list[int] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise MalformedRow(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            instance_id, expert_id, raw_label = row
            if instance_id not in outputs._row_of:
                raise UnknownInstance(f"{path}:{lineno}: unknown instance id {instance_id!r}")
            try:
                label = int(raw_label)
            except ValueError:
                raise MalformedRow(f"{path}:{lineno}: label {raw_label!r} is not an integer") from None
            if not 0 <= label < n:
                raise LabelOutOfRange(f"{path}:{lineno}: label {label} outside [0, {n})")
            instance_ids.append(instance_id)
            expert_ids.append(expert_id)
            labels.append(label)
    return AnnotationTable(
        instance_ids=tuple(instance_ids),
        expert_ids=tuple(expert_ids),
        labels=np.asarray(labels, dtype=np.int64),
        n_labels=n,
    )


def write_probs(outputs: ClassifierOutputs, path: str) -> None:
    """Write a probability table in the canonical CSV format."""
    n = outputs.n_labels
    with _open_text(path, "w") as handle:
        writer = csv.writer(handle)
        writer.writerow(["instance_id", "true_label"] + [f"p{j}" for j in range(n)])
        for r, instance_id in enumerate(outputs.ids):
            writer.writerow(
                [instance_id, int(outputs.true_labels[r])]
                + [repr(float(v)) for v in outputs.probs[r]]
            )


def write_annotations(table: AnnotationTable, path: str) -> None:
    """Write an annotation table in the canonical CSV format."""
    with _open_text(path, "w") as handle:
        writer = csv.writer(handle)
        writer.writerow(["instance_id", "expert_id", "label"])
        for instance_id, expert_id, label in zip(
            table.instance_ids, table.expert_ids, table.labels
        ):
            writer.writerow([instance_id, expert_id, int(label)])


def split_dataset(
    ids: tuple[str, ...] | list[str],
    fractions: tuple[float, float, float],
    seed: int,
) -> Split:
    """Shuffle ids with a seeded permutation and cut into cal/est/test.

    Part sizes are floor(fraction * N) for calibration and estimation, with
    every remaining id assigned to test.
    """
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {fractions!r}")
    if any(f <= 0 or f >= 1 for f in fractions):
        raise ConfigError(f"split fractions must lie in (0, 1), got {fractions!r}")
    count = len(ids)
    n_cal = math.floor(fractions[0] * count)
    n_est = math.floor(fractions[1] * count)
    return split_dataset_sizes(ids, n_cal, n_est, seed)


def split_dataset_sizes(
    ids: tuple[str, ...] | list[str],
    cal_size: int,
    est_size: int,
    seed: int,
) -> Split:
    """Seeded split with absolute calibration/estimation sizes; rest is test."""
    count = len(ids)
    n_test = count - cal_size - est_size
    if cal_size < 1 or est_size < 1 or n_test < 1:
        raise DegenerateSplit(
            f"sizes ({cal_size}, {est_size}, {n_test}) leave an empty part"
        )
    order = np.random.default_rng(seed).permutation(count)
    shuffled = [ids[i] for i in order]
    return Split(
        cal_ids=tuple(shuffled[:cal_size]),
        est_ids=tuple(shuffled[cal_size : cal_size + est_size]),
        test_ids=tuple(shuffled[cal_size + est_size :]),
    )
