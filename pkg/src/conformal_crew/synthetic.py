"""Synthetic data generators and a vectorized bound-check simulator.

Everything here is for simulation studies and tests: classifier tables with
known properties, constructed confusion matrices, annotation tables sampled
from a pool, and randomized scenarios for the bound diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bounds import BoundEstimate, BoundTrace, Lemma2Summary, lemma1_estimate, lemma2_compare
from .conformal import ConformalThreshold, calibrate, score
from .data import AnnotationTable, ClassifierOutputs
from .errors import EmptyAfterFilter
from .experts import ConfusionMatrix, ExpertPool
from .seeding import derive_rng, stable_hash64
from .selection import clamped_odds


def exchangeable_outputs(
    count: int,
    n_labels: int,
    rng: np.random.Generator,
    concentration: float = 0.3,
    prefix: str = "x",
) -> ClassifierOutputs:
    """Instances whose labels are drawn from their own probability rows.

    Rows are symmetric Dirichlet draws; lower concentration gives sharper
    rows.  Because the label is sampled from the row, the classifier is
    perfectly calibrated and calibration/test scores are exchangeable.
    """
    probs = rng.dirichlet(np.full(n_labels, concentration), size=count)
    cdf = np.cumsum(probs, axis=1)
    labels = (cdf < rng.random(count)[:, None]).sum(axis=1)
    labels = np.minimum(labels, n_labels - 1)
    return ClassifierOutputs(
        ids=tuple(f"{prefix}{i}" for i in range(count)),
        true_labels=labels.astype(np.int64),
        probs=probs,
    )


def peaked_outputs(
    count: int,
    n_labels: int,
    rng: np.random.Generator,
    boost: float = 10.0,
    base: float = 1.0,
    prefix: str = "x",
) -> ClassifierOutputs:
    """Uniform true labels with probability rows peaked at the truth.

    Larger ``boost`` sharpens the rows and raises argmax accuracy.
    """
    labels = rng.integers(n_labels, size=count).astype(np.int64)
    alpha = np.full((count, n_labels), base)
    alpha[np.arange(count), labels] += boost
    gammas = rng.gamma(shape=alpha)
    probs = gammas / gammas.sum(axis=1, keepdims=True)
    return ClassifierOutputs(
        ids=tuple(f"{prefix}{i}" for i in range(count)),
        true_labels=labels,
        probs=probs,
    )


def uniform_confusion(n_labels: int, diag: float) -> ConfusionMatrix:
    """Constant diagonal with the remaining mass spread evenly."""
    off = (1.0 - diag) / (n_labels - 1)
    matrix = np.full((n_labels, n_labels), off)
    np.fill_diagonal(matrix, diag)
    return ConfusionMatrix(matrix=matrix, smoothing=0.0)


def skewed_confusion(
    n_labels: int,
    diag: float,
    peak: float,
    offset: int = 1,
) -> ConfusionMatrix:
    """Low-diagonal expert whose largest error mass sits on one wrong label.

    Row y puts ``diag`` on y, ``peak`` on (y + offset) mod n, and spreads
    the rest evenly over the remaining labels.
    """
    if not 1 <= offset < n_labels:
        raise ValueError("offset must name a different label")
    spread = (1.0 - diag - peak) / (n_labels - 2)
    if spread < 0:
        raise ValueError("diag + peak must leave mass for the other labels")
    matrix = np.full((n_labels, n_labels), spread)
    for y in range(n_labels):
        matrix[y, y] = diag
        matrix[y, (y + offset) % n_labels] = peak
    return ConfusionMatrix(matrix=matrix, smoothing=0.0)


def random_confusion(
    n_labels: int,
    rng: np.random.Generator,
    diag_low: float = 0.55,
    diag_high: float = 0.95,
) -> ConfusionMatrix:
    """Diagonally dominant matrix with Dirichlet off-diagonal mass."""
    matrix = np.zeros((n_labels, n_labels))
    for y in range(n_labels):
        diag = rng.uniform(diag_low, diag_high)
        off = rng.dirichlet(np.ones(n_labels - 1)) * (1.0 - diag)
        row = np.insert(off, y, diag)
        matrix[y] = row
    return ConfusionMatrix(matrix=matrix, smoothing=0.0)


def annotations_from_pool(
    outputs: ClassifierOutputs,
    pool: ExpertPool,
    rng: np.random.Generator,
    rounds: int = 1,
) -> AnnotationTable:
    """Simulate every pool member annotating every instance ``rounds`` times."""
    instance_ids: list[str] = []
    expert_ids: list[str] = []
    labels: list[int] = []
    n = outputs.n_labels
    for _ in range(rounds):
        for expert_id, confusion in zip(pool.expert_ids, pool.matrices):
            cdf = np.cumsum(confusion.matrix, axis=1)[outputs.true_labels]
            draws = (cdf < rng.random(len(outputs))[:, None]).sum(axis=1)
            draws = np.minimum(draws, n - 1)
            instance_ids.extend(outputs.ids)
            expert_ids.extend([expert_id] * len(outputs))
            labels.extend(int(v) for v in draws)
    return AnnotationTable(
        instance_ids=tuple(instance_ids),
        expert_ids=tuple(expert_ids),
        labels=np.asarray(labels, dtype=np.int64),
        n_labels=n,
    )


def _sample_rows(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of a nonnegative weight matrix."""
    totals = weights.sum(axis=1, keepdims=True)
    cdf = np.cumsum(weights, axis=1)
    draws = (cdf < rng.random(len(weights))[:, None] * totals).sum(axis=1)
    return np.minimum(draws, weights.shape[1] - 1)


def simulate_bound_traces_fast(
    probs: np.ndarray,
    true_labels: np.ndarray,
    threshold: ConformalThreshold,
    pool: ExpertPool,
    rng: np.random.Generator,
) -> list[BoundTrace]:
    """Vectorized oracle-mode twin of the per-instance trace collector.

    Computes, for every sample at once: the conformal set, each expert's
    unrestricted first guess, both clamped odds products at the true label,
    each expert's set-restricted final draw, and the all-experts majority
    with classifier tie-breaking.
    """
    count, n = probs.shape
    y = np.asarray(true_labels, dtype=np.int64)
    rows = np.arange(count)

    if np.isinf(threshold.q_hat):
        mask = np.ones((count, n), dtype=bool)
    else:
        mask = (1.0 - probs) <= threshold.q_hat
        empty = ~mask.any(axis=1)
        if empty.any():
            mask[empty, np.argmax(probs[empty], axis=1)] = True
    set_sizes = mask.sum(axis=1)
    covered = mask[rows, y]

    odds_conf = np.ones(count)
    odds_full = np.ones(count)
    votes = np.zeros((count, n))
    fmask = mask.astype(np.float64)
    for confusion in pool.matrices:
        cmat = confusion.matrix
        initial = _sample_rows(cmat[y], rng)
        numer = cmat[y, initial]
        denom = (fmask @ cmat)[rows, initial]
        restricted = np.where(denom > 0, numer / np.where(denom > 0, denom, 1.0), 1.0 / set_sizes)
        odds_conf *= clamped_odds(restricted)
        odds_full *= clamped_odds(numer)
        weights = cmat[y] * fmask
        zero = weights.sum(axis=1) == 0
        if zero.any():
            weights[zero] = fmask[zero]
        finals = _sample_rows(weights, rng)
        votes[rows, finals] += 1.0
    # counts dominate; probabilities (< 1) only break count ties, argmax
    # breaks remaining ties toward the lowest label.
    y_hat = np.argmax(votes + probs, axis=1)

    odds_conf = np.where(covered, odds_conf, np.nan)
    return [
        BoundTrace(
            y_hat=int(y_hat[t]),
            true_label=int(y[t]),
            covered=bool(covered[t]),
            odds_conformal=float(odds_conf[t]),
            odds_full=float(odds_full[t]),
            prob_true=float(probs[t, y[t]]),
        )
        for t in range(count)
    ]


@dataclass(frozen=True)
class BoundScenario:
    """One randomized configuration for the bound direction checks."""

    n_labels: int
    pool: ExpertPool
    alpha: float
    concentration: float
    cal_size: int
    n_samples: int
    seed: int


def make_bound_scenario(index: int, master_seed: int = 316) -> BoundScenario:
    """Randomized scenario with a diagonally dominant expert pool.

    The pool draws represent annotators who are usually right, the regime
    the selection framework models; label spaces span 3 to 10 classes and
    pools 1 to 7 experts.
    """
    rng = derive_rng(master_seed, index, "scenario")
    n_labels = int(rng.integers(3, 11))
    h = int(rng.integers(1, 8))
    matrices = tuple(random_confusion(n_labels, rng) for _ in range(h))
    pool = ExpertPool(tuple(f"e{i}" for i in range(h)), matrices)
    return BoundScenario(
        n_labels=n_labels,
        pool=pool,
        alpha=float(rng.uniform(0.05, 0.2)),
        concentration=float(rng.uniform(0.2, 0.6)),
        cal_size=1000,
        n_samples=10_000,
        seed=stable_hash64(master_seed, index, "mc"),
    )


def run_bound_scenario(
    scenario: BoundScenario,
) -> tuple[BoundEstimate, Lemma2Summary | None]:
    """Calibrate on fresh data, simulate the pool, and evaluate both checks.

    Returns the joint-success bound estimate and the odds-event comparison,
    the latter None when no sample meets its gap assumption.
    """
    rng = np.random.default_rng(scenario.seed)
    cal = exchangeable_outputs(
        scenario.cal_size, scenario.n_labels, rng, scenario.concentration, prefix="c"
    )
    cal_scores = [score(cal.probs[i], int(cal.true_labels[i])) for i in range(len(cal))]
    threshold = calibrate(cal_scores, scenario.alpha)
    test = exchangeable_outputs(
        scenario.n_samples, scenario.n_labels, rng, scenario.concentration, prefix="t"
    )
    traces = simulate_bound_traces_fast(
        test.probs, test.true_labels, threshold, scenario.pool, rng
    )
    estimate = lemma1_estimate(traces, scenario.alpha)
    try:
        comparison = lemma2_compare(traces)
    except EmptyAfterFilter:
        comparison = None
    return estimate, comparison
