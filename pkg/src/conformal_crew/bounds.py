"""Monte Carlo diagnostics for the framework's accuracy guarantees.

Two directions are checked empirically, never proved:

* the joint probability of a correct combined prediction with a covering
  set should be at least the probability of the odds-product event times
  the coverage level;
* among instances where the set-restricted odds product exceeds the
  unrestricted one by more than 1, the unrestricted-odds event should not
  be more frequent than the restricted-odds event.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .combine import majority, restricted_for
from .conformal import ConformalThreshold, predict_set
from .errors import EmptyAfterFilter, EmptyTrace
from .experts import (
    ExpertPool,
    final_prediction_empirical,
    final_prediction_oracle,
    initial_prediction,
)
from .selection import clamped_odds


@dataclass(frozen=True)
class BoundTrace:
    """Per-instance quantities feeding both bound checks.

    ``odds_conformal`` is the product over all experts of the clamped
    set-restricted odds at the true label (NaN when the set misses the true
    label); ``odds_full`` is the same product on the unrestricted confusion
    entries, which is always defined.
    """

    y_hat: int
    true_label: int
    covered: bool
    odds_conformal: float
    odds_full: float
    prob_true: float


@dataclass(frozen=True)
class BoundEstimate:
    lhs: float
    rhs: float
    se_lhs: float
    se_rhs: float
    n_samples: int


@dataclass(frozen=True)
class Lemma2Summary:
    freq_event_full: float
    freq_event_conf: float
    difference: float
    se_difference: float
    n_qualifying: int
    n_total: int


def collect_bound_traces(
    probs: np.ndarray,
    true_labels: np.ndarray,
    psis: Sequence[np.ndarray] | None,
    threshold: ConformalThreshold,
    pool: ExpertPool,
    simulator: str,
    rng_for: Callable[[int, int], np.random.Generator],
) -> list[BoundTrace]:
    """Simulate the full expert pool on each instance and record both odds
    products plus the all-experts majority outcome.

    ``rng_for(expert, instance)`` must return a fresh stream per pair so the
    collection is independent of evaluation order.
    """
    traces: list[BoundTrace] = []
    cache: dict = {}
    h = pool.h
    for t in range(len(true_labels)):
        row = probs[t]
        y = int(true_labels[t])
        psi = psis[t] if psis is not None else None
        pset = predict_set(row, threshold)
        restricted = restricted_for(pool, pset, cache)
        rngs = [rng_for(i, t) for i in range(h)]
        initial = [
            initial_prediction(simulator, pool.matrices[i], y, psi, rngs[i])
            for i in range(h)
        ]
        covered = y in pset
        odds_conf = math.nan
        if covered:
            k = pset.labels.index(y)
            odds_conf = 1.0
            for i in range(h):
                odds_conf *= float(
                    clamped_odds(restricted[i].values[k, initial[i]])
                )
        odds_full = 1.0
        for i in range(h):
            odds_full *= float(
                clamped_odds(pool.matrices[i].matrix[y, initial[i]])
            )
        finals = []
        for i in range(h):
            if simulator == "oracle":
                finals.append(final_prediction_oracle(pool.matrices[i], y, pset, rngs[i]))
            else:
                finals.append(final_prediction_empirical(psi, pool.matrices[i], pset, rngs[i]))
        y_hat = majority(finals, row).label
        traces.append(
            BoundTrace(
                y_hat=y_hat,
                true_label=y,
                covered=covered,
                odds_conformal=odds_conf,
                odds_full=odds_full,
                prob_true=float(row[y]),
            )
        )
    return traces


def lemma1_estimate(traces: Sequence[BoundTrace], alpha: float) -> BoundEstimate:
    """Both sides of the joint-success lower bound, with standard errors.

    lhs is the frequency of a correct prediction on a covering set; rhs is
    the frequency of the all-experts odds-product event (counted false when
    the set misses the true label) scaled by 1 - alpha.
    """
    if not traces:
        raise EmptyTrace("no trace records")
    count = len(traces)
    lhs_hits = sum(1 for t in traces if t.covered and t.y_hat == t.true_label)
    event_hits = sum(1 for t in traces if t.covered and t.odds_conformal > 1.0)
    p_lhs = lhs_hits / count
    p_event = event_hits / count
    return BoundEstimate(
        lhs=p_lhs,
        rhs=p_event * (1.0 - alpha),
        se_lhs=math.sqrt(p_lhs * (1.0 - p_lhs) / count),
        se_rhs=(1.0 - alpha) * math.sqrt(p_event * (1.0 - p_event) / count),
        n_samples=count,
    )


def lemma2_compare(traces: Sequence[BoundTrace]) -> Lemma2Summary:
    """Compare the two odds events on records meeting the gap assumption.

    A record qualifies when both products are defined and the restricted
    product exceeds the unrestricted one by more than 1.  The full-space
    event compares against the classifier's own odds of being wrong.
    """
    if not traces:
        raise EmptyTrace("no trace records")
    diffs = []
    full_hits = 0
    conf_hits = 0
    for t in traces:
        if not t.covered:
            continue
        if t.odds_conformal - t.odds_full <= 1.0:
            continue
        event_full = t.odds_full > (1.0 - t.prob_true) / max(t.prob_true, 1e-300)
        event_conf = t.odds_conformal > 1.0
        full_hits += event_full
        conf_hits += event_conf
        diffs.append(float(event_full) - float(event_conf))
    m = len(diffs)
    if m == 0:
        raise EmptyAfterFilter("no record meets the odds-gap assumption")
    arr = np.asarray(diffs)
    return Lemma2Summary(
        freq_event_full=full_hits / m,
        freq_event_conf=conf_hits / m,
        difference=float(arr.mean()),
        se_difference=float(arr.std() / math.sqrt(m)),
        n_qualifying=m,
        n_total=len(traces),
    )
