"""Combination policy and the per-instance prediction pipeline."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .conformal import ConformalThreshold, PredictionSet, full_set, predict_set, topk_set
from .errors import EmptyPredictions
from .experts import (
    ExpertPool,
    final_prediction_empirical,
    final_prediction_oracle,
    initial_prediction,
)
from .selection import (
    RestrictedSuccessMatrix,
    SubsetPolicy,
    baseline_subset,
    greedy_select,
    restricted_matrix,
)


@dataclass(frozen=True)
class CombinedPrediction:
    """Final system output for one instance.

    ``fallback`` is "none" for a genuine expert vote, "model_argmax" when no
    expert could contribute and the classifier decided, and "pseudo_label"
    is reserved for policies that substitute the selection's candidate.
    """

    label: int
    contributors: tuple[int, ...]
    tie_broken: bool
    fallback: str = "none"


@dataclass(frozen=True)
class InstanceTrace:
    """Everything the pipeline decided for one instance."""

    set_labels: tuple[int, ...]
    set_source: str
    set_forced: bool
    initial_preds: tuple[int, ...]
    odds_table: np.ndarray | None
    scores: np.ndarray | None
    pseudo_label: int | None
    selected: tuple[int, ...]
    final_preds: tuple[int, ...]
    label: int
    tie_broken: bool
    fallback: str


def majority(
    final_preds,
    probs: np.ndarray,
    contributors: tuple[int, ...] = (),
) -> CombinedPrediction:
    """Most frequent label; ties go to the tied label the classifier rates
    highest, then to the lowest index."""
    preds = list(final_preds)
    if not preds:
        raise EmptyPredictions("majority needs at least one prediction")
    counts = Counter(preds)
    best = max(counts.values())
    tied = [label for label, count in counts.items() if count == best]
    label = min(tied, key=lambda y: (-probs[y], y))
    return CombinedPrediction(
        label=int(label),
        contributors=contributors,
        tie_broken=len(tied) > 1,
    )


def _model_argmax_in(pset: PredictionSet, probs: np.ndarray) -> int:
    labels = list(pset.labels)
    return int(labels[int(np.argmax(probs[labels]))])


def system_predict(
    probs: np.ndarray,
    true_label: int,
    psi: np.ndarray | None,
    policy: SubsetPolicy,
    threshold: ConformalThreshold,
    pool: ExpertPool,
    simulator: str,
    expert_rngs: Sequence[np.random.Generator],
    subset_rng: np.random.Generator,
    restricted_cache: dict | None = None,
) -> tuple[CombinedPrediction, InstanceTrace]:
    """Run one instance through set construction, expert simulation, subset
    selection, and majority combination.

    ``expert_rngs`` must hold one stream per pool member; every expert draws
    its unrestricted first guess before any policy-dependent branching, so a
    given seed assignment produces the same draws under every policy.
    """
    n = pool.n_labels

    if policy.variant == "model_only":
        label = int(np.argmax(probs))
        trace = InstanceTrace(
            set_labels=tuple(range(n)),
            set_source="full",
            set_forced=False,
            initial_preds=(),
            odds_table=None,
            scores=None,
            pseudo_label=None,
            selected=(),
            final_preds=(),
            label=label,
            tie_broken=False,
            fallback="none",
        )
        return CombinedPrediction(label=label, contributors=(), tie_broken=False), trace

    if policy.variant == "greedy_topk":
        pset = topk_set(probs, policy.k if policy.k is not None else n)
    else:
        pset = predict_set(probs, threshold)

    initial = tuple(
        initial_prediction(simulator, pool.matrices[i], true_label, psi, expert_rngs[i])
        for i in range(pool.h)
    )

    sel = None
    if policy.variant in ("greedy_conformal", "greedy_topk"):
        restricted = restricted_for(pool, pset, restricted_cache)
        sel = greedy_select(pset, restricted, initial)
        subset = sel.selected
    else:
        subset = baseline_subset(policy, pool, subset_rng)

    finals = []
    for i in subset:
        if simulator == "oracle":
            finals.append(
                final_prediction_oracle(pool.matrices[i], true_label, pset, expert_rngs[i])
            )
        else:
            finals.append(
                final_prediction_empirical(psi, pool.matrices[i], pset, expert_rngs[i])
            )

    if finals:
        combined = majority(finals, probs, contributors=tuple(subset))
    else:
        combined = CombinedPrediction(
            label=_model_argmax_in(pset, probs),
            contributors=(),
            tie_broken=False,
            fallback="model_argmax",
        )

    trace = InstanceTrace(
        set_labels=pset.labels,
        set_source=pset.source,
        set_forced=pset.forced,
        initial_preds=initial,
        odds_table=None if sel is None else sel.odds_table,
        scores=None if sel is None else sel.scores,
        pseudo_label=None if sel is None else sel.pseudo_label,
        selected=tuple(subset),
        final_preds=tuple(finals),
        label=combined.label,
        tie_broken=combined.tie_broken,
        fallback=combined.fallback,
    )
    return combined, trace


def restricted_for(
    pool: ExpertPool,
    pset: PredictionSet,
    cache: dict | None,
) -> list[RestrictedSuccessMatrix]:
    if cache is None:
        return [restricted_matrix(m, pset) for m in pool.matrices]
    key = pset.labels
    hit = cache.get(key)
    if hit is None:
        hit = [restricted_matrix(m, pset) for m in pool.matrices]
        cache[key] = hit
    return hit
