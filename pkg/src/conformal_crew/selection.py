"""Per-instance expert subset selection.

Given a prediction set, each expert's confusion matrix is renormalized over
the set's labels into a restricted success matrix.  The greedy selector then
treats each set element as a candidate truth, multiplies the odds of the
experts that support it, and keeps the best-supported candidate together
with its supporting experts.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .conformal import PredictionSet
from .errors import EmptySet, LengthMismatch
from .experts import ConfusionMatrix, ExpertPool

ODDS_EPS = 1e-12


@dataclass(frozen=True)
class RestrictedSuccessMatrix:
    """Success probabilities renormalized over a prediction set.

    ``values[k, p]`` estimates the probability that the true label is
    ``set_labels[k]`` given the expert predicted ``p``; each column with
    positive unrestricted mass sums to 1 over the set.
    """

    set_labels: tuple[int, ...]
    values: np.ndarray


def restricted_matrix(confusion: ConfusionMatrix, pset: PredictionSet) -> RestrictedSuccessMatrix:
    """Renormalize confusion rows over the set labels, column by column.

    Columns whose restricted mass is zero fall back to uniform over the set.
    """
    labels = list(pset.labels)
    if not labels:
        raise EmptySet("cannot restrict to an empty set")
    sub = confusion.matrix[labels, :]
    denom = sub.sum(axis=0)
    safe = np.where(denom > 0, denom, 1.0)
    values = np.where(denom > 0, sub / safe, 1.0 / len(labels))
    return RestrictedSuccessMatrix(set_labels=tuple(labels), values=values)


def clamped_odds(values: np.ndarray) -> np.ndarray:
    """Odds v/(1-v) with v clamped away from 0 and 1.

    The clamp keeps singleton-set probabilities (exactly 1) and zero-mass
    entries finite; every odds computation in the package goes through here.
    """
    v = np.clip(values, ODDS_EPS, 1.0 - ODDS_EPS)
    return v / (1.0 - v)


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of greedy selection for one instance.

    ``odds_table`` has one row per expert and one column per set position;
    rows of experts removed by the in-set filter are NaN.  ``op_count``
    tallies elementary steps for complexity checks.
    """

    pseudo_label: int
    selected: tuple[int, ...]
    odds_table: np.ndarray
    scores: np.ndarray
    fallback_used: bool
    op_count: int


def greedy_select(
    pset: PredictionSet,
    restricted: list[RestrictedSuccessMatrix],
    initial_preds,
) -> SelectionResult:
    """Pick the set element with the strongest multiplicative expert support.

    Experts whose unrestricted first guess lies outside the set are removed.
    For each surviving expert i with guess p and each set position k, the
    odds F[i][k] = v/(1-v) of the restricted success probability v measure
    how strongly that guess supports candidate k.  Each candidate's score is
    the product of its supporting odds (factors above 1; empty product is 1),
    the best candidate becomes the pseudo label, and its supporters become
    the selected subset.  Ties break toward the lower set position.  Scores
    are compared in log space so huge products cannot overflow into spurious
    ties; the returned ``scores`` are the plain products.
    """
    h = len(initial_preds)
    if len(restricted) != h:
        raise LengthMismatch(f"{len(restricted)} matrices vs {h} predictions")
    c = len(pset.labels)
    ops = 0

    surviving = []
    for i in range(h):
        ops += 1
        if initial_preds[i] in pset:
            surviving.append(i)

    odds_table = np.full((h, c), np.nan)
    for i in surviving:
        odds_table[i] = clamped_odds(restricted[i].values[:, initial_preds[i]])
        ops += c

    scores = np.ones(c)
    log_scores = np.zeros(c)
    for k in range(c):
        for i in surviving:
            ops += 1
            f = odds_table[i, k]
            if f > 1.0:
                scores[k] *= f
                log_scores[k] += math.log(f)
    k_star = int(np.argmax(log_scores))
    ops += c

    selected = []
    for i in surviving:
        ops += 1
        if odds_table[i, k_star] > 1.0:
            selected.append(i)

    return SelectionResult(
        pseudo_label=pset.labels[k_star],
        selected=tuple(selected),
        odds_table=odds_table,
        scores=scores,
        fallback_used=not selected,
        op_count=ops,
    )


@dataclass(frozen=True)
class OptimalTeamSize:
    """Suggested expert-team cap with the per-size curves behind it."""

    m_hat: int
    phi_alpha: tuple[float, ...]
    phi_expert: tuple[float, ...]
    warning: bool


def choose_team_size(phi_alpha, phi_expert) -> OptimalTeamSize:
    """Largest team size where the set-guided framework still beats the
    unaided expert team.

    Scans m = 1..zeta keeping the framework success phi_alpha(m) whenever it
    is at least the plain majority-vote success phi_expert(m) and at least
    the best framework success kept so far; ties in phi_alpha move the
    answer toward larger m.  When no size qualifies the answer is 1 with a
    warning flag.
    """
    if len(phi_alpha) != len(phi_expert) or not phi_alpha:
        raise LengthMismatch("need matching nonempty success curves")
    best = -math.inf
    m_hat = None
    for m, (alpha_val, expert_val) in enumerate(zip(phi_alpha, phi_expert), start=1):
        if alpha_val >= expert_val and alpha_val >= best:
            best = alpha_val
            m_hat = m
    if m_hat is None:
        return OptimalTeamSize(
            m_hat=1,
            phi_alpha=tuple(phi_alpha),
            phi_expert=tuple(phi_expert),
            warning=True,
        )
    return OptimalTeamSize(
        m_hat=m_hat,
        phi_alpha=tuple(phi_alpha),
        phi_expert=tuple(phi_expert),
        warning=False,
    )


_POLICY_RE = re.compile(r"^(greedy_topk|random)\(([^)]+)\)$")
_BARE_POLICIES = {"greedy_conformal", "all_humans", "random", "single_best", "model_only"}


@dataclass(frozen=True)
class SubsetPolicy:
    """One evaluation method; ``tau`` of None means match the greedy mean."""

    variant: str
    k: int | None = None
    tau: float | None = None

    def name(self) -> str:
        if self.variant == "greedy_topk":
            return f"greedy_topk({self.k})"
        if self.variant == "random" and self.tau is not None:
            return f"random({self.tau:g})"
        return self.variant


def parse_policy(text: str) -> SubsetPolicy:
    """Parse a method string such as ``greedy_topk(5)`` or ``random``."""
    text = text.strip()
    if text in _BARE_POLICIES:
        return SubsetPolicy(variant=text)
    match = _POLICY_RE.match(text)
    if match:
        variant, arg = match.groups()
        if variant == "greedy_topk":
            return SubsetPolicy(variant=variant, k=int(arg))
        return SubsetPolicy(variant=variant, tau=float(arg))
    raise ValueError(f"unknown method {text!r}")


def baseline_subset(
    policy: SubsetPolicy,
    pool: ExpertPool,
    rng: np.random.Generator,
) -> tuple[int, ...]:
    """Expert subset for the non-greedy policies.

    all_humans takes everyone; random draws a uniform subset whose size is
    tau rounded up or down at random so its mean matches tau; single_best
    takes the expert with the largest mean diagonal.  Greedy variants are
    handled by :func:`greedy_select` instead.
    """
    h = pool.h
    if policy.variant == "all_humans":
        return tuple(range(h))
    if policy.variant == "random":
        if policy.tau is None:
            raise ValueError("random policy needs tau resolved before selection")
        tau = min(max(policy.tau, 1.0), float(h))
        size = int(math.floor(tau))
        if rng.random() < tau - size:
            size += 1
        size = min(max(size, 1), h)
        return tuple(sorted(int(i) for i in rng.permutation(h)[:size]))
    if policy.variant == "single_best":
        masses = [m.diagonal_mass() for m in pool.matrices]
        return (int(np.argmax(masses)),)
    raise ValueError(f"baseline_subset does not handle {policy.variant!r}")
