"""Experiment orchestration: config, seeded multi-run evaluation, reports.

Runs are independent and may execute across processes; every random draw
is keyed by (master_seed, run_index, expert_index, instance_index) plus a
purpose tag, so a report depends only on the configuration, never on the
worker count or scheduling order.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .bounds import BoundEstimate, Lemma2Summary, collect_bound_traces, lemma1_estimate, lemma2_compare
from .combine import InstanceTrace, majority, system_predict
from .conformal import calibrate
from .data import AnnotationTable, ClassifierOutputs, Split, split_dataset, split_dataset_sizes
from .errors import ConfigError, DataError, EmptyAfterFilter, InsufficientData
from .experts import (
    ExpertPool,
    build_pool,
    empirical_distribution,
    estimate_confusion,
    initial_prediction,
)
from .seeding import derive_rng, stable_hash64
from .selection import OptimalTeamSize, SubsetPolicy, choose_team_size, parse_policy

ARTIFACT_VERSION = "0.1.0"

logger = logging.getLogger(__name__)

# Tolerance schedules keyed by calibration size; alpha shrinks as the
# calibration set grows so the expected set sizes stay comparable.
ALPHA_PRESETS: dict[str, dict[int, float]] = {
    "imagenet16h": {180: 0.0110, 240: 0.0083, 300: 0.0066, 360: 0.0055},
    "cifar10h": {1000: 0.0010, 1500: 0.0007, 2000: 0.0005, 2500: 0.0004, 3000: 0.0003},
}

DEFAULT_METHODS = (
    "greedy_conformal",
    "all_humans",
    "random",
    "single_best",
    "model_only",
)

_TOP_KEYS = {
    "alpha",
    "alpha_preset",
    "h",
    "runs",
    "master_seed",
    "split",
    "methods",
    "smoothing",
    "simulator",
    "jitter",
    "zeta",
    "k_values",
    "fixed_split",
    "delta",
    "compute_bounds",
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment knobs; ``methods`` pairs each config string with
    its parsed policy.  ``delta`` is accepted for interface compatibility
    but has no effect."""

    h: int
    alpha: float | None = None
    alpha_preset: str | None = None
    runs: int = 10
    master_seed: int = 0
    split_fractions: tuple[float, float, float] | None = (0.2, 0.2, 0.6)
    split_sizes: tuple[int, int] | None = None
    methods: tuple[tuple[str, SubsetPolicy], ...] = ()
    smoothing: float = 1.0
    simulator: str = "oracle"
    jitter: float | None = None
    zeta: int = 10
    k_values: tuple[int, ...] = ()
    fixed_split: bool = False
    delta: float | None = None
    compute_bounds: bool = False

    def method_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.methods)

    def echo(self) -> dict:
        """Canonical plain-dict form for report embedding."""
        split: dict = {}
        if self.split_fractions is not None:
            split["fractions"] = list(self.split_fractions)
        if self.split_sizes is not None:
            split["sizes"] = list(self.split_sizes)
        return {
            "alpha": self.alpha,
            "alpha_preset": self.alpha_preset,
            "h": self.h,
            "runs": self.runs,
            "master_seed": self.master_seed,
            "split": split,
            "methods": list(self.method_names()),
            "smoothing": self.smoothing,
            "simulator": self.simulator,
            "jitter": self.jitter,
            "zeta": self.zeta,
            "k_values": list(self.k_values),
            "fixed_split": self.fixed_split,
            "delta": self.delta,
            "compute_bounds": self.compute_bounds,
        }


def _parse_methods(entries, k_values) -> tuple[tuple[str, SubsetPolicy], ...]:
    pairs: list[tuple[str, SubsetPolicy]] = []
    for entry in entries:
        if not isinstance(entry, str):
            raise ConfigError(f"methods entries must be strings, got {entry!r}")
        if entry == "greedy_topk":
            if not k_values:
                raise ConfigError("bare greedy_topk needs k_values to expand over")
            for k in k_values:
                pairs.append((f"greedy_topk({k})", SubsetPolicy("greedy_topk", k=int(k))))
            continue
        try:
            pairs.append((entry, parse_policy(entry)))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    names = [name for name, _ in pairs]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate methods in {names}")
    if not pairs:
        raise ConfigError("methods must not be empty")
    return tuple(pairs)


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Validate a JSON-shaped mapping; unknown keys are rejected."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "h" not in raw:
        raise ConfigError("config needs 'h'")
    alpha = raw.get("alpha")
    preset = raw.get("alpha_preset")
    if (alpha is None) == (preset is None):
        raise ConfigError("config needs exactly one of 'alpha' or 'alpha_preset'")
    if alpha is not None and not 0.0 < float(alpha) < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    if preset is not None and preset not in ALPHA_PRESETS:
        raise ConfigError(
            f"unknown alpha_preset {preset!r}; choices: {sorted(ALPHA_PRESETS)}"
        )

    split_raw = raw.get("split", {"fractions": [0.2, 0.2, 0.6]})
    if not isinstance(split_raw, dict) or not set(split_raw) <= {"fractions", "sizes"}:
        raise ConfigError("split must be {'fractions': [...]} or {'sizes': [...]}")
    fractions = None
    sizes = None
    if "sizes" in split_raw and "fractions" in split_raw:
        raise ConfigError("split takes fractions or sizes, not both")
    if "sizes" in split_raw:
        sizes_list = split_raw["sizes"]
        if len(sizes_list) != 2:
            raise ConfigError("split sizes must be [calibration, estimation]")
        sizes = (int(sizes_list[0]), int(sizes_list[1]))
    else:
        fr = split_raw.get("fractions", [0.2, 0.2, 0.6])
        if len(fr) != 3:
            raise ConfigError("split fractions must be [cal, est, test]")
        fractions = (float(fr[0]), float(fr[1]), float(fr[2]))
        if abs(sum(fractions) - 1.0) > 1e-9 or any(f <= 0 for f in fractions):
            raise ConfigError(f"split fractions must be positive and sum to 1, got {fr}")

    k_values = tuple(int(k) for k in raw.get("k_values", []))
    methods = _parse_methods(raw.get("methods", list(DEFAULT_METHODS)), k_values)

    simulator = raw.get("simulator", "oracle")
    if simulator not in ("oracle", "empirical"):
        raise ConfigError(f"simulator must be 'oracle' or 'empirical', got {simulator!r}")

    def _positive_int(key, default, minimum=1):
        value = raw.get(key, default)
        if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
            raise ConfigError(f"{key} must be an integer >= {minimum}, got {value!r}")
        return value

    smoothing = float(raw.get("smoothing", 1.0))
    if smoothing < 0:
        raise ConfigError("smoothing must be nonnegative")
    jitter = raw.get("jitter")
    if jitter is not None:
        jitter = float(jitter)
        if jitter <= 0:
            raise ConfigError("jitter must be positive when given")

    return ExperimentConfig(
        h=_positive_int("h", None),
        alpha=None if alpha is None else float(alpha),
        alpha_preset=preset,
        runs=_positive_int("runs", 10),
        master_seed=int(raw.get("master_seed", 0)),
        split_fractions=fractions,
        split_sizes=sizes,
        methods=methods,
        smoothing=smoothing,
        simulator=simulator,
        jitter=jitter,
        zeta=_positive_int("zeta", 10),
        k_values=k_values,
        fixed_split=bool(raw.get("fixed_split", False)),
        delta=None if raw.get("delta") is None else float(raw.get("delta")),
        compute_bounds=bool(raw.get("compute_bounds", False)),
    )


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as handle:
            raw = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    return config_from_dict(raw)


def resolve_alpha(config: ExperimentConfig, cal_size: int) -> float:
    """Fixed alpha, or the preset entry for the calibration size (nearest
    size when there is no exact match)."""
    if config.alpha is not None:
        return config.alpha
    table = ALPHA_PRESETS[config.alpha_preset]
    if cal_size in table:
        return table[cal_size]
    nearest = min(table, key=lambda size: (abs(size - cal_size), size))
    logger.warning(
        "alpha preset %s has no entry for calibration size %d; using %d",
        config.alpha_preset, cal_size, nearest,
    )
    return table[nearest]


# -- per-run execution ---------------------------------------------------

@dataclass(frozen=True)
class MethodRun:
    """Raw metrics of one method in one run.  ``predictions`` stays in
    memory for trace-level checks and is not serialized."""

    success: float
    conditional_success: float
    mean_subset_size: float
    mean_set_size: float
    marginal_coverage: float
    per_class_coverage: tuple[float, ...]
    forced_sets: int
    fallback_count: int
    predictions: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "success": self.success,
            "conditional_success": self.conditional_success,
            "mean_subset_size": self.mean_subset_size,
            "mean_set_size": self.mean_set_size,
            "marginal_coverage": self.marginal_coverage,
            "per_class_coverage": list(self.per_class_coverage),
            "forced_sets": self.forced_sets,
            "fallback_count": self.fallback_count,
        }


@dataclass(frozen=True)
class RunRecord:
    run_index: int
    alpha: float
    l: int
    q_hat: float
    sizes: tuple[int, int, int]
    methods: dict[str, MethodRun]
    lemma1: BoundEstimate | None
    lemma2: Lemma2Summary | None

    def to_dict(self) -> dict:
        return {
            "run": self.run_index,
            "alpha": self.alpha,
            "l": self.l,
            "q_hat": self.q_hat,
            "sizes": list(self.sizes),
            "methods": {name: m.to_dict() for name, m in self.methods.items()},
            "lemma1": None if self.lemma1 is None else vars(self.lemma1).copy(),
            "lemma2": None if self.lemma2 is None else vars(self.lemma2).copy(),
        }


class _RunState:
    """Everything one run's method evaluations share."""

    def __init__(self, config, outputs, annotations, pool_override, run_index):
        self.config = config
        self.run_index = run_index
        self.outputs = outputs
        ids = outputs.ids
        if config.fixed_split:
            split_seed = stable_hash64(config.master_seed, "split")
        else:
            split_seed = stable_hash64(config.master_seed, run_index, "split")
        if config.split_sizes is not None:
            self.split = split_dataset_sizes(
                ids, config.split_sizes[0], config.split_sizes[1], split_seed
            )
        else:
            self.split = split_dataset(ids, config.split_fractions, split_seed)

        cal_rows = [outputs.row(i) for i in self.split.cal_ids]
        cal_scores = 1.0 - outputs.probs[cal_rows, outputs.true_labels[cal_rows]]
        self.alpha = resolve_alpha(config, self.split.l)
        self.threshold = calibrate(cal_scores, self.alpha)

        if pool_override is not None:
            self.pool = pool_override
        else:
            if annotations is None:
                raise DataError(
                    "an annotation table is required to estimate the expert pool"
                )
            fit_ids = set(self.split.cal_ids) | set(self.split.est_ids)
            base = estimate_confusion(annotations, outputs, fit_ids, config.smoothing)
            self.pool = build_pool(
                base,
                config.h,
                config.jitter,
                derive_rng(config.master_seed, run_index, "pool"),
            )
        if self.pool.n_labels != outputs.n_labels:
            raise DataError("expert pool label space does not match the outputs")

        test_rows = [outputs.row(i) for i in self.split.test_ids]
        self.test_ids = self.split.test_ids
        self.test_probs = outputs.probs[test_rows]
        self.test_labels = outputs.true_labels[test_rows]
        if config.simulator == "empirical":
            if annotations is None:
                raise DataError("empirical simulation needs an annotation table")
            self.psis = [
                empirical_distribution(annotations, iid) for iid in self.test_ids
            ]
        else:
            self.psis = None

    def expert_rngs(self, instance_index: int):
        seed = self.config.master_seed
        return [
            derive_rng(seed, self.run_index, i, instance_index)
            for i in range(self.pool.h)
        ]

    def subset_rng(self, instance_index: int):
        return derive_rng(
            self.config.master_seed, self.run_index, "subset", instance_index
        )


def _evaluate_method(state: _RunState, policy: SubsetPolicy, keep_traces: bool = False):
    """Run one policy over the test split, returning (MethodRun, traces)."""
    n = state.outputs.n_labels
    cache: dict = {}
    predictions: list[int] = []
    traces: list[InstanceTrace] = []
    uses_sets = policy.variant != "model_only"
    correct = 0
    covered_count = 0
    correct_covered = 0
    subset_sum = 0
    size_sum = 0
    forced = 0
    fallbacks = 0
    hits = np.zeros(n, dtype=np.int64)
    totals = np.zeros(n, dtype=np.int64)

    for t in range(len(state.test_ids)):
        y = int(state.test_labels[t])
        psi = state.psis[t] if state.psis is not None else None
        combined, trace = system_predict(
            probs=state.test_probs[t],
            true_label=y,
            psi=psi,
            policy=policy,
            threshold=state.threshold,
            pool=state.pool,
            simulator=state.config.simulator,
            expert_rngs=state.expert_rngs(t),
            subset_rng=state.subset_rng(t),
            restricted_cache=cache,
        )
        predictions.append(combined.label)
        if keep_traces:
            traces.append(trace)
        correct += combined.label == y
        subset_sum += len(trace.selected)
        fallbacks += trace.fallback != "none"
        if uses_sets:
            size_sum += len(trace.set_labels)
            forced += trace.set_forced
            totals[y] += 1
            if y in trace.set_labels:
                hits[y] += 1
                covered_count += 1
                correct_covered += combined.label == y

    count = len(state.test_ids)
    if uses_sets:
        per_class = tuple(
            float(hits[c]) / totals[c] if totals[c] else math.nan for c in range(n)
        )
        marginal = covered_count / count
        mean_size = size_sum / count
        conditional = correct_covered / covered_count if covered_count else math.nan
    else:
        per_class = tuple(math.nan for _ in range(n))
        marginal = math.nan
        mean_size = math.nan
        conditional = math.nan

    method_run = MethodRun(
        success=correct / count,
        conditional_success=conditional,
        mean_subset_size=subset_sum / count,
        mean_set_size=mean_size,
        marginal_coverage=marginal,
        per_class_coverage=per_class,
        forced_sets=forced,
        fallback_count=fallbacks,
        predictions=tuple(predictions),
    )
    return method_run, (traces if keep_traces else None)


def _run_one(
    config: ExperimentConfig,
    outputs: ClassifierOutputs,
    annotations: AnnotationTable | None,
    pool_override: ExpertPool | None,
    run_index: int,
) -> RunRecord:
    state = _RunState(config, outputs, annotations, pool_override, run_index)

    needs_tau = any(
        policy.variant == "random" and policy.tau is None
        for _, policy in config.methods
    )
    greedy_run: MethodRun | None = None
    results: dict[str, MethodRun] = {}

    for name, policy in config.methods:
        if policy.variant == "greedy_conformal":
            greedy_run, _ = _evaluate_method(state, policy)
            results[name] = greedy_run
    if needs_tau and greedy_run is None:
        # the size-matched baseline needs the greedy subset sizes even when
        # the greedy method itself is not reported
        greedy_run, _ = _evaluate_method(state, SubsetPolicy("greedy_conformal"))

    for name, policy in config.methods:
        if name in results:
            continue
        if policy.variant == "random" and policy.tau is None:
            policy = replace(policy, tau=max(greedy_run.mean_subset_size, 1.0))
        results[name] = _evaluate_method(state, policy)[0]

    lemma1 = None
    lemma2 = None
    if config.compute_bounds:
        seed = config.master_seed
        traces = collect_bound_traces(
            state.test_probs,
            state.test_labels,
            state.psis,
            state.threshold,
            state.pool,
            config.simulator,
            rng_for=lambda i, t: derive_rng(seed, run_index, "bounds", i, t),
        )
        lemma1 = lemma1_estimate(traces, state.alpha)
        try:
            lemma2 = lemma2_compare(traces)
        except EmptyAfterFilter:
            lemma2 = None

    return RunRecord(
        run_index=run_index,
        alpha=state.alpha,
        l=state.split.l,
        q_hat=state.threshold.q_hat,
        sizes=(
            len(state.split.cal_ids),
            len(state.split.est_ids),
            len(state.split.test_ids),
        ),
        methods=results,
        lemma1=lemma1,
        lemma2=lemma2,
    )


def _run_one_star(args) -> RunRecord:
    return _run_one(*args)


# -- aggregation ---------------------------------------------------------

@dataclass(frozen=True)
class MethodSummary:
    mean_success: float
    std_success: float
    mean_conditional_success: float
    mean_subset_size: float
    mean_set_size: float
    mean_coverage: float
    per_class_coverage: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "mean_success": self.mean_success,
            "std_success": self.std_success,
            "mean_conditional_success": self.mean_conditional_success,
            "mean_subset_size": self.mean_subset_size,
            "mean_set_size": self.mean_set_size,
            "mean_coverage": self.mean_coverage,
            "per_class_coverage": list(self.per_class_coverage),
        }


@dataclass(frozen=True)
class Report:
    version: str
    config: dict
    x_label: str
    x_value: float
    method_names: tuple[str, ...]
    summaries: dict[str, MethodSummary]
    runs: tuple[RunRecord, ...]
    bounds: dict | None


def _nanmean(values) -> float:
    defined = [v for v in values if not math.isnan(v)]
    return sum(defined) / len(defined) if defined else math.nan


def _summarize(records: list[RunRecord], name: str) -> MethodSummary:
    runs = [r.methods[name] for r in records]
    successes = np.array([m.success for m in runs])
    n_classes = len(runs[0].per_class_coverage)
    per_class = tuple(
        _nanmean([m.per_class_coverage[c] for m in runs]) for c in range(n_classes)
    )
    return MethodSummary(
        mean_success=float(successes.mean()),
        std_success=float(successes.std()),
        mean_conditional_success=_nanmean([m.conditional_success for m in runs]),
        mean_subset_size=float(np.mean([m.mean_subset_size for m in runs])),
        mean_set_size=_nanmean([m.mean_set_size for m in runs]),
        mean_coverage=_nanmean([m.marginal_coverage for m in runs]),
        per_class_coverage=per_class,
    )


def _aggregate_bounds(records: list[RunRecord]) -> dict | None:
    with_bounds = [r for r in records if r.lemma1 is not None]
    if not with_bounds:
        return None
    lemma2_rows = [r.lemma2 for r in with_bounds if r.lemma2 is not None]
    aggregate = {
        "lemma1_mean_lhs": float(np.mean([r.lemma1.lhs for r in with_bounds])),
        "lemma1_mean_rhs": float(np.mean([r.lemma1.rhs for r in with_bounds])),
        "lemma2_mean_freq_event_full": _nanmean(
            [s.freq_event_full for s in lemma2_rows]
        )
        if lemma2_rows
        else math.nan,
        "lemma2_mean_freq_event_conf": _nanmean(
            [s.freq_event_conf for s in lemma2_rows]
        )
        if lemma2_rows
        else math.nan,
    }
    return aggregate


def run_experiment(
    config: ExperimentConfig,
    outputs: ClassifierOutputs,
    annotations: AnnotationTable | None = None,
    pool: ExpertPool | None = None,
    workers: int = 1,
) -> Report:
    """Execute every configured run and aggregate mean and stddev metrics.

    ``pool`` overrides confusion estimation with a constructed expert pool.
    ``workers`` only distributes runs across processes; any value produces
    the identical report.
    """
    if len(outputs) < 3:
        raise InsufficientData("need at least 3 instances to split")
    logger.info(
        "running %d runs of %d methods on %d instances",
        config.runs, len(config.methods), len(outputs),
    )
    arg_rows = [(config, outputs, annotations, pool, r) for r in range(config.runs)]
    if workers > 1 and config.runs > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            records = list(executor.map(_run_one_star, arg_rows))
    else:
        records = [_run_one(*args) for args in arg_rows]

    summaries = {name: _summarize(records, name) for name in config.method_names()}
    return Report(
        version=ARTIFACT_VERSION,
        config=config.echo(),
        x_label="alpha",
        x_value=records[0].alpha,
        method_names=config.method_names(),
        summaries=summaries,
        runs=tuple(records),
        bounds=_aggregate_bounds(records),
    )


SWEEP_PARAMS = ("calibration_fraction", "k", "h", "alpha")


def sweep(
    config: ExperimentConfig,
    param: str,
    values,
    outputs: ClassifierOutputs,
    annotations: AnnotationTable | None = None,
    pool: ExpertPool | None = None,
    workers: int = 1,
) -> list[Report]:
    """One report per swept value; the estimation fraction tracks the
    calibration fraction when that is the swept parameter."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"sweep param must be one of {SWEEP_PARAMS}, got {param!r}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    reports = []
    for value in values:
        if param == "calibration_fraction":
            fraction = float(value)
            if not 0.0 < fraction < 0.5:
                raise ConfigError(
                    f"calibration fraction must lie in (0, 0.5), got {fraction}"
                )
            point = replace(
                config,
                split_fractions=(fraction, fraction, 1.0 - 2.0 * fraction),
                split_sizes=None,
            )
        elif param == "k":
            k = int(value)
            kept = [
                (name, policy)
                for name, policy in config.methods
                if policy.variant != "greedy_topk"
            ]
            kept.append((f"greedy_topk({k})", SubsetPolicy("greedy_topk", k=k)))
            point = replace(config, methods=tuple(kept), k_values=(k,))
        elif param == "h":
            point = replace(config, h=int(value))
        else:
            alpha = float(value)
            if not 0.0 < alpha < 1.0:
                raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
            point = replace(config, alpha=alpha, alpha_preset=None)
        report = run_experiment(point, outputs, annotations, pool, workers)
        reports.append(
            replace(report, x_label=param, x_value=float(value))
        )
    return reports


def estimate_optimal_m(
    config: ExperimentConfig,
    outputs: ClassifierOutputs,
    annotations: AnnotationTable | None = None,
    pool: ExpertPool | None = None,
) -> OptimalTeamSize:
    """Estimate the suggested expert-team cap on the estimation split.

    For each m up to zeta the same initial-draw streams feed two
    evaluations: plain majority voting over the first m experts' full-space
    guesses, and the set-guided greedy framework.  The choice rule then
    keeps the largest m where the framework still wins.
    """
    seed = config.master_seed
    if config.fixed_split:
        split_seed = stable_hash64(seed, "split")
    else:
        split_seed = stable_hash64(seed, 0, "split")
    if config.split_sizes is not None:
        split = split_dataset_sizes(
            outputs.ids, config.split_sizes[0], config.split_sizes[1], split_seed
        )
    else:
        split = split_dataset(outputs.ids, config.split_fractions, split_seed)

    cal_rows = [outputs.row(i) for i in split.cal_ids]
    cal_scores = 1.0 - outputs.probs[cal_rows, outputs.true_labels[cal_rows]]
    alpha = resolve_alpha(config, split.l)
    threshold = calibrate(cal_scores, alpha)

    if pool is None:
        if annotations is None:
            raise DataError("an annotation table is required to estimate the expert pool")
        fit_ids = set(split.cal_ids) | set(split.est_ids)
        base = estimate_confusion(annotations, outputs, fit_ids, config.smoothing)
        pool = build_pool(
            base, config.zeta, config.jitter, derive_rng(seed, "find-m", "pool")
        )
    zeta = min(config.zeta, pool.h)

    est_rows = [outputs.row(i) for i in split.est_ids]
    est_probs = outputs.probs[est_rows]
    est_labels = outputs.true_labels[est_rows]
    if config.simulator == "empirical":
        if annotations is None:
            raise DataError("empirical simulation needs an annotation table")
        psis = [empirical_distribution(annotations, iid) for iid in split.est_ids]
    else:
        psis = None

    greedy = SubsetPolicy("greedy_conformal")
    phi_alpha = []
    phi_expert = []
    count = len(est_labels)
    for m in range(1, zeta + 1):
        sub = pool.take(m)
        cache: dict = {}
        correct_expert = 0
        correct_framework = 0
        for t in range(count):
            y = int(est_labels[t])
            psi = psis[t] if psis is not None else None
            rngs = [derive_rng(seed, "find-m", m, i, t) for i in range(m)]
            initial = [
                initial_prediction(config.simulator, sub.matrices[i], y, psi, rngs[i])
                for i in range(m)
            ]
            correct_expert += majority(initial, est_probs[t]).label == y
            combined, _ = system_predict(
                probs=est_probs[t],
                true_label=y,
                psi=psi,
                policy=greedy,
                threshold=threshold,
                pool=sub,
                simulator=config.simulator,
                expert_rngs=[derive_rng(seed, "find-m", m, i, t) for i in range(m)],
                subset_rng=derive_rng(seed, "find-m", "subset", m, t),
                restricted_cache=cache,
            )
            correct_framework += combined.label == y
        phi_expert.append(correct_expert / count)
        phi_alpha.append(correct_framework / count)

    result = choose_team_size(phi_alpha, phi_expert)
    if result.warning:
        logger.warning(
            "no team size kept the framework ahead of plain majority voting; "
            "falling back to m_hat=1"
        )
    return result


def collect_traces(
    config: ExperimentConfig,
    outputs: ClassifierOutputs,
    annotations: AnnotationTable | None = None,
    pool: ExpertPool | None = None,
    run_index: int = 0,
    method: str | None = None,
) -> list[tuple[str, InstanceTrace]]:
    """Per-instance pipeline traces for one run of one method."""
    if method is None:
        method = config.method_names()[0]
    policy = dict(config.methods).get(method)
    if policy is None:
        policy = parse_policy(method)
    state = _RunState(config, outputs, annotations, pool, run_index)
    if policy.variant == "random" and policy.tau is None:
        greedy_run, _ = _evaluate_method(state, SubsetPolicy("greedy_conformal"))
        policy = replace(policy, tau=max(greedy_run.mean_subset_size, 1.0))
    _, traces = _evaluate_method(state, policy, keep_traces=True)
    return list(zip(state.test_ids, traces))


# -- serialization -------------------------------------------------------

def _jsonable(value):
    """Recursively convert to strict-JSON values: NaN becomes null and
    infinities become the strings "inf" / "-inf"."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        if math.isnan(value):
            return None
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, (np.integer,)):
        return int(value)
    return value


def report_to_dict(report: Report) -> dict:
    """The report's canonical serialized form (strict JSON values)."""
    return _jsonable(
        {
            "version": report.version,
            "config": report.config,
            "x_label": report.x_label,
            "x_value": report.x_value,
            "method_names": list(report.method_names),
            "summaries": {
                name: summary.to_dict() for name, summary in report.summaries.items()
            },
            "runs": [record.to_dict() for record in report.runs],
            "bounds": report.bounds,
        }
    )


def _format_float(value: float) -> str:
    return repr(float(value))


def emit_report(report: Report, out_dir: str) -> dict[str, Path]:
    """Write summary.json, results.csv, and plotdata.csv; returns the paths.

    Emission is deterministic: equal reports produce byte-identical files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "summary": out / "summary.json",
        "results": out / "results.csv",
        "plotdata": out / "plotdata.csv",
    }
    payload = json.dumps(
        report_to_dict(report), indent=2, sort_keys=True, allow_nan=False
    )
    paths["summary"].write_text(payload + "\n", encoding="utf-8")

    with open(paths["results"], "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            [
                "method",
                "run",
                "success",
                "conditional_success",
                "mean_subset_size",
                "mean_set_size",
                "marginal_coverage",
                "q_hat",
            ]
        )
        for name in report.method_names:
            for record in report.runs:
                m = record.methods[name]
                writer.writerow(
                    [
                        name,
                        record.run_index,
                        _format_float(m.success),
                        _format_float(m.conditional_success),
                        _format_float(m.mean_subset_size),
                        _format_float(m.mean_set_size),
                        _format_float(m.marginal_coverage),
                        _format_float(record.q_hat),
                    ]
                )

    write_plotdata([report], paths["plotdata"])
    logger.info("wrote %s", ", ".join(str(p) for p in paths.values()))
    return paths


def write_plotdata(reports, path) -> Path:
    """Success mean and stddev per method per x value, one row each.

    Methods vary on the outer loop so each method's rows stay contiguous
    across a sweep.
    """
    path = Path(path)
    names: list[str] = []
    for report in reports:
        for name in report.method_names:
            if name not in names:
                names.append(name)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["method", "x", "mean", "stddev"])
        for name in names:
            for report in reports:
                summary = report.summaries.get(name)
                if summary is None:
                    continue
                writer.writerow(
                    [
                        name,
                        _format_float(report.x_value),
                        _format_float(summary.mean_success),
                        _format_float(summary.std_success),
                    ]
                )
    return path


def load_report(path: str) -> dict:
    """Reload an emitted summary.json as its serialized dict form."""
    with open(path, encoding="utf-8") as handle:
        return json.load(handle)
