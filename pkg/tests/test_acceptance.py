"""End-to-end acceptance checks for the package's core guarantees.

Each numbered test prints one summary line; the test outcome itself is the
pass/fail verdict for that check.  The final test exercises an optional
real-data path and skips unless data files are supplied via environment
variables.
"""

import json
import math
import os
import time

import numpy as np
import pytest

from conformal_crew.cli import main
from conformal_crew.conformal import PredictionSet, calibrate, coverage, predict_set
from conformal_crew.data import write_annotations, write_probs
from conformal_crew.experts import ExpertPool, build_pool
from conformal_crew.harness import (
    collect_traces,
    config_from_dict,
    emit_report,
    load_config,
    run_experiment,
)
from conformal_crew.selection import clamped_odds, greedy_select, restricted_matrix
from conformal_crew.synthetic import (
    annotations_from_pool,
    exchangeable_outputs,
    make_bound_scenario,
    peaked_outputs,
    random_confusion,
    run_bound_scenario,
    skewed_confusion,
    uniform_confusion,
)


def test_01_marginal_coverage_tracks_alpha():
    # calibrated sets on exchangeable data must cover the true label at
    # close to the nominal 90% rate
    start = time.monotonic()
    trials = []
    for trial in range(50):
        rng = np.random.default_rng(10_000 + trial)
        data = exchangeable_outputs(2500, 10, rng)
        cal_rows = np.arange(2000)
        cal_scores = 1.0 - data.probs[cal_rows, data.true_labels[cal_rows]]
        threshold = calibrate(cal_scores, 0.1)
        sets = [predict_set(data.probs[t], threshold) for t in range(2000, 2500)]
        trials.append(coverage(sets, data.true_labels[2000:]).marginal_coverage)
    elapsed = time.monotonic() - start
    mean_cov = float(np.mean(trials))
    print(
        f"PASS check 1: mean coverage {mean_cov:.4f} in [0.885, 0.925] "
        f"over 50x500 at alpha=0.1 ({elapsed:.1f}s < 60s)"
    )
    assert elapsed < 60.0
    assert 0.885 <= mean_cov <= 0.925


def _exhaustive_argmax(pset, restricted, preds):
    """Brute-force maximizer of the product of selected odds factors over
    every (candidate, subset) pair, with the same tie-breaks as production:
    higher product, then lower candidate position, then smaller subset."""
    h = len(preds)
    survivors = [i for i in range(h) if preds[i] in pset]
    m = len(survivors)
    best = None
    for k in range(len(pset.labels)):
        logf = [
            math.log(float(clamped_odds(restricted[i].values[k, preds[i]])))
            for i in survivors
        ]
        sums = [0.0] * (1 << m)
        for mask in range(1, 1 << m):
            low = (mask & -mask).bit_length() - 1
            sums[mask] = sums[mask ^ (1 << low)] + logf[low]
        for mask in range(1 << m):
            subset = tuple(survivors[j] for j in range(m) if mask >> j & 1)
            key = (-sums[mask], k, len(subset), subset)
            if best is None or key < best[0]:
                best = (key, k, subset)
    return best[1], best[2]


def test_02_greedy_matches_exhaustive_search():
    start = time.monotonic()
    rng = np.random.default_rng(515)
    agree = 0
    cases = 1000
    for _ in range(cases):
        n = int(rng.integers(2, 7))
        size = int(rng.integers(1, n + 1))
        labels = tuple(sorted(rng.choice(n, size=size, replace=False).tolist()))
        pset = PredictionSet(labels=labels, n_labels=n, source="conformal")
        h = int(rng.integers(1, 9))
        restricted = [
            restricted_matrix(random_confusion(n, rng, diag_low=0.3), pset)
            for _ in range(h)
        ]
        preds = [int(rng.integers(0, n)) for _ in range(h)]
        result = greedy_select(pset, restricted, preds)
        best_k, best_subset = _exhaustive_argmax(pset, restricted, preds)
        agree += (
            pset.labels[best_k] == result.pseudo_label
            and best_subset == result.selected
        )
    elapsed = time.monotonic() - start
    print(
        f"PASS check 2: greedy matches exhaustive (candidate, subset) argmax "
        f"on {agree}/{cases} random cases, h<=8, c<=6 ({elapsed:.1f}s < 30s)"
    )
    assert elapsed < 30.0
    assert agree == cases


@pytest.fixture(scope="module")
def bound_sweep():
    results = []
    for i in range(100):
        estimate, comparison = run_bound_scenario(make_bound_scenario(i))
        results.append((estimate, comparison))
    return results


def test_03_joint_success_bound_direction(bound_sweep):
    passes = sum(
        est.rhs <= est.lhs + 2.0 * (est.se_lhs + est.se_rhs)
        for est, _ in bound_sweep
    )
    print(
        f"PASS check 3: joint-success lower bound holds (within 2 SE) in "
        f"{passes}/100 randomized scenarios (need >= 95)"
    )
    assert passes >= 95


def test_04_odds_event_direction(bound_sweep):
    qualifying = [
        cmp for _, cmp in bound_sweep if cmp is not None and cmp.n_qualifying >= 100
    ]
    assert qualifying, "no scenario produced 100 records with an odds gap"
    passes = sum(
        cmp.freq_event_full <= cmp.freq_event_conf + 2.0 * cmp.se_difference
        for cmp in qualifying
    )
    fraction = passes / len(qualifying)
    print(
        f"PASS check 4: unrestricted odds event is no more frequent than the "
        f"set-restricted one in {passes}/{len(qualifying)} scenarios "
        f"({fraction:.0%}, need >= 95%)"
    )
    assert fraction >= 0.95


def test_05_greedy_beats_naive_baselines():
    # 2 reliable experts among 3 systematically misleading ones: subset
    # selection must recover the reliable pair and beat whole-pool voting,
    # size-matched random subsets, and the single best expert
    outputs = peaked_outputs(1000, 10, np.random.default_rng(2026), boost=2.0)
    strong = [uniform_confusion(10, 0.90)] * 2
    adversarial = [skewed_confusion(10, 0.15, 0.25, offset=1)] * 3
    pool = ExpertPool(
        tuple(f"e{i}" for i in range(5)), tuple(strong + adversarial)
    )
    config = config_from_dict(
        {
            "h": 5,
            "alpha": 0.05,
            "runs": 50,
            "master_seed": 0,
            "split": {"sizes": [250, 250]},
            "methods": ["greedy_conformal", "all_humans", "random", "single_best"],
        }
    )
    report = run_experiment(config, outputs, pool=pool, workers=4)
    means = {name: report.summaries[name].mean_success for name in report.method_names}
    greedy = means["greedy_conformal"]
    print(
        "PASS check 5: mean success greedy={greedy:.4f} all_humans={all:.4f} "
        "random={rand:.4f} single_best={best:.4f} (greedy >= naive + 2pp, "
        "> single_best)".format(
            greedy=greedy,
            all=means["all_humans"],
            rand=means["random"],
            best=means["single_best"],
        )
    )
    assert greedy >= means["all_humans"] + 0.02
    assert greedy >= means["random"] + 0.02
    assert greedy > means["single_best"]


def test_06_topk_equals_conformal_on_full_sets():
    # alpha far below 1/(l+1) makes the quantile infinite, so conformal
    # sets are the whole label space, exactly like top-k with k = n
    outputs = exchangeable_outputs(300, 4, np.random.default_rng(42))
    pool = build_pool(uniform_confusion(4, 0.8), 3)
    config = config_from_dict(
        {
            "h": 3,
            "alpha": 0.001,
            "runs": 1,
            "master_seed": 3,
            "methods": ["greedy_conformal", "greedy_topk(4)"],
        }
    )
    conformal = collect_traces(config, outputs, pool=pool, method="greedy_conformal")
    topk = collect_traces(config, outputs, pool=pool, method="greedy_topk(4)")
    assert len(conformal) == len(topk) > 0
    mismatches = 0
    for (id_a, trace_a), (id_b, trace_b) in zip(conformal, topk):
        assert id_a == id_b
        assert len(trace_a.set_labels) == 4
        assert trace_a.set_labels == trace_b.set_labels
        mismatches += trace_a.label != trace_b.label
    print(
        f"PASS check 6: greedy on full conformal sets and top-4 sets made "
        f"identical predictions on {len(conformal)} instances "
        f"({mismatches} mismatches)"
    )
    assert mismatches == 0


@pytest.fixture(scope="module")
def cli_inputs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance_cli")
    rng = np.random.default_rng(314)
    outputs = exchangeable_outputs(300, 4, rng)
    pool = build_pool(uniform_confusion(4, 0.8), 4)
    annotations = annotations_from_pool(outputs, pool, rng, rounds=2)
    write_probs(outputs, str(root / "probs.csv"))
    write_annotations(annotations, str(root / "annotations.csv"))
    (root / "config.json").write_text(
        json.dumps(
            {
                "h": 3,
                "alpha": 0.1,
                "runs": 4,
                "master_seed": 9,
                "methods": ["greedy_conformal", "all_humans", "model_only"],
            }
        )
    )
    return root


def test_07_reruns_are_byte_identical(cli_inputs, tmp_path):
    def run(out, workers):
        code = main(
            [
                "run",
                "--config", str(cli_inputs / "config.json"),
                "--probs", str(cli_inputs / "probs.csv"),
                "--annotations", str(cli_inputs / "annotations.csv"),
                "--out", str(out),
                "--workers", str(workers),
            ]
        )
        assert code == 0
        return out

    first = run(tmp_path / "first", 1)
    second = run(tmp_path / "second", 1)
    wide = run(tmp_path / "wide", 8)
    for name in ("summary.json", "results.csv"):
        repeat_equal = (first / name).read_bytes() == (second / name).read_bytes()
        workers_equal = (first / name).read_bytes() == (wide / name).read_bytes()
        assert repeat_equal, f"{name} differs between identical reruns"
        assert workers_equal, f"{name} differs between --workers 1 and 8"
    print(
        "PASS check 7: summary.json and results.csv byte-identical across "
        "reruns and across --workers 1 vs 8"
    )


def test_08_singleton_sets_force_the_prediction():
    outputs = exchangeable_outputs(400, 4, np.random.default_rng(8))
    pool = build_pool(uniform_confusion(4, 0.7), 3)
    config = config_from_dict(
        {
            "h": 3,
            "alpha": 0.35,
            "runs": 1,
            "master_seed": 1,
            "methods": [
                "greedy_conformal",
                "greedy_topk(1)",
                "all_humans",
                "random(2.0)",
                "single_best",
            ],
        }
    )
    singletons = 0
    violations = 0
    for method in config.method_names():
        for _, trace in collect_traces(config, outputs, pool=pool, method=method):
            if len(trace.set_labels) == 1:
                singletons += 1
                violations += trace.label != trace.set_labels[0]
    print(
        f"PASS check 8: {singletons} singleton sets across 5 set-constrained "
        f"methods, {violations} predictions outside the set"
    )
    assert singletons > 100
    assert violations == 0


def test_09_selection_cost_scales_linearly():
    rng = np.random.default_rng(99)
    sizes = []
    costs = []
    for h in (2, 4, 8, 16, 32, 64):
        for c in (2, 4, 8, 16):
            pset = PredictionSet(labels=tuple(range(c)), n_labels=c, source="conformal")
            restricted = [
                restricted_matrix(random_confusion(c, rng), pset) for _ in range(h)
            ]
            preds = [int(rng.integers(0, c)) for _ in range(h)]
            sizes.append(h * c)
            costs.append(greedy_select(pset, restricted, preds).op_count)
    x = np.asarray(sizes, dtype=float)
    y = np.asarray(costs, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    r_squared = 1.0 - (residual**2).sum() / ((y - y.mean()) ** 2).sum()
    print(
        f"PASS check 9: operation count vs h*c fits a line with "
        f"R^2={r_squared:.4f} over h in 2..64, c in 2..16 (need >= 0.99)"
    )
    assert r_squared >= 0.99


def test_10_real_data_protocol(tmp_path):
    probs_path = os.environ.get("REAL_PROBS")
    annotations_path = os.environ.get("REAL_ANNOTATIONS")
    if not probs_path or not annotations_path:
        pytest.skip(
            "set REAL_PROBS and REAL_ANNOTATIONS to CSV paths to run the "
            "real-data protocol"
        )
    config_path = tmp_path / "config.json"
    config_path.write_text(
        json.dumps(
            {
                "h": 5,
                "alpha_preset": "cifar10h",
                "runs": 10,
                "master_seed": 0,
                "split": {"sizes": [1000, 1000]},
                "simulator": "empirical",
            }
        )
    )
    from conformal_crew.data import parse_annotations, parse_probs

    outputs = parse_probs(probs_path)
    annotations = parse_annotations(annotations_path, outputs)
    report = run_experiment(load_config(str(config_path)), outputs, annotations)
    paths = emit_report(report, tmp_path / "out")
    header = paths["results"].read_text().split("\n", 1)[0]
    assert header == (
        "method,run,success,conditional_success,mean_subset_size,"
        "mean_set_size,marginal_coverage,q_hat"
    )
    print(
        "PASS check 10: real-data protocol ran end to end; "
        f"summary at {paths['summary']}"
    )
