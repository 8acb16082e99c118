"""Simulation toolkit for expert teams guided by conformal prediction sets.

The pipeline: calibrate a set-valued classifier, simulate expert initial
guesses, pick a per-instance expert subset by greedy odds screening, and
combine the subset's set-restricted answers by majority vote.  The harness
runs seeded multi-run experiments over that pipeline and writes reports.
"""

from .bounds import (
    BoundEstimate,
    BoundTrace,
    Lemma2Summary,
    collect_bound_traces,
    lemma1_estimate,
    lemma2_compare,
)
from .combine import CombinedPrediction, InstanceTrace, majority, system_predict
from .conformal import (
    ConformalThreshold,
    CoverageReport,
    PredictionSet,
    calibrate,
    coverage,
    full_set,
    predict_set,
    score,
    topk_set,
)
from .data import (
    AnnotationTable,
    ClassifierOutputs,
    Split,
    parse_annotations,
    parse_probs,
    split_dataset,
    split_dataset_sizes,
    write_annotations,
    write_probs,
)
from .errors import ConfigError, CrewError, DataError
from .experts import (
    ConfusionMatrix,
    ExpertPool,
    build_pool,
    empirical_distribution,
    estimate_confusion,
    final_prediction_empirical,
    final_prediction_oracle,
    initial_prediction,
    read_confusion,
    write_confusion,
)
from .figures import (
    render_bounds_figure,
    render_find_m_figure,
    render_run_figure,
    render_sweep_figure,
)
from .harness import (
    ALPHA_PRESETS,
    ExperimentConfig,
    MethodRun,
    MethodSummary,
    Report,
    RunRecord,
    collect_traces,
    config_from_dict,
    emit_report,
    estimate_optimal_m,
    load_config,
    load_report,
    resolve_alpha,
    run_experiment,
    sweep,
    write_plotdata,
)
from .harness import ARTIFACT_VERSION as __version__
from .seeding import derive_rng, sample_index, stable_hash64
from .selection import (
    OptimalTeamSize,
    RestrictedSuccessMatrix,
    SelectionResult,
    SubsetPolicy,
    baseline_subset,
    choose_team_size,
    clamped_odds,
    greedy_select,
    parse_policy,
    restricted_matrix,
)
from .synthetic import (
    annotations_from_pool,
    exchangeable_outputs,
    make_bound_scenario,
    peaked_outputs,
    random_confusion,
    run_bound_scenario,
    simulate_bound_traces_fast,
    skewed_confusion,
    uniform_confusion,
)
