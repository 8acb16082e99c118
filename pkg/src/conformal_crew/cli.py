"""Command line entry point.

Subcommands: run, sweep, inspect, find-m, bounds.  Exit codes: 0 on
success, 2 for configuration problems, 3 when the data cannot support the
request.  The CONFORMAL_CREW_LOG environment variable picks the log level
(error, warn, info, debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .data import parse_annotations, parse_probs
from .errors import ConfigError, CrewError, DataError
from .figures import (
    render_bounds_figure,
    render_find_m_figure,
    render_run_figure,
    render_sweep_figure,
)
from .harness import (
    SWEEP_PARAMS,
    _jsonable,
    collect_traces,
    emit_report,
    estimate_optimal_m,
    load_config,
    run_experiment,
    sweep,
    write_plotdata,
)

LOG_ENV_VAR = "CONFORMAL_CREW_LOG"

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}

logger = logging.getLogger(__name__)


def _setup_logging() -> None:
    raw = os.environ.get(LOG_ENV_VAR, "warn").strip().lower()
    level = _LOG_LEVELS.get(raw)
    if level is None:
        level = logging.WARNING
    logging.basicConfig(
        level=level, format="%(levelname)s %(name)s: %(message)s"
    )
    if raw not in _LOG_LEVELS and raw:
        logger.warning("unknown %s value %r; using warn", LOG_ENV_VAR, raw)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--probs", required=True, help="classifier probability CSV")
    parser.add_argument("--annotations", help="expert annotation CSV")
    parser.add_argument("--out", default="out", help="output directory (default ./out)")
    parser.add_argument("--seed", type=int, help="override the config master seed")
    parser.add_argument("--workers", type=int, default=1, help="run-level processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conformal-crew",
        description="simulate expert teams guided by conformal prediction sets",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="evaluate the configured methods")
    _add_common(run_p)

    sweep_p = sub.add_parser("sweep", help="rerun the experiment over a parameter grid")
    _add_common(sweep_p)
    sweep_p.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    sweep_p.add_argument(
        "--values", required=True, help="comma separated parameter values"
    )

    inspect_p = sub.add_parser("inspect", help="dump per-instance pipeline traces")
    _add_common(inspect_p)
    inspect_p.add_argument("--run", type=int, default=0, help="run index to trace")
    inspect_p.add_argument(
        "--instance",
        action="append",
        default=None,
        help="restrict to this instance id (repeatable)",
    )
    inspect_p.add_argument("--method", help="method to trace (default: first configured)")

    findm_p = sub.add_parser("find-m", help="estimate the expert-team size cap")
    _add_common(findm_p)

    bounds_p = sub.add_parser("bounds", help="run with bound estimation enabled")
    _add_common(bounds_p)

    return parser


def _load_inputs(args):
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, master_seed=args.seed)
    outputs = parse_probs(args.probs)
    annotations = None
    if args.annotations:
        annotations = parse_annotations(args.annotations, outputs)
    return config, outputs, annotations


def _parse_values(param: str, text: str) -> list:
    items = [piece.strip() for piece in text.split(",") if piece.strip()]
    if not items:
        raise ConfigError("--values must name at least one value")
    caster = int if param in ("k", "h") else float
    try:
        return [caster(piece) for piece in items]
    except ValueError as exc:
        raise ConfigError(f"bad --values entry: {exc}") from None


def _cmd_run(args) -> int:
    config, outputs, annotations = _load_inputs(args)
    report = run_experiment(config, outputs, annotations, workers=args.workers)
    paths = emit_report(report, args.out)
    figure = render_run_figure(report, Path(args.out) / "success.png")
    for path in (*paths.values(), figure):
        print(path)
    return 0


def _cmd_sweep(args) -> int:
    config, outputs, annotations = _load_inputs(args)
    values = _parse_values(args.param, args.values)
    reports = sweep(config, args.param, values, outputs, annotations, workers=args.workers)
    out = Path(args.out)
    printed = []
    for value, report in zip(values, reports):
        point_dir = out / f"{args.param}_{value:g}"
        printed.extend(emit_report(report, point_dir).values())
    printed.append(write_plotdata(reports, out / "plotdata.csv"))
    printed.append(render_sweep_figure(reports, out / "sweep.png"))
    for path in printed:
        print(path)
    return 0


def _trace_record(instance_id: str, trace) -> dict:
    odds = None
    if trace.odds_table is not None:
        odds = [list(row) for row in trace.odds_table]
    return {
        "instance_id": instance_id,
        "set": list(trace.set_labels),
        "set_source": trace.set_source,
        "set_forced": trace.set_forced,
        "initial_preds": list(trace.initial_preds),
        "odds": odds,
        "scores": None if trace.scores is None else list(trace.scores),
        "pseudo_label": trace.pseudo_label,
        "selected": list(trace.selected),
        "final_preds": list(trace.final_preds),
        "label": trace.label,
        "tie_broken": trace.tie_broken,
        "fallback": trace.fallback,
    }


def _cmd_inspect(args) -> int:
    config, outputs, annotations = _load_inputs(args)
    if args.run < 0 or args.run >= config.runs:
        raise ConfigError(f"--run must lie in [0, {config.runs - 1}]")
    traces = collect_traces(
        config, outputs, annotations, run_index=args.run, method=args.method
    )
    if args.instance:
        wanted = set(args.instance)
        traces = [(iid, tr) for iid, tr in traces if iid in wanted]
        missing = wanted - {iid for iid, _ in traces}
        if missing:
            logger.warning(
                "instances not in run %d's evaluation split: %s",
                args.run, ", ".join(sorted(missing)),
            )
    records = [_trace_record(iid, tr) for iid, tr in traces]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "traces.json"
    path.write_text(
        json.dumps(_jsonable(records), indent=2, sort_keys=True, allow_nan=False) + "\n",
        encoding="utf-8",
    )
    print(path)
    return 0


def _cmd_find_m(args) -> int:
    config, outputs, annotations = _load_inputs(args)
    result = estimate_optimal_m(config, outputs, annotations)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "m_hat": result.m_hat,
        "phi_alpha": list(result.phi_alpha),
        "phi_expert": list(result.phi_expert),
        "warning": result.warning,
    }
    path = out / "team_size.json"
    path.write_text(
        json.dumps(_jsonable(payload), indent=2, sort_keys=True, allow_nan=False) + "\n",
        encoding="utf-8",
    )
    figure = render_find_m_figure(result, out / "team_size.png")
    print(path)
    print(figure)
    return 0


def _cmd_bounds(args) -> int:
    config, outputs, annotations = _load_inputs(args)
    config = replace(config, compute_bounds=True)
    report = run_experiment(config, outputs, annotations, workers=args.workers)
    paths = emit_report(report, args.out)
    figure = render_bounds_figure(report, Path(args.out) / "bounds.png")
    for path in (*paths.values(), figure):
        print(path)
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "inspect": _cmd_inspect,
    "find-m": _cmd_find_m,
    "bounds": _cmd_bounds,
}


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except CrewError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
