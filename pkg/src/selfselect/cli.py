"""Command line entry points.

Four subcommands cover the pipeline end to end:

  coldstart  verified single-shot dataset from the teacher
  distill    student-guided chunked selection (the main mode)
  baseline   standard-kd, self-distill, or pool-select comparison datasets
  stats      read-only reporting over a finished or partial run

Every dataset command owns a run directory (config snapshot, manifest,
per-problem outcomes) and can be killed and resumed with --resume. Secrets
only via environment variables named in config, never inline.

Exit codes: 0 success, 2 invalid config or arguments, 3 backend startup
failure, 4 partial failure (interrupted, failed problems, or a cold start
that missed its target).
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys
from dataclasses import replace

from ._version import __version__
from .backends.base import BackendError
from .config import ConfigError, RunConfig, load_config
from .metrics import (
    chunk_trace,
    cost_report,
    dataset_stats,
    write_cost_csv,
    write_stats_csv,
    write_trace_csv,
)
from .pipeline import (
    ResumeMismatchError,
    RunState,
    build_cold_start,
    build_pool_select,
    build_self_distill,
    build_ssd_dataset,
    build_standard_kd,
    check_resume_config,
    exclude_problems,
)
from .records import (
    MODE_COLD_START,
    MODE_POOL_SELECT,
    MODE_SELF_DISTILL,
    MODE_SELF_SELECT,
    MODE_STANDARD_KD,
    read_pools_jsonl,
    read_problems_jsonl,
)
from .selection import StrategyKind

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BACKEND = 3
EXIT_PARTIAL = 4

BASELINE_KINDS = {
    "standard-kd": MODE_STANDARD_KD,
    "self-distill": MODE_SELF_DISTILL,
    "pool-select": MODE_POOL_SELECT,
}


def _err(message: str) -> None:
    print(f"error: {message}", file=sys.stderr)


def _warn(message: str) -> None:
    print(f"warning: {message}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selfselect",
        description="Build verified distillation datasets with student-guided selection.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="path to a JSON run config")
        p.add_argument("--run-dir", help="run directory (default: <output_dir>/<mode>)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--workers", type=int, help="override the worker count")
        p.add_argument("--resume", action="store_true",
                       help="continue an interrupted run in --run-dir")
        p.add_argument("--dry-run", action="store_true",
                       help="print the resolved config and plan, then exit")
        p.add_argument("--verbose", action="store_true",
                       help="print one line per committed problem")

    p_cold = sub.add_parser("coldstart", help="verified single-shot teacher dataset")
    add_run_flags(p_cold)
    p_cold.set_defaults(func=cmd_coldstart)

    p_distill = sub.add_parser("distill", help="student-guided chunked selection dataset")
    add_run_flags(p_distill)
    p_distill.add_argument("--strategy", choices=[k.value for k in StrategyKind],
                           help="override the selection strategy")
    p_distill.set_defaults(func=cmd_distill)

    p_base = sub.add_parser("baseline", help="comparison dataset builders")
    p_base.add_argument("--kind", required=True, choices=sorted(BASELINE_KINDS))
    add_run_flags(p_base)
    p_base.add_argument("--strategy", choices=[k.value for k in StrategyKind],
                        help="override the selection strategy (pool-select only)")
    p_base.set_defaults(func=cmd_baseline)

    p_stats = sub.add_parser("stats", help="report on a run directory (read-only)")
    p_stats.add_argument("--run-dir", required=True)
    p_stats.add_argument("--scorer", choices=["student", "teacher", "none"],
                         help="backend used to re-score trajectories "
                              "(default: student when configured, else none)")
    p_stats.add_argument("--trace", action="append", default=[], metavar="PROBLEM_ID",
                         help="emit a per-window perplexity trace for this record "
                              "(repeatable)")
    p_stats.add_argument("--trace-chunk", type=int, default=256,
                         help="trace window size in student tokens (default 256)")
    p_stats.add_argument("--cost", action="append", default=[], metavar="RUN_DIR",
                         help="compare sampling cost against another run (repeatable)")
    p_stats.set_defaults(func=cmd_stats)
    return parser


def _effective_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("workers must be >= 1")
        cfg.workers = args.workers
    strategy = getattr(args, "strategy", None)
    if strategy is not None:
        cfg.strategy = replace(cfg.strategy, kind=StrategyKind(strategy))
    return cfg


def _load_problems(cfg: RunConfig):
    problems = read_problems_jsonl(cfg.problems_path)
    if cfg.exclude_run_dir:
        problems, dropped = exclude_problems(problems, cfg.exclude_run_dir)
        if dropped:
            print(f"excluded {dropped} problem(s) already allocated to "
                  f"{cfg.exclude_run_dir}")
    if not problems:
        raise ConfigError("no problems to run after loading and exclusions")
    return problems


def _prepare_state(args: argparse.Namespace, cfg: RunConfig, mode: str,
                   problem_ids: list[str]) -> RunState:
    run_dir = args.run_dir or os.path.join(cfg.output_dir, mode)
    manifest_path = os.path.join(run_dir, "manifest.json")
    if args.resume:
        if not os.path.exists(manifest_path):
            raise ConfigError(f"--resume: no run found at {run_dir}")
        state = RunState.load(run_dir)
        if state.manifest.mode != mode:
            raise ConfigError(
                f"--resume: {run_dir} holds a {state.manifest.mode} run, not {mode}"
            )
        check_resume_config(state.manifest, cfg.to_snapshot())
        return state
    if os.path.exists(manifest_path):
        raise ConfigError(f"{run_dir} already holds a run; pass --resume to continue it")
    return RunState.create(
        run_dir,
        run_id=os.path.basename(os.path.normpath(run_dir)),
        mode=mode,
        config_snapshot=cfg.to_snapshot(),
        problem_ids=problem_ids,
        version=__version__,
    )


def _print_dry_run(cfg: RunConfig, mode: str, run_dir: str | None, extra: dict) -> None:
    plan = {"mode": mode, "run_dir": run_dir, **extra, "config": cfg.to_snapshot()}
    print(json.dumps(plan, indent=2, sort_keys=True))


def _on_outcome_printer(verbose: bool):
    if not verbose:
        return None

    def printer(outcome) -> None:
        tag = "kept" if outcome.kept else outcome.status
        line = f"{outcome.problem_id}: {tag}"
        if outcome.reason:
            line += f" ({outcome.reason})"
        print(line)

    return printer


def _summarize(state: RunState, interrupted: bool, target_missed: bool = False) -> int:
    counters = state.manifest.counters
    print(
        f"{state.manifest.mode}: kept {counters['kept']}, filtered {counters['filtered']}, "
        f"failed {counters['failed']}, pending {counters['pending']} "
        f"(of {counters['total']})"
    )
    if state.run_dir is not None:
        print(f"run directory: {state.run_dir}")
    if interrupted:
        print("interrupted; committed work is saved, rerun with --resume to continue",
              file=sys.stderr)
        return EXIT_PARTIAL
    if counters["failed"] > 0 or target_missed or counters["kept"] == 0:
        return EXIT_PARTIAL
    return EXIT_OK


def _run_dataset_command(args: argparse.Namespace, mode: str) -> int:
    cfg = _effective_config(args)
    warnings = cfg.validate_for(mode)
    for message in warnings:
        _warn(message)

    if mode == MODE_POOL_SELECT:
        problems = _load_problems(cfg)
        pools = read_pools_jsonl(cfg.pools_path)
        work = [(p, pools.get(p.problem_id, [])) for p in problems]
        problem_ids = [p.problem_id for p in problems]
    else:
        problems = _load_problems(cfg)
        work = problems
        problem_ids = [p.problem_id for p in problems]

    run_dir = args.run_dir or os.path.join(cfg.output_dir, mode)
    if args.dry_run:
        _print_dry_run(cfg, mode, run_dir, {"problems": len(problem_ids),
                                            "resume": args.resume})
        return EXIT_OK

    state = _prepare_state(args, cfg, mode, problem_ids)
    printer = _on_outcome_printer(args.verbose)

    teacher = None
    student = None
    try:
        if mode in (MODE_COLD_START, MODE_STANDARD_KD, MODE_SELF_SELECT):
            teacher = cfg.build_teacher()
        if mode in (MODE_SELF_SELECT, MODE_POOL_SELECT, MODE_SELF_DISTILL):
            student = cfg.build_student()
    except BackendError as exc:
        _err(f"backend startup failed: {exc}")
        return EXIT_BACKEND

    interrupted = False
    target_missed = False
    try:
        if mode == MODE_COLD_START:
            records = build_cold_start(
                work, teacher, cfg.generation,
                attempts_per_problem=cfg.attempts_per_problem,
                target_count=cfg.target_count,
                seed=cfg.seed, workers=cfg.workers, state=state, on_outcome=printer,
            )
            if cfg.target_count is not None and len(records) < cfg.target_count:
                target_missed = True
                _warn(f"cold start kept {len(records)} of the {cfg.target_count} requested")
        elif mode == MODE_SELF_SELECT:
            build_ssd_dataset(
                work, teacher, student, cfg.generation,
                schedule=cfg.schedule, strategy=cfg.strategy, beam_width=cfg.beam_width,
                seed=cfg.seed, workers=cfg.workers, state=state, on_outcome=printer,
            )
        elif mode == MODE_STANDARD_KD:
            build_standard_kd(
                work, teacher, cfg.generation,
                samples_per_problem=cfg.samples_per_problem,
                seed=cfg.seed, workers=cfg.workers, state=state, on_outcome=printer,
            )
        elif mode == MODE_SELF_DISTILL:
            build_self_distill(
                work, student, cfg.generation,
                samples_per_problem=cfg.samples_per_problem,
                seed=cfg.seed, workers=cfg.workers, state=state, on_outcome=printer,
            )
        elif mode == MODE_POOL_SELECT:
            build_pool_select(
                work, student, cfg.strategy,
                seed=cfg.seed, workers=cfg.workers, state=state, on_outcome=printer,
            )
        else:  # pragma: no cover - argparse restricts the choices
            raise ConfigError(f"unknown mode {mode!r}")
    except KeyboardInterrupt:
        interrupted = True
    finally:
        for backend in (teacher, student):
            if backend is not None:
                backend.close()

    return _summarize(state, interrupted, target_missed)


def cmd_coldstart(args: argparse.Namespace) -> int:
    return _run_dataset_command(args, MODE_COLD_START)


def cmd_distill(args: argparse.Namespace) -> int:
    return _run_dataset_command(args, MODE_SELF_SELECT)


def cmd_baseline(args: argparse.Namespace) -> int:
    return _run_dataset_command(args, BASELINE_KINDS[args.kind])


def cmd_stats(args: argparse.Namespace) -> int:
    if not os.path.exists(os.path.join(args.run_dir, "manifest.json")):
        raise ConfigError(f"no run found at {args.run_dir}")
    state = RunState.load(args.run_dir)
    cfg = RunConfig.from_dict(state.manifest.config)
    records = state.kept_records()

    choice = args.scorer or ("student" if cfg.student is not None else "none")
    scorer = None
    if choice == "student":
        if cfg.student is None:
            raise ConfigError("--scorer student: the run config has no student backend")
        scorer = cfg.build_student()
    elif choice == "teacher":
        if cfg.teacher is None:
            raise ConfigError("--scorer teacher: the run config has no teacher backend")
        scorer = cfg.build_teacher()
    if scorer is not None and not scorer.capabilities.can_score:
        raise ConfigError(f"--scorer {choice}: {scorer.identity} cannot score")
    if args.trace and scorer is None:
        raise ConfigError("--trace needs a scoring backend; pass --scorer")
    if args.trace_chunk < 1:
        raise ConfigError("--trace-chunk must be >= 1")

    counters = state.manifest.counters
    attempted = counters["total"] - counters["pending"]
    report_dir = os.path.join(args.run_dir, "report")
    os.makedirs(report_dir, exist_ok=True)

    try:
        stats = dataset_stats(records, scorer, attempted=attempted or None)
        for name, value in stats.rows():
            print(f"{name}: {'-' if value is None else value}")
        write_stats_csv(os.path.join(report_dir, "stats.csv"), stats)

        if args.trace:
            by_id = {record.problem_id: record for record in records}
            traces = []
            for pid in args.trace:
                if pid not in by_id:
                    raise ConfigError(f"--trace {pid}: no kept record with that problem_id")
                traces.append(chunk_trace(by_id[pid], scorer, args.trace_chunk))
            write_trace_csv(os.path.join(report_dir, "trace.csv"), traces)
            for trace in traces:
                windows = ", ".join(f"{p:.6g}" for p in trace.per_chunk_ppl)
                print(f"trace {trace.problem_id} ({trace.token_count} tokens): {windows}")

        if args.cost:
            manifests = [state.manifest]
            for other in args.cost:
                manifests.append(RunState.load(other).manifest)
            report = cost_report(manifests)
            write_cost_csv(os.path.join(report_dir, "cost.csv"), report)
            for row in report.rows:
                per_kept = "-" if row.tokens_per_kept is None else f"{row.tokens_per_kept:.2f}"
                print(
                    f"cost {row.run_id} ({row.mode}): sampled {row.teacher_tokens_sampled} "
                    f"teacher tokens, kept {row.kept}, tokens/kept {per_kept}"
                )
            for key, value in sorted(report.ratios.items()):
                print(f"cost ratio {key}: {value:.4f}")
            for message in report.warnings:
                _warn(message)
    finally:
        if scorer is not None:
            scorer.close()

    print(f"report written to {report_dir}")
    return EXIT_OK


def _sigterm_handler(signum, frame):  # pragma: no cover - exercised via signals
    raise KeyboardInterrupt()


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    previous = None
    try:
        previous = signal.signal(signal.SIGTERM, _sigterm_handler)
    except ValueError:
        pass  # non-main thread: leave the handler alone
    try:
        return args.func(args)
    except (ConfigError, ResumeMismatchError, FileExistsError, ValueError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    except FileNotFoundError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except BackendError as exc:
        _err(f"backend failure: {exc}")
        return EXIT_BACKEND
    except KeyboardInterrupt:
        _err("interrupted")
        return EXIT_PARTIAL
    finally:
        if previous is not None:
            signal.signal(signal.SIGTERM, previous)


if __name__ == "__main__":
    sys.exit(main())
