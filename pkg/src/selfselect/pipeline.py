"""End-to-end dataset construction: rejection-sampled modes, the chunked
self-selection mode, pool selection, and resumable batch execution.

Every mode follows the same shape: one worker per problem producing a
ProblemOutcome, outcomes committed strictly in problem_id order (so cutoffs
and resumes are deterministic for any worker count), only verified-correct
records emitted. A run directory holds the config snapshot, the manifest, one
outcome file per committed problem, and, after finalize, the dataset plus
its companion SFT file, both sorted by problem_id.
"""

from __future__ import annotations

import json
import os
import urllib.parse
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable

from .answers import Problem, answers_match, extract_answer
from .backends.base import CapabilityError, ModelBackend
from .records import (
    MODE_COLD_START,
    MODE_POOL_SELECT,
    MODE_SELF_DISTILL,
    MODE_SELF_SELECT,
    MODE_STANDARD_KD,
    DatasetRecord,
    record_from_dict,
    record_to_json,
    write_records_jsonl,
    write_sft_jsonl,
)
from .scoring import GenerationParams
from .seeding import stable_seed
from .selection import (
    SamplingSchedule,
    SelectionStrategy,
    SelectionTrace,
    StrategyKind,
    run_self_selection,
    select_from_pool,
)

STATUS_PENDING = "pending"
STATUS_DONE = "done"
STATUS_FAILED = "failed"

MANIFEST_NAME = "manifest.json"
CONFIG_NAME = "config.json"
VERSION_NAME = "version.txt"
DATASET_NAME = "dataset.jsonl"
SFT_NAME = "sft.jsonl"
RECORDS_DIR = "records"


class ResumeMismatchError(RuntimeError):
    """The effective config differs from the run's snapshot."""

    def __init__(self, diffs: list[str]):
        super().__init__("config does not match the run snapshot:\n  " + "\n  ".join(diffs))
        self.diffs = diffs


@dataclass
class ProblemOutcome:
    """What one problem's worker produced. record is set only when kept."""

    problem_id: str
    status: str
    kept: bool
    reason: str | None
    record: DatasetRecord | None
    candidates_sampled: int = 0
    teacher_tokens_sampled: int = 0
    teacher_tokens_selected: int = 0
    trace: SelectionTrace | None = None


def _failed(problem_id: str, reason: str) -> ProblemOutcome:
    return ProblemOutcome(
        problem_id=problem_id, status=STATUS_FAILED, kept=False, reason=reason, record=None
    )


class RunManifest:
    """Per-problem status ledger plus the run's config snapshot.

    Counters are always derived from the per-problem map, so
    kept + filtered + failed + pending == total holds by construction.
    """

    def __init__(self, run_id: str, mode: str, config: dict, problems: dict[str, dict]):
        self.run_id = run_id
        self.mode = mode
        self.config = config
        self.problems = problems

    @classmethod
    def create(cls, run_id: str, mode: str, config: dict, problem_ids: list[str]) -> "RunManifest":
        problems = {pid: {"status": STATUS_PENDING} for pid in sorted(problem_ids)}
        return cls(run_id=run_id, mode=mode, config=config, problems=problems)

    def mark(self, outcome: ProblemOutcome) -> None:
        if outcome.problem_id not in self.problems:
            raise KeyError(f"problem {outcome.problem_id!r} is not part of this run")
        self.problems[outcome.problem_id] = {
            "status": outcome.status,
            "kept": outcome.kept,
            "reason": outcome.reason,
            "candidates_sampled": outcome.candidates_sampled,
            "teacher_tokens_sampled": outcome.teacher_tokens_sampled,
            "teacher_tokens_selected": outcome.teacher_tokens_selected,
        }

    def status_of(self, problem_id: str) -> str:
        return self.problems.get(problem_id, {}).get("status", STATUS_PENDING)

    @property
    def counters(self) -> dict[str, int]:
        out = {
            "total": len(self.problems),
            "pending": 0,
            "done": 0,
            "kept": 0,
            "filtered": 0,
            "failed": 0,
            "candidates_sampled": 0,
            "teacher_tokens_sampled": 0,
            "teacher_tokens_selected": 0,
        }
        for entry in self.problems.values():
            status = entry.get("status", STATUS_PENDING)
            if status == STATUS_PENDING:
                out["pending"] += 1
            elif status == STATUS_FAILED:
                out["failed"] += 1
            else:
                out["done"] += 1
                if entry.get("kept"):
                    out["kept"] += 1
                else:
                    out["filtered"] += 1
            out["candidates_sampled"] += entry.get("candidates_sampled", 0)
            out["teacher_tokens_sampled"] += entry.get("teacher_tokens_sampled", 0)
            out["teacher_tokens_selected"] += entry.get("teacher_tokens_selected", 0)
        return out

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "mode": self.mode,
            "config": self.config,
            "counters": self.counters,
            "problems": self.problems,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        return cls(
            run_id=data["run_id"],
            mode=data["mode"],
            config=data["config"],
            problems=data["problems"],
        )


def _atomic_write_text(path: str, content: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as handle:
        handle.write(content)
    os.replace(tmp, path)


def _record_filename(problem_id: str) -> str:
    return urllib.parse.quote(problem_id, safe="") + ".json"


class RunState:
    """A manifest bound to an (optional) run directory.

    With a directory, every commit atomically writes the problem's outcome
    file and then the manifest, so a kill between commits loses at most work
    that was never committed. Without one, everything stays in memory, same
    semantics, used by tests and ad-hoc calls.
    """

    def __init__(self, run_dir: str | None, manifest: RunManifest):
        self.run_dir = run_dir
        self.manifest = manifest
        self._memory_outcomes: dict[str, ProblemOutcome] = {}
        if run_dir is not None:
            os.makedirs(os.path.join(run_dir, RECORDS_DIR), exist_ok=True)

    @classmethod
    def create(
        cls,
        run_dir: str | None,
        run_id: str,
        mode: str,
        config_snapshot: dict,
        problem_ids: list[str],
        version: str = "0",
    ) -> "RunState":
        manifest = RunManifest.create(run_id, mode, config_snapshot, problem_ids)
        if run_dir is not None:
            if os.path.exists(os.path.join(run_dir, MANIFEST_NAME)):
                raise FileExistsError(
                    f"{run_dir} already holds a run; resume it or pick another directory"
                )
            os.makedirs(run_dir, exist_ok=True)
            _atomic_write_text(
                os.path.join(run_dir, CONFIG_NAME),
                json.dumps(config_snapshot, indent=2, sort_keys=True) + "\n",
            )
            _atomic_write_text(os.path.join(run_dir, VERSION_NAME), version + "\n")
        state = cls(run_dir, manifest)
        state.save_manifest()
        return state

    @classmethod
    def load(cls, run_dir: str) -> "RunState":
        path = os.path.join(run_dir, MANIFEST_NAME)
        with open(path, encoding="utf-8") as handle:
            manifest = RunManifest.from_dict(json.load(handle))
        return cls(run_dir, manifest)

    def save_manifest(self) -> None:
        if self.run_dir is None:
            return
        _atomic_write_text(
            os.path.join(self.run_dir, MANIFEST_NAME),
            json.dumps(self.manifest.to_dict(), indent=2, sort_keys=True) + "\n",
        )

    def is_done(self, problem_id: str) -> bool:
        return self.manifest.status_of(problem_id) == STATUS_DONE

    def record_outcome(self, outcome: ProblemOutcome) -> None:
        if self.run_dir is not None:
            payload = {
                "problem_id": outcome.problem_id,
                "status": outcome.status,
                "kept": outcome.kept,
                "reason": outcome.reason,
                "record": json.loads(record_to_json(outcome.record)) if outcome.record else None,
            }
            _atomic_write_text(
                os.path.join(self.run_dir, RECORDS_DIR, _record_filename(outcome.problem_id)),
                json.dumps(payload, ensure_ascii=False, sort_keys=True) + "\n",
            )
        else:
            self._memory_outcomes[outcome.problem_id] = outcome
        self.manifest.mark(outcome)
        self.save_manifest()

    def kept_records(self) -> list[DatasetRecord]:
        kept_ids = sorted(
            pid for pid, entry in self.manifest.problems.items()
            if entry.get("status") == STATUS_DONE and entry.get("kept")
        )
        records = []
        for pid in kept_ids:
            if self.run_dir is None:
                records.append(self._memory_outcomes[pid].record)
                continue
            path = os.path.join(self.run_dir, RECORDS_DIR, _record_filename(pid))
            with open(path, encoding="utf-8") as handle:
                payload = json.load(handle)
            records.append(record_from_dict(payload["record"]))
        return records

    def finalize(self) -> list[DatasetRecord]:
        """Assemble the kept records, sorted by problem_id, and (when a run
        directory exists) write the dataset and SFT files."""
        records = self.kept_records()
        if self.run_dir is not None:
            write_records_jsonl(os.path.join(self.run_dir, DATASET_NAME), records)
            write_sft_jsonl(os.path.join(self.run_dir, SFT_NAME), records)
        return records


def check_resume_config(manifest: RunManifest, config_snapshot: dict) -> None:
    """Refuse resume when the effective config differs from the snapshot."""
    diffs = _diff_values("", manifest.config, config_snapshot)
    if diffs:
        raise ResumeMismatchError(diffs)


def _diff_values(path: str, old, new) -> list[str]:
    if isinstance(old, dict) and isinstance(new, dict):
        diffs = []
        for key in sorted(set(old) | set(new)):
            child = f"{path}.{key}" if path else key
            if key not in old:
                diffs.append(f"{child}: added {new[key]!r}")
            elif key not in new:
                diffs.append(f"{child}: removed (was {old[key]!r})")
            else:
                diffs.extend(_diff_values(child, old[key], new[key]))
        return diffs
    if old != new:
        return [f"{path}: {old!r} != {new!r}"]
    return []


# ======================================================================
# batch execution
# ======================================================================


def _run_batch(
    problems: list[Problem],
    worker: Callable[[Problem], ProblemOutcome],
    state: RunState,
    workers: int,
    *,
    target_count: int | None = None,
    on_outcome: Callable[[ProblemOutcome], None] | None = None,
) -> None:
    """Execute worker over problems with ordered commits.

    Problems already done are skipped; pending and failed ones run (again).
    Results are committed strictly in problem_id order, so a target_count
    cutoff lands on the same problems no matter how many workers raced ahead;
    results past the cutoff are discarded uncommitted (their problems stay
    pending). KeyboardInterrupt drains the pool and propagates; everything
    committed so far is on disk.
    """
    ordered = sorted(problems, key=lambda p: p.problem_id)
    todo = [p for p in ordered if not state.is_done(p.problem_id)]
    kept_total = state.manifest.counters["kept"]
    if target_count is not None and kept_total >= target_count:
        return
    workers = max(1, workers)

    def run_one(problem: Problem) -> ProblemOutcome:
        try:
            return worker(problem)
        except Exception as exc:  # noqa: BLE001 - per-problem isolation
            return _failed(problem.problem_id, f"{type(exc).__name__}: {exc}")

    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures: dict[int, Future] = {}
        next_submit = 0
        try:
            for next_commit in range(len(todo)):
                while next_submit < len(todo) and next_submit - next_commit < workers:
                    futures[next_submit] = executor.submit(run_one, todo[next_submit])
                    next_submit += 1
                outcome = futures.pop(next_commit).result()
                state.record_outcome(outcome)
                if on_outcome is not None:
                    on_outcome(outcome)
                if outcome.kept:
                    kept_total += 1
                    if target_count is not None and kept_total >= target_count:
                        break
        except BaseException:
            executor.shutdown(wait=True, cancel_futures=True)
            raise


def _adhoc_state(mode: str, problems: list[Problem]) -> RunState:
    return RunState.create(
        None, run_id=f"adhoc-{mode}", mode=mode, config_snapshot={},
        problem_ids=[p.problem_id for p in problems],
    )


def exclude_problems(problems: list[Problem], run_dir: str) -> tuple[list[Problem], int]:
    """Drop problems already allocated to another run (any status). This is
    how cold-start/self-selection pool disjointness is enforced."""
    manifest = RunState.load(run_dir).manifest
    taken = set(manifest.problems)
    kept = [p for p in problems if p.problem_id not in taken]
    return kept, len(problems) - len(kept)


# ======================================================================
# dataset builders
# ======================================================================


def _rejection_worker(
    problem: Problem,
    generator: ModelBackend,
    params: GenerationParams,
    attempts: int,
    mode: str,
    seed: int,
) -> ProblemOutcome:
    """Single-shot full-trajectory sampling with verification; keeps the first
    correct attempt. No student scoring happens here, by design."""
    if problem.unverifiable:
        return _failed(problem.problem_id, "unverifiable: gold answer marked absent")
    sampled_tokens = 0
    last_answer = "<none>"
    for attempt in range(attempts):
        continuation = generator.sample_continuations(
            problem.prompt, 1, params, params.max_generation_tokens,
            stream_key=(problem.problem_id, attempt),
        )[0]
        sampled_tokens += continuation.teacher_token_count
        extracted = extract_answer(continuation.text)
        if extracted.found:
            last_answer = extracted.raw
        if answers_match(extracted, problem.gold_answer):
            record = DatasetRecord(
                problem_id=problem.problem_id,
                prompt=problem.prompt,
                trajectory_text=continuation.text,
                extracted_answer=extracted.raw,
                correct=True,
                trajectory_ppl=None,
                student_token_count=None,
                teacher_token_count=continuation.teacher_token_count,
                teacher_tokens_sampled_total=sampled_tokens,
                mode=mode,
                strategy="none",
                chunk_size=params.max_generation_tokens,
                schedule_descriptor=f"attempts[{attempts}]",
                seed=seed,
            )
            return ProblemOutcome(
                problem_id=problem.problem_id,
                status=STATUS_DONE,
                kept=True,
                reason=None,
                record=record,
                candidates_sampled=attempt + 1,
                teacher_tokens_sampled=sampled_tokens,
                teacher_tokens_selected=continuation.teacher_token_count,
            )
    return ProblemOutcome(
        problem_id=problem.problem_id,
        status=STATUS_DONE,
        kept=False,
        reason=f"no correct answer in {attempts} attempt(s); last extracted: {last_answer!r}",
        record=None,
        candidates_sampled=attempts,
        teacher_tokens_sampled=sampled_tokens,
    )


def build_cold_start(
    problems: list[Problem],
    teacher: ModelBackend,
    params: GenerationParams,
    attempts_per_problem: int = 1,
    target_count: int | None = None,
    *,
    seed: int = 0,
    workers: int = 1,
    state: RunState | None = None,
    on_outcome: Callable[[ProblemOutcome], None] | None = None,
) -> list[DatasetRecord]:
    """Verified single-shot dataset for warming a student up. Stops once
    target_count records are kept (problems past the cutoff stay pending)."""
    if attempts_per_problem < 1:
        raise ValueError("attempts_per_problem must be >= 1")
    if target_count is not None and target_count < 1:
        raise ValueError("target_count must be >= 1 when set")
    if not teacher.capabilities.can_sample:
        raise CapabilityError(f"teacher {teacher.identity} cannot sample")
    state = state or _adhoc_state(MODE_COLD_START, problems)

    def worker(problem: Problem) -> ProblemOutcome:
        return _rejection_worker(problem, teacher, params, attempts_per_problem,
                                 MODE_COLD_START, seed)

    _run_batch(problems, worker, state, workers, target_count=target_count,
               on_outcome=on_outcome)
    return state.finalize()


def build_standard_kd(
    problems: list[Problem],
    teacher: ModelBackend,
    params: GenerationParams,
    samples_per_problem: int = 1,
    *,
    seed: int = 0,
    workers: int = 1,
    state: RunState | None = None,
    on_outcome: Callable[[ProblemOutcome], None] | None = None,
) -> list[DatasetRecord]:
    """Teacher-only rejection sampling baseline. Zero student involvement."""
    if samples_per_problem < 1:
        raise ValueError("samples_per_problem must be >= 1")
    if not teacher.capabilities.can_sample:
        raise CapabilityError(f"teacher {teacher.identity} cannot sample")
    state = state or _adhoc_state(MODE_STANDARD_KD, problems)

    def worker(problem: Problem) -> ProblemOutcome:
        return _rejection_worker(problem, teacher, params, samples_per_problem,
                                 MODE_STANDARD_KD, seed)

    _run_batch(problems, worker, state, workers, on_outcome=on_outcome)
    return state.finalize()


def build_self_distill(
    problems: list[Problem],
    student_generator: ModelBackend,
    params: GenerationParams,
    samples_per_problem: int = 1,
    *,
    seed: int = 0,
    workers: int = 1,
    state: RunState | None = None,
    on_outcome: Callable[[ProblemOutcome], None] | None = None,
) -> list[DatasetRecord]:
    """Rejection sampling with the student as its own generator. Zero teacher
    involvement; the record's teacher_* fields count the student's tokens."""
    if samples_per_problem < 1:
        raise ValueError("samples_per_problem must be >= 1")
    if not student_generator.capabilities.can_sample:
        raise CapabilityError(f"generator {student_generator.identity} cannot sample")
    state = state or _adhoc_state(MODE_SELF_DISTILL, problems)

    def worker(problem: Problem) -> ProblemOutcome:
        return _rejection_worker(problem, student_generator, params, samples_per_problem,
                                 MODE_SELF_DISTILL, seed)

    _run_batch(problems, worker, state, workers, on_outcome=on_outcome)
    return state.finalize()


def build_ssd_dataset(
    problems: list[Problem],
    teacher: ModelBackend,
    student: ModelBackend,
    params: GenerationParams,
    schedule: SamplingSchedule | None = None,
    strategy: SelectionStrategy | None = None,
    beam_width: int = 2,
    *,
    seed: int = 0,
    workers: int = 1,
    state: RunState | None = None,
    on_outcome: Callable[[ProblemOutcome], None] | None = None,
    collect_traces: bool = False,
) -> list[DatasetRecord]:
    """The main mode: student-guided chunked selection plus verification.

    Every problem runs run_self_selection, the result is answer-verified, and
    only correct trajectories are emitted. Cost accounting (candidates and
    teacher tokens sampled, tokens selected) lands in the manifest whether or
    not the trajectory was kept.
    """
    schedule = schedule or SamplingSchedule()
    strategy = strategy or SelectionStrategy()
    if not student.capabilities.can_score:
        raise CapabilityError(f"student {student.identity} cannot score")
    if not teacher.capabilities.can_sample:
        raise CapabilityError(f"teacher {teacher.identity} cannot sample")
    state = state or _adhoc_state(MODE_SELF_SELECT, problems)

    def worker(problem: Problem) -> ProblemOutcome:
        if problem.unverifiable:
            return _failed(problem.problem_id, "unverifiable: gold answer marked absent")
        trace = SelectionTrace(problem_id=problem.problem_id)
        trajectory = run_self_selection(
            problem, teacher, student, params, schedule, strategy, beam_width, trace=trace
        )
        extracted = extract_answer(trajectory.text)
        correct = answers_match(extracted, problem.gold_answer)
        record = None
        reason = None
        if correct:
            record = DatasetRecord(
                problem_id=problem.problem_id,
                prompt=problem.prompt,
                trajectory_text=trajectory.text,
                extracted_answer=extracted.raw,
                correct=True,
                trajectory_ppl=trajectory.ppl,
                student_token_count=trajectory.cum_token_count,
                teacher_token_count=trajectory.cum_teacher_token_count,
                teacher_tokens_sampled_total=trace.teacher_tokens_sampled,
                mode=MODE_SELF_SELECT,
                strategy=strategy.kind.value,
                chunk_size=params.chunk_size,
                schedule_descriptor=schedule.descriptor(),
                seed=seed,
            )
        else:
            got = extracted.raw if extracted.found else "<none>"
            reason = f"answer mismatch: extracted {got!r}, expected {problem.gold_answer!r}"
        return ProblemOutcome(
            problem_id=problem.problem_id,
            status=STATUS_DONE,
            kept=correct,
            reason=reason,
            record=record,
            candidates_sampled=trace.candidates_sampled,
            teacher_tokens_sampled=trace.teacher_tokens_sampled,
            teacher_tokens_selected=trajectory.cum_teacher_token_count,
            trace=trace if collect_traces else None,
        )

    _run_batch(problems, worker, state, workers, on_outcome=on_outcome)
    return state.finalize()


def build_pool_select(
    problems_with_pools: list[tuple[Problem, list[str]]],
    student: ModelBackend,
    strategy: SelectionStrategy | None = None,
    *,
    seed: int = 0,
    workers: int = 1,
    state: RunState | None = None,
    on_outcome: Callable[[ProblemOutcome], None] | None = None,
) -> list[DatasetRecord]:
    """Whole-solution selection over pre-generated pools, then verification.
    Problems with empty pools are marked failed."""
    strategy = strategy or SelectionStrategy()
    if not student.capabilities.can_score:
        raise CapabilityError(f"student {student.identity} cannot score")
    problems = [problem for problem, _ in problems_with_pools]
    pools = {problem.problem_id: pool for problem, pool in problems_with_pools}
    state = state or _adhoc_state(MODE_POOL_SELECT, problems)

    def worker(problem: Problem) -> ProblemOutcome:
        if problem.unverifiable:
            return _failed(problem.problem_id, "unverifiable: gold answer marked absent")
        pool = pools[problem.problem_id]
        if not pool:
            return _failed(problem.problem_id, "empty solution pool")
        problem_strategy = strategy
        if strategy.kind is StrategyKind.RANDOM:
            problem_strategy = replace(
                strategy, rng_seed=stable_seed(strategy.rng_seed, problem.problem_id)
            )
        record = select_from_pool(problem, pool, student, problem_strategy, seed=seed)
        reason = None
        if not record.correct:
            reason = (
                f"answer mismatch: extracted {record.extracted_answer!r}, "
                f"expected {problem.gold_answer!r}"
            )
        return ProblemOutcome(
            problem_id=problem.problem_id,
            status=STATUS_DONE,
            kept=record.correct,
            reason=reason,
            record=record if record.correct else None,
        )

    _run_batch(problems, worker, state, workers, on_outcome=on_outcome)
    return state.finalize()
