"""Read-only measurement over finished datasets and runs.

Nothing in this module mutates run state. Stats re-score stored trajectories
with a scoring backend and cross-check the stored perplexities against the
recomputed ones; traces break one trajectory into fixed windows to show where
a student finds the text hard; cost reports compare manifests across runs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

from .backends.base import ModelBackend, ScoringError
from .records import DatasetRecord
from .scoring import compute_ppl

# Stored vs recomputed per-token NLL may differ by float noise only.
RESCORE_TOLERANCE = 1e-6


@dataclass(frozen=True)
class DatasetStats:
    """Aggregate learnability and cost figures for one dataset."""

    record_count: int
    mean_ppl: float | None
    mean_student_tokens: float | None
    mean_teacher_tokens: float | None
    total_teacher_tokens_sampled: int
    keep_rate: float | None
    max_rescore_divergence: float | None

    def rows(self) -> list[tuple[str, object]]:
        return [
            ("record_count", self.record_count),
            ("mean_ppl", self.mean_ppl),
            ("mean_student_tokens", self.mean_student_tokens),
            ("mean_teacher_tokens", self.mean_teacher_tokens),
            ("total_teacher_tokens_sampled", self.total_teacher_tokens_sampled),
            ("keep_rate", self.keep_rate),
            ("max_rescore_divergence", self.max_rescore_divergence),
        ]


def _mean(values: list[float]) -> float | None:
    if not values:
        return None
    return sum(values) / len(values)


def rescore_record(record: DatasetRecord, scorer: ModelBackend) -> tuple[float, int]:
    """Recompute (ppl, student_token_count) for a stored trajectory by scoring
    it in one pass against the record's own prompt. Prompt tokens never count."""
    scores = scorer.score_text(record.prompt, record.trajectory_text)
    if not scores:
        raise ScoringError(f"scorer returned no tokens for record {record.problem_id!r}")
    sum_nll = -sum(s.logprob for s in scores)
    return compute_ppl(sum_nll, len(scores)), len(scores)


def dataset_stats(
    records: list[DatasetRecord],
    scorer: ModelBackend | None = None,
    *,
    attempted: int | None = None,
) -> DatasetStats:
    """Aggregate a dataset. With a scorer, every trajectory is re-scored and
    the worst |stored - recomputed| perplexity gap is reported; records that
    stored no perplexity (cold start, rejection baselines) pick one up from
    the rescoring pass. keep_rate needs the caller to say how many problems
    were attempted; manifests know, bare record lists do not.
    """
    ppls: list[float] = []
    student_tokens: list[float] = []
    divergence: float | None = None
    for record in records:
        ppl = record.trajectory_ppl
        count = record.student_token_count
        if scorer is not None:
            rescored_ppl, rescored_count = rescore_record(record, scorer)
            if ppl is not None:
                gap = abs(ppl - rescored_ppl)
                divergence = gap if divergence is None else max(divergence, gap)
            if count is not None and count != rescored_count:
                raise ScoringError(
                    f"record {record.problem_id!r}: stored {count} student tokens, "
                    f"rescoring found {rescored_count}"
                )
            ppl, count = rescored_ppl, rescored_count
        if ppl is not None:
            ppls.append(ppl)
        if count is not None:
            student_tokens.append(float(count))
    keep_rate = None
    if attempted is not None and attempted > 0:
        keep_rate = len(records) / attempted
    return DatasetStats(
        record_count=len(records),
        mean_ppl=_mean(ppls),
        mean_student_tokens=_mean(student_tokens),
        mean_teacher_tokens=_mean([float(r.teacher_token_count) for r in records]),
        total_teacher_tokens_sampled=sum(r.teacher_tokens_sampled_total for r in records),
        keep_rate=keep_rate,
        max_rescore_divergence=divergence,
    )


@dataclass(frozen=True)
class ChunkTrace:
    """Per-window perplexities of one stored trajectory under a scorer."""

    problem_id: str
    trace_chunk_size: int
    per_chunk_ppl: tuple[float, ...]
    token_count: int


def chunk_trace(
    record: DatasetRecord, scorer: ModelBackend, trace_chunk_size: int = 256
) -> ChunkTrace:
    """Score the whole trajectory once, then fold token scores into
    consecutive windows of trace_chunk_size tokens (last window may be short).
    The windowing is a view over one scoring pass, so window boundaries cannot
    change any token's logprob."""
    if trace_chunk_size < 1:
        raise ValueError("trace_chunk_size must be >= 1")
    scores = scorer.score_text(record.prompt, record.trajectory_text)
    ppls = []
    for start in range(0, len(scores), trace_chunk_size):
        window = scores[start:start + trace_chunk_size]
        sum_nll = -sum(s.logprob for s in window)
        ppls.append(compute_ppl(sum_nll, len(window)))
    return ChunkTrace(
        problem_id=record.problem_id,
        trace_chunk_size=trace_chunk_size,
        per_chunk_ppl=tuple(ppls),
        token_count=len(scores),
    )


@dataclass(frozen=True)
class CostRow:
    """Sampling cost of one run, straight from its manifest counters."""

    run_id: str
    mode: str
    total_problems: int
    pending: int
    kept: int
    candidates_sampled: int
    teacher_tokens_sampled: int
    teacher_tokens_selected: int

    @property
    def tokens_per_kept(self) -> float | None:
        if self.kept == 0:
            return None
        return self.teacher_tokens_sampled / self.kept


@dataclass(frozen=True)
class CostReport:
    rows: tuple[CostRow, ...]
    ratios: dict[str, float] = field(default_factory=dict)
    warnings: tuple[str, ...] = ()


def cost_report(manifests: list) -> CostReport:
    """Compare sampling spend across runs. Ratios are pairwise on total
    teacher tokens sampled, keyed "a/b". Unfinished runs get a warning since
    their counters undercount the eventual cost."""
    rows = []
    warnings = []
    for manifest in manifests:
        counters = manifest.counters
        rows.append(CostRow(
            run_id=manifest.run_id,
            mode=manifest.mode,
            total_problems=counters["total"],
            pending=counters["pending"],
            kept=counters["kept"],
            candidates_sampled=counters["candidates_sampled"],
            teacher_tokens_sampled=counters["teacher_tokens_sampled"],
            teacher_tokens_selected=counters["teacher_tokens_selected"],
        ))
        if counters["pending"] > 0:
            warnings.append(
                f"run {manifest.run_id!r} has {counters['pending']} pending problems; "
                "its cost is a lower bound"
            )
    ratios = {}
    for i, a in enumerate(rows):
        for b in rows[i + 1:]:
            if b.teacher_tokens_sampled > 0:
                ratios[f"{a.run_id}/{b.run_id}"] = (
                    a.teacher_tokens_sampled / b.teacher_tokens_sampled
                )
    return CostReport(rows=tuple(rows), ratios=ratios, warnings=tuple(warnings))


def write_stats_csv(path: str, stats: DatasetStats) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["metric", "value"])
        for name, value in stats.rows():
            writer.writerow([name, "" if value is None else value])


def write_trace_csv(path: str, traces: list[ChunkTrace]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["problem_id", "window_index", "window_size", "ppl"])
        for trace in traces:
            for index, ppl in enumerate(trace.per_chunk_ppl):
                start = index * trace.trace_chunk_size
                size = min(trace.trace_chunk_size, trace.token_count - start)
                writer.writerow([trace.problem_id, index, size, ppl])


def write_cost_csv(path: str, report: CostReport) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow([
            "run_id", "mode", "total_problems", "pending", "kept",
            "candidates_sampled", "teacher_tokens_sampled",
            "teacher_tokens_selected", "tokens_per_kept",
        ])
        for row in report.rows:
            writer.writerow([
                row.run_id, row.mode, row.total_problems, row.pending, row.kept,
                row.candidates_sampled, row.teacher_tokens_sampled,
                row.teacher_tokens_selected,
                "" if row.tokens_per_kept is None else row.tokens_per_kept,
            ])
