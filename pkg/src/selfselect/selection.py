"""Chunk-level candidate selection and the student-guided sampling loop.

The generation loop samples a scheduled number of teacher continuations per
chunk step, scores each one with the student conditioned on the problem prompt
plus the candidate's own prefix, and advances a small beam ranked by
cumulative trajectory perplexity. The returned trajectory is the strategy's
best surviving entry: for the default low-perplexity strategy, the entry with
the lowest overall trajectory perplexity.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum

from .answers import Problem, answers_match, extract_answer
from .backends.base import CapabilityError, ModelBackend
from .records import MODE_POOL_SELECT, DatasetRecord
from .scoring import CandidateTrajectory, GenerationParams, ScoredChunk
from .seeding import stable_seed


class EmptyPoolError(ValueError):
    """A selection needed at least one candidate."""


class SelectionStepError(RuntimeError):
    """A chunk step could not produce any scoreable candidate."""


class StrategyKind(str, Enum):
    LOW = "low"
    HIGH = "high"
    RANDOM = "random"


@dataclass(frozen=True)
class SelectionStrategy:
    """How to pick among scored candidates.

    low/high take the minimum/maximum perplexity (ties: lowest index).
    random draws index = random.Random(rng_seed).randrange(len(pool)), the
    project's one seeded-uniform procedure, frozen by golden tests.
    """

    kind: StrategyKind = StrategyKind.LOW
    rng_seed: int = 0


@dataclass(frozen=True)
class SamplingSchedule:
    """Candidates per chunk step: explicit head, then a constant tail.

    The default (16, 8) head with tail 4 front-loads exploration where
    divergence between candidates is still cheap to buy.
    """

    head: tuple[int, ...] = (16, 8)
    tail: int = 4

    def __post_init__(self) -> None:
        object.__setattr__(self, "head", tuple(self.head))
        if any(k < 1 for k in self.head) or self.tail < 1:
            raise ValueError("schedule entries must be >= 1")

    @classmethod
    def fixed(cls, k: int) -> "SamplingSchedule":
        return cls(head=(), tail=k)

    def k_for_step(self, step: int) -> int:
        """Candidates to sample at a 1-based chunk step."""
        if step < 1:
            raise ValueError(f"step must be >= 1, got {step}")
        if step <= len(self.head):
            return self.head[step - 1]
        return self.tail

    def descriptor(self) -> str:
        return ",".join([str(k) for k in self.head] + [f"{self.tail}..."])


@dataclass(frozen=True)
class Beam:
    """Surviving trajectories, sorted ascending by trajectory perplexity after
    every advancement step."""

    entries: tuple[CandidateTrajectory, ...]
    beam_width: int = 2

    def __post_init__(self) -> None:
        if self.beam_width < 1:
            raise ValueError(f"beam_width must be >= 1, got {self.beam_width}")
        if not 1 <= len(self.entries) <= self.beam_width:
            raise ValueError(
                f"beam holds {len(self.entries)} entries, expected 1..{self.beam_width}"
            )


def select_candidate(candidates: list[ScoredChunk], strategy: SelectionStrategy) -> int:
    """Index of the strategy's pick from one scored candidate pool."""
    if not candidates:
        raise EmptyPoolError("candidate pool is empty")
    if strategy.kind is StrategyKind.RANDOM:
        return random.Random(strategy.rng_seed).randrange(len(candidates))
    ppls = [candidate.ppl for candidate in candidates]
    if strategy.kind is StrategyKind.LOW:
        return min(range(len(ppls)), key=lambda i: ppls[i])
    return min(range(len(ppls)), key=lambda i: -ppls[i])


def _rank_key(trajectory: CandidateTrajectory) -> tuple[float, int]:
    # Perplexity ties break toward the shorter trajectory.
    return (trajectory.ppl, trajectory.cum_token_count)


def advance_beam(
    beam: Beam,
    candidates_by_entry: list[list[ScoredChunk] | None],
    strategy: SelectionStrategy,
    *,
    max_generation_tokens: int | None = None,
) -> Beam:
    """One selection step: extend live entries by their candidates, pool the
    extensions with already-finished entries, keep beam_width of them.

    candidates_by_entry runs parallel to beam.entries; finished entries take
    None and carry themselves forward unchanged. low keeps the lowest
    trajectory perplexities, high the highest, random a seeded sample. The
    returned beam is sorted ascending by trajectory perplexity either way.
    """
    if len(candidates_by_entry) != len(beam.entries):
        raise ValueError("candidates_by_entry must align with beam.entries")
    if all(entry.finished for entry in beam.entries):
        return beam
    pool: list[CandidateTrajectory] = []
    for entry, candidates in zip(beam.entries, candidates_by_entry):
        if entry.finished:
            pool.append(entry)
            continue
        if not candidates:
            raise SelectionStepError(
                f"live beam entry for {entry.problem_id!r} has no candidates"
            )
        pool.extend(
            entry.extend(chunk, max_generation_tokens=max_generation_tokens)
            for chunk in candidates
        )
    width = min(beam.beam_width, len(pool))
    if strategy.kind is StrategyKind.RANDOM:
        rng = random.Random(strategy.rng_seed)
        kept = [pool[i] for i in sorted(rng.sample(range(len(pool)), width))]
    elif strategy.kind is StrategyKind.LOW:
        kept = sorted(pool, key=_rank_key)[:width]
    else:
        kept = sorted(pool, key=lambda t: (-t.ppl, t.cum_token_count))[:width]
    return Beam(tuple(sorted(kept, key=_rank_key)), beam_width=beam.beam_width)


# ======================================================================
# the chunked self-selection loop
# ======================================================================


@dataclass
class StepTrace:
    """Everything one chunk step saw, for replay oracles and cost audits."""

    step: int
    k_step: int
    entries_before: tuple[CandidateTrajectory, ...]
    candidates_by_entry: tuple[tuple[ScoredChunk, ...] | None, ...]
    sampled_count: int
    discarded_empty: int
    beam_after: tuple[CandidateTrajectory, ...]


@dataclass
class SelectionTrace:
    problem_id: str
    steps: list[StepTrace] = field(default_factory=list)
    final: CandidateTrajectory | None = None
    candidates_sampled: int = 0
    teacher_tokens_sampled: int = 0


def _split_evenly(total: int, buckets: int) -> list[int]:
    base, remainder = divmod(total, buckets)
    return [base + (1 if i < remainder else 0) for i in range(buckets)]


def _best_index(entries: tuple[CandidateTrajectory, ...], strategy: SelectionStrategy,
                problem_id: str) -> int:
    if strategy.kind is StrategyKind.RANDOM:
        rng = random.Random(stable_seed(strategy.rng_seed, problem_id, "final-pick"))
        return rng.randrange(len(entries))
    if strategy.kind is StrategyKind.LOW:
        return min(range(len(entries)), key=lambda i: _rank_key(entries[i]))
    return min(range(len(entries)), key=lambda i: (-entries[i].ppl, entries[i].cum_token_count))


def run_self_selection(
    problem: Problem,
    teacher: ModelBackend,
    student: ModelBackend,
    params: GenerationParams,
    schedule: SamplingSchedule,
    strategy: SelectionStrategy,
    beam_width: int = 2,
    *,
    trace: SelectionTrace | None = None,
) -> CandidateTrajectory:
    """Generate one trajectory by student-guided chunked sampling.

    Runs up to ceil(max_generation_tokens / chunk_size) chunk steps. Each step
    samples k_for_step(step) teacher continuations, split as evenly as
    possible across live beam entries with the remainder going to the
    lowest-perplexity entries, scores each candidate with the student
    conditioned on prompt + its own prefix, and advances the beam. The loop
    ends when the strategy's current best entry is finished or steps run out;
    the strategy's best surviving entry is returned (cumulative trajectory
    perplexity, not last-chunk perplexity, decides).

    Candidates that produce zero student tokens are discarded before
    selection; a step where every candidate is discarded and nothing finished
    earlier raises SelectionStepError. For the random strategy, per-step seeds
    derive from (rng_seed, problem_id, step).
    """
    if not teacher.capabilities.can_sample:
        raise CapabilityError(f"teacher {teacher.identity} cannot sample")
    if not student.capabilities.can_score:
        raise CapabilityError(f"student {student.identity} cannot score")
    total_steps = -(-params.max_generation_tokens // params.chunk_size)
    beam = Beam((CandidateTrajectory(problem_id=problem.problem_id),), beam_width=beam_width)

    for step in range(1, total_steps + 1):
        if beam.entries[0].chunk_index > 0:
            if beam.entries[_best_index(beam.entries, strategy, problem.problem_id)].finished:
                break
        live = [entry for entry in beam.entries if not entry.finished]
        if not live:
            break
        k_step = schedule.k_for_step(step)
        shares = iter(_split_evenly(k_step, len(live))) if k_step >= len(live) else iter(
            [1] * k_step + [0] * (len(live) - k_step)
        )
        sampled_count = 0
        discarded = 0
        aligned: list[list[ScoredChunk] | None] = []
        for entry in beam.entries:
            if entry.finished:
                aligned.append(None)
                continue
            share = next(shares)
            if share == 0:
                aligned.append([])
                continue
            budget = min(
                params.chunk_size,
                params.max_generation_tokens - entry.cum_teacher_token_count,
            )
            context = problem.prompt + entry.text
            continuations = teacher.sample_continuations(
                context, share, params, budget,
                stream_key=(problem.problem_id, step),
            )
            scored: list[ScoredChunk] = []
            for continuation in continuations:
                sampled_count += 1
                if trace is not None:
                    trace.teacher_tokens_sampled += continuation.teacher_token_count
                if not continuation.text:
                    discarded += 1
                    continue
                token_scores = student.score_text(context, continuation.text)
                scored.append(
                    ScoredChunk.from_scores(
                        continuation.text,
                        token_scores,
                        finished=continuation.finished,
                        teacher_token_count=continuation.teacher_token_count,
                    )
                )
            aligned.append(scored)
        if trace is not None:
            trace.candidates_sampled += sampled_count

        # Entries whose candidates all got discarded cannot extend or carry;
        # they drop out of the pool for this step.
        pruned_entries: list[CandidateTrajectory] = []
        pruned_candidates: list[list[ScoredChunk] | None] = []
        for entry, candidates in zip(beam.entries, aligned):
            if entry.finished:
                pruned_entries.append(entry)
                pruned_candidates.append(None)
            elif candidates:
                pruned_entries.append(entry)
                pruned_candidates.append(candidates)
        if not pruned_entries:
            raise SelectionStepError(
                f"problem {problem.problem_id!r} step {step}: all {sampled_count} "
                f"candidate(s) were empty and no finished entry remains"
            )
        step_strategy = strategy
        if strategy.kind is StrategyKind.RANDOM:
            step_strategy = SelectionStrategy(
                kind=strategy.kind,
                rng_seed=stable_seed(strategy.rng_seed, problem.problem_id, step),
            )
        new_beam = advance_beam(
            Beam(tuple(pruned_entries), beam_width=beam_width),
            pruned_candidates,
            step_strategy,
            max_generation_tokens=params.max_generation_tokens,
        )
        if trace is not None:
            trace.steps.append(
                StepTrace(
                    step=step,
                    k_step=k_step,
                    entries_before=beam.entries,
                    candidates_by_entry=tuple(
                        tuple(c) if c is not None else None for c in aligned
                    ),
                    sampled_count=sampled_count,
                    discarded_empty=discarded,
                    beam_after=new_beam.entries,
                )
            )
        beam = new_beam

    final = beam.entries[_best_index(beam.entries, strategy, problem.problem_id)]
    if trace is not None:
        trace.final = final
    return final


def select_from_pool(
    problem: Problem,
    pool: list[str],
    student: ModelBackend,
    strategy: SelectionStrategy,
    *,
    chunk_size: int = 0,
    seed: int = 0,
) -> DatasetRecord:
    """Score pre-generated full solutions under the student and keep the
    strategy's pick, wrapped as a dataset record.

    Covers the closed-teacher regime where chunked sampling is unavailable and
    selection happens over whole solutions. Pool generation cost is unknown
    here, so teacher token fields are zero.
    """
    if not student.capabilities.can_score:
        raise CapabilityError(f"student {student.identity} cannot score")
    if not pool:
        raise EmptyPoolError(f"problem {problem.problem_id!r} has an empty solution pool")
    scored = [
        ScoredChunk.from_scores(
            text, student.score_text(problem.prompt, text), finished=True, teacher_token_count=0
        )
        for text in pool
        if text
    ]
    if not scored:
        raise EmptyPoolError(f"problem {problem.problem_id!r}: every pool solution is empty")
    chosen = scored[select_candidate(scored, strategy)]
    extracted = extract_answer(chosen.text)
    return DatasetRecord(
        problem_id=problem.problem_id,
        prompt=problem.prompt,
        trajectory_text=chosen.text,
        extracted_answer=extracted.raw,
        correct=answers_match(extracted, problem.gold_answer),
        trajectory_ppl=chosen.ppl,
        student_token_count=chosen.token_count,
        teacher_token_count=0,
        teacher_tokens_sampled_total=0,
        mode=MODE_POOL_SELECT,
        strategy=strategy.kind.value,
        chunk_size=chunk_size,
        schedule_descriptor=f"pool[{len(pool)}]",
        seed=seed,
    )
