"""Per-token log-probability scores, chunk aggregates, and trajectory accounting.

All log-probabilities are natural-log and all perplexities are per student
token: ppl = exp(sum_nll / token_count). Prompt tokens never enter any total;
scoring always conditions on the prompt (plus the selected prefix) and sums
NLL over the continuation's tokens only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

# Scores above this are rejected: a log-probability cannot be positive beyond
# floating-point noise from the serving stack.
LOGPROB_TOLERANCE = 1e-6

_REL_TOL = 1e-9


class EmptyChunkError(ValueError):
    """An operation needed at least one scored token."""


def compute_ppl(sum_nll: float, token_count: int) -> float:
    """Perplexity of a scored span: exp(sum_nll / token_count).

    sum_nll is the summed negative log-likelihood in nats; token_count is the
    number of scorer-side tokens. Raises EmptyChunkError on an empty span,
    since perplexity is undefined there.
    """
    if token_count < 1:
        raise EmptyChunkError("perplexity is undefined for an empty token span")
    if not math.isfinite(sum_nll):
        raise ValueError(f"sum_nll must be finite, got {sum_nll!r}")
    return math.exp(sum_nll / token_count)


@dataclass(frozen=True)
class TokenScore:
    """One continuation token and its log-probability under the scorer."""

    token_text: str
    logprob: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.logprob):
            raise ValueError(
                f"logprob for token {self.token_text!r} must be finite, got {self.logprob!r}"
            )
        if self.logprob > LOGPROB_TOLERANCE:
            raise ValueError(
                f"logprob for token {self.token_text!r} is positive beyond tolerance: {self.logprob!r}"
            )


@dataclass(frozen=True)
class GenerationParams:
    """Sampling knobs shared by every generation mode.

    chunk_size and max_generation_tokens are measured in generator-side
    tokens. stop_markers end a continuation early; the marker text itself is
    cut from the returned chunk.
    """

    temperature: float = 0.6
    top_p: float = 0.95
    top_k: int = 30
    max_generation_tokens: int = 16384
    chunk_size: int = 4096
    stop_markers: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if not 0 < self.top_p <= 1:
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.top_k < 0:
            raise ValueError(f"top_k must be >= 0, got {self.top_k}")
        if self.max_generation_tokens < 1:
            raise ValueError("max_generation_tokens must be >= 1")
        if not 1 <= self.chunk_size <= self.max_generation_tokens:
            raise ValueError(
                f"chunk_size must be in [1, max_generation_tokens], got "
                f"{self.chunk_size} with cap {self.max_generation_tokens}"
            )
        if any(marker == "" for marker in self.stop_markers):
            raise ValueError("stop markers must be nonempty strings")
        # Tolerate plain sets in hand-built configs.
        if not isinstance(self.stop_markers, frozenset):
            object.__setattr__(self, "stop_markers", frozenset(self.stop_markers))


@dataclass(frozen=True)
class ScoredChunk:
    """A sampled continuation plus its aggregate score under the student.

    token_count/sum_nll/ppl are student-side; teacher_token_count is what the
    generator spent producing the text. finished means the generator ended the
    trajectory inside this chunk.
    """

    text: str
    token_scores: tuple[TokenScore, ...]
    sum_nll: float
    token_count: int
    ppl: float
    finished: bool
    teacher_token_count: int

    @classmethod
    def from_scores(
        cls,
        text: str,
        token_scores: list[TokenScore] | tuple[TokenScore, ...],
        finished: bool,
        teacher_token_count: int,
    ) -> "ScoredChunk":
        scores = tuple(token_scores)
        if not scores:
            raise EmptyChunkError("a scored chunk needs at least one token")
        sum_nll = -sum(score.logprob for score in scores)
        return cls(
            text=text,
            token_scores=scores,
            sum_nll=sum_nll,
            token_count=len(scores),
            ppl=compute_ppl(sum_nll, len(scores)),
            finished=finished,
            teacher_token_count=teacher_token_count,
        )

    def __post_init__(self) -> None:
        if self.token_count != len(self.token_scores):
            raise ValueError(
                f"token_count {self.token_count} != {len(self.token_scores)} token scores"
            )
        if self.token_count < 1:
            raise EmptyChunkError("a scored chunk needs at least one token")
        expected_nll = -sum(score.logprob for score in self.token_scores)
        if abs(self.sum_nll - expected_nll) > _REL_TOL * max(1.0, abs(expected_nll)):
            raise ValueError(
                f"sum_nll {self.sum_nll} disagrees with token scores ({expected_nll})"
            )
        # Tiny negatives are the positive-logprob tolerance summed up.
        if self.sum_nll < -LOGPROB_TOLERANCE * self.token_count:
            raise ValueError(f"sum_nll must be >= 0, got {self.sum_nll}")
        expected_ppl = compute_ppl(self.sum_nll, self.token_count)
        if abs(self.ppl - expected_ppl) > _REL_TOL * expected_ppl:
            raise ValueError(f"ppl {self.ppl} disagrees with sum_nll/token_count")
        if self.teacher_token_count < 0:
            raise ValueError("teacher_token_count must be >= 0")


@dataclass(frozen=True)
class CandidateTrajectory:
    """A reasoning path under construction: kept chunks plus running totals.

    cum_token_count counts student-side tokens (what the perplexity is over);
    cum_teacher_token_count counts generator tokens (what budgets are over).
    chunk_index is the number of chunks accepted so far.
    """

    problem_id: str
    chunks: tuple[ScoredChunk, ...] = ()
    cum_sum_nll: float = 0.0
    cum_token_count: int = 0
    cum_teacher_token_count: int = 0
    finished: bool = False
    chunk_index: int = 0

    def extend(
        self, chunk: ScoredChunk, max_generation_tokens: int | None = None
    ) -> "CandidateTrajectory":
        """Append a chunk. The trajectory finishes when the chunk did, or when
        the teacher-side budget cap (if given) is reached."""
        teacher_total = self.cum_teacher_token_count + chunk.teacher_token_count
        finished = chunk.finished
        if max_generation_tokens is not None and teacher_total >= max_generation_tokens:
            finished = True
        return CandidateTrajectory(
            problem_id=self.problem_id,
            chunks=self.chunks + (chunk,),
            cum_sum_nll=self.cum_sum_nll + chunk.sum_nll,
            cum_token_count=self.cum_token_count + chunk.token_count,
            cum_teacher_token_count=teacher_total,
            finished=finished,
            chunk_index=self.chunk_index + 1,
        )

    @property
    def text(self) -> str:
        return "".join(chunk.text for chunk in self.chunks)

    @property
    def ppl(self) -> float:
        """Cumulative trajectory perplexity over all accepted chunks."""
        return compute_ppl(self.cum_sum_nll, self.cum_token_count)
