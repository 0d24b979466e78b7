"""Model backend contract: anything that can sample continuations or score text."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

from ..scoring import GenerationParams, TokenScore


class BackendError(RuntimeError):
    """Base for backend failures. Carries whatever diagnostics the backend has."""


class CapabilityError(BackendError):
    """The backend cannot perform the requested role (sample or score)."""


class ScoringError(BackendError):
    """A scoring pass could not produce one clean score per continuation token."""


@dataclass(frozen=True)
class Capabilities:
    can_sample: bool
    can_score: bool


@dataclass(frozen=True)
class Continuation:
    """One sampled continuation, counted in the generator's own tokens."""

    text: str
    teacher_token_count: int
    finished: bool


class ModelBackend(ABC):
    """Contract shared by the in-process toy model and remote endpoint clients.

    Backends are shareable across threads. Scoring must return one TokenScore
    per token of the continuation under the backend's own tokenization, and
    concatenating the token texts must reconstruct the continuation exactly.
    """

    @property
    @abstractmethod
    def identity(self) -> str:
        """Stable name recorded in manifests and reports."""

    @property
    @abstractmethod
    def capabilities(self) -> Capabilities: ...

    @abstractmethod
    def sample_continuations(
        self,
        context: str,
        n: int,
        params: GenerationParams,
        token_budget: int,
        *,
        stream_key: tuple[object, ...] = (),
    ) -> list[Continuation]:
        """Sample exactly n continuations of at most token_budget tokens each.

        Returns exactly n candidates or raises, never a silent shortfall.
        stream_key is an optional determinism salt (problem id, attempt/step);
        deterministic backends fold it into their per-call RNG stream, remote
        backends ignore it.
        """

    @abstractmethod
    def score_text(self, context: str, continuation: str) -> list[TokenScore]:
        """Per-token log-probabilities of continuation given context."""

    def close(self) -> None:
        """Release any transport resources. No-op by default."""
