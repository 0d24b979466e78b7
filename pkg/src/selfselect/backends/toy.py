"""Deterministic n-gram toy backend with explicit weight tables.

Every sampling and scoring probability is exactly computable by hand from the
weight tables, which is what makes desk-scale oracle tests possible. Two
deliberate simplifications, both load-bearing for exactness:

* temperature / top_p / top_k are ignored: the toy always samples from the
  normalized table distribution, so the score of a sampled token is exactly
  the log of the probability it was sampled with. Generation params still
  control token budgets and stop markers.
* the end symbol is appended to the emitted text when sampled, so scoring a
  sampled continuation round-trips byte-exactly, end included.

Tokenization is forward greedy longest-match over the vocabulary. Contexts
(prompts may contain arbitrary text) are tokenized leniently: characters that
match no symbol are skipped; continuations are tokenized strictly. Chunk-wise
scoring equals one full-pass scoring only when greedy matching cannot merge
tokens across a chunk boundary; pick vocabularies accordingly (no symbol may
extend a concatenation of others).

Spec file format, line oriented, '#' starts a comment line:

    name: tiny-teacher      # optional
    order: 2                # n-gram order; context window is order - 1 tokens
    seed: 7                 # optional, default 0
    symbol: A               # index 0; text after ': ' is verbatim
    symbol: \\boxed{27}      # index 1
    symbol: .               # index 2
    end_index: 2            # which symbol ends a generation
    default: 1 2 1          # optional fallback weights
    ctx: 4 0 1              # weights for the empty context
    ctx 0: 0 3 1            # weights after symbol 0
    ctx 0 1: 1 1 1          # longer contexts, up to order - 1 indices

Symbols are referenced by index in weight lines so symbol text never needs
quoting or escaping. Weight lookup tries the exact context tuple, then the
default vector, and errors otherwise.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from ..scoring import GenerationParams, TokenScore
from ..seeding import stable_seed
from .base import Capabilities, Continuation, ModelBackend, ScoringError

_NORM_TOL = 1e-12


class ToySpecError(ValueError):
    """A toy model spec is malformed."""


@dataclass
class ToyModelSpec:
    vocabulary: tuple[str, ...]
    order: int
    transition_weights: dict[tuple[str, ...], tuple[float, ...]]
    end_symbol: str
    seed: int = 0
    default_weights: tuple[float, ...] | None = None
    name: str = "toy"

    def __post_init__(self) -> None:
        self.vocabulary = tuple(self.vocabulary)
        if not self.vocabulary:
            raise ToySpecError("vocabulary must be nonempty")
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise ToySpecError("vocabulary symbols must be unique")
        if any(not symbol for symbol in self.vocabulary):
            raise ToySpecError("vocabulary symbols must be nonempty")
        if self.order < 1:
            raise ToySpecError(f"order must be >= 1, got {self.order}")
        if self.end_symbol not in self.vocabulary:
            raise ToySpecError(f"end symbol {self.end_symbol!r} is not in the vocabulary")
        self.transition_weights = {
            tuple(ctx): self._check_weights(weights, ctx)
            for ctx, weights in self.transition_weights.items()
        }
        for ctx in self.transition_weights:
            if len(ctx) > self.order - 1:
                raise ToySpecError(f"context {ctx!r} is longer than order - 1")
            for symbol in ctx:
                if symbol not in self.vocabulary:
                    raise ToySpecError(f"context {ctx!r} uses unknown symbol {symbol!r}")
        if self.default_weights is not None:
            self.default_weights = self._check_weights(self.default_weights, "default")

    def _check_weights(self, weights, where) -> tuple[float, ...]:
        weights = tuple(float(w) for w in weights)
        if len(weights) != len(self.vocabulary):
            raise ToySpecError(
                f"weight vector for {where!r} has {len(weights)} entries, "
                f"expected {len(self.vocabulary)}"
            )
        if any(w < 0 for w in weights):
            raise ToySpecError(f"weights for {where!r} must be nonnegative")
        if sum(weights) <= 0:
            raise ToySpecError(f"weights for {where!r} must have a positive sum")
        return weights


def parse_toy_spec(text: str) -> ToyModelSpec:
    """Parse the spec file format documented in the module docstring."""
    symbols: list[str] = []
    ctx_lines: list[tuple[tuple[int, ...], tuple[float, ...]]] = []
    default: tuple[float, ...] | None = None
    order: int | None = None
    seed = 0
    end_index: int | None = None
    name = "toy"

    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise ToySpecError(f"line {lineno}: expected 'key: value', got {line!r}")
        key = key.strip()
        if key == "symbol":
            # Verbatim after one separator space; symbols may hold spaces,
            # braces, backslashes.
            symbols.append(value[1:] if value.startswith(" ") else value)
        elif key == "order":
            order = int(value)
        elif key == "seed":
            seed = int(value)
        elif key == "name":
            name = value.strip()
        elif key == "end_index":
            end_index = int(value)
        elif key == "default":
            default = tuple(float(w) for w in value.split())
        elif key == "ctx" or key.startswith("ctx "):
            indices = tuple(int(tok) for tok in key.split()[1:])
            weights = tuple(float(w) for w in value.split())
            ctx_lines.append((indices, weights))
        else:
            raise ToySpecError(f"line {lineno}: unknown key {key!r}")

    if order is None:
        raise ToySpecError("missing 'order'")
    if end_index is None:
        raise ToySpecError("missing 'end_index'")
    if not 0 <= end_index < len(symbols):
        raise ToySpecError(f"end_index {end_index} out of range for {len(symbols)} symbols")
    transition = {}
    for indices, weights in ctx_lines:
        for index in indices:
            if not 0 <= index < len(symbols):
                raise ToySpecError(f"context index {index} out of range")
        transition[tuple(symbols[i] for i in indices)] = weights
    return ToyModelSpec(
        vocabulary=tuple(symbols),
        order=order,
        transition_weights=transition,
        end_symbol=symbols[end_index],
        seed=seed,
        default_weights=default,
        name=name,
    )


def format_toy_spec(spec: ToyModelSpec) -> str:
    """Inverse of parse_toy_spec (weights via repr, so floats round-trip)."""
    index = {symbol: i for i, symbol in enumerate(spec.vocabulary)}
    lines = [f"name: {spec.name}", f"order: {spec.order}", f"seed: {spec.seed}"]
    lines += [f"symbol: {symbol}" for symbol in spec.vocabulary]
    lines.append(f"end_index: {index[spec.end_symbol]}")
    if spec.default_weights is not None:
        lines.append("default: " + " ".join(repr(w) for w in spec.default_weights))
    for ctx in sorted(spec.transition_weights, key=lambda c: (len(c), c)):
        key = "ctx" if not ctx else "ctx " + " ".join(str(index[s]) for s in ctx)
        lines.append(f"{key}: " + " ".join(repr(w) for w in spec.transition_weights[ctx]))
    return "\n".join(lines) + "\n"


def load_toy_spec(path) -> ToyModelSpec:
    with open(path, encoding="utf-8") as handle:
        return parse_toy_spec(handle.read())


class ToyBackend(ModelBackend):
    """In-process n-gram backend; sampling and scoring share one table lookup."""

    def __init__(self, spec: ToyModelSpec):
        self._spec = spec
        self._index = {symbol: i for i, symbol in enumerate(spec.vocabulary)}
        self._by_length = sorted(spec.vocabulary, key=len, reverse=True)
        self._probs = {
            ctx: self._normalize(weights) for ctx, weights in spec.transition_weights.items()
        }
        self._default_probs = (
            self._normalize(spec.default_weights) if spec.default_weights is not None else None
        )

    @staticmethod
    def _normalize(weights: tuple[float, ...]) -> tuple[float, ...]:
        total = sum(weights)
        probs = tuple(w / total for w in weights)
        if abs(sum(probs) - 1.0) > _NORM_TOL:
            raise ToySpecError("normalized probabilities do not sum to 1")
        return probs

    @property
    def spec(self) -> ToyModelSpec:
        return self._spec

    @property
    def identity(self) -> str:
        return f"toy:{self._spec.name}"

    @property
    def capabilities(self) -> Capabilities:
        return Capabilities(can_sample=True, can_score=True)

    # ==================================================================
    # tokenization
    # ==================================================================

    def _match_at(self, text: str, pos: int) -> str | None:
        for symbol in self._by_length:
            if text.startswith(symbol, pos):
                return symbol
        return None

    def tokenize(self, text: str) -> list[str]:
        """Strict greedy longest-match; raises on any unmatchable character."""
        tokens = []
        pos = 0
        while pos < len(text):
            symbol = self._match_at(text, pos)
            if symbol is None:
                raise ScoringError(
                    f"{self.identity}: cannot tokenize {text[pos:pos + 12]!r} at offset {pos}"
                )
            tokens.append(symbol)
            pos += len(symbol)
        return tokens

    def _context_tokens(self, context: str) -> list[str]:
        """Lenient tokenization for conditioning: unmatchable characters are
        skipped. Only the trailing order - 1 tokens matter."""
        tokens = []
        pos = 0
        while pos < len(context):
            symbol = self._match_at(context, pos)
            if symbol is None:
                pos += 1
                continue
            tokens.append(symbol)
            pos += len(symbol)
        window = self._spec.order - 1
        return tokens[-window:] if window else []

    # ==================================================================
    # distribution lookup
    # ==================================================================

    def distribution(self, context_tokens: tuple[str, ...]) -> tuple[float, ...]:
        """Normalized next-token probabilities for a context tuple."""
        probs = self._probs.get(context_tokens)
        if probs is None:
            probs = self._default_probs
        if probs is None:
            raise ScoringError(
                f"{self.identity}: no weights for context {context_tokens!r} and no default"
            )
        return probs

    def _slide(self, context_tokens: list[str], symbol: str) -> list[str]:
        window = self._spec.order - 1
        if window == 0:
            return []
        context_tokens = context_tokens + [symbol]
        return context_tokens[-window:]

    # ==================================================================
    # ModelBackend interface
    # ==================================================================

    def sample_continuations(
        self,
        context: str,
        n: int,
        params: GenerationParams,
        token_budget: int,
        *,
        stream_key: tuple[object, ...] = (),
    ) -> list[Continuation]:
        if n < 1:
            raise ValueError(f"n must be >= 1, got {n}")
        if token_budget < 1:
            raise ValueError(f"token_budget must be >= 1, got {token_budget}")
        return [
            self._sample_one(
                context,
                params,
                token_budget,
                random.Random(stable_seed(self._spec.seed, *stream_key, context, i)),
            )
            for i in range(n)
        ]

    def _sample_one(
        self, context: str, params: GenerationParams, token_budget: int, rng: random.Random
    ) -> Continuation:
        context_tokens = self._context_tokens(context)
        emitted: list[str] = []
        finished = False
        while len(emitted) < token_budget:
            probs = self.distribution(tuple(context_tokens))
            symbol = self._draw(probs, rng)
            emitted.append(symbol)
            context_tokens = self._slide(context_tokens, symbol)
            if symbol == self._spec.end_symbol:
                finished = True
                break
        text = "".join(emitted)
        sampled_count = len(emitted)
        if params.stop_markers:
            cuts = [text.find(marker) for marker in sorted(params.stop_markers)]
            cuts = [cut for cut in cuts if cut >= 0]
            if cuts:
                text = text[: min(cuts)]
                finished = True
        return Continuation(text=text, teacher_token_count=sampled_count, finished=finished)

    def _draw(self, probs: tuple[float, ...], rng: random.Random) -> str:
        target = rng.random()
        acc = 0.0
        last_positive = None
        for symbol, p in zip(self._spec.vocabulary, probs):
            if p <= 0:
                continue
            last_positive = symbol
            acc += p
            if target < acc:
                return symbol
        assert last_positive is not None
        return last_positive

    def score_text(self, context: str, continuation: str) -> list[TokenScore]:
        if not continuation:
            raise ScoringError("continuation to score must be nonempty")
        tokens = self.tokenize(continuation)
        context_tokens = self._context_tokens(context)
        scores = []
        for symbol in tokens:
            probs = self.distribution(tuple(context_tokens))
            p = probs[self._index[symbol]]
            if p <= 0:
                raise ScoringError(
                    f"{self.identity}: token {symbol!r} has zero probability "
                    f"after context {tuple(context_tokens)!r}"
                )
            scores.append(TokenScore(token_text=symbol, logprob=math.log(p)))
            context_tokens = self._slide(context_tokens, symbol)
        return scores
