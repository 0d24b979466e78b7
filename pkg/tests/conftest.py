"""Shared toy model builders and fixtures.

The answer-shaped vocabulary uses multi-character symbols so sampled text is
extractable and verifiable: a filler symbol, two boxed answers (one right, one
wrong), and an end marker. Greedy longest-match tokenization cannot merge
symbols across chunk joins in this vocabulary, so chunk-wise scores add up to
full-pass scores exactly.
"""

import pytest

from selfselect.answers import Problem
from selfselect.backends.toy import ToyBackend, ToyModelSpec
from selfselect.scoring import GenerationParams

RIGHT = "\\boxed{27}"
WRONG = "\\boxed{9}"
THINK = "think "
END = "<end>"
ANSWER_VOCAB = (THINK, RIGHT, WRONG, END)


def answer_spec(p_right: float, seed: int, name: str, p_think: float = 0.2) -> ToyModelSpec:
    """Order-2 model over the answer vocabulary. After the filler symbol it
    emits the right answer with probability p_right (renormalized against
    p_think and the wrong answer), then always ends."""
    p_wrong = 1.0 - p_think - p_right
    if p_wrong < -1e-12:
        raise ValueError("p_think + p_right must be <= 1")
    p_wrong = max(0.0, p_wrong)
    return ToyModelSpec(
        vocabulary=ANSWER_VOCAB,
        order=2,
        transition_weights={
            (): (1.0, 0.0, 0.0, 0.0),
            (THINK,): (p_think, p_right, p_wrong, 0.0),
            (RIGHT,): (0.0, 0.0, 0.0, 1.0),
            (WRONG,): (0.0, 0.0, 0.0, 1.0),
        },
        end_symbol=END,
        seed=seed,
        default_weights=(1.0, 1.0, 1.0, 1.0),
        name=name,
    )


def always_spec(symbol_index: int, seed: int, name: str) -> ToyModelSpec:
    """Deterministic model: one filler step, then always the indexed answer."""
    one_hot = tuple(1.0 if i == symbol_index else 0.0 for i in range(len(ANSWER_VOCAB)))
    return ToyModelSpec(
        vocabulary=ANSWER_VOCAB,
        order=2,
        transition_weights={
            (): (1.0, 0.0, 0.0, 0.0),
            (THINK,): one_hot,
            (RIGHT,): (0.0, 0.0, 0.0, 1.0),
            (WRONG,): (0.0, 0.0, 0.0, 1.0),
        },
        end_symbol=END,
        seed=seed,
        default_weights=(1.0, 1.0, 1.0, 1.0),
        name=name,
    )


def uniform_spec(symbols: tuple[str, ...], seed: int = 0, name: str = "uniform") -> ToyModelSpec:
    """Order-1 model: every token uniform over the vocabulary. The last
    symbol doubles as the end marker, so runs end when it happens to be drawn."""
    weights = tuple(1.0 for _ in symbols)
    return ToyModelSpec(
        vocabulary=symbols,
        order=1,
        transition_weights={},
        end_symbol=symbols[-1],
        seed=seed,
        default_weights=weights,
        name=name,
    )


def make_problems(count: int, gold: str = "27", prefix: str = "p") -> list[Problem]:
    return [
        Problem(problem_id=f"{prefix}{i:03d}", prompt=f"Q{i}: what value? ", gold_answer=gold)
        for i in range(count)
    ]


def small_params(max_tokens: int = 8, chunk: int = 2, **kwargs) -> GenerationParams:
    return GenerationParams(max_generation_tokens=max_tokens, chunk_size=chunk, **kwargs)


@pytest.fixture
def teacher():
    """Roughly half-correct generator; criterion-style rejection fodder."""
    return ToyBackend(answer_spec(0.4, seed=11, name="teacher"))


@pytest.fixture
def student():
    """Scorer that prefers the right answer, so low-PPL selection helps."""
    return ToyBackend(answer_spec(0.7, seed=22, name="student"))


@pytest.fixture
def always_right():
    return ToyBackend(always_spec(1, seed=31, name="always-right"))


@pytest.fixture
def always_wrong():
    return ToyBackend(always_spec(2, seed=32, name="always-wrong"))
