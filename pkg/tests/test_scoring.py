import math
import random

import pytest

from selfselect.scoring import (
    CandidateTrajectory,
    EmptyChunkError,
    GenerationParams,
    ScoredChunk,
    TokenScore,
    compute_ppl,
)


def test_certain_token_gives_ppl_one():
    assert compute_ppl(0.0, 1) == 1.0


def test_mean_nll_one_gives_e():
    assert compute_ppl(3.0, 3) == math.e


def test_uniform_half_probability_gives_two():
    assert compute_ppl(2 * math.log(2), 2) == pytest.approx(2.0, rel=1e-12)


def test_matches_exp_mean_nll_on_random_pairs():
    rng = random.Random(1234)
    for _ in range(1000):
        count = rng.randrange(1, 500)
        sum_nll = rng.uniform(0.0, 20.0) * count
        expected = math.exp(sum_nll / count)
        assert compute_ppl(sum_nll, count) == pytest.approx(expected, rel=1e-9)


def test_zero_tokens_rejected():
    with pytest.raises(EmptyChunkError):
        compute_ppl(1.0, 0)


def test_non_finite_nll_rejected():
    with pytest.raises(ValueError):
        compute_ppl(float("nan"), 3)
    with pytest.raises(ValueError):
        compute_ppl(float("inf"), 3)


def test_token_score_rejects_positive_logprob():
    with pytest.raises(ValueError):
        TokenScore(token_text="x", logprob=0.5)
    # tiny float noise above zero is tolerated
    TokenScore(token_text="x", logprob=5e-7)


def test_token_score_rejects_non_finite():
    with pytest.raises(ValueError):
        TokenScore(token_text="x", logprob=float("-inf"))


def test_generation_params_defaults():
    params = GenerationParams()
    assert params.temperature == 0.6
    assert params.top_p == 0.95
    assert params.top_k == 30
    assert params.max_generation_tokens == 16384
    assert params.chunk_size == 4096


def test_generation_params_validation():
    with pytest.raises(ValueError):
        GenerationParams(chunk_size=0)
    with pytest.raises(ValueError):
        GenerationParams(chunk_size=20, max_generation_tokens=10)
    with pytest.raises(ValueError):
        GenerationParams(temperature=0.0)
    with pytest.raises(ValueError):
        GenerationParams(top_p=0.0)
    with pytest.raises(ValueError):
        GenerationParams(top_k=-1)
    with pytest.raises(ValueError):
        GenerationParams(stop_markers=frozenset({""}))


def _chunk(logprobs, text="t", finished=False, teacher_tokens=None):
    scores = [TokenScore(token_text="x", logprob=lp) for lp in logprobs]
    return ScoredChunk.from_scores(
        text, scores, finished=finished,
        teacher_token_count=len(logprobs) if teacher_tokens is None else teacher_tokens,
    )


def test_scored_chunk_aggregates():
    chunk = _chunk([-math.log(2), -math.log(2)])
    assert chunk.token_count == 2
    assert chunk.sum_nll == pytest.approx(2 * math.log(2), rel=1e-12)
    assert chunk.ppl == pytest.approx(2.0, rel=1e-12)


def test_scored_chunk_rejects_empty():
    with pytest.raises(EmptyChunkError):
        ScoredChunk.from_scores("t", [], finished=False, teacher_token_count=0)


def test_scored_chunk_cross_validates():
    with pytest.raises(ValueError):
        ScoredChunk(
            text="t",
            token_scores=(TokenScore("x", -1.0),),
            sum_nll=2.0,  # disagrees with the single -1.0 score
            token_count=1,
            ppl=math.e,
            finished=False,
            teacher_token_count=1,
        )


def test_trajectory_extend_accumulates():
    start = CandidateTrajectory(problem_id="p1")
    assert start.chunk_index == 0 and not start.finished
    one = start.extend(_chunk([-1.0, -1.0], text="ab"))
    two = one.extend(_chunk([-2.0], text="c", finished=True))
    assert two.chunk_index == 2
    assert two.text == "abc"
    assert two.cum_token_count == 3
    assert two.cum_teacher_token_count == 3
    assert two.finished
    assert two.ppl == pytest.approx(math.exp(4.0 / 3.0), rel=1e-12)
    # the original is untouched
    assert one.chunk_index == 1 and not one.finished


def test_trajectory_budget_cap_finishes():
    start = CandidateTrajectory(problem_id="p1")
    capped = start.extend(_chunk([-1.0] * 4, text="xxxx"), max_generation_tokens=4)
    assert capped.finished
    under = start.extend(_chunk([-1.0] * 3, text="xxx"), max_generation_tokens=4)
    assert not under.finished


def test_trajectory_ppl_is_cumulative_not_chunk_mean():
    # two chunks with ppls e and e^2; cumulative uses token-weighted NLL
    traj = (
        CandidateTrajectory(problem_id="p")
        .extend(_chunk([-1.0], text="a"))
        .extend(_chunk([-2.0, -2.0], text="bc"))
    )
    assert traj.ppl == pytest.approx(math.exp(5.0 / 3.0), rel=1e-12)
    assert traj.ppl != pytest.approx((math.e + math.e ** 2) / 2, rel=1e-3)
