import math
import random

import pytest

from conftest import answer_spec, make_problems, small_params
from selfselect.backends.toy import ToyBackend
from selfselect.records import MODE_POOL_SELECT
from selfselect.scoring import CandidateTrajectory, ScoredChunk, TokenScore
from selfselect.selection import (
    Beam,
    EmptyPoolError,
    SamplingSchedule,
    SelectionStepError,
    SelectionStrategy,
    SelectionTrace,
    StrategyKind,
    advance_beam,
    run_self_selection,
    select_candidate,
    select_from_pool,
)

LOW = SelectionStrategy(kind=StrategyKind.LOW)
HIGH = SelectionStrategy(kind=StrategyKind.HIGH)


def chunk_with_ppl(ppl: float, tokens: int = 1, text: str = "t",
                   finished: bool = False) -> ScoredChunk:
    logprob = -math.log(ppl)
    scores = [TokenScore(token_text="x", logprob=logprob) for _ in range(tokens)]
    return ScoredChunk.from_scores(text, scores, finished=finished, teacher_token_count=tokens)


def trajectory_with_ppl(ppl: float, tokens: int = 1, problem_id: str = "p",
                        finished: bool = False, text: str = "t") -> CandidateTrajectory:
    return CandidateTrajectory(problem_id=problem_id).extend(
        chunk_with_ppl(ppl, tokens=tokens, text=text, finished=finished)
    )


def test_low_picks_argmin():
    pool = [chunk_with_ppl(p) for p in (2.0, 1.5, 3.0)]
    assert select_candidate(pool, LOW) == 1


def test_high_picks_argmax():
    pool = [chunk_with_ppl(p) for p in (2.0, 1.5, 3.0)]
    assert select_candidate(pool, HIGH) == 2


def test_tie_breaks_to_lowest_index():
    pool = [chunk_with_ppl(1.5), chunk_with_ppl(1.5)]
    assert select_candidate(pool, LOW) == 0
    assert select_candidate(pool, HIGH) == 0


def test_random_strategy_is_seeded():
    pool = [chunk_with_ppl(p) for p in (2.0, 1.5, 3.0, 1.1)]
    strategy = SelectionStrategy(kind=StrategyKind.RANDOM, rng_seed=7)
    picks = {select_candidate(pool, strategy) for _ in range(5)}
    assert len(picks) == 1
    assert picks.pop() == random.Random(7).randrange(4)


def test_empty_pool_rejected():
    with pytest.raises(EmptyPoolError):
        select_candidate([], LOW)


def test_schedule_head_then_tail():
    schedule = SamplingSchedule(head=(16, 8), tail=4)
    assert [schedule.k_for_step(s) for s in (1, 2, 3, 4, 9)] == [16, 8, 4, 4, 4]
    assert schedule.descriptor() == "16,8,4..."


def test_schedule_fixed():
    schedule = SamplingSchedule.fixed(16)
    assert [schedule.k_for_step(s) for s in (1, 2, 3)] == [16, 16, 16]


def test_schedule_validation():
    with pytest.raises(ValueError):
        SamplingSchedule(head=(0,), tail=4)
    with pytest.raises(ValueError):
        SamplingSchedule(head=(16,), tail=0)


def test_advance_width1_reduces_to_select_candidate():
    beam = Beam((CandidateTrajectory(problem_id="p"),), beam_width=1)
    candidates = [chunk_with_ppl(2.0, text="a"), chunk_with_ppl(1.5, text="b"),
                  chunk_with_ppl(3.0, text="c")]
    advanced = advance_beam(beam, [candidates], LOW)
    assert len(advanced.entries) == 1
    assert advanced.entries[0].text == "b"
    assert advanced.entries[0].ppl == pytest.approx(1.5, rel=1e-12)


def test_advance_keeps_top2_of_pooled_trajectories():
    entry_a = trajectory_with_ppl(1.3, text="A")
    entry_b = trajectory_with_ppl(1.6, text="B")
    beam = Beam((entry_a, entry_b), beam_width=2)
    # pooled trajectory ppls: sqrt(1.3*x) etc.; engineer exact pool values by
    # giving each entry one candidate pair and checking kept cumulative ppls
    cand_a = [chunk_with_ppl(1.2 ** 2 / 1.3, text="a1"), chunk_with_ppl(1.9 ** 2 / 1.3, text="a2")]
    cand_b = [chunk_with_ppl(1.4 ** 2 / 1.6, text="b1"), chunk_with_ppl(2.5 ** 2 / 1.6, text="b2")]
    advanced = advance_beam(beam, [cand_a, cand_b], LOW)
    kept = sorted(round(entry.ppl, 6) for entry in advanced.entries)
    assert kept == [1.2, 1.4]
    assert [entry.ppl for entry in advanced.entries] == sorted(
        entry.ppl for entry in advanced.entries
    )


def test_advance_high_keeps_highest():
    beam = Beam((CandidateTrajectory(problem_id="p"),), beam_width=2)
    candidates = [chunk_with_ppl(p, text=f"c{p}") for p in (1.2, 1.4, 1.9, 2.5)]
    advanced = advance_beam(beam, [candidates], HIGH)
    kept = sorted(round(e.ppl, 6) for e in advanced.entries)
    assert kept == [1.9, 2.5]


def test_advance_random_samples_from_pool():
    beam = Beam((CandidateTrajectory(problem_id="p"),), beam_width=2)
    candidates = [chunk_with_ppl(p, text=f"c{i}") for i, p in enumerate((1.2, 1.4, 1.9, 2.5))]
    strategy = SelectionStrategy(kind=StrategyKind.RANDOM, rng_seed=5)
    advanced = advance_beam(beam, [candidates], strategy)
    expected = sorted(random.Random(5).sample(range(4), 2))
    texts = {entry.text for entry in advanced.entries}
    assert texts == {f"c{i}" for i in expected}


def test_advance_finished_entries_carry_forward():
    done = trajectory_with_ppl(1.1, finished=True, text="done")
    live = trajectory_with_ppl(1.5, text="live")
    beam = Beam((done, live), beam_width=2)
    advanced = advance_beam(beam, [None, [chunk_with_ppl(3.0, text="x")]], LOW)
    assert done in advanced.entries


def test_advance_all_finished_returns_beam_unchanged():
    done = trajectory_with_ppl(1.1, finished=True)
    beam = Beam((done,), beam_width=2)
    assert advance_beam(beam, [None], LOW) is beam


def test_advance_alignment_checked():
    beam = Beam((CandidateTrajectory(problem_id="p"),), beam_width=1)
    with pytest.raises(ValueError):
        advance_beam(beam, [], LOW)


def test_advance_live_entry_without_candidates_rejected():
    beam = Beam((CandidateTrajectory(problem_id="p"),), beam_width=1)
    with pytest.raises(SelectionStepError):
        advance_beam(beam, [[]], LOW)


def test_ppl_tie_breaks_to_shorter_trajectory():
    short = trajectory_with_ppl(1.5, tokens=2, text="s")
    long = trajectory_with_ppl(1.5, tokens=5, text="l")
    beam = Beam((CandidateTrajectory(problem_id="p"),), beam_width=1)
    candidates = [chunk_with_ppl(1.5, tokens=5, text="l"), chunk_with_ppl(1.5, tokens=2, text="s")]
    advanced = advance_beam(beam, [candidates], LOW)
    assert advanced.entries[0].text == "s"
    del short, long


def test_beam_width_validation():
    with pytest.raises(ValueError):
        Beam((), beam_width=1)
    with pytest.raises(ValueError):
        Beam((CandidateTrajectory(problem_id="p"),) * 3, beam_width=2)


# ======================================================================
# run_self_selection on toy models
# ======================================================================


def run_once(strategy, seed=11, beam_width=2, trace=None, max_tokens=8, chunk=2):
    problem = make_problems(1)[0]
    teacher = ToyBackend(answer_spec(0.4, seed=seed, name="t"))
    student = ToyBackend(answer_spec(0.7, seed=seed + 1, name="s"))
    return run_self_selection(
        problem, teacher, student, small_params(max_tokens, chunk),
        SamplingSchedule(head=(4, 2), tail=1), strategy, beam_width, trace=trace,
    )


def test_run_returns_finished_trajectory():
    result = run_once(LOW)
    assert result.finished
    assert result.text.endswith("<end>")
    assert result.cum_teacher_token_count <= 8


def test_run_is_deterministic():
    a = run_once(LOW)
    b = run_once(LOW)
    assert a == b


def test_run_low_beats_high_pointwise():
    low = run_once(LOW)
    high = run_once(HIGH)
    assert low.ppl <= high.ppl


def test_trace_counts_candidates_and_tokens():
    trace = SelectionTrace(problem_id="p000")
    result = run_once(LOW, trace=trace)
    assert trace.final == result
    assert trace.candidates_sampled == sum(step.sampled_count for step in trace.steps)
    replayed_tokens = sum(
        chunk.teacher_token_count
        for step in trace.steps
        for cands in step.candidates_by_entry if cands
        for chunk in cands
    )
    # discarded-empty candidates still cost tokens but never reach the pool
    assert trace.teacher_tokens_sampled >= replayed_tokens
    assert result.cum_teacher_token_count <= trace.teacher_tokens_sampled


def test_random_strategy_stable_per_problem():
    strategy = SelectionStrategy(kind=StrategyKind.RANDOM, rng_seed=99)
    assert run_once(strategy) == run_once(strategy)


def test_capability_gates():
    problem = make_problems(1)[0]
    teacher = ToyBackend(answer_spec(0.4, seed=1, name="t"))

    class ScoreOnly(ToyBackend):
        @property
        def capabilities(self):
            from selfselect.backends.base import Capabilities
            return Capabilities(can_sample=False, can_score=True)

    from selfselect.backends.base import CapabilityError
    with pytest.raises(CapabilityError):
        run_self_selection(
            problem, ScoreOnly(teacher.spec), teacher, small_params(),
            SamplingSchedule(), LOW,
        )


# ======================================================================
# select_from_pool
# ======================================================================


def make_student():
    return ToyBackend(answer_spec(0.7, seed=2, name="s"))


def test_pool_of_one_is_chosen_regardless_of_strategy():
    problem = make_problems(1)[0]
    student = make_student()
    only = "think \\boxed{9}<end>"
    for strategy in (LOW, HIGH, SelectionStrategy(kind=StrategyKind.RANDOM, rng_seed=12)):
        record = select_from_pool(problem, [only], student, strategy)
        assert record.trajectory_text == only
        assert not record.correct


def test_pool_of_identical_copies_ties_to_index_zero():
    problem = make_problems(1)[0]
    student = make_student()
    pool = ["think \\boxed{27}<end>"] * 4
    record = select_from_pool(problem, pool, student, LOW)
    assert record.trajectory_text == pool[0]
    assert record.correct


def test_pool_low_picks_student_preferred_solution():
    problem = make_problems(1)[0]
    student = make_student()
    pool = ["think \\boxed{9}<end>", "think \\boxed{27}<end>"]
    low = select_from_pool(problem, pool, student, LOW)
    high = select_from_pool(problem, pool, student, HIGH)
    assert low.trajectory_text == pool[1]  # student prefers the right answer
    assert high.trajectory_text == pool[0]
    assert low.trajectory_ppl <= high.trajectory_ppl


def test_pool_record_shape():
    problem = make_problems(1)[0]
    record = select_from_pool(problem, ["think \\boxed{27}<end>"], make_student(), LOW,
                              seed=17)
    assert record.mode == MODE_POOL_SELECT
    assert record.schedule_descriptor == "pool[1]"
    assert record.teacher_token_count == 0
    assert record.teacher_tokens_sampled_total == 0
    assert record.student_token_count == 3
    assert record.seed == 17


def test_pool_empty_rejected():
    problem = make_problems(1)[0]
    with pytest.raises(EmptyPoolError):
        select_from_pool(problem, [], make_student(), LOW)
    with pytest.raises(EmptyPoolError):
        select_from_pool(problem, ["", ""], make_student(), LOW)
