"""Dataset record schema and the line-delimited file formats the pipeline reads
and writes.

Field conventions: teacher_* fields count generator-side tokens, whatever model
generated the text (for self-distillation that is the student acting as its
own generator). trajectory_ppl and student_token_count are filled only by
modes that score with a student (self_select, pool_select); rejection-only
modes store null there, since scoring them would break mode isolation.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

from .answers import Problem

MODE_COLD_START = "cold_start"
MODE_SELF_SELECT = "self_select"
MODE_STANDARD_KD = "standard_kd"
MODE_SELF_DISTILL = "self_distill"
MODE_POOL_SELECT = "pool_select"
ALL_MODES = (
    MODE_COLD_START,
    MODE_SELF_SELECT,
    MODE_STANDARD_KD,
    MODE_SELF_DISTILL,
    MODE_POOL_SELECT,
)

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"


@dataclass(frozen=True)
class DatasetRecord:
    """One emitted training example plus its provenance and cost accounting."""

    problem_id: str
    prompt: str
    trajectory_text: str
    extracted_answer: str
    correct: bool
    trajectory_ppl: float | None
    student_token_count: int | None
    teacher_token_count: int
    teacher_tokens_sampled_total: int
    mode: str
    strategy: str
    chunk_size: int
    schedule_descriptor: str
    seed: int

    def __post_init__(self) -> None:
        if self.mode not in ALL_MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.teacher_tokens_sampled_total < self.teacher_token_count:
            raise ValueError(
                f"teacher_tokens_sampled_total ({self.teacher_tokens_sampled_total}) cannot be "
                f"less than teacher_token_count ({self.teacher_token_count})"
            )


def record_to_json(record: DatasetRecord) -> str:
    return json.dumps(asdict(record), ensure_ascii=False)


def record_from_dict(data: dict) -> DatasetRecord:
    return DatasetRecord(**data)


def _atomic_write(path: str, content: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as handle:
        handle.write(content)
    os.replace(tmp, path)


def write_records_jsonl(path: str, records: list[DatasetRecord]) -> None:
    _atomic_write(path, "".join(record_to_json(r) + "\n" for r in records))


def read_records_jsonl(path: str) -> list[DatasetRecord]:
    records = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                records.append(record_from_dict(json.loads(line)))
    return records


def sft_completion(trajectory_text: str) -> str:
    """Wrap the reasoning in think markers unless the generator already did."""
    if THINK_OPEN in trajectory_text:
        return trajectory_text
    return f"{THINK_OPEN}\n{trajectory_text}\n{THINK_CLOSE}"


def write_sft_jsonl(path: str, records: list[DatasetRecord]) -> None:
    """Companion SFT file: one {prompt, completion} pair per kept record."""
    lines = [
        json.dumps(
            {"prompt": r.prompt, "completion": sft_completion(r.trajectory_text)},
            ensure_ascii=False,
        )
        + "\n"
        for r in records
    ]
    _atomic_write(path, "".join(lines))


def read_problems_jsonl(path: str) -> list[Problem]:
    """Problems file: {problem_id, prompt, gold_answer, metadata?} per line.
    problem_ids must be unique."""
    problems = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
            try:
                problem = Problem(
                    problem_id=data["problem_id"],
                    prompt=data["prompt"],
                    gold_answer=data["gold_answer"],
                    metadata=dict(data.get("metadata", {})),
                )
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad problem: {exc}") from exc
            if problem.problem_id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate problem_id {problem.problem_id!r}")
            seen.add(problem.problem_id)
            problems.append(problem)
    return problems


def write_problems_jsonl(path: str, problems: list[Problem]) -> None:
    lines = [
        json.dumps(
            {
                "problem_id": p.problem_id,
                "prompt": p.prompt,
                "gold_answer": p.gold_answer,
                "metadata": p.metadata,
            },
            ensure_ascii=False,
        )
        + "\n"
        for p in problems
    ]
    _atomic_write(path, "".join(lines))


def read_pools_jsonl(path: str) -> dict[str, list[str]]:
    """Pools file: {problem_id, solutions: [text, ...]} per line."""
    pools: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
            problem_id = data.get("problem_id")
            solutions = data.get("solutions")
            if not problem_id or not isinstance(solutions, list):
                raise ValueError(f"{path}:{lineno}: need problem_id and solutions list")
            if problem_id in pools:
                raise ValueError(f"{path}:{lineno}: duplicate pool for {problem_id!r}")
            pools[problem_id] = [str(s) for s in solutions]
    return pools


def write_pools_jsonl(path: str, pools: dict[str, list[str]]) -> None:
    lines = [
        json.dumps({"problem_id": pid, "solutions": sols}, ensure_ascii=False) + "\n"
        for pid, sols in pools.items()
    ]
    _atomic_write(path, "".join(lines))
