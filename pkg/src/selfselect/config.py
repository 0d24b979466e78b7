"""Run configuration: one JSON document describing backends, generation
settings, the candidate schedule, and mode-specific knobs.

Snapshots are fully self-contained: toy model specs are inlined at load time
so a run directory replays without the original files. Secrets never appear:
remote backends name an environment variable, and only the name is stored.
Auth tokens are read from the environment only; never serialized into
configs, logs, or datasets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .backends.base import ModelBackend
from .backends.remote import RemoteBackend, RemoteEndpointConfig, RetryPolicy
from .backends.toy import ToyBackend, parse_toy_spec
from .records import (
    MODE_COLD_START,
    MODE_POOL_SELECT,
    MODE_SELF_DISTILL,
    MODE_SELF_SELECT,
    MODE_STANDARD_KD,
)
from .scoring import GenerationParams
from .selection import SamplingSchedule, SelectionStrategy, StrategyKind


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


def _require_keys(data: dict, allowed: set[str], context: str) -> None:
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{context}: unknown keys {unknown}")


def _backend_snapshot(data: dict | None, context: str) -> dict | None:
    """Normalize a backend sub-config and inline any toy spec file."""
    if data is None:
        return None
    if not isinstance(data, dict) or "kind" not in data:
        raise ConfigError(f"{context}: expected an object with a 'kind' key")
    kind = data["kind"]
    if kind == "toy":
        _require_keys(data, {"kind", "spec_path", "spec_text"}, context)
        text = data.get("spec_text")
        if text is None:
            path = data.get("spec_path")
            if not path:
                raise ConfigError(f"{context}: toy backend needs spec_path or spec_text")
            with open(path, encoding="utf-8") as handle:
                text = handle.read()
        parse_toy_spec(text)  # fail at load time, not mid-run
        return {"kind": "toy", "spec_text": text}
    if kind == "remote":
        allowed = {
            "kind", "base_url", "model_name", "auth_token_env_var", "max_in_flight",
            "request_timeout", "prompt_prefix", "retry",
        }
        _require_keys(data, allowed, context)
        if not data.get("base_url") or not data.get("model_name"):
            raise ConfigError(f"{context}: remote backend needs base_url and model_name")
        retry = dict(data.get("retry") or {})
        _require_keys(retry, {"max_attempts", "backoff_base", "backoff_cap", "retry_on"},
                      f"{context}.retry")
        out = {
            "kind": "remote",
            "base_url": data["base_url"],
            "model_name": data["model_name"],
            "auth_token_env_var": data.get("auth_token_env_var", ""),
            "max_in_flight": int(data.get("max_in_flight", 8)),
            "request_timeout": float(data.get("request_timeout", 60.0)),
            "prompt_prefix": data.get("prompt_prefix", ""),
            "retry": retry,
        }
        return out
    raise ConfigError(f"{context}: unknown backend kind {kind!r}")


def _build_backend(snapshot: dict | None) -> ModelBackend | None:
    if snapshot is None:
        return None
    if snapshot["kind"] == "toy":
        return ToyBackend(parse_toy_spec(snapshot["spec_text"]))
    retry_data = snapshot.get("retry") or {}
    retry_kwargs = dict(retry_data)
    if "retry_on" in retry_kwargs:
        retry_kwargs["retry_on"] = frozenset(retry_kwargs["retry_on"])
    config = RemoteEndpointConfig(
        base_url=snapshot["base_url"],
        model_name=snapshot["model_name"],
        auth_token_env_var=snapshot.get("auth_token_env_var", ""),
        max_in_flight=snapshot.get("max_in_flight", 8),
        request_timeout=snapshot.get("request_timeout", 60.0),
        retry=RetryPolicy(**retry_kwargs),
        prompt_prefix=snapshot.get("prompt_prefix", ""),
    )
    return RemoteBackend(config)


_TOP_LEVEL_KEYS = {
    "teacher", "student", "generation", "schedule", "strategy", "beam_width",
    "workers", "seed", "problems_path", "pools_path", "output_dir", "cold_start",
    "baseline", "student_cold_started", "exclude_run_dir",
}


@dataclass
class RunConfig:
    """Everything a run needs, in snapshot (JSON-safe) form."""

    teacher: dict | None = None
    student: dict | None = None
    generation: GenerationParams = field(default_factory=GenerationParams)
    schedule: SamplingSchedule = field(default_factory=SamplingSchedule)
    strategy: SelectionStrategy = field(default_factory=SelectionStrategy)
    beam_width: int = 2
    workers: int = 1
    seed: int = 0
    problems_path: str | None = None
    pools_path: str | None = None
    output_dir: str = "runs"
    attempts_per_problem: int = 1
    target_count: int | None = None
    samples_per_problem: int = 1
    student_cold_started: bool | None = None
    exclude_run_dir: str | None = None

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config root must be an object")
        _require_keys(data, _TOP_LEVEL_KEYS, "config")

        generation_data = dict(data.get("generation") or {})
        _require_keys(generation_data, {
            "temperature", "top_p", "top_k", "max_generation_tokens", "chunk_size",
            "stop_markers",
        }, "generation")
        if "stop_markers" in generation_data:
            generation_data["stop_markers"] = frozenset(generation_data["stop_markers"])
        try:
            generation = GenerationParams(**generation_data)
        except ValueError as exc:
            raise ConfigError(f"generation: {exc}") from exc

        schedule_data = dict(data.get("schedule") or {})
        _require_keys(schedule_data, {"head", "tail"}, "schedule")
        if "head" in schedule_data:
            schedule_data["head"] = tuple(schedule_data["head"])
        try:
            schedule = SamplingSchedule(**schedule_data)
        except ValueError as exc:
            raise ConfigError(f"schedule: {exc}") from exc

        strategy_data = dict(data.get("strategy") or {})
        _require_keys(strategy_data, {"kind", "rng_seed"}, "strategy")
        kind_name = strategy_data.pop("kind", StrategyKind.LOW.value)
        try:
            kind = StrategyKind(kind_name)
        except ValueError as exc:
            valid = [k.value for k in StrategyKind]
            raise ConfigError(f"strategy: unknown kind {kind_name!r}; expected {valid}") from exc
        strategy = SelectionStrategy(kind=kind, **strategy_data)

        cold_start = dict(data.get("cold_start") or {})
        _require_keys(cold_start, {"attempts_per_problem", "target_count"}, "cold_start")
        baseline = dict(data.get("baseline") or {})
        _require_keys(baseline, {"samples_per_problem"}, "baseline")

        beam_width = int(data.get("beam_width", 2))
        if beam_width < 1:
            raise ConfigError("beam_width must be >= 1")
        workers = int(data.get("workers", 1))
        if workers < 1:
            raise ConfigError("workers must be >= 1")
        attempts = int(cold_start.get("attempts_per_problem", 1))
        if attempts < 1:
            raise ConfigError("cold_start.attempts_per_problem must be >= 1")
        target = cold_start.get("target_count")
        if target is not None:
            target = int(target)
            if target < 1:
                raise ConfigError("cold_start.target_count must be >= 1 when set")
        samples = int(baseline.get("samples_per_problem", 1))
        if samples < 1:
            raise ConfigError("baseline.samples_per_problem must be >= 1")

        return cls(
            teacher=_backend_snapshot(data.get("teacher"), "teacher"),
            student=_backend_snapshot(data.get("student"), "student"),
            generation=generation,
            schedule=schedule,
            strategy=strategy,
            beam_width=beam_width,
            workers=workers,
            seed=int(data.get("seed", 0)),
            problems_path=data.get("problems_path"),
            pools_path=data.get("pools_path"),
            output_dir=data.get("output_dir", "runs"),
            attempts_per_problem=attempts,
            target_count=target,
            samples_per_problem=samples,
            student_cold_started=data.get("student_cold_started"),
            exclude_run_dir=data.get("exclude_run_dir"),
        )

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as handle:
                data = json.load(handle)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def to_snapshot(self) -> dict:
        """JSON-safe dict capturing the effective config. Replayable: toy
        specs are inlined and no value depends on the local environment."""
        return {
            "teacher": self.teacher,
            "student": self.student,
            "generation": {
                "temperature": self.generation.temperature,
                "top_p": self.generation.top_p,
                "top_k": self.generation.top_k,
                "max_generation_tokens": self.generation.max_generation_tokens,
                "chunk_size": self.generation.chunk_size,
                "stop_markers": sorted(self.generation.stop_markers),
            },
            "schedule": {"head": list(self.schedule.head), "tail": self.schedule.tail},
            "strategy": {"kind": self.strategy.kind.value, "rng_seed": self.strategy.rng_seed},
            "beam_width": self.beam_width,
            "workers": self.workers,
            "seed": self.seed,
            "problems_path": self.problems_path,
            "pools_path": self.pools_path,
            "output_dir": self.output_dir,
            "cold_start": {
                "attempts_per_problem": self.attempts_per_problem,
                "target_count": self.target_count,
            },
            "baseline": {"samples_per_problem": self.samples_per_problem},
            "student_cold_started": self.student_cold_started,
            "exclude_run_dir": self.exclude_run_dir,
        }

    def validate_for(self, mode: str) -> list[str]:
        """Check mode requirements; raises ConfigError on hard problems and
        returns human-readable warnings for soft ones."""
        warnings: list[str] = []
        if self.problems_path is None:
            raise ConfigError(f"{mode}: problems_path is required")
        if mode in (MODE_COLD_START, MODE_STANDARD_KD, MODE_SELF_SELECT):
            if self.teacher is None:
                raise ConfigError(f"{mode}: a teacher backend is required")
        if mode in (MODE_SELF_SELECT, MODE_POOL_SELECT, MODE_SELF_DISTILL):
            if self.student is None:
                raise ConfigError(f"{mode}: a student backend is required")
        if mode == MODE_POOL_SELECT and self.pools_path is None:
            raise ConfigError(f"{mode}: pools_path is required")
        if mode == MODE_SELF_SELECT:
            if self.student_cold_started is None:
                raise ConfigError(
                    f"{mode}: set student_cold_started explicitly; scoring with a student "
                    "that never saw the output format produces meaningless perplexities"
                )
            if self.student_cold_started is False:
                warnings.append(
                    "student_cold_started is false: perplexity-guided selection assumes a "
                    "format-warmed student; proceeding, but treat the output with suspicion"
                )
        return warnings

    def build_teacher(self) -> ModelBackend | None:
        return _build_backend(self.teacher)

    def build_student(self) -> ModelBackend | None:
        return _build_backend(self.student)


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return RunConfig.from_file(path)
