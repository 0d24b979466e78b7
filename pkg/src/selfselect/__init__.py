"""Student-guided selection of teacher-generated reasoning data.

A teacher proposes chunk candidates, a student scores them by perplexity, the
pipeline keeps answer-verified trajectories the student finds learnable, and
the result ships as JSONL datasets with cost and learnability accounting.
"""

from ._version import __version__
from .answers import ExtractedAnswer, Problem, answers_match, extract_answer, normalize_answer
from .backends.base import (
    BackendError,
    Capabilities,
    CapabilityError,
    Continuation,
    ModelBackend,
    ScoringError,
)
from .backends.remote import RemoteBackend, RemoteEndpointConfig, RetryPolicy
from .backends.toy import ToyBackend, ToyModelSpec, load_toy_spec, parse_toy_spec
from .config import ConfigError, RunConfig, load_config
from .metrics import (
    ChunkTrace,
    CostReport,
    DatasetStats,
    chunk_trace,
    cost_report,
    dataset_stats,
)
from .pipeline import (
    ProblemOutcome,
    ResumeMismatchError,
    RunManifest,
    RunState,
    build_cold_start,
    build_pool_select,
    build_self_distill,
    build_ssd_dataset,
    build_standard_kd,
    check_resume_config,
    exclude_problems,
)
from .records import (
    ALL_MODES,
    DatasetRecord,
    read_problems_jsonl,
    read_records_jsonl,
    write_records_jsonl,
    write_sft_jsonl,
)
from .scoring import (
    CandidateTrajectory,
    EmptyChunkError,
    GenerationParams,
    ScoredChunk,
    TokenScore,
    compute_ppl,
)
from .seeding import stable_seed
from .selection import (
    Beam,
    SamplingSchedule,
    SelectionStrategy,
    SelectionTrace,
    StrategyKind,
    advance_beam,
    run_self_selection,
    select_candidate,
    select_from_pool,
)

__all__ = [
    "__version__",
    "ALL_MODES",
    "BackendError",
    "Beam",
    "Capabilities",
    "CapabilityError",
    "CandidateTrajectory",
    "ChunkTrace",
    "ConfigError",
    "Continuation",
    "CostReport",
    "DatasetRecord",
    "DatasetStats",
    "EmptyChunkError",
    "ExtractedAnswer",
    "GenerationParams",
    "ModelBackend",
    "Problem",
    "ProblemOutcome",
    "RemoteBackend",
    "RemoteEndpointConfig",
    "ResumeMismatchError",
    "RetryPolicy",
    "RunConfig",
    "RunManifest",
    "RunState",
    "SamplingSchedule",
    "ScoredChunk",
    "ScoringError",
    "SelectionStrategy",
    "SelectionTrace",
    "StrategyKind",
    "TokenScore",
    "ToyBackend",
    "ToyModelSpec",
    "advance_beam",
    "answers_match",
    "build_cold_start",
    "build_pool_select",
    "build_self_distill",
    "build_ssd_dataset",
    "build_standard_kd",
    "check_resume_config",
    "chunk_trace",
    "compute_ppl",
    "cost_report",
    "dataset_stats",
    "exclude_problems",
    "extract_answer",
    "load_config",
    "load_toy_spec",
    "normalize_answer",
    "parse_toy_spec",
    "read_problems_jsonl",
    "read_records_jsonl",
    "run_self_selection",
    "select_candidate",
    "select_from_pool",
    "stable_seed",
    "write_records_jsonl",
    "write_sft_jsonl",
]
