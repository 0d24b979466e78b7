"""HTTP client for open-format text completion endpoints.

Request/response field mapping, locked by the stub conformance tests:

    sampling request   model, prompt, n, temperature, top_p,
                       top_k (omitted when 0 or the endpoint rejected it),
                       max_tokens, stop (omitted when empty, sorted),
                       logprobs=0, echo=false
    scoring request    model, prompt=context+continuation, max_tokens=0,
                       logprobs=0, echo=true
    response           choices[].text, choices[].finish_reason,
                       choices[].logprobs.{tokens, token_logprobs, text_offset}

finished maps finish_reason == "stop". Teacher token counts come from
len(logprobs.tokens), so sampling always requests logprobs. Scoring echoes the
whole prompt back and keeps only the tokens whose text_offset lands at or past
the context/continuation boundary; the kept token texts must concatenate back
to the continuation exactly, or the pass fails loudly.

Auth tokens are read from the environment at construction, using the variable
named in the config. They are sent in the Authorization header and appear
nowhere else: not in configs, logs, errors, or datasets.

Endpoints whose serving stack pins an immutable system prompt can set
prompt_prefix; it is prepended to every request. Caveat: the prefix sits
inside the scoring echo too, so it participates in the boundary arithmetic;
keep it byte-stable across a run or scores will not be comparable.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field

import httpx

from ..scoring import GenerationParams, TokenScore
from .base import BackendError, Capabilities, CapabilityError, Continuation, ModelBackend, ScoringError


class EndpointRequestError(BackendError):
    """A request failed for good (non-retryable status or retries exhausted).

    attempt_log holds one line per attempt; status_code is the final HTTP
    status, or None for transport failures.
    """

    def __init__(self, message: str, *, status_code: int | None, attempt_log: list[str]):
        super().__init__(message + "\n  " + "\n  ".join(attempt_log))
        self.status_code = status_code
        self.attempt_log = attempt_log


@dataclass(frozen=True)
class RetryPolicy:
    """Exponential backoff without jitter: sleep min(cap, base * 2^(attempt-1)).

    Gaps are therefore nondecreasing. retry_on holds exact status codes
    ("429") or status classes ("5xx"); transport errors always retry.
    """

    max_attempts: int = 4
    backoff_base: float = 0.5
    backoff_cap: float = 8.0
    retry_on: frozenset[str] = frozenset({"408", "429", "5xx"})

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.backoff_base < 0 or self.backoff_cap < self.backoff_base:
            raise ValueError("need 0 <= backoff_base <= backoff_cap")
        if not isinstance(self.retry_on, frozenset):
            object.__setattr__(self, "retry_on", frozenset(self.retry_on))

    def should_retry(self, status: int) -> bool:
        return str(status) in self.retry_on or f"{status // 100}xx" in self.retry_on

    def delay(self, attempt: int) -> float:
        return min(self.backoff_cap, self.backoff_base * 2 ** (attempt - 1))


@dataclass(frozen=True)
class RemoteEndpointConfig:
    """Connection settings for one endpoint. Only the auth variable NAME is
    stored; the token itself lives in the environment."""

    base_url: str
    model_name: str
    auth_token_env_var: str = ""
    max_in_flight: int = 8
    request_timeout: float = 60.0
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    prompt_prefix: str = ""

    def __post_init__(self) -> None:
        if not self.base_url:
            raise ValueError("base_url must be nonempty")
        if not self.model_name:
            raise ValueError("model_name must be nonempty")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.request_timeout <= 0:
            raise ValueError("request_timeout must be positive")


class RemoteBackend(ModelBackend):
    """Thread-safe client for one remote model endpoint.

    max_in_flight is enforced globally across all threads sharing this
    instance via a semaphore held for the duration of each HTTP request
    (released while backing off between retries).
    """

    def __init__(
        self,
        config: RemoteEndpointConfig,
        *,
        capabilities: Capabilities | None = None,
        supports_n: bool | None = None,
        supports_top_k: bool | None = None,
    ):
        self._config = config
        self._url = config.base_url.rstrip("/") + "/completions"
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(config.auth_token_env_var, "") if config.auth_token_env_var else ""
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._client = httpx.Client(timeout=config.request_timeout, headers=headers)
        self._inflight = threading.BoundedSemaphore(config.max_in_flight)
        self._probe_lock = threading.Lock()
        self._caps = capabilities
        self._supports_n = supports_n if supports_n is not None else True
        self._supports_top_k = supports_top_k if supports_top_k is not None else True
        self._probed = capabilities is not None

    @property
    def identity(self) -> str:
        return self._config.model_name

    @property
    def config(self) -> RemoteEndpointConfig:
        return self._config

    @property
    def capabilities(self) -> Capabilities:
        self._ensure_probed()
        assert self._caps is not None
        return self._caps

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "RemoteBackend":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    # ==================================================================
    # transport with retry
    # ==================================================================

    def _post(self, payload: dict) -> dict:
        """POST the payload, retrying per policy. Raises EndpointRequestError
        with the attempt log when the request cannot be completed."""
        policy = self._config.retry
        attempt_log: list[str] = []
        last_status: int | None = None
        for attempt in range(1, policy.max_attempts + 1):
            with self._inflight:
                try:
                    response = self._client.post(
                        self._url, content=json.dumps(payload).encode("utf-8")
                    )
                except httpx.HTTPError as exc:
                    attempt_log.append(f"attempt {attempt}: transport error: {exc!r}")
                    last_status = None
                    retryable = True
                else:
                    if response.status_code == 200:
                        return response.json()
                    last_status = response.status_code
                    attempt_log.append(
                        f"attempt {attempt}: HTTP {response.status_code}: {response.text[:200]}"
                    )
                    retryable = policy.should_retry(response.status_code)
            if not retryable:
                break
            if attempt < policy.max_attempts:
                time.sleep(policy.delay(attempt))
        raise EndpointRequestError(
            f"request to {self._url} failed after {len(attempt_log)} attempt(s)",
            status_code=last_status,
            attempt_log=attempt_log,
        )

    # ==================================================================
    # capability probing
    # ==================================================================

    def _ensure_probed(self) -> None:
        if self._probed:
            return
        with self._probe_lock:
            if self._probed:
                return
            can_sample = self._probe_sampling()
            can_score = self._probe_scoring()
            self._caps = Capabilities(can_sample=can_sample, can_score=can_score)
            self._probed = True

    def probe_capabilities(self) -> Capabilities:
        """Probe and cache what the endpoint supports. Unreachable endpoints
        raise here, at startup, rather than mid-run."""
        self._ensure_probed()
        return self.capabilities

    def _probe_once(self, payload: dict) -> dict | None:
        """One probe request. None means the endpoint rejected the shape
        (4xx); transport failures and retry exhaustion still raise."""
        try:
            return self._post(payload)
        except EndpointRequestError as exc:
            if exc.status_code is not None and 400 <= exc.status_code < 500:
                return None
            raise

    def _probe_sampling(self) -> bool:
        base = {"model": self._config.model_name, "prompt": "Hi"}
        ladder = [
            dict(n=2, top_k=True),
            dict(n=2, top_k=False),
            dict(n=1, top_k=True),
            dict(n=1, top_k=False),
        ]
        for shape in ladder:
            payload = dict(base, n=shape["n"], temperature=1.0, top_p=1.0)
            if shape["top_k"]:
                payload["top_k"] = 1
            payload.update(max_tokens=1, logprobs=0, echo=False)
            data = self._probe_once(payload)
            if data is None:
                continue
            choices = data.get("choices") or []
            if len(choices) < shape["n"]:
                continue
            if any(not (choice.get("logprobs") or {}).get("tokens") for choice in choices):
                continue  # cannot count teacher tokens without logprobs
            self._supports_n = shape["n"] == 2
            self._supports_top_k = shape["top_k"]
            return True
        return False

    def _probe_scoring(self) -> bool:
        payload = {
            "model": self._config.model_name,
            "prompt": "Hi",
            "max_tokens": 0,
            "logprobs": 0,
            "echo": True,
        }
        data = self._probe_once(payload)
        if data is None:
            return False
        try:
            logprobs = data["choices"][0]["logprobs"]
            return bool(logprobs["tokens"]) and logprobs["text_offset"] is not None
        except (KeyError, IndexError, TypeError):
            return False

    # ==================================================================
    # payloads (field order is part of the documented wire contract)
    # ==================================================================

    def _sampling_payload(
        self, prompt: str, n: int, params: GenerationParams, max_tokens: int
    ) -> dict:
        payload = {
            "model": self._config.model_name,
            "prompt": prompt,
            "n": n,
            "temperature": params.temperature,
            "top_p": params.top_p,
        }
        if params.top_k > 0 and self._supports_top_k:
            payload["top_k"] = params.top_k
        payload["max_tokens"] = max_tokens
        if params.stop_markers:
            payload["stop"] = sorted(params.stop_markers)
        payload["logprobs"] = 0
        payload["echo"] = False
        return payload

    def _scoring_payload(self, prompt: str) -> dict:
        return {
            "model": self._config.model_name,
            "prompt": prompt,
            "max_tokens": 0,
            "logprobs": 0,
            "echo": True,
        }

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
        del stream_key  # remote sampling is not seedable
        if n < 1:
            raise ValueError(f"n must be >= 1, got {n}")
        if token_budget < 1:
            raise ValueError(f"token_budget must be >= 1, got {token_budget}")
        self._ensure_probed()
        if not self.capabilities.can_sample:
            raise CapabilityError(f"{self.identity} cannot sample")
        prompt = self._config.prompt_prefix + context
        if self._supports_n or n == 1:
            data = self._post(self._sampling_payload(prompt, n, params, token_budget))
            continuations = self._parse_choices(data)
        else:
            # Transparent fan-out: n independent single-sample requests.
            continuations = []
            for _ in range(n):
                data = self._post(self._sampling_payload(prompt, 1, params, token_budget))
                continuations.extend(self._parse_choices(data))
        if len(continuations) != n:
            raise BackendError(
                f"{self.identity} returned {len(continuations)} continuation(s), expected {n}"
            )
        return continuations

    def _parse_choices(self, data: dict) -> list[Continuation]:
        choices = data.get("choices")
        if not isinstance(choices, list) or not choices:
            raise BackendError(f"{self.identity}: response has no choices")
        choices = sorted(choices, key=lambda choice: choice.get("index", 0))
        parsed = []
        for choice in choices:
            tokens = (choice.get("logprobs") or {}).get("tokens")
            if tokens is None:
                raise BackendError(
                    f"{self.identity}: choice lacks logprobs.tokens; cannot count teacher tokens"
                )
            parsed.append(
                Continuation(
                    text=choice.get("text", ""),
                    teacher_token_count=len(tokens),
                    finished=choice.get("finish_reason") == "stop",
                )
            )
        return parsed

    def score_text(self, context: str, continuation: str) -> list[TokenScore]:
        if not continuation:
            raise ScoringError("continuation to score must be nonempty")
        self._ensure_probed()
        if not self.capabilities.can_score:
            raise CapabilityError(f"{self.identity} cannot score (no logprob echo support)")
        full_prompt = self._config.prompt_prefix + context + continuation
        boundary = len(full_prompt) - len(continuation)
        data = self._post(self._scoring_payload(full_prompt))
        try:
            logprobs = data["choices"][0]["logprobs"]
            tokens = logprobs["tokens"]
            token_logprobs = logprobs["token_logprobs"]
            offsets = logprobs["text_offset"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ScoringError(f"{self.identity}: scoring response lacks echoed logprobs") from exc
        if not (len(tokens) == len(token_logprobs) == len(offsets)):
            raise ScoringError(f"{self.identity}: echoed logprob arrays have mismatched lengths")
        start = next((i for i, offset in enumerate(offsets) if offset >= boundary), None)
        if start is None:
            raise ScoringError(f"{self.identity}: no echoed token at or past the continuation")
        if offsets[start] != boundary:
            raise ScoringError(
                f"{self.identity}: token {tokens[max(start - 1, 0)]!r} straddles the "
                f"context/continuation boundary at offset {boundary}"
            )
        kept_tokens = tokens[start:]
        kept_logprobs = token_logprobs[start:]
        if "".join(kept_tokens) != continuation:
            raise ScoringError(
                f"{self.identity}: echoed tokens do not reconstruct the continuation "
                f"({''.join(kept_tokens)[:40]!r} vs {continuation[:40]!r})"
            )
        if any(lp is None for lp in kept_logprobs):
            raise ScoringError(f"{self.identity}: continuation token came back unscored")
        return [
            TokenScore(token_text=token, logprob=float(lp))
            for token, lp in zip(kept_tokens, kept_logprobs)
        ]


def probe_capabilities(config: RemoteEndpointConfig) -> Capabilities:
    """Probe an endpoint's sampling/scoring support with a throwaway client."""
    backend = RemoteBackend(config)
    try:
        return backend.probe_capabilities()
    finally:
        backend.close()
