"""Local stand-in for a completions endpoint.

Serves the documented wire protocol on 127.0.0.1 with a scriptable response
queue, full request capture (headers, raw body, timestamps), and concurrency
tracking, so client tests can assert byte-level request shape, retry cadence,
and in-flight caps without a network.

Default behavior when the script queue is empty:

  sampling (echo false)  n choices; choice i echoes "c<i>:" plus the last 6
                         prompt characters; per-character tokens; finish_reason
                         "stop"
  scoring (echo true)    the whole prompt as per-character tokens, each with
                         logprob -0.25, except the very first token of the
                         text whose logprob is null (as real endpoints do);
                         text_offset counts characters
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


@dataclass
class RecordedRequest:
    path: str
    headers: dict[str, str]
    raw_body: bytes
    body: dict
    started_at: float
    concurrent: int


@dataclass
class Scripted:
    """One canned response: HTTP status plus a JSON-serializable body."""

    status: int
    body: dict = field(default_factory=dict)


def sampling_response(prompt: str, n: int) -> dict:
    choices = []
    for i in range(n):
        text = f"c{i}:" + prompt[-6:]
        choices.append({
            "index": i,
            "text": text,
            "finish_reason": "stop",
            "logprobs": {
                "tokens": list(text),
                "token_logprobs": [-0.5] * len(text),
                "text_offset": list(range(len(text))),
            },
        })
    return {"choices": choices}


def scoring_response(prompt: str, logprob: float = -0.25) -> dict:
    tokens = list(prompt)
    logprobs: list[float | None] = [logprob] * len(tokens)
    if logprobs:
        logprobs[0] = None
    return {
        "choices": [{
            "index": 0,
            "text": prompt,
            "finish_reason": "stop",
            "logprobs": {
                "tokens": tokens,
                "token_logprobs": logprobs,
                "text_offset": list(range(len(tokens))),
            },
        }]
    }


class StubEndpoint:
    """Threaded HTTP server exposing POST /completions."""

    def __init__(self):
        self.requests: list[RecordedRequest] = []
        self.script: list[Scripted] = []
        self.delay = 0.0
        self.reject_echo = False
        self.reject_n_gt_1 = False
        self.reject_top_k = False
        self._lock = threading.Lock()
        self._current = 0
        self.peak_concurrent = 0
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), self._make_handler())
        self._thread = threading.Thread(
            target=lambda: self._server.serve_forever(poll_interval=0.02), daemon=True
        )

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}"

    def __enter__(self) -> "StubEndpoint":
        self._thread.start()
        return self

    def __exit__(self, *exc_info) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)

    def completion_requests(self) -> list[RecordedRequest]:
        with self._lock:
            return list(self.requests)

    def _enter_request(self) -> int:
        with self._lock:
            self._current += 1
            self.peak_concurrent = max(self.peak_concurrent, self._current)
            return self._current

    def _exit_request(self) -> None:
        with self._lock:
            self._current -= 1

    def _next_scripted(self) -> Scripted | None:
        with self._lock:
            if self.script:
                return self.script.pop(0)
        return None

    def _record(self, request: RecordedRequest) -> None:
        with self._lock:
            self.requests.append(request)

    def _default_response(self, body: dict) -> Scripted:
        prompt = body.get("prompt", "")
        if body.get("echo"):
            if self.reject_echo:
                return Scripted(400, {"error": "echo is not supported"})
            return Scripted(200, scoring_response(prompt))
        if self.reject_n_gt_1 and body.get("n", 1) > 1:
            return Scripted(400, {"error": "n > 1 is not supported"})
        if self.reject_top_k and "top_k" in body:
            return Scripted(400, {"error": "unknown parameter top_k"})
        return Scripted(200, sampling_response(prompt, body.get("n", 1)))

    def _make_handler(self):
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):  # keep test output clean
                pass

            def do_POST(self):
                concurrent = stub._enter_request()
                try:
                    length = int(self.headers.get("Content-Length", "0"))
                    raw = self.rfile.read(length)
                    body = json.loads(raw) if raw else {}
                    stub._record(RecordedRequest(
                        path=self.path,
                        headers={k: v for k, v in self.headers.items()},
                        raw_body=raw,
                        body=body,
                        started_at=time.monotonic(),
                        concurrent=concurrent,
                    ))
                    if stub.delay:
                        time.sleep(stub.delay)
                    if self.path != "/completions":
                        scripted = Scripted(404, {"error": f"no route {self.path}"})
                    else:
                        scripted = stub._next_scripted() or stub._default_response(body)
                    payload = json.dumps(scripted.body).encode("utf-8")
                    self.send_response(scripted.status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(payload)))
                    self.end_headers()
                    self.wfile.write(payload)
                finally:
                    stub._exit_request()

        return Handler
