from .base import (
    BackendError,
    Capabilities,
    CapabilityError,
    Continuation,
    ModelBackend,
    ScoringError,
)
from .remote import (
    EndpointRequestError,
    RemoteBackend,
    RemoteEndpointConfig,
    RetryPolicy,
    probe_capabilities,
)
from .toy import ToyBackend, ToyModelSpec, ToySpecError, format_toy_spec, load_toy_spec, parse_toy_spec

__all__ = [
    "BackendError",
    "Capabilities",
    "CapabilityError",
    "Continuation",
    "EndpointRequestError",
    "ModelBackend",
    "RemoteBackend",
    "RemoteEndpointConfig",
    "RetryPolicy",
    "ScoringError",
    "ToyBackend",
    "ToyModelSpec",
    "ToySpecError",
    "format_toy_spec",
    "load_toy_spec",
    "parse_toy_spec",
    "probe_capabilities",
]
