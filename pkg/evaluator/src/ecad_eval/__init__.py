"""Reference stdin/stdout evaluation worker for caching-schedule search."""

__version__ = "0.1.0"

from .backends import (
    BackendUnavailableError,
    EvaluatorBackend,
    MockBackend,
    PipelineBackend,
    cached_fraction,
    hash_unit,
)
from .server import (
    HELLO_NAME,
    PROTOCOL_VERSION,
    error_line,
    hello_line,
    main,
    parse_request,
    result_line,
    serve,
)

__all__ = [
    "BackendUnavailableError",
    "EvaluatorBackend",
    "HELLO_NAME",
    "MockBackend",
    "PROTOCOL_VERSION",
    "PipelineBackend",
    "__version__",
    "cached_fraction",
    "error_line",
    "hash_unit",
    "hello_line",
    "main",
    "parse_request",
    "result_line",
    "serve",
]
