"""
Shared structured logging for the RIS toolkit.

Logs are emitted as single-line JSON for easy parsing and forwarding.
Use get_logger(__name__) in each module; wrap a run in bind_run(...) so every
record it emits carries the run id and method.
"""
from __future__ import annotations

import contextvars
import json
import logging
import sys
from contextlib import contextmanager
from datetime import datetime, timezone
from typing import Any, Iterator

from app.settings import LOG_LEVEL

_RUN_CONTEXT: contextvars.ContextVar[dict[str, Any]] = contextvars.ContextVar("ris_run_context", default={})

_STANDARD_KEYS = frozenset((
    "name", "msg", "args", "created", "filename", "funcName",
    "levelname", "levelno", "lineno", "module", "msecs",
    "pathname", "process", "processName", "relativeCreated",
    "stack_info", "exc_info", "exc_text", "thread", "threadName",
    "message", "taskName",
))


class RunContextFilter(logging.Filter):
    """Stamp records with the fields bound by bind_run (explicit extras win)."""

    def filter(self, record: logging.LogRecord) -> bool:
        for k, v in _RUN_CONTEXT.get().items():
            if not hasattr(record, k):
                setattr(record, k, v)
        return True


class StructuredFormatter(logging.Formatter):
    """Format log records as single-line JSON."""

    def format(self, record: logging.LogRecord) -> str:
        ts = datetime.fromtimestamp(record.created, tz=timezone.utc).isoformat()
        payload: dict[str, Any] = {
            "ts": ts,
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        if record.exc_info:
            payload["exception"] = self.formatException(record.exc_info)
        for k, v in record.__dict__.items():
            if k not in _STANDARD_KEYS and v is not None:
                payload[k] = v
        return json.dumps(payload, default=_jsonable)


def _jsonable(value: Any) -> Any:
    # numpy scalars and arrays show up in extras from the numerical code
    if hasattr(value, "tolist"):
        return value.tolist()
    return str(value)


def configure_root_logging(
    level: str | None = None,
    stream: Any = None,
) -> None:
    """
    Configure the root logger with structured JSON output on stderr.
    Call once at startup (the CLI does); stdout stays free for summaries.
    """
    lvl = (level or LOG_LEVEL).upper()
    numeric = getattr(logging, lvl, logging.INFO)
    root = logging.getLogger()
    root.setLevel(numeric)
    if not root.handlers:
        handler = logging.StreamHandler(stream or sys.stderr)
        handler.setFormatter(StructuredFormatter())
        handler.addFilter(RunContextFilter())
        root.addHandler(handler)


@contextmanager
def bind_run(**fields: Any) -> Iterator[None]:
    """Attach run-scoped fields (run_id, method, ...) to every record in this context."""
    merged = {**_RUN_CONTEXT.get(), **fields}
    token = _RUN_CONTEXT.set(merged)
    try:
        yield
    finally:
        _RUN_CONTEXT.reset(token)


def get_logger(name: str) -> logging.Logger:
    """
    Return a logger for the given module name.
    Prefer passing __name__ from the calling module.
    """
    return logging.getLogger(name)
