"""
Structured logging: JSON or text records on stdout with process-wide context fields
"""

import logging
import sys
from typing import Any

from pythonjsonlogger import json as pythonjson

JSON_FIELDS = "%(timestamp)s %(level)s %(logger)s %(module)s %(function)s %(line)d %(message)s"
TEXT_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


class ContextFilter(logging.Filter):
    """Copy the current pipeline context (run_id, command, ...) onto every record"""

    def __init__(self) -> None:
        super().__init__()
        self.context: dict[str, Any] = {}

    def filter(self, record: logging.LogRecord) -> bool:
        for key, value in self.context.items():
            if not hasattr(record, key):
                setattr(record, key, value)
        return True

    def set_context(self, **kwargs: Any) -> None:
        self.context.update(kwargs)

    def clear_context(self, keep: tuple[str, ...] = ()) -> None:
        for key in list(self.context):
            if key not in keep:
                del self.context[key]


_context_filter = ContextFilter()


class CustomJsonFormatter(pythonjson.JsonFormatter):
    """JSON formatter with the fixed field set every record carries"""

    def add_fields(
        self,
        log_record: dict[str, Any],
        record: logging.LogRecord,
        message_dict: dict[str, Any],
    ) -> None:
        super().add_fields(log_record, record, message_dict)

        log_record["timestamp"] = self.formatTime(record, self.datefmt)
        log_record["level"] = record.levelname
        log_record["logger"] = record.name
        log_record["module"] = record.module
        log_record["function"] = record.funcName
        log_record["line"] = record.lineno


def setup_logging(
    level: str = "INFO",
    log_format: str = "json",
    service_name: str | None = "ssb_guard",
) -> None:
    """
    Configure the root logger once for a CLI run or a test session

    Args:
        level: Log level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_format: 'json' for machine-readable records, 'text' for a terminal
        service_name: Added to every record as the 'service' field
    """
    log_level = getattr(logging, level.upper(), logging.INFO)

    root_logger = logging.getLogger()
    for handler in root_logger.handlers[:]:
        root_logger.removeHandler(handler)

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(log_level)

    formatter: logging.Formatter
    if log_format == "json":
        formatter = CustomJsonFormatter(JSON_FIELDS)
    else:
        formatter = logging.Formatter(TEXT_FORMAT, datefmt="%Y-%m-%d %H:%M:%S")
    console_handler.setFormatter(formatter)

    # Handler-level so records from child loggers get the context too
    console_handler.addFilter(_context_filter)

    root_logger.setLevel(log_level)
    root_logger.addHandler(console_handler)

    if service_name:
        set_log_context(service=service_name)

    # keep torch warnings only
    logging.getLogger("torch").setLevel(max(log_level, logging.WARNING))


def get_logger(name: str) -> logging.Logger:
    """Get a logger instance, typically get_logger(__name__)"""
    return logging.getLogger(name)


def set_log_context(**kwargs: Any) -> None:
    """
    Set fields included in every subsequent record

    Example:
        set_log_context(run_id="3f2a...", command="train")
    """
    _context_filter.set_context(**kwargs)


def clear_log_context(keep: tuple[str, ...] = ("service",)) -> None:
    """Drop context fields, keeping the service name by default"""
    _context_filter.clear_context(keep=keep)


def get_log_context() -> dict[str, Any]:
    """Snapshot of the current context fields"""
    return dict(_context_filter.context)
