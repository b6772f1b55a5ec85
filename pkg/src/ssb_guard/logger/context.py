"""
Per-command logging scope for pipeline runs
"""

import time
import uuid
from collections.abc import Iterator
from contextlib import contextmanager
from typing import Any

from ssb_guard.logger.core import clear_log_context, get_logger, set_log_context

logger = get_logger(__name__)


@contextmanager
def log_command(name: str, **fields: Any) -> Iterator[str]:
    """
    Wrap one pipeline command in a run_id-tagged logging scope

    Logs "Command started", then "Command completed" with the duration or
    "Command failed" with the error, and clears the context on exit.

    Args:
        name: Command name (gen, train, calibrate, detect, eval)
        **fields: Extra fields logged with the start record

    Yields:
        The generated run_id
    """
    run_id = str(uuid.uuid4())
    set_log_context(run_id=run_id, command=name)

    start_time = time.perf_counter()
    logger.info("Command started", extra=fields)

    try:
        yield run_id

        logger.info(
            "Command completed",
            extra={"duration_seconds": round(time.perf_counter() - start_time, 3)},
        )

    except Exception as exc:
        logger.error(
            "Command failed",
            extra={
                "error": str(exc),
                "error_type": type(exc).__name__,
                "duration_seconds": round(time.perf_counter() - start_time, 3),
            },
            exc_info=True,
        )
        raise

    finally:
        clear_log_context()
